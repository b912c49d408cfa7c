// Command-line surface: synthetic dataset generation, exposure merging,
// training, inference, evaluation, channel statistics, and the gradient
// verification harness.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "rawhdr/io.hpp"
#include "rawhdr/merge.hpp"
#include "rawhdr/metrics.hpp"
#include "rawhdr/train.hpp"

namespace fs = std::filesystem;
using namespace rawhdr;

namespace {

std::string ev_tag(double ev) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", ev);
  return buf;
}

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%03d", i);
  return buf;
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw ValueError("size must look like HxW, e.g. 128x128");
  return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

CameraProfile load_profile(const std::string& path) {
  if (path.empty()) return CameraProfile{};
  return json::parse(detail::read_file(path)).get<CameraProfile>();
}

struct CheckpointBundle {
  ParamStore params;
  NetConfig config;
};

CheckpointBundle load_checkpoint(const std::string& path) {
  CheckpointBundle b;
  b.params = load_params(path);
  const std::string cfg_path = path + ".json";
  if (!fs::exists(cfg_path)) throw IoError(path + ": missing config sidecar " + cfg_path);
  b.config = json::parse(detail::read_file(cfg_path)).get<NetConfig>();
  return b;
}

std::vector<TrainPair> load_dataset(const DatasetManifest& manifest) {
  std::vector<TrainPair> data;
  for (const auto& e : manifest.entries) {
    TrainPair p;
    p.raw = read_raw(e.raw_path);
    p.gt = read_hdr(e.hdr_path);
    data.push_back(std::move(p));
  }
  return data;
}

int cmd_synth(int scenes, const std::string& size, std::uint64_t seed, const std::string& profile_path,
              const std::string& out_dir, int bits, std::vector<double> evs) {
  const auto [h, w] = parse_size(size);
  CameraProfile profile = load_profile(profile_path);
  if (evs.empty()) evs = {-3.0, 0.0, 3.0};
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  for (int i = 0; i < scenes; ++i) {
    const std::uint64_t scene_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    SceneHDR scene = render_scene(scene_seed, h, w, bits);
    ExposureStack stack = bracket(scene, profile, evs, scene_seed);
    HDRImage gt = merge(stack);

    ManifestEntry entry;
    entry.scene_id = scene_name(i);
    entry.profile = profile;
    for (std::size_t f = 0; f < stack.mosaics.size(); ++f) {
      const std::string name = scene_name(i) + "_ev" + ev_tag(stack.evs[f]) + ".pgm";
      write_raw(stack.mosaics[f], out_dir + "/" + name);
      entry.bracket_paths.push_back(name);
      if (stack.evs[f] == 0.0) entry.raw_path = name;
    }
    if (entry.raw_path.empty()) entry.raw_path = entry.bracket_paths.front();
    entry.hdr_path = scene_name(i) + ".rhdr";
    write_hdr(gt, out_dir + "/" + entry.hdr_path);
    manifest.entries.push_back(std::move(entry));
  }
  save_manifest(manifest, out_dir + "/manifest.json");
  std::cout << json{{"scenes", scenes}, {"manifest", out_dir + "/manifest.json"}}.dump() << "\n";
  return 0;
}

int cmd_merge(const std::vector<std::string>& stack_paths, const std::vector<double>& evs_override,
              const std::string& out_path) {
  ExposureStack stack;
  for (const auto& p : stack_paths) stack.mosaics.push_back(read_raw(p));
  if (!evs_override.empty()) {
    if (evs_override.size() != stack.mosaics.size())
      throw ValueError("merge: need one EV per stack file");
    stack.evs = evs_override;
    for (std::size_t i = 0; i < stack.evs.size(); ++i) stack.mosaics[i].exposure_ev = stack.evs[i];
  } else {
    for (const auto& m : stack.mosaics) stack.evs.push_back(m.exposure_ev);
  }
  // sort frames by EV
  std::vector<std::size_t> order(stack.mosaics.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return stack.evs[a] < stack.evs[b]; });
  ExposureStack sorted;
  for (std::size_t i : order) {
    sorted.mosaics.push_back(std::move(stack.mosaics[i]));
    sorted.evs.push_back(stack.evs[i]);
  }
  write_hdr(merge(sorted), out_path);
  std::cout << json{{"out", out_path}, {"coverage", coverage_report(sorted)}}.dump() << "\n";
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& net_config_path,
              const std::string& train_config_path, const std::string& out_dir,
              const std::string& resume_dir) {
  NetConfig ncfg;
  if (!net_config_path.empty())
    ncfg = json::parse(detail::read_file(net_config_path)).get<NetConfig>();
  TrainConfig tcfg;
  if (!train_config_path.empty())
    tcfg = json::parse(detail::read_file(train_config_path)).get<TrainConfig>();

  std::vector<TrainPair> data = load_dataset(load_manifest(manifest_path));
  TrainResult result;
  if (!resume_dir.empty()) {
    NetConfig stored;
    TrainStart start = load_train_state(resume_dir, &stored);
    result = train(data, stored, tcfg, &start, out_dir);
  } else {
    result = train(data, ncfg, tcfg, nullptr, out_dir);
  }

  json history = json::array();
  for (const auto& e : result.history)
    history.push_back(json{{"total", e.total}, {"rec", e.rec}, {"perc", e.perc}, {"mask", e.mask}});
  detail::write_file(out_dir + "/history.json", history.dump(2) + "\n");
  std::cout << json{{"epochs", result.epochs_run},
                    {"final_loss", result.history.empty() ? 0.0 : result.history.back().total},
                    {"checkpoint", out_dir + "/checkpoint.rhnp"}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& raw_path,
              const std::string& out_path) {
  CheckpointBundle ckpt = load_checkpoint(checkpoint_path);
  RawMosaic raw = read_raw(raw_path);
  HDRImage pred = forward(raw, ckpt.params, ckpt.config);
  write_hdr(pred, out_path);
  std::cout << json{{"out", out_path},
                    {"shape", {pred.data.dim(0), pred.data.dim(1), pred.data.dim(2)}}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& checkpoint_path, double mu,
             const std::string& report_path) {
  CheckpointBundle ckpt = load_checkpoint(checkpoint_path);
  DatasetManifest manifest = load_manifest(manifest_path);
  if (manifest.entries.empty()) throw ValueError("eval: empty manifest");

  json records = json::array();
  double sum_psnr = 0.0, sum_psnr_mu = 0.0, sum_ssim = 0.0;
  double sum_msssim = 0.0;
  int msssim_count = 0;
  for (const auto& e : manifest.entries) {
    RawMosaic raw = read_raw(e.raw_path);
    HDRImage gt = read_hdr(e.hdr_path);
    HDRImage pred = forward(raw, ckpt.params, ckpt.config);
    const double peak = std::max(gt.data.max_value(), kLogEps);
    const double v_psnr = cap_db(psnr(pred.data, gt.data, peak));
    const double v_psnr_mu = cap_db(psnr_mu(pred.data, gt.data, mu, peak));
    Tensor tm_pred = mu_tonemap(pred.data, mu, peak);
    Tensor tm_gt = mu_tonemap(gt.data, mu, peak);
    const double v_ssim = ssim(tm_pred, tm_gt);
    json rec = {{"scene_id", e.scene_id}, {"psnr", v_psnr},   {"psnr_mu", v_psnr_mu},
                {"ssim", v_ssim},         {"mu", mu},         {"peak", peak}};
    if (tm_pred.dim(0) >= 176 && tm_pred.dim(1) >= 176) {
      const double v = ms_ssim(tm_pred, tm_gt);
      rec["ms_ssim"] = v;
      sum_msssim += v;
      ++msssim_count;
    } else {
      rec["ms_ssim"] = nullptr;  // image too small for five dyadic scales
    }
    records.push_back(std::move(rec));
    sum_psnr += v_psnr;
    sum_psnr_mu += v_psnr_mu;
    sum_ssim += v_ssim;
  }
  const double n = static_cast<double>(manifest.entries.size());
  json report = {{"format_version", 1},
                 {"mu", mu},
                 {"records", records},
                 {"mean", {{"psnr", sum_psnr / n},
                           {"psnr_mu", sum_psnr_mu / n},
                           {"ssim", sum_ssim / n},
                           {"ms_ssim", msssim_count ? json(sum_msssim / msssim_count) : json(nullptr)}}}};
  detail::write_file(report_path, report.dump(2) + "\n");
  std::cout << report["mean"].dump() << "\n";
  return 0;
}

int cmd_analyze(const std::string& manifest_path, const std::string& out_dir) {
  DatasetManifest manifest = load_manifest(manifest_path);
  ChannelReport rep = analyze_channels(manifest);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < rep.dominant_maps.size(); ++i)
    write_index_pgm(rep.dominant_maps[i], out_dir + "/dominant_" + rep.scene_ids[i] + ".pgm");
  detail::write_file(out_dir + "/channel_report.json", channel_report_json(rep).dump(2) + "\n");
  std::cout << channel_report_json(rep)["mean_counts"].dump() << "\n";
  return 0;
}

double grad_tolerance(const std::string& op) { return op == "log_l2" ? 1e-6 : 1e-4; }

int cmd_grad_check(const std::string& op, std::uint64_t seed) {
  std::vector<std::string> ops;
  if (op == "all")
    ops = grad_check_ops();
  else
    ops = {op};
  bool all_pass = true;
  for (const auto& name : ops) {
    const double err = grad_check(name, seed);
    const double tol = grad_tolerance(name);
    const bool pass = err <= tol;
    all_pass = all_pass && pass;
    std::cout << json{{"op", name}, {"max_rel_err", err}, {"tolerance", tol}, {"pass", pass}}.dump()
              << "\n";
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-Raw-image HDR reconstruction toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Render scenes, bracket, merge, write a dataset");
  int synth_scenes = 4;
  std::string synth_size = "128x128";
  std::uint64_t synth_seed = 0;
  std::string synth_profile, synth_out;
  int synth_bits = 20;
  std::vector<double> synth_evs;
  synth->add_option("--scenes", synth_scenes, "number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "raw size HxW");
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--profile", synth_profile, "camera profile JSON")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--bits", synth_bits, "scene dynamic range in stops");
  synth->add_option("--evs", synth_evs, "bracket EVs (default -3 0 3)");

  // merge
  auto* mergec = app.add_subcommand("merge", "Fuse an exposure stack into an HDR image");
  std::vector<std::string> merge_stack;
  std::vector<double> merge_evs;
  std::string merge_out;
  mergec->add_option("--stack", merge_stack, "raw PGM files")->required()->check(CLI::ExistingFile);
  mergec->add_option("--evs", merge_evs, "override EVs (one per file)");
  mergec->add_option("--out", merge_out, "output RHDR file")->required();

  // train
  auto* trainc = app.add_subcommand("train", "Train the reconstruction network");
  std::string train_manifest, train_net_cfg, train_cfg, train_out, train_resume;
  trainc->add_option("--manifest", train_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  trainc->add_option("--net-config", train_net_cfg, "network config JSON")->check(CLI::ExistingFile);
  trainc->add_option("--train-config", train_cfg, "training config JSON")->check(CLI::ExistingFile);
  trainc->add_option("--out", train_out, "checkpoint directory")->required();
  trainc->add_option("--resume", train_resume, "resume from checkpoint directory")->check(CLI::ExistingDirectory);

  // infer
  auto* inferc = app.add_subcommand("infer", "Reconstruct HDR from a single raw");
  std::string infer_ckpt, infer_raw, infer_out;
  inferc->add_option("--checkpoint", infer_ckpt, "checkpoint .rhnp")->required()->check(CLI::ExistingFile);
  inferc->add_option("--raw", infer_raw, "input raw PGM")->required()->check(CLI::ExistingFile);
  inferc->add_option("--out", infer_out, "output RHDR file")->required();

  // eval
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint against ground truth");
  std::string eval_manifest, eval_ckpt, eval_report;
  double eval_mu = 5000.0;
  evalc->add_option("--manifest", eval_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  evalc->add_option("--checkpoint", eval_ckpt, "checkpoint .rhnp")->required()->check(CLI::ExistingFile);
  evalc->add_option("--mu", eval_mu, "tone-mapping parameter")->check(CLI::PositiveNumber);
  evalc->add_option("--report", eval_report, "output report JSON")->required();

  // analyze-channels
  auto* analyzec = app.add_subcommand("analyze-channels", "Channel statistics of the 0 EV raws");
  std::string an_manifest, an_out;
  analyzec->add_option("--manifest", an_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  analyzec->add_option("--out", an_out, "output directory")->required();

  // grad-check
  auto* gradc = app.add_subcommand("grad-check", "Verify gradients against finite differences");
  std::string grad_op = "all";
  std::uint64_t grad_seed = 1;
  gradc->add_option("--op", grad_op, "operation name or 'all'");
  gradc->add_option("--seed", grad_seed, "random seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(synth_scenes, synth_size, synth_seed, synth_profile, synth_out, synth_bits,
                       synth_evs);
    if (mergec->parsed()) return cmd_merge(merge_stack, merge_evs, merge_out);
    if (trainc->parsed()) return cmd_train(train_manifest, train_net_cfg, train_cfg, train_out, train_resume);
    if (inferc->parsed()) return cmd_infer(infer_ckpt, infer_raw, infer_out);
    if (evalc->parsed()) return cmd_eval(eval_manifest, eval_ckpt, eval_mu, eval_report);
    if (analyzec->parsed()) return cmd_analyze(an_manifest, an_out);
    if (gradc->parsed()) return cmd_grad_check(grad_op, grad_seed);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
