#pragma once

#include "rawhdr/io.hpp"
#include "rawhdr/losses.hpp"
#include "rawhdr/merge.hpp"
#include "rawhdr/metrics.hpp"
#include "rawhdr/net.hpp"

// Training recipe: Kaiming init, Adam (beta1 0.9), lr 1e-4 dropped 10x at the
// configured epoch, batch size 1, random even-aligned crops. Checkpoints are
// float32; parameters and moments are snapped to float32 at every checkpoint
// event so an interrupted-and-resumed run is bit-identical to an
// uninterrupted one.

namespace rawhdr {

struct TrainConfig {
  double lr0 = 1e-4;
  int lr_drop_epoch = 1000;
  double lr_drop_factor = 10.0;
  int epochs = 2000;
  int batch_size = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int crop_size = 64;  // raw-domain pixels, even
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  double tau1 = 0.5;
  double tau2 = 0.5;

  void validate() const {
    if (lr0 < 0.0) throw ValueError("TrainConfig: lr0 must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
      throw ValueError("TrainConfig: betas must lie in (0, 1)");
    if (adam_eps <= 0.0) throw ValueError("TrainConfig: adam_eps must be positive");
    if (epochs < 1) throw ValueError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ValueError("TrainConfig: batch_size must be >= 1");
    if (lr_drop_factor < 1.0) throw ValueError("TrainConfig: lr_drop_factor must be >= 1");
    if (crop_size < 2 || crop_size % 2 != 0) throw ValueError("TrainConfig: crop_size must be even");
    if (checkpoint_every < 0) throw ValueError("TrainConfig: checkpoint_every must be >= 0");
    if (tau1 < 0.0 || tau2 < 0.0) throw ValueError("TrainConfig: loss weights must be >= 0");
  }
};

inline double lr_at(int epoch, const TrainConfig& c) {
  return epoch < c.lr_drop_epoch ? c.lr0 : c.lr0 / c.lr_drop_factor;
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr0", c.lr0},
           {"lr_drop_epoch", c.lr_drop_epoch},
           {"lr_drop_factor", c.lr_drop_factor},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"seed", c.seed},
           {"crop_size", c.crop_size},
           {"checkpoint_every", c.checkpoint_every},
           {"tau1", c.tau1},
           {"tau2", c.tau2}};
}

inline void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr0 = j.value("lr0", d.lr0);
  c.lr_drop_epoch = j.value("lr_drop_epoch", d.lr_drop_epoch);
  c.lr_drop_factor = j.value("lr_drop_factor", d.lr_drop_factor);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seed = j.value("seed", d.seed);
  c.crop_size = j.value("crop_size", d.crop_size);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.tau1 = j.value("tau1", d.tau1);
  c.tau2 = j.value("tau2", d.tau2);
  c.validate();
}

inline ParamStore init_params(const NetConfig& cfg, std::uint64_t seed) {
  ParamStore store = init_param_store(declare_net_params(cfg), seed);
  seed_fusion_skip(store);
  return store;
}

// --------------------------------------------------------------------------
// Adam

struct AdamState {
  ParamStore m;
  ParamStore v;
  std::int64_t t = 0;

  static AdamState like(const ParamStore& params) {
    AdamState s;
    for (const auto& [name, tns] : params.items) {
      s.m.create(name, tns.shape);
      s.v.create(name, tns.shape);
    }
    return s;
  }
};

using GradMap = std::map<std::string, Tensor>;

/// One Adam update with bias correction. Parameters without an entry in
/// `grads` are treated as zero-gradient.
inline void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr,
                      const TrainConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params.items) {
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    const auto it = grads.find(name);
    const Tensor* g = it == grads.end() ? nullptr : &it->second;
    if (g != nullptr && !g->same_shape(p))
      throw ShapeError("adam_step: gradient shape mismatch for '" + name + "'");
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      if (!std::isfinite(gi)) throw NumericError("adam_step: non-finite gradient in '" + name + "'");
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
    }
  }
}

// --------------------------------------------------------------------------
// training loop

struct TrainPair {
  RawMosaic raw;  // 0 EV input
  HDRImage gt;    // packed-layout ground truth
};

struct EpochStats {
  double total = 0.0;
  double rec = 0.0;
  double perc = 0.0;
  double mask = 0.0;
  double holdout_psnr_mu = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  ParamStore params;
  AdamState state;
  std::vector<EpochStats> history;
  int epochs_run = 0;
};

struct TrainStart {
  ParamStore params;
  AdamState state;
  int epoch = 0;  // epochs already completed
};

namespace detail {

inline TrainPair crop_pair(const TrainPair& p, int crop, Rng& rng) {
  const int H = p.raw.height, W = p.raw.width;
  if (crop >= H && crop >= W) return p;
  const int ch = std::min(crop, H), cw = std::min(crop, W);
  const int cy = 2 * rng.uniform_int((H - ch) / 2 + 1);
  const int cx = 2 * rng.uniform_int((W - cw) / 2 + 1);
  TrainPair out;
  out.raw = p.raw;
  out.raw.height = ch;
  out.raw.width = cw;
  out.raw.data.assign(static_cast<std::size_t>(ch) * cw, 0);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) out.raw.at(y, x) = p.raw.at(cy + y, cx + x);
  out.gt.data = Tensor({ch / 2, cw / 2, 4});
  for (int y = 0; y < ch / 2; ++y)
    for (int x = 0; x < cw / 2; ++x)
      for (int c = 0; c < 4; ++c) out.gt.data.at(y, x, c) = p.gt.data.at(cy / 2 + y, cx / 2 + x, c);
  return out;
}

inline void save_checkpoint_files(const std::string& dir, const ParamStore& params,
                                  const AdamState& state, const NetConfig& ncfg, int epoch,
                                  std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_params(params, dir + "/checkpoint.rhnp");
  detail::write_file(dir + "/checkpoint.rhnp.json", json(ncfg).dump(2) + "\n");
  ParamStore moments;
  for (const auto& [name, t] : state.m.items) moments.create("m:" + name, t.shape).data = t.data;
  for (const auto& [name, t] : state.v.items) moments.create("v:" + name, t.shape).data = t.data;
  save_params(moments, dir + "/moments.rhnp");
  json st = {{"format_version", 1},
             {"epoch", epoch},
             {"adam_t", state.t},
             {"seed", seed},
             {"moments", "moments.rhnp"}};
  detail::write_file(dir + "/train_state.json", st.dump(2) + "\n");
}

}  // namespace detail

/// Load params/moments/epoch for resuming from a checkpoint directory.
inline TrainStart load_train_state(const std::string& dir, NetConfig* ncfg_out = nullptr) {
  TrainStart start;
  start.params = load_params(dir + "/checkpoint.rhnp");
  json st = json::parse(detail::read_file(dir + "/train_state.json"));
  if (st.value("format_version", 0) != 1) throw IoError(dir + ": unsupported train_state version");
  start.epoch = st.at("epoch").get<int>();
  ParamStore moments = load_params(dir + "/" + st.value("moments", "moments.rhnp"));
  start.state.t = st.at("adam_t").get<std::int64_t>();
  for (const auto& [name, t] : moments.items) {
    if (name.rfind("m:", 0) == 0) start.state.m.create(name.substr(2), t.shape).data = t.data;
    if (name.rfind("v:", 0) == 0) start.state.v.create(name.substr(2), t.shape).data = t.data;
  }
  if (ncfg_out != nullptr)
    *ncfg_out = json::parse(detail::read_file(dir + "/checkpoint.rhnp.json")).get<NetConfig>();
  return start;
}

/// Mean PSNR-mu over pairs, per-scene reference peak, capped at 100 dB.
inline double eval_psnr_mu(const ParamStore& params, const NetConfig& ncfg,
                           const std::vector<TrainPair>& pairs, double mu = 5000.0) {
  if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (const auto& p : pairs) {
    HDRImage pred = forward(p.raw, params, ncfg);
    const double peak = std::max(p.gt.data.max_value(), kLogEps);
    acc += cap_db(psnr_mu(pred.data, p.gt.data, mu, peak));
  }
  return acc / static_cast<double>(pairs.size());
}

inline TrainResult train(const std::vector<TrainPair>& data, const NetConfig& ncfg,
                         const TrainConfig& tcfg, const TrainStart* resume = nullptr,
                         const std::string& checkpoint_dir = "",
                         const std::vector<TrainPair>* holdout = nullptr) {
  ncfg.validate();
  tcfg.validate();
  if (data.empty()) throw ValueError("train: empty dataset");
  for (const auto& p : data) {
    p.raw.validate();
    if (p.gt.data.rank() != 3 || p.gt.data.dim(0) != p.raw.height / 2 ||
        p.gt.data.dim(1) != p.raw.width / 2 || p.gt.data.dim(2) != 4)
      throw ShapeError("train: ground truth must be packed-resolution (h/2, w/2, 4)");
  }

  TrainResult result;
  if (resume != nullptr) {
    result.params = resume->params;
    result.state = resume->state;
  } else {
    result.params = init_params(ncfg, tcfg.seed);
    result.state = AdamState::like(result.params);
  }
  const int start_epoch = resume ? resume->epoch : 0;
  const bool mask_term = ncfg.use_dig && ncfg.use_soft_masks;
  const PerceptualPlugin plugin = default_perceptual_plugin();
  const int n = static_cast<int>(data.size());

  for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng order_rng(mix_seed(tcfg.seed, mix_seed(0x50fa, static_cast<std::uint64_t>(epoch))));
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(order_rng.uniform_int(i + 1))]);

    EpochStats stats;
    int samples = 0;
    const double lr = lr_at(epoch, tcfg);
    for (int pos = 0; pos < n; pos += tcfg.batch_size) {
      const int bsz = std::min(tcfg.batch_size, n - pos);
      GradMap grads;
      for (int bi = 0; bi < bsz; ++bi) {
        const int idx = order[static_cast<std::size_t>(pos + bi)];
        Rng crop_rng(mix_seed(tcfg.seed, mix_seed(0xc407, static_cast<std::uint64_t>(epoch) * 1000003ULL +
                                                               static_cast<std::uint64_t>(pos + bi))));
        TrainPair sample = detail::crop_pair(data[static_cast<std::size_t>(idx)], tcfg.crop_size, crop_rng);
        PackedRaw packed = pack(sample.raw);
        const int h = packed.height(), w = packed.width();
        const int div = 1 << ncfg.unet_depth;
        const int ph = detail::ceil_to(h, div), pw = detail::ceil_to(w, div);

        GraphParams gp(result.params, true);
        Var pv = pad2d(constant(packed.data), 0, ph - h, 0, pw - w);
        ForwardOut fwd = forward_graph(pv, gp, ncfg);
        Var hvar = crop2d(fwd.hdr, 0, 0, h, w);

        MaskVars soft_cropped;
        MaskTriple hard;
        if (mask_term) {
          soft_cropped.over = crop2d(fwd.masks.over, 0, 0, h, w);
          soft_cropped.under = crop2d(fwd.masks.under, 0, 0, h, w);
          soft_cropped.well = crop2d(fwd.masks.well, 0, 0, h, w);
          hard = hard_masks(packed);
        }
        LossVars loss = total_loss_graph(hvar, sample.gt.data, mask_term ? &soft_cropped : nullptr,
                                         mask_term ? &hard : nullptr, tcfg.tau1, tcfg.tau2, plugin);
        const double lv = loss.total->value[0];
        if (!std::isfinite(lv))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(pos + bi));
        backward(loss.total);

        stats.total += lv;
        stats.rec += loss.rec->value[0];
        stats.perc += loss.perc->value[0];
        stats.mask += loss.mask ? loss.mask->value[0] : 0.0;
        ++samples;

        const double scale = 1.0 / bsz;
        for (const auto& [name, var] : gp.used()) {
          if (!var->grad_ready) continue;
          auto it = grads.find(name);
          if (it == grads.end()) {
            Tensor g = var->grad_store;
            for (auto& gv : g.data) gv *= scale;
            grads.emplace(name, std::move(g));
          } else {
            for (std::int64_t i = 0; i < it->second.size(); ++i)
              it->second[i] += scale * var->grad_store[i];
          }
        }
      }
      adam_step(result.params, grads, result.state, lr, tcfg);
    }
    stats.total /= samples;
    stats.rec /= samples;
    stats.perc /= samples;
    stats.mask /= samples;
    if (holdout != nullptr) stats.holdout_psnr_mu = eval_psnr_mu(result.params, ncfg, *holdout);
    result.history.push_back(stats);
    result.epochs_run = epoch + 1;

    const bool last = epoch + 1 == tcfg.epochs;
    const bool periodic = tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0;
    if (periodic || (last && !checkpoint_dir.empty())) {
      quantize_f32(result.params);
      quantize_f32(result.state.m);
      quantize_f32(result.state.v);
      if (!checkpoint_dir.empty())
        detail::save_checkpoint_files(checkpoint_dir, result.params, result.state, ncfg, epoch + 1,
                                      tcfg.seed);
    }
  }
  return result;
}

// --------------------------------------------------------------------------
// finite-difference gradient verification

namespace detail {

inline double grad_norm_ratio(const std::vector<double>& a, const std::vector<double>& f) {
  double d2 = 0.0, a2 = 0.0, f2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d2 += (a[i] - f[i]) * (a[i] - f[i]);
    a2 += a[i] * a[i];
    f2 += f[i] * f[i];
  }
  const double d = std::sqrt(d2);
  if (d <= 1e-8) return 0.0;  // numerically zero mismatch
  return d / (std::sqrt(a2) + std::sqrt(f2));
}

}  // namespace detail

/// Worst norm-ratio between reverse-mode and central-difference gradients
/// over every parameter array (optionally a random subset of coordinates per
/// array). Central differences at the base step are Richardson-extrapolated
/// with a half-step evaluation to cancel the h^2 truncation term, which the
/// log-space loss's curvature otherwise leaves above the comparison
/// tolerance. `build` must construct the scalar loss from any GraphParams
/// view.
inline double param_fd_check(const ParamStore& params,
                             const std::function<Var(GraphParams&)>& build, int max_coords = 0,
                             std::uint64_t seed = 0, double step = 1e-5) {
  GraphParams gp(params, true);
  Var loss = build(gp);
  if (loss->value.size() != 1) throw ShapeError("param_fd_check: loss must be scalar");
  backward(loss);

  ParamStore work = params;
  const auto eval = [&]() {
    GraphParams g(work, false);
    return build(g)->value[0];
  };

  double worst = 0.0;
  for (auto& [name, t] : work.items) {
    std::vector<std::int64_t> coords;
    if (max_coords <= 0 || t.size() <= max_coords) {
      coords.resize(static_cast<std::size_t>(t.size()));
      for (std::int64_t i = 0; i < t.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      Rng rng(mix_seed(seed, hash_str(name)));
      std::unordered_set<std::int64_t> seen;
      while (static_cast<int>(coords.size()) < max_coords) {
        const auto i = static_cast<std::int64_t>(rng.uniform_int(static_cast<int>(t.size())));
        if (seen.insert(i).second) coords.push_back(i);
      }
    }
    Tensor analytic = gp.grad_of(name);
    std::vector<double> a, f;
    a.reserve(coords.size());
    f.reserve(coords.size());
    for (std::int64_t i : coords) {
      const double keep = t[i];
      t[i] = keep + step;
      const double fp = eval();
      t[i] = keep - step;
      const double fm = eval();
      t[i] = keep + 0.5 * step;
      const double fp2 = eval();
      t[i] = keep - 0.5 * step;
      const double fm2 = eval();
      t[i] = keep;
      const double fd_h = (fp - fm) / (2.0 * step);
      const double fd_h2 = (fp2 - fm2) / step;
      a.push_back(analytic[i]);
      f.push_back((4.0 * fd_h2 - fd_h) / 3.0);
    }
    worst = std::max(worst, detail::grad_norm_ratio(a, f));
  }
  return worst;
}

/// Named-operation gradient checks used by the verification CLI and the
/// acceptance suite. Returns the max relative error.
inline double grad_check(const std::string& op, std::uint64_t seed = 1) {
  if (op == "log_l2") {
    ParamStore store;
    Rng rng(mix_seed(seed, 0x106));
    store.create("h", {6, 6, 4}).data = random_tensor({6, 6, 4}, rng, 0.01, 3.0).data;
    store.create("href", {6, 6, 4}).data = random_tensor({6, 6, 4}, rng, 0.01, 3.0).data;
    return param_fd_check(store, [](GraphParams& gp) { return log_l2_graph(gp("h"), gp("href")); });
  }

  if (op == "mask_loss" || op == "soft_masks") {
    std::vector<ParamSpec> specs = declare_mask_net("mask_over", 4);
    for (auto& s : declare_mask_net("mask_under", 4)) specs.push_back(s);
    ParamStore params = init_param_store(specs, mix_seed(seed, 0xa5));
    Rng rng(mix_seed(seed, 0x900d));
    Tensor packed = random_tensor({8, 8, 4}, rng);
    if (op == "mask_loss") {
      MaskTriple hard = hard_masks(PackedRaw{packed});
      return param_fd_check(
          params,
          [&](GraphParams& gp) {
            return mask_loss_graph(soft_masks_graph(constant(packed), gp), hard);
          },
          16, seed);
    }
    Tensor wa = random_tensor({8, 8, 1}, rng, -1.0, 1.0);
    Tensor wb = random_tensor({8, 8, 1}, rng, -1.0, 1.0);
    Tensor wc = random_tensor({8, 8, 1}, rng, -1.0, 1.0);
    return param_fd_check(
        params,
        [&](GraphParams& gp) {
          MaskVars m = soft_masks_graph(constant(packed), gp);
          Var s = add(mean_all(mul(m.over, constant(wa))), mean_all(mul(m.under, constant(wb))));
          return add(s, mean_all(mul(m.well, constant(wc))));
        },
        16, seed);
  }

  if (op == "dual_intensity_guidance") {
    NetConfig cfg;
    cfg.base_width = 8;
    cfg.unet_depth = 1;
    cfg.use_soft_masks = false;
    ParamStore params = init_param_store(declare_dig(cfg), mix_seed(seed, 0xd1));
    Rng rng(mix_seed(seed, 0xd16));
    Tensor packed = random_tensor({6, 6, 4}, rng);
    MaskVars masks{constant(random_tensor({6, 6, 1}, rng)), constant(random_tensor({6, 6, 1}, rng)),
                   nullptr};
    masks.well = well_from(masks.over, masks.under);
    Tensor w = random_tensor({6, 6, cfg.base_width}, rng, -1.0, 1.0);
    return param_fd_check(
        params,
        [&](GraphParams& gp) {
          Var y = dual_intensity_guidance_graph(constant(packed), masks, gp, cfg);
          return mean_all(mul(y, constant(w)));
        },
        8, seed);
  }

  if (op == "w_msa" || op == "leff" || op == "lewin_block") {
    NetConfig cfg;
    cfg.base_width = 4;
    cfg.window_size = 2;
    cfg.heads = 2;
    cfg.leff_expansion = 2.0;
    std::vector<ParamSpec> specs;
    if (op == "w_msa")
      specs = declare_wmsa("blk", 4);
    else if (op == "leff")
      specs = declare_leff("blk", 4, cfg);
    else
      specs = declare_lewin("blk", 4, cfg);
    specs.push_back({"f", {4, 4, 4}, Init::KaimingConv, 4});
    ParamStore params = init_param_store(specs, mix_seed(seed, 0x1e));
    Rng rng(mix_seed(seed, 0x1ef));
    Tensor w = random_tensor({4, 4, 4}, rng, -1.0, 1.0);
    return param_fd_check(
        params,
        [&](GraphParams& gp) {
          Var f = gp("f");
          Var y;
          if (op == "w_msa")
            y = w_msa_graph(f, "blk", gp, cfg.window_size, cfg.heads);
          else if (op == "leff")
            y = leff_graph(f, "blk", gp, cfg.activation);
          else
            y = lewin_block_graph(f, "blk", gp, cfg);
          return mean_all(mul(y, constant(w)));
        },
        0, seed);
  }

  if (op == "global_spatial_guidance") {
    NetConfig cfg;
    cfg.base_width = 4;
    cfg.gsg_stages = 2;
    cfg.window_size = 2;
    cfg.heads = 2;
    std::vector<ParamSpec> specs = declare_gsg(cfg);
    specs.push_back({"x", {6, 6, 4}, Init::KaimingConv, 4});
    ParamStore params = init_param_store(specs, mix_seed(seed, 0x65));
    Rng rng(mix_seed(seed, 0x656));
    Tensor w = random_tensor({6, 6, 4}, rng, -1.0, 1.0);
    return param_fd_check(
        params,
        [&](GraphParams& gp) {
          Var y = global_spatial_guidance_graph(gp("x"), gp, cfg);
          return mean_all(mul(y, constant(w)));
        },
        8, seed);
  }

  if (op == "forward" || op == "forward_total") {
    NetConfig cfg;
    cfg.base_width = 8;
    cfg.unet_depth = 2;
    cfg.gsg_stages = 2;
    cfg.window_size = 4;
    cfg.heads = 2;
    cfg.mask_width = 4;
    ParamStore params = init_params(cfg, mix_seed(seed, 0xf0));
    {
      // the shipped head starts at a zero/identity point where gradients do
      // not reach the branches; verify at a generic point instead
      Rng rng(mix_seed(seed, 0xfa));
      for (auto& v : params.at("fuse.proj.w").data) v = 0.3 * rng.normal();
      for (auto& v : params.at("fuse.skip.w").data) v = 0.3 * rng.normal();
    }
    SceneHDR scene = render_scene(mix_seed(seed, 0xf1), 16, 16, 20);
    CameraProfile prof;
    ExposureStack stack = bracket(scene, prof, mix_seed(seed, 0xf2));
    HDRImage gt = merge(stack);
    PackedRaw packed = pack(stack.mosaics[1]);  // 0 EV frame
    MaskTriple hard = hard_masks(packed);
    return param_fd_check(
        params,
        [&](GraphParams& gp) {
          ForwardOut fwd = forward_graph(constant(packed.data), gp, cfg);
          LossVars loss = total_loss_graph(fwd.hdr, gt.data, &fwd.masks, &hard);
          return loss.total;
        },
        5, seed);
  }

  throw ValueError("grad_check: unknown operation '" + op + "'");
}

inline const std::vector<std::string>& grad_check_ops() {
  static const std::vector<std::string> ops = {
      "log_l2", "mask_loss",   "soft_masks",    "dual_intensity_guidance", "w_msa",
      "leff",   "lewin_block", "global_spatial_guidance", "forward_total"};
  return ops;
}

}  // namespace rawhdr
