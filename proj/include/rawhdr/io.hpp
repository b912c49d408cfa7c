#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "rawhdr/camera.hpp"
#include "rawhdr/net.hpp"
#include "rawhdr/params.hpp"
#include "rawhdr/raw.hpp"

// File formats.
//   Raw mosaics:  16-bit binary PGM ("P5", maxval 65535, big-endian samples)
//                 with a JSON metadata sidecar at <path>.json.
//   HDR images:   "RHDR" magic, u32le h, w, c, then float32le samples.
//   Parameters:   "RHNP" magic, u32le version and count, then per array:
//                 u16le name length, name bytes, u8 rank, u32le dims,
//                 float32le data.

namespace rawhdr {

using json = nlohmann::json;

namespace detail {

inline void put_u16be(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32le(out, bits);
}

class ByteReader {
public:
  ByteReader(std::string data, std::string origin)
      : data_(std::move(data)), origin_(std::move(origin)) {}

  std::size_t remaining() const { return data_.size() - pos_; }

  const std::string& origin() const { return origin_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw IoError(origin_ + ": truncated " + what);
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  std::uint16_t u16be(const char* what) {
    need(2, what);
    const auto hi = static_cast<std::uint8_t>(data_[pos_]);
    const auto lo = static_cast<std::uint8_t>(data_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::uint16_t>((hi << 8) | lo);
  }

  std::uint16_t u16le(const char* what) {
    need(2, what);
    const auto lo = static_cast<std::uint8_t>(data_[pos_]);
    const auto hi = static_cast<std::uint8_t>(data_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::uint16_t>((hi << 8) | lo);
  }

  std::uint32_t u32le(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32le(const char* what) {
    const std::uint32_t bits = u32le(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace detail

// --------------------------------------------------------------------------
// Raw mosaics: PGM16 + JSON sidecar

inline std::string raw_sidecar_path(const std::string& path) { return path + ".json"; }

inline void write_raw(const RawMosaic& m, const std::string& path) {
  m.validate();
  std::string out = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n65535\n";
  out.reserve(out.size() + m.data.size() * 2);
  for (std::uint16_t v : m.data) detail::put_u16be(out, v);
  detail::write_file(path, out);

  json meta = {{"format_version", 1},
               {"cfa", "RGGB"},
               {"black_level", m.black_level},
               {"white_level", m.white_level},
               {"bit_depth", m.bit_depth},
               {"exposure_ev", m.exposure_ev}};
  detail::write_file(raw_sidecar_path(path), meta.dump(2) + "\n");
}

inline RawMosaic read_raw(const std::string& path) {
  std::string data = detail::read_file(path);
  // strict header: exactly what write_raw produces
  const auto next_token = [&](std::size_t& pos) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) throw IoError(path + ": truncated PGM header");
    return data.substr(start, pos - start);
  };
  std::size_t pos = 0;
  if (next_token(pos) != "P5") throw IoError(path + ": bad PGM magic");
  RawMosaic m;
  try {
    m.width = std::stoi(next_token(pos));
    m.height = std::stoi(next_token(pos));
    const std::string maxval = next_token(pos);
    if (maxval != "65535") throw IoError(path + ": PGM maxval must be 65535");
  } catch (const std::invalid_argument&) {
    throw IoError(path + ": malformed PGM header");
  }
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
    throw IoError(path + ": malformed PGM header");
  ++pos;  // single whitespace after maxval
  const std::size_t expect = static_cast<std::size_t>(m.width) * m.height * 2;
  if (data.size() - pos != expect) throw IoError(path + ": PGM payload size mismatch");
  m.data.resize(static_cast<std::size_t>(m.width) * m.height);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const auto hi = static_cast<std::uint8_t>(data[pos + 2 * i]);
    const auto lo = static_cast<std::uint8_t>(data[pos + 2 * i + 1]);
    m.data[i] = static_cast<std::uint16_t>((hi << 8) | lo);
  }

  const std::string side = raw_sidecar_path(path);
  if (!std::filesystem::exists(side)) throw IoError(path + ": missing metadata sidecar");
  json meta = json::parse(detail::read_file(side));
  if (meta.value("format_version", 0) != 1) throw IoError(side + ": unsupported format_version");
  if (meta.value("cfa", "") != "RGGB") throw IoError(side + ": unsupported CFA");
  m.cfa = Cfa::RGGB;
  m.black_level = meta.at("black_level").get<int>();
  m.white_level = meta.at("white_level").get<int>();
  m.bit_depth = meta.at("bit_depth").get<int>();
  m.exposure_ev = meta.at("exposure_ev").get<double>();
  m.validate();
  return m;
}

// --------------------------------------------------------------------------
// HDR images: RHDR container

inline void write_hdr(const HDRImage& img, const std::string& path) {
  img.validate();
  std::string out = "RHDR";
  detail::put_u32le(out, static_cast<std::uint32_t>(img.data.dim(0)));
  detail::put_u32le(out, static_cast<std::uint32_t>(img.data.dim(1)));
  detail::put_u32le(out, static_cast<std::uint32_t>(img.data.dim(2)));
  for (double v : img.data.data) detail::put_f32le(out, static_cast<float>(v));
  detail::write_file(path, out);
}

inline HDRImage read_hdr(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  if (r.bytes(4, "magic") != "RHDR") throw IoError(path + ": bad RHDR magic");
  const int h = static_cast<int>(r.u32le("height"));
  const int w = static_cast<int>(r.u32le("width"));
  const int c = static_cast<int>(r.u32le("channels"));
  if (h <= 0 || w <= 0 || c <= 0 || static_cast<std::int64_t>(h) * w * c > (1LL << 31))
    throw IoError(path + ": implausible RHDR dimensions");
  HDRImage img{Tensor({h, w, c})};
  r.need(static_cast<std::size_t>(img.data.size()) * 4, "payload");
  for (std::int64_t i = 0; i < img.data.size(); ++i) img.data[i] = r.f32le("payload");
  if (r.remaining() != 0) throw IoError(path + ": trailing bytes");
  return img;
}

// --------------------------------------------------------------------------
// parameter checkpoints: RHNP container

inline constexpr std::uint32_t kRhnpVersion = 1;

inline void save_params(const ParamStore& store, const std::string& path) {
  std::string out = "RHNP";
  detail::put_u32le(out, kRhnpVersion);
  detail::put_u32le(out, static_cast<std::uint32_t>(store.count()));
  for (const auto& [name, t] : store.items) {
    if (name.size() > 0xffff) throw IoError("save_params: name too long");
    detail::put_u16le(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (int d : t.shape) detail::put_u32le(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) detail::put_f32le(out, static_cast<float>(v));
  }
  detail::write_file(path, out);
}

inline ParamStore load_params(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  if (r.bytes(4, "magic") != "RHNP") throw IoError(path + ": bad RHNP magic");
  const std::uint32_t version = r.u32le("version");
  if (version != kRhnpVersion)
    throw IoError(path + ": unsupported RHNP version " + std::to_string(version));
  const std::uint32_t count = r.u32le("count");
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16le("name length");
    const std::string name = r.bytes(len, "name");
    const int rank = r.u8("rank");
    Shape shape(static_cast<std::size_t>(rank));
    for (int d = 0; d < rank; ++d) shape[static_cast<std::size_t>(d)] = static_cast<int>(r.u32le("dim"));
    Tensor& t = store.create(name, shape);
    for (std::int64_t j = 0; j < t.size(); ++j) t[j] = static_cast<double>(r.f32le("data"));
  }
  if (r.remaining() != 0) throw IoError(path + ": trailing bytes");
  return store;
}

/// Snap every value to float32 precision (the checkpoint resolution).
inline void quantize_f32(ParamStore& store) {
  for (auto& [name, t] : store.items)
    for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

// --------------------------------------------------------------------------
// configs

inline void to_json(json& j, const NetConfig& c) {
  j = json{{"base_width", c.base_width},
           {"unet_depth", c.unet_depth},
           {"gsg_stages", c.gsg_stages},
           {"blocks_per_stage", c.blocks_per_stage},
           {"window_size", c.window_size},
           {"heads", c.heads},
           {"leff_expansion", c.leff_expansion},
           {"mask_width", c.mask_width},
           {"use_dig", c.use_dig},
           {"use_gsg", c.use_gsg},
           {"use_soft_masks", c.use_soft_masks},
           {"activation", c.activation == Activation::Silu ? "silu" : "identity"}};
}

inline void from_json(const json& j, NetConfig& c) {
  NetConfig d;
  c.base_width = j.value("base_width", d.base_width);
  c.unet_depth = j.value("unet_depth", d.unet_depth);
  c.gsg_stages = j.value("gsg_stages", d.gsg_stages);
  c.blocks_per_stage = j.value("blocks_per_stage", d.blocks_per_stage);
  c.window_size = j.value("window_size", d.window_size);
  c.heads = j.value("heads", d.heads);
  c.leff_expansion = j.value("leff_expansion", d.leff_expansion);
  c.mask_width = j.value("mask_width", d.mask_width);
  c.use_dig = j.value("use_dig", d.use_dig);
  c.use_gsg = j.value("use_gsg", d.use_gsg);
  c.use_soft_masks = j.value("use_soft_masks", d.use_soft_masks);
  const std::string act = j.value("activation", "silu");
  if (act == "silu")
    c.activation = Activation::Silu;
  else if (act == "identity")
    c.activation = Activation::Identity;
  else
    throw IoError("NetConfig: unknown activation '" + act + "'");
  c.validate();
}

inline void to_json(json& j, const CameraProfile& p) {
  j = json{{"sensitivity", {p.sens_r, p.sens_g, p.sens_b}},
           {"bit_depth", p.bit_depth},
           {"black_level", p.black_level},
           {"white_level", p.white_level},
           {"read_noise_sigma", p.read_noise_sigma},
           {"shot_noise_gain", p.shot_noise_gain}};
}

inline void from_json(const json& j, CameraProfile& p) {
  CameraProfile d;
  if (j.contains("sensitivity")) {
    const auto& s = j.at("sensitivity");
    p.sens_r = s.at(0).get<double>();
    p.sens_g = s.at(1).get<double>();
    p.sens_b = s.at(2).get<double>();
  }
  p.bit_depth = j.value("bit_depth", d.bit_depth);
  p.black_level = j.value("black_level", d.black_level);
  p.white_level = j.value("white_level", d.white_level);
  p.read_noise_sigma = j.value("read_noise_sigma", d.read_noise_sigma);
  p.shot_noise_gain = j.value("shot_noise_gain", d.shot_noise_gain);
  p.validate();
}

// --------------------------------------------------------------------------
// dataset manifest

struct ManifestEntry {
  std::string scene_id;
  std::string raw_path;  // 0 EV input
  std::string hdr_path;  // merged ground truth
  std::vector<std::string> bracket_paths;
  CameraProfile profile;
};

struct DatasetManifest {
  int format_version = 1;
  std::vector<ManifestEntry> entries;
};

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  json j = {{"format_version", m.format_version}, {"entries", json::array()}};
  for (const auto& e : m.entries) {
    json je = {{"scene_id", e.scene_id},
               {"raw_path", e.raw_path},
               {"hdr_path", e.hdr_path},
               {"bracket_paths", e.bracket_paths},
               {"profile", e.profile}};
    j["entries"].push_back(std::move(je));
  }
  detail::write_file(path, j.dump(2) + "\n");
}

/// Load a manifest; relative paths are resolved against the manifest's
/// directory and must exist.
inline DatasetManifest load_manifest(const std::string& path) {
  json j = json::parse(detail::read_file(path));
  DatasetManifest m;
  m.format_version = j.value("format_version", 0);
  if (m.format_version != 1)
    throw IoError(path + ": unsupported manifest format_version " +
                  std::to_string(m.format_version));
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    if (fp.is_relative()) fp = base / fp;
    if (!std::filesystem::exists(fp)) throw IoError(path + ": missing file '" + fp.string() + "'");
    return std::filesystem::absolute(fp).string();
  };
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.scene_id = je.at("scene_id").get<std::string>();
    e.raw_path = resolve(je.at("raw_path").get<std::string>());
    e.hdr_path = resolve(je.at("hdr_path").get<std::string>());
    for (const auto& bp : je.value("bracket_paths", std::vector<std::string>{}))
      e.bracket_paths.push_back(resolve(bp));
    e.profile = je.value("profile", CameraProfile{});
    m.entries.push_back(std::move(e));
  }
  return m;
}

// --------------------------------------------------------------------------
// channel statistics

struct ChannelReport {
  double mean_counts_r = 0.0, mean_counts_g = 0.0, mean_counts_b = 0.0;
  double mean_norm_r = 0.0, mean_norm_g = 0.0, mean_norm_b = 0.0;
  std::vector<Tensor> dominant_maps;  // per scene, (h, w, 1) indices 0=R 1=G 2=B
  std::vector<std::string> scene_ids;
  double green_fraction = 0.0;  // pooled over all dominant maps
};

/// Channel-wise means over the 0 EV raws plus per-scene dominant-channel
/// maps (ties go to green).
inline ChannelReport analyze_channels(const DatasetManifest& manifest) {
  if (manifest.entries.empty()) throw ValueError("analyze_channels: empty manifest");
  ChannelReport rep;
  double sum_counts[3] = {0, 0, 0};
  double sum_norm[3] = {0, 0, 0};
  std::int64_t sites[3] = {0, 0, 0};
  std::int64_t green_px = 0, total_px = 0;

  for (const auto& e : manifest.entries) {
    RawMosaic m = read_raw(e.raw_path);
    PackedRaw p = pack(m);
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        const int chan = (y % 2 == 0) ? (x % 2 == 0 ? 0 : 1) : (x % 2 == 0 ? 1 : 2);
        sum_counts[chan] += m.at(y, x);
        ++sites[chan];
      }
    Tensor dom({p.height(), p.width(), 1});
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x) {
        const double r = p.data.at(y, x, kChanR);
        const double g = 0.5 * (p.data.at(y, x, kChanG1) + p.data.at(y, x, kChanG2));
        const double b = p.data.at(y, x, kChanB);
        sum_norm[0] += r;
        sum_norm[1] += g;
        sum_norm[2] += b;
        int idx = 1;  // ties go to green
        if (r > g && r >= b)
          idx = 0;
        else if (b > g && b > r)
          idx = 2;
        dom.at(y, x, 0) = idx;
        green_px += idx == 1 ? 1 : 0;
        ++total_px;
      }
    rep.dominant_maps.push_back(std::move(dom));
    rep.scene_ids.push_back(e.scene_id);
  }
  rep.mean_counts_r = sum_counts[0] / static_cast<double>(sites[0]);
  rep.mean_counts_g = sum_counts[1] / static_cast<double>(sites[1]);
  rep.mean_counts_b = sum_counts[2] / static_cast<double>(sites[2]);
  rep.mean_norm_r = sum_norm[0] / static_cast<double>(total_px);
  rep.mean_norm_g = sum_norm[1] / static_cast<double>(total_px);
  rep.mean_norm_b = sum_norm[2] / static_cast<double>(total_px);
  rep.green_fraction = static_cast<double>(green_px) / static_cast<double>(total_px);
  return rep;
}

/// 8-bit PGM index image (0=R, 1=G, 2=B).
inline void write_index_pgm(const Tensor& map, const std::string& path) {
  std::string out = "P5\n" + std::to_string(map.dim(1)) + " " + std::to_string(map.dim(0)) + "\n255\n";
  for (double v : map.data) out.push_back(static_cast<char>(static_cast<int>(v)));
  detail::write_file(path, out);
}

inline json channel_report_json(const ChannelReport& rep) {
  return json{{"mean_counts", {{"r", rep.mean_counts_r}, {"g", rep.mean_counts_g}, {"b", rep.mean_counts_b}}},
              {"mean_normalized", {{"r", rep.mean_norm_r}, {"g", rep.mean_norm_g}, {"b", rep.mean_norm_b}}},
              {"green_fraction", rep.green_fraction},
              {"scenes", rep.scene_ids}};
}

}  // namespace rawhdr
