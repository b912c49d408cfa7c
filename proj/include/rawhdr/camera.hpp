#pragma once

#include <bit>
#include <optional>

#include "rawhdr/core.hpp"
#include "rawhdr/raw.hpp"

// Synthetic HDR scenes and the Raw capture model: channel-variant gains,
// exposure scaling, clipping, quantization, optional Poisson-Gaussian noise.

namespace rawhdr {

/// Linear RGB radiance at reference exposure.
struct SceneHDR {
  Tensor radiance;  // (H, W, 3)

  int height() const { return radiance.dim(0); }
  int width() const { return radiance.dim(1); }

  void validate() const {
    if (radiance.rank() != 3 || radiance.dim(2) != 3) throw ShapeError("SceneHDR: (H, W, 3) expected");
    for (double v : radiance.data)
      if (!std::isfinite(v) || v < 0.0) throw ValueError("SceneHDR: radiance must be finite and >= 0");
  }
};

struct CameraProfile {
  double sens_r = 0.553;  // channel gains relative to green,
  double sens_g = 1.0;    // derived from measured channel means
  double sens_b = 0.740;  // 704.93/1273.61 and 942.00/1273.61
  int bit_depth = 14;
  int black_level = 512;
  int white_level = 16383;
  double read_noise_sigma = 0.0;  // counts
  double shot_noise_gain = 0.0;   // counts per electron-equivalent

  void validate() const {
    if (!(sens_g > sens_r && sens_g > sens_b))
      throw ValueError("CameraProfile: green sensitivity must dominate");
    if (sens_r <= 0.0 || sens_b <= 0.0) throw ValueError("CameraProfile: sensitivities must be positive");
    if (read_noise_sigma < 0.0 || shot_noise_gain < 0.0)
      throw ValueError("CameraProfile: noise parameters must be >= 0");
    if (bit_depth < 1 || bit_depth > 16) throw ValueError("CameraProfile: bit_depth out of range");
    const int maxcount = (1 << bit_depth) - 1;
    if (!(0 <= black_level && black_level < white_level && white_level <= maxcount))
      throw ValueError("CameraProfile: invalid levels");
  }

  double sensitivity(int channel_rgb) const {
    return channel_rgb == 0 ? sens_r : (channel_rgb == 1 ? sens_g : sens_b);
  }
};

struct ExposureStack {
  std::vector<RawMosaic> mosaics;
  std::vector<double> evs;

  void validate() const {
    if (mosaics.empty() || mosaics.size() != evs.size())
      throw ValueError("ExposureStack: needs one EV per mosaic and at least one frame");
    for (std::size_t i = 0; i < mosaics.size(); ++i) {
      mosaics[i].validate();
      if (mosaics[i].height != mosaics[0].height || mosaics[i].width != mosaics[0].width)
        throw ShapeError("ExposureStack: frame shapes differ");
      if (mosaics[i].black_level != mosaics[0].black_level ||
          mosaics[i].white_level != mosaics[0].white_level)
        throw ValueError("ExposureStack: frame levels differ");
      if (i > 0 && !(evs[i] > evs[i - 1])) throw ValueError("ExposureStack: EVs must be strictly increasing");
    }
  }
};

namespace detail {

// smooth value noise: bilinear interpolation of a seeded lattice
inline Tensor value_noise(int H, int W, int cell, Rng& rng) {
  const int gh = H / cell + 2, gw = W / cell + 2;
  Tensor grid({gh, gw, 1});
  for (auto& v : grid.data) v = rng.uniform();
  Tensor out({H, W, 1});
  for (int y = 0; y < H; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int x = 0; x < W; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      const double v00 = grid.at(y0, x0, 0), v01 = grid.at(y0, x0 + 1, 0);
      const double v10 = grid.at(y0 + 1, x0, 0), v11 = grid.at(y0 + 1, x0 + 1, 0);
      out.at(y, x, 0) = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    }
  }
  return out;
}

struct Tint {
  double r, g, b;
};

// near-neutral colors keep the green channel dominant after sensor gains
inline Tint draw_tint(Rng& rng) {
  return {rng.uniform(0.85, 1.0), rng.uniform(0.85, 1.0), rng.uniform(0.85, 1.0)};
}

// Shapes carry a skirt that ramps log-radiance linearly over kEdgeWidth
// pixels. Cores still clip hard in a 0 EV capture, but neighboring Bayer
// sites never differ by more than one exposure window, which keeps bracket
// coverage near one.
inline constexpr double kEdgeWidth = 12.0;

inline void blend_site(Tensor& rad, int y, int x, double value, const Tint& t, double mix) {
  const double tint[3] = {t.r, t.g, t.b};
  for (int c = 0; c < 3; ++c) {
    const double cur = std::max(rad.at(y, x, c), 1e-12);
    rad.at(y, x, c) = std::exp((1.0 - mix) * std::log(cur) + mix * std::log(value * tint[c]));
  }
}

inline void fill_disk(Tensor& rad, int cy, int cx, int radius, double value, const Tint& t) {
  const int H = rad.dim(0), W = rad.dim(1);
  const int reach = radius + static_cast<int>(kEdgeWidth) + 1;
  for (int y = std::max(0, cy - reach); y <= std::min(H - 1, cy + reach); ++y)
    for (int x = std::max(0, cx - reach); x <= std::min(W - 1, cx + reach); ++x) {
      const double r = std::hypot(y - cy, x - cx);
      if (r <= radius)
        blend_site(rad, y, x, value, t, 1.0);
      else if (r < radius + kEdgeWidth)
        blend_site(rad, y, x, value, t, 1.0 - (r - radius) / kEdgeWidth);
    }
}

inline void fill_rect(Tensor& rad, int cy, int cx, int hh, int hw, double value, const Tint& t) {
  const int H = rad.dim(0), W = rad.dim(1);
  const int reach = static_cast<int>(kEdgeWidth) + 1;
  for (int y = std::max(0, cy - hh - reach); y <= std::min(H - 1, cy + hh + reach); ++y)
    for (int x = std::max(0, cx - hw - reach); x <= std::min(W - 1, cx + hw + reach); ++x) {
      const double dy = std::max(std::abs(y - cy) - hh, 0);
      const double dx = std::max(std::abs(x - cx) - hw, 0);
      const double r = std::hypot(dy, dx);
      if (r <= 0.0)
        blend_site(rad, y, x, value, t, 1.0);
      else if (r < kEdgeWidth)
        blend_site(rad, y, x, value, t, 1.0 - r / kEdgeWidth);
    }
}

// 2x2 neutral block pinning the scene's extreme values
inline void fill_marker(Tensor& rad, int cy, int cx, double value) {
  const int H = rad.dim(0), W = rad.dim(1);
  const int y0 = std::clamp(cy & ~1, 0, H - 2), x0 = std::clamp(cx & ~1, 0, W - 2);
  for (int y = y0; y < y0 + 2; ++y)
    for (int x = x0; x < x0 + 2; ++x)
      for (int c = 0; c < 3; ++c) rad.at(y, x, c) = value;
}

}  // namespace detail

/// Deterministic synthetic scene: smooth value-noise base, hard-edged bright
/// emitters, deep shadow wells, and one 2x2 marker block at each extreme so
/// the scene spans at least dynamic_range_bits stops.
inline SceneHDR render_scene(std::uint64_t seed, int H, int W, int dynamic_range_bits = 20,
                             std::optional<double> constant_fill = std::nullopt) {
  if (H <= 0 || W <= 0 || H % 2 != 0 || W % 2 != 0)
    throw ShapeError("render_scene: H and W must be positive and even");
  if (dynamic_range_bits < 8 || dynamic_range_bits > 24)
    throw ValueError("render_scene: dynamic_range_bits must lie in [8, 24]");

  SceneHDR scene{Tensor({H, W, 3})};
  if (constant_fill) {
    if (*constant_fill < 0.0) throw ValueError("render_scene: constant fill must be >= 0");
    std::fill(scene.radiance.data.begin(), scene.radiance.data.end(), *constant_fill);
    return scene;
  }

  Rng rng(mix_seed(seed, 0xace5));
  Tensor coarse = detail::value_noise(H, W, std::max(8, H / 8), rng);
  Tensor fine = detail::value_noise(H, W, 8, rng);
  const detail::Tint base_tint = detail::draw_tint(rng);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double v = 0.08 + 0.45 * (0.85 * coarse.at(y, x, 0) + 0.15 * fine.at(y, x, 0));
      scene.radiance.at(y, x, 0) = v * base_tint.r;
      scene.radiance.at(y, x, 1) = v * base_tint.g;
      scene.radiance.at(y, x, 2) = v * base_tint.b;
    }

  // shadow wells: regions under-exposed at 0 EV yet recoverable at +3 EV
  const int n_wells = 2 + rng.uniform_int(2);
  int well_cy = H / 4, well_cx = W / 4;
  for (int i = 0; i < n_wells; ++i) {
    const int cy = rng.uniform_int(H), cx = rng.uniform_int(W);
    const int radius = std::max(2, H / 16 + rng.uniform_int(std::max(1, H / 16)));
    const double v = rng.uniform(0.0075, 0.02);
    detail::fill_disk(scene.radiance, cy, cx, radius, v, detail::draw_tint(rng));
    if (i == 0) {
      well_cy = cy;
      well_cx = cx;
    }
  }

  // emitters: clipped at 0 EV, recoverable at -3 EV
  const int n_emit = 2 + rng.uniform_int(3);
  int emit_cy = 3 * H / 4, emit_cx = 3 * W / 4;
  for (int i = 0; i < n_emit; ++i) {
    const int cy = rng.uniform_int(H), cx = rng.uniform_int(W);
    const int radius = std::max(2, H / 20 + rng.uniform_int(std::max(1, H / 16)));
    const double v = rng.uniform(1.5, 6.0);
    if (rng.uniform() < 0.5)
      detail::fill_disk(scene.radiance, cy, cx, radius, v, detail::draw_tint(rng));
    else
      detail::fill_rect(scene.radiance, cy, cx, radius, radius + rng.uniform_int(radius + 1), v,
                        detail::draw_tint(rng));
    if (i == 0) {
      emit_cy = cy;
      emit_cx = cx;
    }
  }

  if (H >= 8 && W >= 8) {
    const double half_span = 0.5 * dynamic_range_bits + 0.1;
    if (((well_cy & ~1) == (emit_cy & ~1)) && ((well_cx & ~1) == (emit_cx & ~1)))
      emit_cx = (emit_cx + 4) % W;  // keep the two markers disjoint
    detail::fill_marker(scene.radiance, well_cy, well_cx, std::pow(2.0, -half_span));
    detail::fill_marker(scene.radiance, emit_cy, emit_cx, std::pow(2.0, half_span));
  }
  return scene;
}

/// Measured span in stops: log2(max / smallest positive value).
inline double scene_dynamic_range_bits(const SceneHDR& scene) {
  double mx = 0.0, mn = std::numeric_limits<double>::infinity();
  for (double v : scene.radiance.data) {
    mx = std::max(mx, v);
    if (v > 0.0) mn = std::min(mn, v);
  }
  if (!(mx > 0.0) || !std::isfinite(mn)) return 0.0;
  return std::log2(mx / mn);
}

/// Simulate one Raw exposure of a scene:
/// counts = clamp(round(2^ev * s_c * radiance * (white-black) + black + noise), 0, 2^bits - 1).
inline RawMosaic capture(const SceneHDR& scene, const CameraProfile& profile, double ev,
                         std::uint64_t seed) {
  scene.validate();
  profile.validate();
  const int H = scene.height(), W = scene.width();
  RawMosaic m;
  m.height = H;
  m.width = W;
  m.cfa = Cfa::RGGB;
  m.black_level = profile.black_level;
  m.white_level = profile.white_level;
  m.bit_depth = profile.bit_depth;
  m.exposure_ev = ev;
  m.data.resize(static_cast<std::size_t>(H) * W);

  const double gain = std::pow(2.0, ev);
  const double scale = profile.white_level - profile.black_level;
  const int maxcount = (1 << profile.bit_depth) - 1;
  const bool noisy = profile.read_noise_sigma > 0.0 || profile.shot_noise_gain > 0.0;
  Rng rng(mix_seed(seed, hash_str("capture") ^ std::bit_cast<std::uint64_t>(ev)));

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int chan = (y % 2 == 0) ? (x % 2 == 0 ? 0 : 1) : (x % 2 == 0 ? 1 : 2);
      const double s = profile.sensitivity(chan);
      double signal = gain * s * scene.radiance.at(y, x, chan) * scale;
      if (noisy) {
        signal += std::sqrt(std::max(profile.shot_noise_gain * signal, 0.0)) * rng.normal() +
                  profile.read_noise_sigma * rng.normal();
      }
      const double counts = std::round(signal + profile.black_level);
      m.at(y, x) = static_cast<std::uint16_t>(std::clamp(counts, 0.0, static_cast<double>(maxcount)));
    }
  }
  return m;
}

inline ExposureStack bracket(const SceneHDR& scene, const CameraProfile& profile,
                             std::vector<double> evs, std::uint64_t seed) {
  if (evs.empty()) throw ValueError("bracket: at least one EV required");
  ExposureStack stack;
  stack.evs = std::move(evs);
  for (std::size_t i = 0; i < stack.evs.size(); ++i)
    stack.mosaics.push_back(capture(scene, profile, stack.evs[i], mix_seed(seed, i + 1)));
  stack.validate();
  return stack;
}

inline ExposureStack bracket(const SceneHDR& scene, const CameraProfile& profile,
                             std::uint64_t seed) {
  return bracket(scene, profile, {-3.0, 0.0, 3.0}, seed);
}

/// Minimal ISP: G = mean(G1, G2), white balance equalizing the simulated
/// sensitivities, gamma 1/2.2, 8-bit quantization. WB and gamma have test
/// toggles.
inline Tensor simulate_srgb(const PackedRaw& packed, const CameraProfile& profile = CameraProfile{},
                            bool apply_wb = true, bool apply_gamma = true) {
  packed.validate();
  profile.validate();
  const int h = packed.height(), w = packed.width();
  Tensor out({h, w, 3});
  const double wb_r = profile.sens_g / profile.sens_r;
  const double wb_b = profile.sens_g / profile.sens_b;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double r = packed.data.at(y, x, kChanR);
      double g = 0.5 * (packed.data.at(y, x, kChanG1) + packed.data.at(y, x, kChanG2));
      double b = packed.data.at(y, x, kChanB);
      if (apply_wb) {
        r = std::min(r * wb_r, 1.0);
        b = std::min(b * wb_b, 1.0);
      }
      double rgb[3] = {r, g, b};
      for (int c = 0; c < 3; ++c) {
        double v = rgb[c];
        if (apply_gamma) v = std::pow(v, 1.0 / 2.2);
        out.at(y, x, c) = std::round(v * 255.0) / 255.0;
      }
    }
  }
  return out;
}

}  // namespace rawhdr
