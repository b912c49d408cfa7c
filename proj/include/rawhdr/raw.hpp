#pragma once

#include <cstdint>

#include "rawhdr/core.hpp"

// Bayer Raw and HDR image types plus the packing transforms feeding the
// network. Packed channel order is fixed as [R, G1, B, G2]: for the RGGB
// 2x2 tile at (2i, 2j), R = tile[0,0], G1 = tile[0,1], G2 = tile[1,0],
// B = tile[1,1].

namespace rawhdr {

enum class Cfa { RGGB };

inline constexpr int kChanR = 0;
inline constexpr int kChanG1 = 1;
inline constexpr int kChanB = 2;
inline constexpr int kChanG2 = 3;

/// Integer Bayer mosaic in sensor counts.
struct RawMosaic {
  std::vector<std::uint16_t> data;  // row-major H x W
  int height = 0;
  int width = 0;
  Cfa cfa = Cfa::RGGB;
  int black_level = 0;
  int white_level = 0;
  int bit_depth = 0;
  double exposure_ev = 0.0;

  std::uint16_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  void validate() const {
    if (height <= 0 || width <= 0) throw ShapeError("RawMosaic: empty frame");
    if (height % 2 != 0 || width % 2 != 0)
      throw ShapeError("RawMosaic: dimensions must be even, got " + std::to_string(height) + "x" +
                       std::to_string(width));
    if (bit_depth < 1 || bit_depth > 16) throw ValueError("RawMosaic: bit_depth out of range");
    const int maxcount = (1 << bit_depth) - 1;
    if (!(0 <= black_level && black_level < white_level && white_level <= maxcount))
      throw ValueError("RawMosaic: invalid black/white levels");
    if (data.size() != static_cast<std::size_t>(height) * width)
      throw ShapeError("RawMosaic: data size mismatch");
    for (auto v : data)
      if (v > maxcount) throw ValueError("RawMosaic: sample exceeds bit depth");
  }
};

/// Normalized half-resolution (h, w, 4) view of a mosaic, channels [R, G1, B, G2].
struct PackedRaw {
  Tensor data;  // (h, w, 4) in [0, 1]

  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }

  void validate() const {
    if (data.rank() != 3 || data.dim(2) != 4)
      throw ShapeError("PackedRaw: expected (h, w, 4), got " + shape_str(data.shape));
    for (double v : data.data)
      if (!(v >= 0.0 && v <= 1.0)) throw ValueError("PackedRaw: values must lie in [0, 1]");
  }
};

/// Linear radiance in reference-exposure units, packed layout (h, w, 4).
struct HDRImage {
  Tensor data;

  int height() const { return data.dim(0); }
  int width() const { return data.dim(1); }

  void validate() const {
    if (data.rank() != 3) throw ShapeError("HDRImage: rank 3 expected");
    for (double v : data.data)
      if (!std::isfinite(v) || v < 0.0) throw ValueError("HDRImage: values must be finite and >= 0");
  }
};

/// Green and red/blue guide channels extracted from a PackedRaw.
struct GuidePair {
  Tensor green;    // (h, w, 2) = [G1, G2]
  Tensor redblue;  // (h, w, 2) = [R, B]
};

/// Black-level subtract and scale to [0, 1], clamping noise below black.
inline Tensor normalize(const RawMosaic& m) {
  m.validate();
  if (m.white_level == m.black_level) throw ValueError("normalize: degenerate levels");
  const double scale = 1.0 / (m.white_level - m.black_level);
  Tensor out({m.height, m.width, 1});
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const double v = (static_cast<double>(m.data[i]) - m.black_level) * scale;
    out[static_cast<std::int64_t>(i)] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

inline PackedRaw pack(const RawMosaic& m) {
  m.validate();
  if (m.cfa != Cfa::RGGB) throw ValueError("pack: only RGGB is supported");
  Tensor norm = normalize(m);
  const int h = m.height / 2, w = m.width / 2;
  PackedRaw out{Tensor({h, w, 4})};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.data.at(y, x, kChanR) = norm.at(2 * y, 2 * x, 0);
      out.data.at(y, x, kChanG1) = norm.at(2 * y, 2 * x + 1, 0);
      out.data.at(y, x, kChanG2) = norm.at(2 * y + 1, 2 * x, 0);
      out.data.at(y, x, kChanB) = norm.at(2 * y + 1, 2 * x + 1, 0);
    }
  }
  return out;
}

/// Inverse of pack's spatial arrangement, in the normalized domain.
inline Tensor unpack(const PackedRaw& p) {
  p.validate();
  const int h = p.height(), w = p.width();
  Tensor out({2 * h, 2 * w, 1});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(2 * y, 2 * x, 0) = p.data.at(y, x, kChanR);
      out.at(2 * y, 2 * x + 1, 0) = p.data.at(y, x, kChanG1);
      out.at(2 * y + 1, 2 * x, 0) = p.data.at(y, x, kChanG2);
      out.at(2 * y + 1, 2 * x + 1, 0) = p.data.at(y, x, kChanB);
    }
  }
  return out;
}

inline GuidePair extract_guides(const PackedRaw& p) {
  p.validate();
  const int h = p.height(), w = p.width();
  GuidePair g{Tensor({h, w, 2}), Tensor({h, w, 2})};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      g.green.at(y, x, 0) = p.data.at(y, x, kChanG1);
      g.green.at(y, x, 1) = p.data.at(y, x, kChanG2);
      g.redblue.at(y, x, 0) = p.data.at(y, x, kChanR);
      g.redblue.at(y, x, 1) = p.data.at(y, x, kChanB);
    }
  }
  return g;
}

}  // namespace rawhdr
