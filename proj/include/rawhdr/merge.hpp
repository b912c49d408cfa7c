#pragma once

#include "rawhdr/camera.hpp"
#include "rawhdr/raw.hpp"

// Debevec-style exposure fusion. Operates on packed 4-channel data so the
// ground truth aligns with the network output layout; result is linear
// radiance at reference (0 EV) exposure.

namespace rawhdr {

inline constexpr double kMergeZLo = 0.02;
inline constexpr double kMergeZHi = 0.98;

/// Triangular weight on [z_lo, z_hi], zero outside.
inline double merge_weight(double z, double z_lo = kMergeZLo, double z_hi = kMergeZHi) {
  return std::max(0.0, std::min(z - z_lo, z_hi - z));
}

inline HDRImage merge(const ExposureStack& stack) {
  if (stack.mosaics.empty()) throw ValueError("merge: empty stack");
  stack.validate();

  const std::size_t n = stack.mosaics.size();
  std::vector<PackedRaw> packed;
  packed.reserve(n);
  for (const auto& m : stack.mosaics) packed.push_back(pack(m));

  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = std::pow(2.0, stack.evs[i]);

  const int h = packed[0].height(), w = packed[0].width();
  HDRImage out{Tensor({h, w, 4})};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 4; ++c) {
        double num = 0.0, den = 0.0;
        bool all_above = true, all_below = true;
        for (std::size_t i = 0; i < n; ++i) {
          const double z = packed[i].data.at(y, x, c);
          const double wt = merge_weight(z);
          num += wt * (z / t[i]);
          den += wt;
          if (z < kMergeZHi) all_above = false;
          if (z > kMergeZLo) all_below = false;
        }
        if (den > 0.0) {
          out.data.at(y, x, c) = num / den;
        } else if (all_above) {
          // saturated everywhere: shortest exposure is least clipped
          out.data.at(y, x, c) = packed[0].data.at(y, x, c) / t[0];
        } else if (all_below) {
          // dark everywhere: longest exposure has the best SNR
          out.data.at(y, x, c) = packed[n - 1].data.at(y, x, c) / t[n - 1];
        } else {
          // zero weight but mixed (noise): take the sample nearest mid-range
          std::size_t best = 0;
          double best_d = std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < n; ++i) {
            const double d = std::fabs(packed[i].data.at(y, x, c) - 0.5);
            if (d < best_d) {
              best_d = d;
              best = i;
            }
          }
          out.data.at(y, x, c) = packed[best].data.at(y, x, c) / t[best];
        }
      }
    }
  }
  return out;
}

/// Fraction of packed pixels with at least one exposure whose four channel
/// weights are all positive.
inline double coverage_report(const ExposureStack& stack) {
  stack.validate();
  std::vector<PackedRaw> packed;
  for (const auto& m : stack.mosaics) packed.push_back(pack(m));
  const int h = packed[0].height(), w = packed[0].width();
  std::int64_t covered = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool ok = false;
      for (std::size_t i = 0; i < packed.size() && !ok; ++i) {
        bool all_pos = true;
        for (int c = 0; c < 4; ++c)
          if (merge_weight(packed[i].data.at(y, x, c)) <= 0.0) {
            all_pos = false;
            break;
          }
        ok = all_pos;
      }
      covered += ok ? 1 : 0;
    }
  }
  return static_cast<double>(covered) / (static_cast<double>(h) * w);
}

}  // namespace rawhdr
