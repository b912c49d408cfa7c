#pragma once

#include "rawhdr/core.hpp"

// Evaluation metrics: linear PSNR, PSNR-mu on tone-mapped images, SSIM and
// MS-SSIM. The mu-law mapper normalizes by a reference peak before
// compression.

namespace rawhdr {

/// T(x) = log(1 + mu*clamp(x/peak, 0, 1)) / log(1 + mu)
inline Tensor mu_tonemap(const Tensor& x, double mu = 5000.0, double peak = 1.0) {
  if (mu <= 0.0) throw ValueError("mu_tonemap: mu must be positive");
  if (peak <= 0.0) throw ValueError("mu_tonemap: peak must be positive");
  const double denom = std::log1p(mu);
  Tensor out = x;
  for (auto& v : out.data) {
    if (v < 0.0) throw ValueError("mu_tonemap: negative input");
    v = std::log1p(mu * std::clamp(v / peak, 0.0, 1.0)) / denom;
  }
  return out;
}

inline double mu_tonemap_scalar(double x, double mu, double peak) {
  return std::log1p(mu * std::clamp(x / peak, 0.0, 1.0)) / std::log1p(mu);
}

inline double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// 10*log10(peak^2 / MSE); +inf when the images are identical.
inline double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (peak <= 0.0) throw ValueError("psnr: peak must be positive");
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

/// PSNR between tone-mapped images; peak is shared by both sides.
inline double psnr_mu(const Tensor& a, const Tensor& b, double mu = 5000.0, double peak = 1.0) {
  return psnr(mu_tonemap(a, mu, peak), mu_tonemap(b, mu, peak), 1.0);
}

/// Cap +inf sentinels for tabular output.
inline double cap_db(double v, double cap = 100.0) { return std::min(v, cap); }

inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

namespace detail {

inline const std::vector<double>& gaussian_window11() {
  static const std::vector<double> g = [] {
    std::vector<double> w(11);
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5.0;
      w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
      sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return g;
}

// separable 11-tap filtering of a single plane, valid region only
inline Tensor filter_valid(const Tensor& plane) {
  const auto& g = gaussian_window11();
  const int k = 11;
  const int H = plane.dim(0), W = plane.dim(1);
  Tensor rows({H, W - k + 1, 1});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x + k <= W; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[static_cast<std::size_t>(i)] * plane.at(y, x + i, 0);
      rows.at(y, x, 0) = s;
    }
  Tensor out({H - k + 1, W - k + 1, 1});
  for (int y = 0; y + k <= H; ++y)
    for (int x = 0; x < W - k + 1; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[static_cast<std::size_t>(i)] * rows.at(y + i, x, 0);
      out.at(y, x, 0) = s;
    }
  return out;
}

inline Tensor extract_plane(const Tensor& x, int c) {
  Tensor out({x.dim(0), x.dim(1), 1});
  for (int y = 0; y < x.dim(0); ++y)
    for (int xx = 0; xx < x.dim(1); ++xx) out.at(y, xx, 0) = x.at(y, xx, c);
  return out;
}

inline Tensor mul_planes(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

struct SsimResult {
  double mean_ssim = 0.0;
  double mean_cs = 0.0;
};

inline SsimResult ssim_maps(const Tensor& a, const Tensor& b, double dynamic_range = 1.0) {
  require_same_shape(a, b, "ssim");
  if (a.rank() != 3) throw ShapeError("ssim: rank 3 expected");
  const int H = a.dim(0), W = a.dim(1), C = a.dim(2);
  if (H < 11 || W < 11) throw ShapeError("ssim: spatial dims must be >= 11");
  const double c1 = (kSsimK1 * dynamic_range) * (kSsimK1 * dynamic_range);
  const double c2 = (kSsimK2 * dynamic_range) * (kSsimK2 * dynamic_range);

  double total_ssim = 0.0, total_cs = 0.0;
  std::int64_t count = 0;
  for (int c = 0; c < C; ++c) {
    Tensor pa = extract_plane(a, c);
    Tensor pb = extract_plane(b, c);
    Tensor mu_a = filter_valid(pa);
    Tensor mu_b = filter_valid(pb);
    Tensor a2 = filter_valid(mul_planes(pa, pa));
    Tensor b2 = filter_valid(mul_planes(pb, pb));
    Tensor ab = filter_valid(mul_planes(pa, pb));
    for (std::int64_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = a2[i] - ma * ma;
      const double vb = b2[i] - mb * mb;
      const double cov = ab[i] - ma * mb;
      const double l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
      const double cs = (2.0 * cov + c2) / (va + vb + c2);
      total_ssim += l * cs;
      total_cs += cs;
      ++count;
    }
  }
  return {total_ssim / static_cast<double>(count), total_cs / static_cast<double>(count)};
}

// dyadic downsampling: 2x2 mean pool, odd edges dropped
inline Tensor mean_pool2(const Tensor& x) {
  const int H = x.dim(0) / 2, W = x.dim(1) / 2, C = x.dim(2);
  Tensor out({H, W, C});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c)
        out.at(y, xx, c) = 0.25 * (x.at(2 * y, 2 * xx, c) + x.at(2 * y, 2 * xx + 1, c) +
                                   x.at(2 * y + 1, 2 * xx, c) + x.at(2 * y + 1, 2 * xx + 1, c));
  return out;
}

}  // namespace detail

/// Standard SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1,
/// averaged over channels.
inline double ssim(const Tensor& a, const Tensor& b) { return detail::ssim_maps(a, b).mean_ssim; }

/// MS-SSIM with the published five-scale weights [0.0448, 0.2856, 0.3001,
/// 0.2363, 0.1333] and dyadic downsampling.
inline double ms_ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ms_ssim");
  static const double weights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  if (a.dim(0) < 11 * 16 || a.dim(1) < 11 * 16)
    throw ShapeError("ms_ssim: spatial dims must be >= 176 for five scales");
  Tensor ca = a, cb = b;
  double result = 1.0;
  for (int scale = 0; scale < 5; ++scale) {
    detail::SsimResult r = detail::ssim_maps(ca, cb);
    if (scale < 4) {
      result *= std::pow(std::max(r.mean_cs, 0.0), weights[scale]);
      ca = detail::mean_pool2(ca);
      cb = detail::mean_pool2(cb);
    } else {
      result *= std::pow(std::max(r.mean_ssim, 0.0), weights[scale]);
    }
  }
  return result;
}

}  // namespace rawhdr
