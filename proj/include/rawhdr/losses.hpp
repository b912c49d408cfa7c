#pragma once

#include "rawhdr/masks.hpp"
#include "rawhdr/raw.hpp"

// Training objective: log-space L2 reconstruction, a pluggable perceptual
// term, and the mask constraint, combined as rec + tau1*perc + tau2*mask.

namespace rawhdr {

inline constexpr double kLogEps = 1.0 / 65536.0;  // one 16-bit quantization step

inline Var log_l2_graph(const Var& h, const Var& href, double eps = kLogEps) {
  require_same_shape(h->value, href->value, "log_l2");
  return mean_all(square(sub(log_eps(h, eps), log_eps(href, eps))));
}

inline double log_l2(const HDRImage& h, const HDRImage& href, double eps = kLogEps) {
  require_same_shape(h.data, href.data, "log_l2");
  double s = 0.0;
  for (std::int64_t i = 0; i < h.data.size(); ++i) {
    if (h.data[i] < 0.0 || href.data[i] < 0.0) throw ValueError("log_l2: negative input");
    const double d = std::log(h.data[i] + eps) - std::log(href.data[i] + eps);
    s += d * d;
  }
  return s / static_cast<double>(h.data.size());
}

/// Perceptual plug-in contract: nonnegative scalar, differentiable in the
/// first argument.
using PerceptualPlugin = std::function<Var(const Var& h, const Tensor& href)>;

namespace detail {
// replicate-padded binomial blur; kernel sums to one everywhere so adding a
// constant to the input adds the same constant to the output
inline Var binomial_blur3(const Var& x) {
  const int C = x->value.dim(2);
  Tensor k({3, 3, C});
  const double base[9] = {1, 2, 1, 2, 4, 2, 1, 2, 1};
  for (int i = 0; i < 9; ++i)
    for (int c = 0; c < C; ++c) k[static_cast<std::int64_t>(i) * C + c] = base[i] / 16.0;
  Var padded = depthwise3x3(pad_replicate1(x), constant(std::move(k)), nullptr);
  return crop2d(padded, 1, 1, x->value.dim(0), x->value.dim(1));
}
}  // namespace detail

/// Structural proxy: L1 between mu-law companded gradient maps across a
/// Gaussian pyramid. Gradients are taken before companding, so the result is
/// exactly invariant to a DC offset of either input.
inline Var perceptual_proxy_graph(const Var& h, const Tensor& href, double mu = 5000.0) {
  require_same_shape(h->value, href, "perceptual_proxy");
  if (h->value.dim(0) < 2 || h->value.dim(1) < 2) return constant(Tensor::scalar(0.0));
  const double peak = std::max(href.max_value(), kLogEps);
  Var a = mul_scalar(h, 1.0 / peak);
  Var b = mul_scalar(constant(href), 1.0 / peak);

  int levels = 1;
  while (levels < 3 && (h->value.dim(0) >> levels) >= 2 && (h->value.dim(1) >> levels) >= 2)
    ++levels;

  Var total = constant(Tensor::scalar(0.0));
  for (int l = 0; l < levels; ++l) {
    Var gx = mean_all(abs_val(sub(mulaw_signed(diff_x(a), mu), mulaw_signed(diff_x(b), mu))));
    Var gy = mean_all(abs_val(sub(mulaw_signed(diff_y(a), mu), mulaw_signed(diff_y(b), mu))));
    total = add(total, add(gx, gy));
    if (l + 1 < levels) {
      a = subsample2(detail::binomial_blur3(a));
      b = subsample2(detail::binomial_blur3(b));
    }
  }
  return mul_scalar(total, 1.0 / (2.0 * levels));
}

inline PerceptualPlugin default_perceptual_plugin(double mu = 5000.0) {
  return [mu](const Var& h, const Tensor& href) { return perceptual_proxy_graph(h, href, mu); };
}

inline double perceptual_loss(const HDRImage& h, const HDRImage& href,
                              const PerceptualPlugin& plugin = default_perceptual_plugin()) {
  require_same_shape(h.data, href.data, "perceptual_loss");
  return plugin(constant(h.data), href.data)->value[0];
}

struct LossVars {
  Var total;
  Var rec;
  Var perc;
  Var mask;  // null when the mask term is absent
};

inline LossVars total_loss_graph(const Var& h, const Tensor& href, const MaskVars* soft,
                                 const MaskTriple* hard, double tau1 = 0.5, double tau2 = 0.5,
                                 const PerceptualPlugin& plugin = default_perceptual_plugin()) {
  LossVars out;
  out.rec = log_l2_graph(h, constant(href));
  out.perc = plugin(h, href);
  out.total = add(out.rec, mul_scalar(out.perc, tau1));
  if (soft != nullptr && hard != nullptr) {
    out.mask = mask_loss_graph(*soft, *hard);
    out.total = add(out.total, mul_scalar(out.mask, tau2));
  }
  return out;
}

inline double total_loss(const HDRImage& h, const HDRImage& href, const MaskTriple& soft,
                         const MaskTriple& hard, double tau1 = 0.5, double tau2 = 0.5,
                         const PerceptualPlugin& plugin = default_perceptual_plugin()) {
  return log_l2(h, href) + tau1 * perceptual_loss(h, href, plugin) +
         tau2 * mask_loss(soft, hard);
}

}  // namespace rawhdr
