#pragma once

#include "rawhdr/params.hpp"
#include "rawhdr/raw.hpp"

// Exposure masks. Hard masks threshold the brightest channel of each packed
// pixel; soft masks come from two small residual networks behind a sigmoid.
// well = max(1 - over - under, 0) in both cases.

namespace rawhdr {

struct MaskTriple {
  Tensor over;   // (h, w, 1) in [0, 1]
  Tensor under;  // (h, w, 1) in [0, 1]
  Tensor well;   // (h, w, 1) in [0, 1]

  void validate() const {
    require_same_shape(over, under, "MaskTriple");
    require_same_shape(over, well, "MaskTriple");
    if (over.rank() != 3 || over.dim(2) != 1) throw ShapeError("MaskTriple: (h, w, 1) expected");
    for (std::int64_t i = 0; i < over.size(); ++i) {
      if (!(over[i] >= 0.0 && over[i] <= 1.0) || !(under[i] >= 0.0 && under[i] <= 1.0))
        throw ValueError("MaskTriple: masks must lie in [0, 1]");
      if (well[i] != std::max(1.0 - over[i] - under[i], 0.0))
        throw ValueError("MaskTriple: well rule violated");
    }
  }
};

inline std::vector<ParamSpec> declare_mask_net(const std::string& prefix, int width) {
  std::vector<ParamSpec> specs;
  auto conv = [&](const std::string& name, int kh, int kw, int ci, int co) {
    specs.push_back({prefix + "." + name + ".w", {kh, kw, ci, co}, Init::KaimingConv, kh * kw * ci});
    specs.push_back({prefix + "." + name + ".b", {co}, Init::Zero, 0});
  };
  conv("in", 1, 1, 4, width);
  conv("rb0.c1", 3, 3, width, width);
  conv("rb0.c2", 3, 3, width, width);
  conv("rb1.c1", 3, 3, width, width);
  conv("rb1.c2", 3, 3, width, width);
  conv("out", 1, 1, width, 1);
  return specs;
}

enum class Activation { Silu, Identity };

inline Var act_fn(const Var& x, Activation a) { return a == Activation::Silu ? silu(x) : x; }

/// Pre-sigmoid logits of one mask head: entry projection, two residual
/// blocks of 3x3 convolutions, exit projection to one channel.
inline Var mask_net_graph(const Var& packed, const std::string& prefix, GraphParams& gp,
                          Activation act = Activation::Silu) {
  auto conv = [&](const Var& x, const std::string& name, int pad) {
    return conv2d(x, gp(prefix + "." + name + ".w"), gp(prefix + "." + name + ".b"), 1, pad);
  };
  Var h = act_fn(conv(packed, "in", 0), act);
  for (const std::string& rb : {"rb0", "rb1"}) {
    Var y = act_fn(conv(h, rb + ".c1", 1), act);
    y = conv(y, rb + ".c2", 1);
    h = act_fn(add(h, y), act);
  }
  return conv(h, "out", 0);
}

struct MaskVars {
  Var over;
  Var under;
  Var well;
};

inline Var well_from(const Var& over, const Var& under) {
  // evaluates ((1 - over) - under) so it is bit-identical to the plain rule
  Var ones = constant(Tensor(over->value.shape, 1.0));
  return relu(sub(sub(ones, over), under));
}

inline MaskVars soft_masks_graph(const Var& packed, GraphParams& gp,
                                 Activation act = Activation::Silu) {
  MaskVars m;
  m.over = sigmoid(mask_net_graph(packed, "mask_over", gp, act));
  m.under = sigmoid(mask_net_graph(packed, "mask_under", gp, act));
  m.well = well_from(m.over, m.under);
  return m;
}

inline MaskTriple soft_masks(const PackedRaw& packed, const ParamStore& params,
                             Activation act = Activation::Silu) {
  packed.validate();
  if (!params.all_finite()) throw NumericError("soft_masks: non-finite parameters");
  GraphParams gp(params, false);
  MaskVars m = soft_masks_graph(constant(packed.data), gp, act);
  for (const auto* t : {&m.over->value, &m.under->value, &m.well->value})
    if (!t->all_finite()) throw NumericError("soft_masks: non-finite activations");
  return MaskTriple{m.over->value, m.under->value, m.well->value};
}

inline MaskTriple hard_masks(const PackedRaw& packed, double lo = 0.05, double hi = 0.95) {
  packed.validate();
  if (!(0.0 <= lo && lo < hi && hi <= 1.0)) throw ValueError("hard_masks: need 0 <= lo < hi <= 1");
  const int h = packed.height(), w = packed.width();
  MaskTriple m{Tensor({h, w, 1}), Tensor({h, w, 1}), Tensor({h, w, 1})};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double mx = packed.data.at(y, x, 0);
      for (int c = 1; c < 4; ++c) mx = std::max(mx, packed.data.at(y, x, c));
      const double over = mx > hi ? 1.0 : 0.0;
      const double under = mx < lo ? 1.0 : 0.0;
      m.over.at(y, x, 0) = over;
      m.under.at(y, x, 0) = under;
      m.well.at(y, x, 0) = std::max(1.0 - over - under, 0.0);
    }
  return m;
}

/// Eq-style constraint loss: mean L1 on over plus mean L1 on under.
inline Var mask_loss_graph(const MaskVars& soft, const MaskTriple& hard) {
  Var lo = mean_all(abs_val(sub(soft.over, constant(hard.over))));
  Var lu = mean_all(abs_val(sub(soft.under, constant(hard.under))));
  return add(lo, lu);
}

inline double mask_loss(const MaskTriple& soft, const MaskTriple& hard) {
  require_same_shape(soft.over, hard.over, "mask_loss");
  require_same_shape(soft.under, hard.under, "mask_loss");
  double lo = 0.0, lu = 0.0;
  for (std::int64_t i = 0; i < soft.over.size(); ++i) {
    lo += std::fabs(soft.over[i] - hard.over[i]);
    lu += std::fabs(soft.under[i] - hard.under[i]);
  }
  const double n = static_cast<double>(soft.over.size());
  return lo / n + lu / n;
}

}  // namespace rawhdr
