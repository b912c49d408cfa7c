#pragma once

#include "rawhdr/masks.hpp"
#include "rawhdr/params.hpp"
#include "rawhdr/raw.hpp"

// The reconstruction network: three U-Net encoders and two decoders form the
// dual intensity guidance; a U-shaped stack of window-attention blocks forms
// the global spatial guidance; a softplus fusion head with a global 1x1 skip
// produces nonnegative radiance.

namespace rawhdr {

struct NetConfig {
  int base_width = 16;
  int unet_depth = 2;
  int gsg_stages = 2;  // K
  int blocks_per_stage = 2;
  int window_size = 8;
  int heads = 2;
  double leff_expansion = 2.0;
  int mask_width = 16;
  bool use_dig = true;
  bool use_gsg = true;
  bool use_soft_masks = true;
  Activation activation = Activation::Silu;

  void validate() const {
    if (base_width < 1 || unet_depth < 0 || gsg_stages < 1 || blocks_per_stage < 1 ||
        window_size < 1 || heads < 1 || mask_width < 1)
      throw ValueError("NetConfig: dimensions must be positive");
    if (base_width % heads != 0) throw ValueError("NetConfig: heads must divide base_width");
    if (leff_expansion < 1.0) throw ValueError("NetConfig: leff_expansion must be >= 1");
    if (!use_dig && !use_gsg) throw ValueError("NetConfig: at least one guidance branch required");
  }

  int leff_hidden(int c) const { return std::max(1, static_cast<int>(std::lround(c * leff_expansion))); }
};

// --------------------------------------------------------------------------
// parameter declarations

namespace detail {
inline void add_conv(std::vector<ParamSpec>& out, const std::string& name, int kh, int kw, int ci,
                     int co) {
  out.push_back({name + ".w", {kh, kw, ci, co}, Init::KaimingConv, kh * kw * ci});
  out.push_back({name + ".b", {co}, Init::Zero, 0});
}

inline void add_linear(std::vector<ParamSpec>& out, const std::string& name, int ci, int co) {
  out.push_back({name + ".w", {ci, co}, Init::KaimingConv, ci});
  out.push_back({name + ".b", {co}, Init::Zero, 0});
}

inline void add_layernorm(std::vector<ParamSpec>& out, const std::string& name, int c) {
  out.push_back({name + ".g", {c}, Init::One, 0});
  out.push_back({name + ".o", {c}, Init::Zero, 0});
}

inline void append(std::vector<ParamSpec>& out, std::vector<ParamSpec> extra) {
  for (auto& s : extra) out.push_back(std::move(s));
}
}  // namespace detail

inline std::vector<ParamSpec> declare_wmsa(const std::string& prefix, int c) {
  std::vector<ParamSpec> out;
  detail::add_linear(out, prefix + ".wq", c, c);
  detail::add_linear(out, prefix + ".wk", c, c);
  detail::add_linear(out, prefix + ".wv", c, c);
  detail::add_linear(out, prefix + ".wo", c, c);
  return out;
}

inline std::vector<ParamSpec> declare_leff(const std::string& prefix, int c, const NetConfig& cfg) {
  const int ec = cfg.leff_hidden(c);
  std::vector<ParamSpec> out;
  detail::add_linear(out, prefix + ".w1", c, ec);
  out.push_back({prefix + ".dw.w", {3, 3, ec}, Init::KaimingConv, 9});
  out.push_back({prefix + ".dw.b", {ec}, Init::Zero, 0});
  detail::add_linear(out, prefix + ".w2", ec, c);
  return out;
}

inline std::vector<ParamSpec> declare_lewin(const std::string& prefix, int c, const NetConfig& cfg) {
  std::vector<ParamSpec> out;
  detail::add_layernorm(out, prefix + ".ln1", c);
  detail::append(out, declare_wmsa(prefix + ".attn", c));
  detail::add_layernorm(out, prefix + ".ln2", c);
  detail::append(out, declare_leff(prefix + ".leff", c, cfg));
  return out;
}

inline std::vector<ParamSpec> declare_unet_encoder(const std::string& prefix, int ci, int depth,
                                                   int width) {
  std::vector<ParamSpec> out;
  for (int l = 0; l <= depth; ++l) {
    const int w = width << l;
    detail::add_conv(out, prefix + ".lvl" + std::to_string(l) + ".c1", 3, 3, l == 0 ? ci : w, w);
    detail::add_conv(out, prefix + ".lvl" + std::to_string(l) + ".c2", 3, 3, w, w);
    if (l < depth) detail::add_conv(out, prefix + ".down" + std::to_string(l), 4, 4, w, 2 * w);
  }
  return out;
}

/// Decoder fed by `branches` encoders: bottleneck concat comes in at
/// branches*width*2^depth channels, skip concats add branches*w_l per level.
inline std::vector<ParamSpec> declare_unet_decoder(const std::string& prefix, int depth, int width,
                                                   int branches) {
  std::vector<ParamSpec> out;
  const int wd = width << depth;
  detail::add_conv(out, prefix + ".merge", 1, 1, branches * wd, wd);
  for (int l = depth - 1; l >= 0; --l) {
    const int w = width << l;
    detail::add_conv(out, prefix + ".up" + std::to_string(l), 1, 1, 2 * w, w);
    detail::add_conv(out, prefix + ".lvl" + std::to_string(l) + ".c1", 3, 3, (1 + branches) * w, w);
    detail::add_conv(out, prefix + ".lvl" + std::to_string(l) + ".c2", 3, 3, w, w);
  }
  return out;
}

inline std::vector<ParamSpec> declare_gsg(const NetConfig& cfg) {
  std::vector<ParamSpec> out;
  const int K = cfg.gsg_stages;
  detail::add_conv(out, "gsg.embed", 3, 3, 4, cfg.base_width);
  for (int i = 0; i < K - 1; ++i) {
    const int w = cfg.base_width << i;
    for (int j = 0; j < cfg.blocks_per_stage; ++j)
      detail::append(out, declare_lewin("gsg.enc" + std::to_string(i) + ".blk" + std::to_string(j), w, cfg));
    detail::add_conv(out, "gsg.down" + std::to_string(i), 4, 4, w, 2 * w);
  }
  const int wmid = cfg.base_width << (K - 1);
  for (int j = 0; j < cfg.blocks_per_stage; ++j)
    detail::append(out, declare_lewin("gsg.mid.blk" + std::to_string(j), wmid, cfg));
  for (int i = K - 2; i >= 0; --i) {
    const int w = cfg.base_width << i;
    detail::add_conv(out, "gsg.up" + std::to_string(i), 1, 1, 2 * w, w);
    detail::add_conv(out, "gsg.skip" + std::to_string(i), 1, 1, 2 * w, w);
    for (int j = 0; j < cfg.blocks_per_stage; ++j)
      detail::append(out, declare_lewin("gsg.dec" + std::to_string(i) + ".blk" + std::to_string(j), w, cfg));
  }
  return out;
}

inline std::vector<ParamSpec> declare_dig(const NetConfig& cfg) {
  std::vector<ParamSpec> out;
  detail::append(out, declare_unet_encoder("ue_rgbg", 4, cfg.unet_depth, cfg.base_width));
  if (cfg.use_dig) {
    detail::append(out, declare_unet_encoder("ue_g", 2, cfg.unet_depth, cfg.base_width));
    detail::append(out, declare_unet_encoder("ue_rb", 2, cfg.unet_depth, cfg.base_width));
    detail::append(out, declare_unet_decoder("dec_g", cfg.unet_depth, cfg.base_width, 2));
    detail::append(out, declare_unet_decoder("dec_rb", cfg.unet_depth, cfg.base_width, 2));
    if (cfg.use_soft_masks) {
      detail::append(out, declare_mask_net("mask_over", cfg.mask_width));
      detail::append(out, declare_mask_net("mask_under", cfg.mask_width));
    }
  } else {
    detail::append(out, declare_unet_decoder("dec_plain", cfg.unet_depth, cfg.base_width, 1));
  }
  return out;
}

inline std::vector<ParamSpec> declare_net_params(const NetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  detail::append(out, declare_dig(cfg));
  if (cfg.use_gsg) detail::append(out, declare_gsg(cfg));
  const int proj_in = cfg.base_width * (cfg.use_gsg ? 2 : 1);
  // the head starts as a pure half-strength identity: the residual projection
  // is zero-initialized and the skip is seeded analytically (see
  // seed_fusion_skip); Kaiming noise here costs the optimizer most of its
  // step budget just cancelling it
  out.push_back({"fuse.proj.w", {1, 1, proj_in, 4}, Init::Zero, 0});
  out.push_back({"fuse.proj.b", {4}, Init::Zero, 0});
  out.push_back({"fuse.skip.w", {1, 1, 8, 4}, Init::Zero, 0});
  out.push_back({"fuse.skip.b", {4}, Init::Zero, 0});
  return out;
}

/// Seed the fusion skip with a half-strength analytic identity. The skip
/// input is [z, log(z + eps)] and softplus^-1(z) ~= log z + z/2, so weights
/// of 0.5 on the log diagonal and 0.25 on the linear diagonal start the
/// model at half of the identity mapping.
inline void seed_fusion_skip(ParamStore& params) {
  Tensor& w = params.at("fuse.skip.w");  // (1, 1, 8, 4)
  for (int c = 0; c < 4; ++c) {
    w[static_cast<std::int64_t>(c) * 4 + c] = 0.25;
    w[static_cast<std::int64_t>(4 + c) * 4 + c] = 0.5;
  }
}

// --------------------------------------------------------------------------
// graph builders

namespace detail {
inline Var conv_p(GraphParams& gp, const Var& x, const std::string& name, int stride, int pad) {
  return conv2d(x, gp(name + ".w"), gp(name + ".b"), stride, pad);
}

inline Var linear_p(GraphParams& gp, const Var& x, const std::string& name) {
  return linear(x, gp(name + ".w"), gp(name + ".b"));
}

inline int ceil_to(int v, int m) { return ((v + m - 1) / m) * m; }
}  // namespace detail

/// Window multi-head self-attention. Caller guarantees divisibility.
inline Var w_msa_graph(const Var& f, const std::string& prefix, GraphParams& gp, int window_size,
                       int heads) {
  const int H = f->value.dim(0), W = f->value.dim(1), C = f->value.dim(2);
  if (H % window_size != 0 || W % window_size != 0)
    throw ShapeError("w_msa: dims " + shape_str(f->value.shape) + " not divisible by window " +
                     std::to_string(window_size));
  if (C % heads != 0) throw ShapeError("w_msa: heads must divide channels");
  const int d = C / heads;
  Var tokens = window_partition(f, window_size);
  Var q = split_heads(detail::linear_p(gp, tokens, prefix + ".wq"), heads);
  Var k = split_heads(detail::linear_p(gp, tokens, prefix + ".wk"), heads);
  Var v = split_heads(detail::linear_p(gp, tokens, prefix + ".wv"), heads);
  Var attn = softmax_last(mul_scalar(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d))));
  Var out = merge_heads(bmm(attn, v), heads);
  out = detail::linear_p(gp, out, prefix + ".wo");
  return window_merge(out, H, W, window_size);
}

/// Locally-enhanced feed-forward: pointwise expand, 3x3 depthwise,
/// nonlinearity, pointwise contract.
inline Var leff_graph(const Var& f, const std::string& prefix, GraphParams& gp, Activation act) {
  Var h = detail::linear_p(gp, f, prefix + ".w1");
  h = depthwise3x3(h, gp(prefix + ".dw.w"), gp(prefix + ".dw.b"));
  h = act_fn(h, act);
  return detail::linear_p(gp, h, prefix + ".w2");
}

inline Var lewin_block_graph(const Var& f, const std::string& prefix, GraphParams& gp,
                             const NetConfig& cfg) {
  Var a = w_msa_graph(layer_norm_ch(f, gp(prefix + ".ln1.g"), gp(prefix + ".ln1.o")),
                      prefix + ".attn", gp, cfg.window_size, cfg.heads);
  Var f1 = add(a, f);
  Var b = leff_graph(layer_norm_ch(f1, gp(prefix + ".ln2.g"), gp(prefix + ".ln2.o")),
                     prefix + ".leff", gp, cfg.activation);
  return add(b, f1);
}

namespace detail {
inline Var gsg_stage(const Var& x, int stage, GraphParams& gp, const NetConfig& cfg) {
  const int K = cfg.gsg_stages;
  const int h = x->value.dim(0), w = x->value.dim(1);
  // pad so windows fit; interior stages also need even dims for downsampling
  int mult = cfg.window_size;
  if (stage < K - 1 && mult % 2 != 0) mult *= 2;
  const int ph = ceil_to(h, mult), pw = ceil_to(w, mult);
  Var cur = pad2d(x, 0, ph - h, 0, pw - w);

  const std::string stage_name = (stage == K - 1) ? "gsg.mid" : "gsg.enc" + std::to_string(stage);
  for (int j = 0; j < cfg.blocks_per_stage; ++j)
    cur = lewin_block_graph(cur, stage_name + ".blk" + std::to_string(j), gp, cfg);
  if (stage == K - 1) return crop2d(cur, 0, 0, h, w);

  Var down = conv_p(gp, cur, "gsg.down" + std::to_string(stage), 2, 1);
  Var below = gsg_stage(down, stage + 1, gp, cfg);
  Var up = conv_p(gp, upsample_nearest2(below), "gsg.up" + std::to_string(stage), 1, 0);
  Var merged = conv_p(gp, concat_ch(cur, up), "gsg.skip" + std::to_string(stage), 1, 0);
  for (int j = 0; j < cfg.blocks_per_stage; ++j)
    merged = lewin_block_graph(merged, "gsg.dec" + std::to_string(stage) + ".blk" + std::to_string(j),
                               gp, cfg);
  return crop2d(merged, 0, 0, h, w);
}
}  // namespace detail

/// U-shaped window-attention branch; input and output share shape and width.
inline Var global_spatial_guidance_graph(const Var& x, GraphParams& gp, const NetConfig& cfg) {
  return detail::gsg_stage(x, 0, gp, cfg);
}

struct EncoderOut {
  Var bottleneck;
  std::vector<Var> skips;  // per level, finest first
};

inline EncoderOut unet_encode_graph(const Var& x, const std::string& prefix, GraphParams& gp,
                                    const NetConfig& cfg) {
  const int h = x->value.dim(0), w = x->value.dim(1);
  const int div = 1 << cfg.unet_depth;
  if (h % div != 0 || w % div != 0)
    throw ShapeError("unet_encode: dims " + shape_str(x->value.shape) + " not divisible by " +
                     std::to_string(div));
  EncoderOut out;
  Var cur = x;
  for (int l = 0; l <= cfg.unet_depth; ++l) {
    const std::string lvl = prefix + ".lvl" + std::to_string(l);
    cur = act_fn(detail::conv_p(gp, cur, lvl + ".c1", 1, 1), cfg.activation);
    cur = act_fn(detail::conv_p(gp, cur, lvl + ".c2", 1, 1), cfg.activation);
    if (l < cfg.unet_depth) {
      out.skips.push_back(cur);
      cur = detail::conv_p(gp, cur, prefix + ".down" + std::to_string(l), 2, 1);
    }
  }
  out.bottleneck = cur;
  return out;
}

/// Decoder over a concatenated bottleneck plus per-level skip concats.
inline Var unet_decode_graph(const Var& bottleneck,
                             const std::vector<const std::vector<Var>*>& skip_sets,
                             const std::string& prefix, GraphParams& gp, const NetConfig& cfg) {
  Var cur = act_fn(detail::conv_p(gp, bottleneck, prefix + ".merge", 1, 0), cfg.activation);
  for (int l = cfg.unet_depth - 1; l >= 0; --l) {
    cur = detail::conv_p(gp, upsample_nearest2(cur), prefix + ".up" + std::to_string(l), 1, 0);
    for (const auto* skips : skip_sets) cur = concat_ch(cur, (*skips)[static_cast<std::size_t>(l)]);
    const std::string lvl = prefix + ".lvl" + std::to_string(l);
    cur = act_fn(detail::conv_p(gp, cur, lvl + ".c1", 1, 1), cfg.activation);
    cur = act_fn(detail::conv_p(gp, cur, lvl + ".c2", 1, 1), cfg.activation);
  }
  return cur;
}

/// Y_DI = M_under . Y_G' + M_over . Y_RB' with
/// Y_G' = D(Concat(Y_G, Y_RGBG)), Y_RB' = D(Concat(Y_RB, Y_RGBG)).
inline Var dual_intensity_guidance_graph(const Var& packed, const MaskVars& masks, GraphParams& gp,
                                         const NetConfig& cfg) {
  Var ig = select_channels(packed, {kChanG1, kChanG2});
  Var irb = select_channels(packed, {kChanR, kChanB});
  EncoderOut eg = unet_encode_graph(ig, "ue_g", gp, cfg);
  EncoderOut erb = unet_encode_graph(irb, "ue_rb", gp, cfg);
  EncoderOut ergbg = unet_encode_graph(packed, "ue_rgbg", gp, cfg);
  Var yg = unet_decode_graph(concat_ch(eg.bottleneck, ergbg.bottleneck), {&eg.skips, &ergbg.skips},
                             "dec_g", gp, cfg);
  Var yrb = unet_decode_graph(concat_ch(erb.bottleneck, ergbg.bottleneck), {&erb.skips, &ergbg.skips},
                              "dec_rb", gp, cfg);
  return add(broadcast_mul(masks.under, yg), broadcast_mul(masks.over, yrb));
}

struct ForwardOut {
  Var hdr;
  MaskVars masks;
  bool has_masks = false;
};

/// Full model on an already-padded packed input.
inline ForwardOut forward_graph(const Var& packed, GraphParams& gp, const NetConfig& cfg) {
  ForwardOut out;
  Var feature;
  if (cfg.use_dig) {
    if (cfg.use_soft_masks) {
      out.masks = soft_masks_graph(packed, gp, cfg.activation);
    } else {
      PackedRaw pr{packed->value};
      MaskTriple hard = hard_masks(pr);
      out.masks = MaskVars{constant(hard.over), constant(hard.under), constant(hard.well)};
    }
    out.has_masks = true;
    feature = dual_intensity_guidance_graph(packed, out.masks, gp, cfg);
  } else {
    EncoderOut ergbg = unet_encode_graph(packed, "ue_rgbg", gp, cfg);
    feature = unet_decode_graph(ergbg.bottleneck, {&ergbg.skips}, "dec_plain", gp, cfg);
  }
  if (cfg.use_gsg) {
    Var emb = act_fn(detail::conv_p(gp, packed, "gsg.embed", 1, 1), cfg.activation);
    Var ygs = global_spatial_guidance_graph(emb, gp, cfg);
    feature = concat_ch(feature, ygs);
  }
  Var skip_in = concat_ch(packed, log_eps(packed, 1.0 / 65536.0));
  Var pre = add(detail::conv_p(gp, feature, "fuse.proj", 1, 0),
                detail::conv_p(gp, skip_in, "fuse.skip", 1, 0));
  out.hdr = softplus(pre);
  return out;
}

inline HDRImage forward_packed(const PackedRaw& packed, const ParamStore& params,
                               const NetConfig& cfg) {
  cfg.validate();
  packed.validate();
  const int h = packed.height(), w = packed.width();
  const int div = 1 << cfg.unet_depth;
  const int ph = detail::ceil_to(h, div), pw = detail::ceil_to(w, div);
  GraphParams gp(params, false);
  Var pv = pad2d(constant(packed.data), 0, ph - h, 0, pw - w);
  ForwardOut out = forward_graph(pv, gp, cfg);
  Tensor result = crop2d(out.hdr, 0, 0, h, w)->value;
  if (!result.all_finite()) throw NumericError("forward: non-finite output");
  return HDRImage{std::move(result)};
}

/// H = f(R, theta)
inline HDRImage forward(const RawMosaic& raw, const ParamStore& params, const NetConfig& cfg) {
  return forward_packed(pack(raw), params, cfg);
}

// plain-eval wrappers used by tests and the verification harness

inline Tensor w_msa(const Tensor& f, const ParamStore& params, const std::string& prefix,
                    int window_size, int heads) {
  GraphParams gp(params, false);
  return w_msa_graph(constant(f), prefix, gp, window_size, heads)->value;
}

inline Tensor leff(const Tensor& f, const ParamStore& params, const std::string& prefix,
                   Activation act = Activation::Silu) {
  GraphParams gp(params, false);
  return leff_graph(constant(f), prefix, gp, act)->value;
}

inline Tensor lewin_block(const Tensor& f, const ParamStore& params, const std::string& prefix,
                          const NetConfig& cfg) {
  GraphParams gp(params, false);
  return lewin_block_graph(constant(f), prefix, gp, cfg)->value;
}

inline Tensor global_spatial_guidance(const Tensor& x, const ParamStore& params,
                                      const NetConfig& cfg) {
  GraphParams gp(params, false);
  return global_spatial_guidance_graph(constant(x), gp, cfg)->value;
}

inline Tensor dual_intensity_guidance(const PackedRaw& packed, const MaskTriple& masks,
                                      const ParamStore& params, const NetConfig& cfg) {
  GraphParams gp(params, false);
  MaskVars mv{constant(masks.over), constant(masks.under), constant(masks.well)};
  return dual_intensity_guidance_graph(constant(packed.data), mv, gp, cfg)->value;
}

}  // namespace rawhdr
