#include <catch2/catch_amalgamated.hpp>

#include "rawhdr/net.hpp"
#include "rawhdr/train.hpp"

using namespace rawhdr;

namespace {

void set_identity(Tensor& w) {
  // works for (ci, co) linear weights and (1,1,ci,co) convs with ci == co
  const int co = w.shape.back();
  std::fill(w.data.begin(), w.data.end(), 0.0);
  for (int i = 0; i < co; ++i) w[static_cast<std::int64_t>(i) * co + i] = 1.0;
}

void set_zero(Tensor& w) { std::fill(w.data.begin(), w.data.end(), 0.0); }

}  // namespace

TEST_CASE("w_msa with window 1 reduces to output-projection of value-projection") {
  ParamStore params = init_param_store(declare_wmsa("attn", 4), 5);
  Rng rng(6);
  Tensor f = random_tensor({3, 3, 4}, rng, -1.0, 1.0);
  Tensor out = w_msa(f, params, "attn", 1, 2);

  const Tensor& wv = params.at("attn.wv.w");
  const Tensor& bv = params.at("attn.wv.b");
  const Tensor& wo = params.at("attn.wo.w");
  const Tensor& bo = params.at("attn.wo.b");
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      double v[4];
      for (int j = 0; j < 4; ++j) {
        v[j] = bv[j];
        for (int i = 0; i < 4; ++i) v[j] += f.at(y, x, i) * wv[i * 4 + j];
      }
      for (int j = 0; j < 4; ++j) {
        double o = bo[j];
        for (int i = 0; i < 4; ++i) o += v[i] * wo[i * 4 + j];
        CHECK(out.at(y, x, j) == Catch::Approx(o).margin(1e-12));
      }
    }
}

TEST_CASE("w_msa on identical tokens returns each token's value projection") {
  ParamStore params = init_param_store(declare_wmsa("attn", 4), 7);
  Tensor f({4, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 4; ++c) f.at(y, x, c) = 0.3 * c - 0.2;  // same token everywhere
  Tensor out = w_msa(f, params, "attn", 2, 2);
  // uniform attention over equal values leaves the value projection intact
  Tensor single = w_msa(f, params, "attn", 1, 2);
  for (std::int64_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == Catch::Approx(single[i]).margin(1e-12));
}

TEST_CASE("w_msa matches a dense attention loop oracle") {
  const int C = 4, ws = 2, heads = 1;
  ParamStore params = init_param_store(declare_wmsa("attn", C), 11);
  Rng rng(12);
  Tensor f = random_tensor({4, 4, C}, rng, -1.0, 1.0);
  Tensor out = w_msa(f, params, "attn", ws, heads);

  const Tensor& wq = params.at("attn.wq.w");
  const Tensor& bq = params.at("attn.wq.b");
  const Tensor& wk = params.at("attn.wk.w");
  const Tensor& bk = params.at("attn.wk.b");
  const Tensor& wv = params.at("attn.wv.w");
  const Tensor& bv = params.at("attn.wv.b");
  const Tensor& wo = params.at("attn.wo.w");
  const Tensor& bo = params.at("attn.wo.b");

  auto project = [&](const double* x, const Tensor& w, const Tensor& b, double* y) {
    for (int j = 0; j < C; ++j) {
      y[j] = b[j];
      for (int i = 0; i < C; ++i) y[j] += x[i] * w[i * C + j];
    }
  };

  for (int wy = 0; wy < 2; ++wy)
    for (int wx = 0; wx < 2; ++wx) {
      double q[4][4], k[4][4], v[4][4], tok[4][4];
      for (int t = 0; t < 4; ++t) {
        const int y = wy * 2 + t / 2, x = wx * 2 + t % 2;
        for (int c = 0; c < C; ++c) tok[t][c] = f.at(y, x, c);
        project(tok[t], wq, bq, q[t]);
        project(tok[t], wk, bk, k[t]);
        project(tok[t], wv, bv, v[t]);
      }
      for (int t = 0; t < 4; ++t) {
        double logits[4];
        double mx = -1e300;
        for (int u = 0; u < 4; ++u) {
          logits[u] = 0.0;
          for (int c = 0; c < C; ++c) logits[u] += q[t][c] * k[u][c];
          logits[u] /= std::sqrt(static_cast<double>(C));
          mx = std::max(mx, logits[u]);
        }
        double z = 0.0, attn[4];
        for (int u = 0; u < 4; ++u) {
          attn[u] = std::exp(logits[u] - mx);
          z += attn[u];
        }
        double ctx[4] = {0, 0, 0, 0};
        for (int u = 0; u < 4; ++u)
          for (int c = 0; c < C; ++c) ctx[c] += (attn[u] / z) * v[u][c];
        double o[4];
        project(ctx, wo, bo, o);
        const int y = wy * 2 + t / 2, x = wx * 2 + t % 2;
        for (int c = 0; c < C; ++c) CHECK(out.at(y, x, c) == Catch::Approx(o[c]).margin(1e-6));
      }
    }
}

TEST_CASE("w_msa rejects indivisible dimensions") {
  ParamStore params = init_param_store(declare_wmsa("attn", 4), 5);
  Tensor f({5, 4, 4});
  CHECK_THROWS_AS(w_msa(f, params, "attn", 2, 2), ShapeError);
}

TEST_CASE("leff is the identity under identity-initialized projections") {
  NetConfig cfg;
  cfg.leff_expansion = 1.0;
  ParamStore params = init_param_store(declare_leff("leff", 4, cfg), 3);
  set_identity(params.at("leff.w1.w"));
  set_zero(params.at("leff.w1.b"));
  set_identity(params.at("leff.w2.w"));
  set_zero(params.at("leff.w2.b"));
  Tensor& dw = params.at("leff.dw.w");
  set_zero(dw);
  for (int c = 0; c < 4; ++c) dw[(1 * 3 + 1) * 4 + c] = 1.0;  // centered delta
  set_zero(params.at("leff.dw.b"));

  Rng rng(4);
  Tensor f = random_tensor({5, 6, 4}, rng, -1.0, 1.0);
  Tensor out = leff(f, params, "leff", Activation::Identity);
  for (std::int64_t i = 0; i < f.size(); ++i) CHECK(out[i] == f[i]);
}

TEST_CASE("leff maps zero input to zero with zero biases") {
  NetConfig cfg;
  ParamStore params = init_param_store(declare_leff("leff", 4, cfg), 9);
  Tensor f({4, 4, 4});
  Tensor out = leff(f, params, "leff");
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("lewin block is the identity when residual branches are zeroed") {
  NetConfig cfg;
  cfg.base_width = 4;
  cfg.window_size = 2;
  cfg.heads = 2;
  ParamStore params = init_param_store(declare_lewin("blk", 4, cfg), 21);
  set_zero(params.at("blk.attn.wo.w"));
  set_zero(params.at("blk.attn.wo.b"));
  set_zero(params.at("blk.leff.w2.w"));
  set_zero(params.at("blk.leff.w2.b"));

  Rng rng(22);
  Tensor f = random_tensor({4, 4, 4}, rng, -1.0, 1.0);
  Tensor out = lewin_block(f, params, "blk", cfg);
  for (std::int64_t i = 0; i < f.size(); ++i) CHECK(out[i] == f[i]);
}

TEST_CASE("lewin block equals the composition of its pieces") {
  NetConfig cfg;
  cfg.base_width = 4;
  cfg.window_size = 2;
  cfg.heads = 2;
  ParamStore params = init_param_store(declare_lewin("blk", 4, cfg), 31);
  Rng rng(32);
  Tensor f = random_tensor({4, 6, 4}, rng, -1.0, 1.0);

  Tensor block = lewin_block(f, params, "blk", cfg);

  GraphParams gp(params, false);
  Var fv = constant(f);
  Var n1 = layer_norm_ch(fv, gp("blk.ln1.g"), gp("blk.ln1.o"));
  Var a = w_msa_graph(n1, "blk.attn", gp, cfg.window_size, cfg.heads);
  Var f1 = add(a, fv);
  Var n2 = layer_norm_ch(f1, gp("blk.ln2.g"), gp("blk.ln2.o"));
  Var b = leff_graph(n2, "blk.leff", gp, cfg.activation);
  Var expect = add(b, f1);

  for (std::int64_t i = 0; i < block.size(); ++i) CHECK(block[i] == expect->value[i]);
}

TEST_CASE("unet encoder shape contracts") {
  NetConfig cfg;
  cfg.base_width = 4;
  cfg.unet_depth = 0;
  ParamStore p0 = init_param_store(declare_unet_encoder("enc", 4, 0, 4), 41);
  GraphParams gp0(p0, false);
  Rng rng(42);
  Tensor x = random_tensor({6, 6, 4}, rng);
  EncoderOut e0 = unet_encode_graph(constant(x), "enc", gp0, cfg);
  CHECK(e0.bottleneck->value.shape == Shape{6, 6, 4});
  CHECK(e0.skips.empty());

  NetConfig cfg2;
  cfg2.base_width = 4;
  cfg2.unet_depth = 2;
  ParamStore p2 = init_param_store(declare_unet_encoder("enc", 4, 2, 4), 43);
  GraphParams gp2(p2, false);
  Tensor x32 = random_tensor({32, 32, 4}, rng);
  EncoderOut e2 = unet_encode_graph(constant(x32), "enc", gp2, cfg2);
  CHECK(e2.bottleneck->value.shape == Shape{8, 8, 16});
  REQUIRE(e2.skips.size() == 2);
  CHECK(e2.skips[0]->value.shape == Shape{32, 32, 4});
  CHECK(e2.skips[1]->value.shape == Shape{16, 16, 8});

  // zero input, zero biases -> zero output
  EncoderOut ez = unet_encode_graph(constant(Tensor({32, 32, 4})), "enc", gp2, cfg2);
  for (double v : ez.bottleneck->value.data) CHECK(v == 0.0);

  Tensor bad({30, 32, 4});
  CHECK_THROWS_AS(unet_encode_graph(constant(bad), "enc", gp2, cfg2), ShapeError);
}

TEST_CASE("dual intensity guidance obeys the degenerate-mask identities") {
  NetConfig cfg;
  cfg.base_width = 8;
  cfg.unet_depth = 1;
  cfg.use_soft_masks = false;
  ParamStore params = init_param_store(declare_dig(cfg), 51);
  Rng rng(52);
  PackedRaw packed{random_tensor({6, 6, 4}, rng)};

  MaskTriple ones{Tensor({6, 6, 1}, 0.0), Tensor({6, 6, 1}, 1.0), Tensor({6, 6, 1}, 0.0)};
  Tensor y_di = dual_intensity_guidance(packed, ones, params, cfg);

  // Y_G' computed independently through the same graph pieces
  GraphParams gp(params, false);
  Var pv = constant(packed.data);
  EncoderOut eg = unet_encode_graph(select_channels(pv, {kChanG1, kChanG2}), "ue_g", gp, cfg);
  EncoderOut ergbg = unet_encode_graph(pv, "ue_rgbg", gp, cfg);
  Var yg = unet_decode_graph(concat_ch(eg.bottleneck, ergbg.bottleneck), {&eg.skips, &ergbg.skips},
                             "dec_g", gp, cfg);
  for (std::int64_t i = 0; i < y_di.size(); ++i) CHECK(y_di[i] == yg->value[i]);

  MaskTriple zeros{Tensor({6, 6, 1}, 0.0), Tensor({6, 6, 1}, 0.0), Tensor({6, 6, 1}, 1.0)};
  Tensor y_zero = dual_intensity_guidance(packed, zeros, params, cfg);
  for (double v : y_zero.data) CHECK(v == 0.0);
}

TEST_CASE("dual intensity guidance matches the Hadamard fusion oracle") {
  NetConfig cfg;
  cfg.base_width = 8;
  cfg.unet_depth = 1;
  cfg.use_soft_masks = false;
  ParamStore params = init_param_store(declare_dig(cfg), 61);
  Rng rng(62);
  PackedRaw packed{random_tensor({6, 6, 4}, rng)};
  MaskTriple masks{random_tensor({6, 6, 1}, rng), random_tensor({6, 6, 1}, rng), Tensor({6, 6, 1})};
  for (std::int64_t i = 0; i < masks.over.size(); ++i)
    masks.well[i] = std::max(1.0 - masks.over[i] - masks.under[i], 0.0);

  Tensor y_di = dual_intensity_guidance(packed, masks, params, cfg);

  GraphParams gp(params, false);
  Var pv = constant(packed.data);
  EncoderOut eg = unet_encode_graph(select_channels(pv, {kChanG1, kChanG2}), "ue_g", gp, cfg);
  EncoderOut erb = unet_encode_graph(select_channels(pv, {kChanR, kChanB}), "ue_rb", gp, cfg);
  EncoderOut ergbg = unet_encode_graph(pv, "ue_rgbg", gp, cfg);
  Var yg = unet_decode_graph(concat_ch(eg.bottleneck, ergbg.bottleneck), {&eg.skips, &ergbg.skips},
                             "dec_g", gp, cfg);
  Var yrb = unet_decode_graph(concat_ch(erb.bottleneck, ergbg.bottleneck), {&erb.skips, &ergbg.skips},
                              "dec_rb", gp, cfg);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < cfg.base_width; ++c) {
        const double expect = masks.under.at(y, x, 0) * yg->value.at(y, x, c) +
                              masks.over.at(y, x, 0) * yrb->value.at(y, x, c);
        CHECK(y_di.at(y, x, c) == Catch::Approx(expect).margin(1e-12));
      }
}

TEST_CASE("global spatial guidance identity and shape contracts") {
  // K=1 with zeroed residual branches is the identity
  NetConfig cfg;
  cfg.base_width = 4;
  cfg.gsg_stages = 1;
  cfg.window_size = 4;
  cfg.heads = 2;
  ParamStore params = init_param_store(declare_gsg(cfg), 71);
  for (int j = 0; j < cfg.blocks_per_stage; ++j) {
    const std::string blk = "gsg.mid.blk" + std::to_string(j);
    set_zero(params.at(blk + ".attn.wo.w"));
    set_zero(params.at(blk + ".attn.wo.b"));
    set_zero(params.at(blk + ".leff.w2.w"));
    set_zero(params.at(blk + ".leff.w2.b"));
  }
  Rng rng(72);
  Tensor x = random_tensor({8, 8, 4}, rng, -1.0, 1.0);
  Tensor out = global_spatial_guidance(x, params, cfg);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);

  // 64x64, K=3: output back at input resolution and width
  NetConfig cfg3;
  cfg3.base_width = 4;
  cfg3.gsg_stages = 3;
  cfg3.window_size = 4;
  cfg3.heads = 2;
  ParamStore params3 = init_param_store(declare_gsg(cfg3), 73);
  Tensor x64 = random_tensor({64, 64, 4}, rng, -1.0, 1.0);
  Tensor out3 = global_spatial_guidance(x64, params3, cfg3);
  CHECK(out3.shape == Shape{64, 64, 4});

  // odd sizes are padded internally and cropped back
  Tensor x18 = random_tensor({18, 14, 4}, rng, -1.0, 1.0);
  Tensor out18 = global_spatial_guidance(x18, params3, cfg3);
  CHECK(out18.shape == Shape{18, 14, 4});
}

TEST_CASE("window attention is strictly local across windows at a single stage") {
  NetConfig cfg;
  cfg.base_width = 4;
  cfg.gsg_stages = 1;
  cfg.window_size = 8;
  cfg.heads = 2;
  cfg.blocks_per_stage = 1;
  ParamStore params = init_param_store(declare_gsg(cfg), 81);
  Rng rng(82);
  Tensor x = random_tensor({16, 16, 4}, rng, -1.0, 1.0);

  GraphParams gp(params, false);
  Tensor base = w_msa_graph(constant(x), "gsg.mid.blk0.attn", gp, 8, 2)->value;

  // permute the pixels of the top-left window only
  Tensor perm = x;
  Rng prng(83);
  for (int i = 63; i > 0; --i) {
    const int j = prng.uniform_int(i + 1);
    const int yi = i / 8, xi = i % 8, yj = j / 8, xj = j % 8;
    for (int c = 0; c < 4; ++c) std::swap(perm.at(yi, xi, c), perm.at(yj, xj, c));
  }
  GraphParams gp2(params, false);
  Tensor after = w_msa_graph(constant(perm), "gsg.mid.blk0.attn", gp2, 8, 2)->value;

  for (int y = 0; y < 16; ++y)
    for (int x2 = 0; x2 < 16; ++x2) {
      if (y < 8 && x2 < 8) continue;  // the permuted window itself may change
      for (int c = 0; c < 4; ++c) CHECK(after.at(y, x2, c) == base.at(y, x2, c));
    }
}

TEST_CASE("forward produces nonnegative finite packed-resolution output") {
  NetConfig cfg;
  cfg.base_width = 8;
  cfg.unet_depth = 2;
  cfg.gsg_stages = 2;
  cfg.window_size = 4;
  cfg.heads = 2;
  cfg.mask_width = 4;
  ParamStore params = init_params(cfg, 91);

  SceneHDR scene = render_scene(92, 24, 32, 20);
  CameraProfile prof;
  RawMosaic raw = capture(scene, prof, 0.0, 93);
  HDRImage out = forward(raw, params, cfg);
  CHECK(out.data.shape == Shape{12, 16, 4});
  for (double v : out.data.data) {
    CHECK(v >= 0.0);
    CHECK(std::isfinite(v));
  }
}
