#include <catch2/catch_amalgamated.hpp>

#include "rawhdr/masks.hpp"
#include "rawhdr/train.hpp"

using namespace rawhdr;

namespace {

PackedRaw uniform_packed(int h, int w, double v) {
  PackedRaw p{Tensor({h, w, 4}, v)};
  return p;
}

ParamStore mask_params(int width, std::uint64_t seed) {
  std::vector<ParamSpec> specs = declare_mask_net("mask_over", width);
  for (auto& s : declare_mask_net("mask_under", width)) specs.push_back(s);
  return init_param_store(specs, seed);
}

}  // namespace

TEST_CASE("hard masks use the 0.95 / 0.05 thresholds on the max channel") {
  PackedRaw p{Tensor({1, 3, 4})};
  double px0[4] = {0.1, 0.99, 0.2, 0.97};
  double px1[4] = {0.5, 0.5, 0.5, 0.5};
  double px2[4] = {0.04, 0.04, 0.04, 0.04};
  for (int c = 0; c < 4; ++c) {
    p.data.at(0, 0, c) = px0[c];
    p.data.at(0, 1, c) = px1[c];
    p.data.at(0, 2, c) = px2[c];
  }
  MaskTriple m = hard_masks(p);
  CHECK(m.over.at(0, 0, 0) == 1.0);
  CHECK(m.under.at(0, 0, 0) == 0.0);
  CHECK(m.well.at(0, 0, 0) == 0.0);
  CHECK(m.over.at(0, 1, 0) == 0.0);
  CHECK(m.under.at(0, 1, 0) == 0.0);
  CHECK(m.well.at(0, 1, 0) == 1.0);
  CHECK(m.over.at(0, 2, 0) == 0.0);
  CHECK(m.under.at(0, 2, 0) == 1.0);
  CHECK(m.well.at(0, 2, 0) == 0.0);

  CHECK_THROWS_AS(hard_masks(p, 0.9, 0.2), ValueError);
}

TEST_CASE("hard masks are idempotent through a mid-tone embedding") {
  Rng rng(3);
  PackedRaw p{random_tensor({6, 6, 4}, rng)};
  MaskTriple m = hard_masks(p);

  // embed the binary decision back into intensities and re-threshold
  PackedRaw embedded{Tensor({6, 6, 4})};
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      const double v = m.over.at(y, x, 0) > 0.5 ? 0.99 : (m.under.at(y, x, 0) > 0.5 ? 0.01 : 0.5);
      for (int c = 0; c < 4; ++c) embedded.data.at(y, x, c) = v;
    }
  MaskTriple m2 = hard_masks(embedded);
  for (std::int64_t i = 0; i < m.over.size(); ++i) {
    CHECK(m2.over[i] == m.over[i]);
    CHECK(m2.under[i] == m.under[i]);
    CHECK(m2.well[i] == m.well[i]);
  }
}

TEST_CASE("soft masks stay in range and obey the well rule exactly") {
  Rng rng(5);
  ParamStore params = mask_params(8, 99);
  PackedRaw p{random_tensor({6, 6, 4}, rng)};
  MaskTriple m = soft_masks(p, params);

  for (std::int64_t i = 0; i < m.over.size(); ++i) {
    CHECK(m.over[i] > 0.0);
    CHECK(m.over[i] < 1.0);
    CHECK(m.under[i] > 0.0);
    CHECK(m.under[i] < 1.0);
    CHECK(m.well[i] == std::max(1.0 - m.over[i] - m.under[i], 0.0));
    CHECK(m.over[i] + m.under[i] + m.well[i] >= 1.0 - 1e-15);
    if (m.over[i] + m.under[i] <= 1.0)
      CHECK(m.over[i] + m.under[i] + m.well[i] == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("large negative output bias saturates the masks toward well") {
  ParamStore params = mask_params(8, 7);
  params.at("mask_over.out.b")[0] = -20.0;
  params.at("mask_under.out.b")[0] = -20.0;
  // zero the conv weights feeding the exit so the bias dominates
  for (auto& v : params.at("mask_over.out.w").data) v = 0.0;
  for (auto& v : params.at("mask_under.out.w").data) v = 0.0;

  Rng rng(8);
  PackedRaw p{random_tensor({4, 4, 4}, rng)};
  MaskTriple m = soft_masks(p, params);
  for (std::int64_t i = 0; i < m.over.size(); ++i) {
    CHECK(m.over[i] < 1e-8);
    CHECK(m.under[i] < 1e-8);
    CHECK(m.well[i] > 1.0 - 1e-7);
  }
}

TEST_CASE("mask_loss identities and loop oracle") {
  Rng rng(9);
  MaskTriple a{random_tensor({5, 5, 1}, rng), random_tensor({5, 5, 1}, rng), Tensor({5, 5, 1})};
  for (std::int64_t i = 0; i < a.over.size(); ++i)
    a.well[i] = std::max(1.0 - a.over[i] - a.under[i], 0.0);

  CHECK(mask_loss(a, a) == 0.0);

  MaskTriple shifted = a;
  for (auto& v : shifted.over.data) v += 0.1;
  CHECK(mask_loss(shifted, a) == Catch::Approx(0.1).epsilon(1e-12));

  MaskTriple b{random_tensor({5, 5, 1}, rng), random_tensor({5, 5, 1}, rng), Tensor({5, 5, 1})};
  double lo = 0.0, lu = 0.0;
  for (std::int64_t i = 0; i < a.over.size(); ++i) {
    lo += std::fabs(a.over[i] - b.over[i]);
    lu += std::fabs(a.under[i] - b.under[i]);
  }
  const double oracle = lo / 25.0 + lu / 25.0;
  CHECK(mask_loss(a, b) == Catch::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("well recomputed by an independent element-wise oracle") {
  Rng rng(10);
  ParamStore params = mask_params(8, 123);
  PackedRaw p{random_tensor({5, 7, 4}, rng)};

  GraphParams gp(params, false);
  MaskVars mv = soft_masks_graph(constant(p.data), gp);
  for (std::int64_t i = 0; i < mv.over->value.size(); ++i) {
    const double expect = std::max(1.0 - mv.over->value[i] - mv.under->value[i], 0.0);
    CHECK(mv.well->value[i] == expect);
  }
}

TEST_CASE("mask gradients match finite differences") {
  CHECK(grad_check("mask_loss", 1) <= 1e-4);
  CHECK(grad_check("soft_masks", 2) <= 1e-4);
}
