#include <catch2/catch_amalgamated.hpp>

#include "rawhdr/raw.hpp"

using namespace rawhdr;

namespace {

RawMosaic make_mosaic(int h, int w, const std::vector<int>& counts, int black = 512,
                      int white = 16383, int bits = 14) {
  RawMosaic m;
  m.height = h;
  m.width = w;
  m.black_level = black;
  m.white_level = white;
  m.bit_depth = bits;
  m.data.reserve(counts.size());
  for (int v : counts) m.data.push_back(static_cast<std::uint16_t>(v));
  return m;
}

RawMosaic random_mosaic(int h, int w, Rng& rng) {
  std::vector<int> counts(static_cast<std::size_t>(h) * w);
  for (auto& v : counts) v = rng.uniform_int(16384);
  return make_mosaic(h, w, counts);
}

}  // namespace

TEST_CASE("normalize endpoints and scalar oracle") {
  RawMosaic m = make_mosaic(2, 2, {512, 16383, 8447, 512});
  Tensor n = normalize(m);
  CHECK(n.at(0, 0, 0) == 0.0);
  CHECK(n.at(0, 1, 0) == 1.0);
  // independent scalar re-computation
  const double expected = (8447.0 - 512.0) / (16383.0 - 512.0);
  CHECK(n.at(1, 0, 0) == Catch::Approx(expected).epsilon(1e-15));
}

TEST_CASE("normalize clamps noise below black and is monotone") {
  RawMosaic m = make_mosaic(2, 2, {100, 511, 512, 513});
  Tensor n = normalize(m);
  CHECK(n.at(0, 0, 0) == 0.0);
  CHECK(n.at(0, 1, 0) == 0.0);
  CHECK(n.at(1, 0, 0) == 0.0);
  CHECK(n.at(1, 1, 0) > 0.0);

  Rng rng(7);
  RawMosaic r = random_mosaic(4, 4, rng);
  Tensor nr = normalize(r);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      if (r.data[i] <= r.data[j])
        CHECK(nr[i] <= nr[j]);
}

TEST_CASE("normalize rejects degenerate levels") {
  RawMosaic m = make_mosaic(2, 2, {0, 0, 0, 0});
  m.black_level = 1000;
  m.white_level = 1000;
  CHECK_THROWS_AS(normalize(m), ValueError);
}

TEST_CASE("pack arranges a single RGGB tile as [R, G1, B, G2]") {
  RawMosaic m = make_mosaic(2, 2, {1000, 2000, 3000, 4000});
  PackedRaw p = pack(m);
  REQUIRE(p.data.shape == Shape{1, 1, 4});
  const double s = 1.0 / (16383 - 512);
  CHECK(p.data.at(0, 0, kChanR) == Catch::Approx((1000 - 512) * s));
  CHECK(p.data.at(0, 0, kChanG1) == Catch::Approx((2000 - 512) * s));
  CHECK(p.data.at(0, 0, kChanG2) == Catch::Approx((3000 - 512) * s));
  CHECK(p.data.at(0, 0, kChanB) == Catch::Approx((4000 - 512) * s));
}

TEST_CASE("pack matches an index-by-index loop oracle on a 4x4 mosaic") {
  std::vector<int> counts(16);
  for (int i = 0; i < 16; ++i) counts[static_cast<std::size_t>(i)] = 600 + 900 * i;
  RawMosaic m = make_mosaic(4, 4, counts);
  PackedRaw p = pack(m);
  Tensor n = normalize(m);
  REQUIRE(p.data.shape == Shape{2, 2, 4});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      CHECK(p.data.at(y, x, kChanR) == n.at(2 * y, 2 * x, 0));
      CHECK(p.data.at(y, x, kChanG1) == n.at(2 * y, 2 * x + 1, 0));
      CHECK(p.data.at(y, x, kChanG2) == n.at(2 * y + 1, 2 * x, 0));
      CHECK(p.data.at(y, x, kChanB) == n.at(2 * y + 1, 2 * x + 1, 0));
    }
}

TEST_CASE("pack rejects odd dimensions") {
  RawMosaic m = make_mosaic(3, 2, {600, 600, 600, 600, 600, 600});
  CHECK_THROWS_AS(pack(m), ShapeError);
}

TEST_CASE("unpack is the exact inverse of pack") {
  PackedRaw p{Tensor({1, 1, 4})};
  p.data.data = {0.1, 0.2, 0.3, 0.4};  // [R, G1, B, G2]
  Tensor u = unpack(p);
  CHECK(u.at(0, 0, 0) == 0.1);
  CHECK(u.at(0, 1, 0) == 0.2);
  CHECK(u.at(1, 0, 0) == 0.4);
  CHECK(u.at(1, 1, 0) == 0.3);

  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    RawMosaic m = random_mosaic(8, 8, rng);
    Tensor n = normalize(m);
    Tensor round = unpack(pack(m));
    REQUIRE(round.shape == n.shape);
    for (std::int64_t i = 0; i < n.size(); ++i) CHECK(round[i] == n[i]);
  }
}

TEST_CASE("unpack rejects wrong channel count") {
  PackedRaw p{Tensor({2, 2, 3})};
  CHECK_THROWS_AS(unpack(p), ShapeError);
}

TEST_CASE("extract_guides selects green and red/blue channels") {
  PackedRaw p{Tensor({1, 1, 4})};
  p.data.data = {0.1, 0.2, 0.3, 0.4};
  GuidePair g = extract_guides(p);
  CHECK(g.green.at(0, 0, 0) == 0.2);
  CHECK(g.green.at(0, 0, 1) == 0.4);
  CHECK(g.redblue.at(0, 0, 0) == 0.1);
  CHECK(g.redblue.at(0, 0, 1) == 0.3);

  PackedRaw z{Tensor({3, 3, 4})};
  GuidePair gz = extract_guides(z);
  for (double v : gz.green.data) CHECK(v == 0.0);
  for (double v : gz.redblue.data) CHECK(v == 0.0);
}

TEST_CASE("guides lose no channels: re-permutation reproduces packed") {
  Rng rng(17);
  PackedRaw p{random_tensor({4, 5, 4}, rng)};
  GuidePair g = extract_guides(p);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      CHECK(g.redblue.at(y, x, 0) == p.data.at(y, x, kChanR));
      CHECK(g.green.at(y, x, 0) == p.data.at(y, x, kChanG1));
      CHECK(g.redblue.at(y, x, 1) == p.data.at(y, x, kChanB));
      CHECK(g.green.at(y, x, 1) == p.data.at(y, x, kChanG2));
    }
}
