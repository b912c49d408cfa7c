#include <catch2/catch_amalgamated.hpp>

#include "rawhdr/metrics.hpp"

using namespace rawhdr;

TEST_CASE("mu_tonemap endpoints, monotonicity and scalar oracle") {
  Tensor x({1, 2, 1});
  x.data = {0.0, 2.0};
  Tensor t = mu_tonemap(x, 5000.0, 2.0);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == 1.0);

  // independent scalar evaluation at x/peak = 0.5
  Tensor mid({1, 1, 1});
  mid.data = {1.0};
  const double expect = std::log(1.0 + 5000.0 * 0.5) / std::log(1.0 + 5000.0);
  CHECK(mu_tonemap(mid, 5000.0, 2.0)[0] == Catch::Approx(expect).epsilon(1e-12));

  Rng rng(3);
  double prev_x = 0.0, prev_t = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double xi = prev_x + rng.uniform(1e-6, 0.001);
    const double ti = mu_tonemap_scalar(xi, 5000.0, 1.0);
    CHECK(ti > prev_t);
    prev_x = xi;
    prev_t = ti;
  }

  CHECK_THROWS_AS(mu_tonemap(x, -1.0, 1.0), ValueError);
  CHECK_THROWS_AS(mu_tonemap(x, 5000.0, 0.0), ValueError);
}

TEST_CASE("psnr closed form, sentinel and loop oracle") {
  Tensor a({4, 4, 1}, 0.5);
  CHECK(psnr(a, a, 1.0) == std::numeric_limits<double>::infinity());
  CHECK(cap_db(psnr(a, a, 1.0)) == 100.0);

  // uniform error e with peak p: 20*log10(p/|e|)
  const double e = 0.01, p = 2.0;
  Tensor b = a;
  for (auto& v : b.data) v += e;
  CHECK(psnr(a, b, p) == Catch::Approx(20.0 * std::log10(p / e)).margin(1e-9));

  Rng rng(5);
  Tensor r1 = random_tensor({5, 5, 3}, rng);
  Tensor r2 = random_tensor({5, 5, 3}, rng);
  double m = 0.0;
  for (std::int64_t i = 0; i < r1.size(); ++i) m += (r1[i] - r2[i]) * (r1[i] - r2[i]);
  m /= static_cast<double>(r1.size());
  CHECK(psnr(r1, r2, 1.0) == Catch::Approx(10.0 * std::log10(1.0 / m)).epsilon(1e-12));

  CHECK_THROWS_AS(psnr(r1, Tensor({4, 4, 3}), 1.0), ShapeError);
}

TEST_CASE("psnr decreases monotonically with noise amplitude") {
  Rng rng(7);
  Tensor base = random_tensor({8, 8, 1}, rng, 0.2, 0.8);
  Tensor noise = random_tensor({8, 8, 1}, rng, -1.0, 1.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double amp : {0.001, 0.01, 0.1, 0.5}) {
    Tensor noisy = base;
    for (std::int64_t i = 0; i < noisy.size(); ++i) noisy[i] += amp * noise[i];
    const double v = psnr(base, noisy, 1.0);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("psnr_mu composes tonemap and psnr, and is peak-scale invariant") {
  Rng rng(9);
  Tensor a = random_tensor({6, 6, 4}, rng, 0.0, 3.0);
  Tensor b = random_tensor({6, 6, 4}, rng, 0.0, 3.0);
  const double peak = 3.0;

  CHECK(psnr_mu(a, a) == std::numeric_limits<double>::infinity());
  CHECK(psnr_mu(a, b, 5000.0, peak) ==
        Catch::Approx(psnr(mu_tonemap(a, 5000.0, peak), mu_tonemap(b, 5000.0, peak), 1.0))
            .epsilon(1e-12));

  Tensor a2 = a, b2 = b;
  for (auto& v : a2.data) v *= 7.0;
  for (auto& v : b2.data) v *= 7.0;
  CHECK(psnr_mu(a2, b2, 5000.0, 7.0 * peak) == Catch::Approx(psnr_mu(a, b, 5000.0, peak)).epsilon(1e-12));
}

TEST_CASE("ssim self-similarity, symmetry and checkerboard contrast") {
  Rng rng(11);
  Tensor x = random_tensor({16, 16, 2}, rng);
  CHECK(ssim(x, x) == Catch::Approx(1.0).margin(1e-9));

  Tensor y = random_tensor({16, 16, 2}, rng);
  CHECK(ssim(x, y) == Catch::Approx(ssim(y, x)).epsilon(1e-12));
  CHECK(ssim(x, y) >= -1.0);
  CHECK(ssim(x, y) <= 1.0);

  Tensor cb({16, 16, 1});
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) cb.at(i, j, 0) = static_cast<double>((i + j) % 2);
  Tensor inv = cb;
  for (auto& v : inv.data) v = 1.0 - v;
  CHECK(ssim(cb, inv) < 0.2);

  CHECK_THROWS_AS(ssim(Tensor({8, 8, 1}), Tensor({8, 8, 1})), ShapeError);
}

TEST_CASE("ms_ssim self-similarity and minimum size") {
  Rng rng(13);
  Tensor x = random_tensor({180, 180, 1}, rng);
  CHECK(ms_ssim(x, x) == Catch::Approx(1.0).margin(1e-9));

  Tensor y = x;
  for (auto& v : y.data) v = std::clamp(v + 0.05 * (v - 0.5), 0.0, 1.0);
  const double v = ms_ssim(x, y);
  CHECK(v > 0.0);
  CHECK(v <= 1.0);

  CHECK_THROWS_AS(ms_ssim(Tensor({64, 64, 1}), Tensor({64, 64, 1})), ShapeError);
}
