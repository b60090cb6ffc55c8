#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "rsmg/gradcheck.hpp"
#include "rsmg/mwdis.hpp"
#include "test_util.hpp"

using namespace rsmg;
using rsmg::test::bit_equal;
using rsmg::test::max_abs_diff;
using rsmg::test::random_tensor;

namespace {

// Direct loop form of the LL perturbation with a given rho vector.
Tensor resample_oracle(const Tensor& ll, const std::vector<float>& rho) {
  const int n = ll.dim(0);
  const std::int64_t inner = ll.numel() / n;
  Tensor out(ll.shape());
  for (std::int64_t j = 0; j < inner; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += ll.data()[i * inner + j];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += std::pow(ll.data()[i * inner + j] - mean, 2);
    const double sd = std::sqrt(var / n);
    for (int i = 0; i < n; ++i) out.data()[i * inner + j] = static_cast<float>(ll.data()[i * inner + j] + rho[i] * sd);
  }
  return out;
}

// Every pair of high-band magnitudes in a plane sits at least 8 bins apart.
bool bins_well_separated(const Tensor& x) {
  const auto s = dwt2(x);
  const int hw = s.hl.dim(2) * s.hl.dim(3);
  for (std::int64_t p = 0; p < s.hl.numel() / hw; ++p) {
    std::vector<float> m(hw);
    for (int j = 0; j < hw; ++j) {
      const auto k = p * hw + j;
      m[j] = std::sqrt(s.hl.data()[k] * s.hl.data()[k] + s.lh.data()[k] * s.lh.data()[k] +
                       s.hh.data()[k] * s.hh.data()[k]);
    }
    std::sort(m.begin(), m.end());
    const float bin = (m.back() - m.front()) / 256.0f;
    for (int j = 1; j < hw; ++j)
      if (m[j] - m[j - 1] < 8.0f * bin) return false;
  }
  return true;
}

MwdisParams shared_params(int c, Rng& rng) {
  MwdisParams p;
  p.branch[0] = MwdisBranch::make(c, rng);
  p.branch[1] = p.branch[0];
  return p;
}

}  // namespace

TEST_CASE("resample_ll") {
  Rng rng(11);
  const Tensor ll = random_tensor({4, 3, 2, 2}, rng);
  SUBCASE("alpha = 0 is the exact identity") {
    CHECK(bit_equal(resample_ll(ll, ResampleConfig{0.0f, 5}), ll));
  }
  SUBCASE("identical samples have zero spread") {
    const Tensor one = random_tensor({1, 3, 2, 2}, rng);
    const Tensor same = concat({one, one, one}, 0);
    CHECK(bit_equal(resample_ll(same, ResampleConfig{1.0f, 5}), same));
  }
  SUBCASE("matches a loop reimplementation with the recorded draws") {
    const Tensor two = random_tensor({2, 3, 2, 2}, rng);
    std::vector<float> rho;
    const Tensor out = resample_ll(two, ResampleConfig{0.7f, 99}, &rho);
    REQUIRE(rho.size() == 2);
    CHECK(rho[0] != 0.0f);
    // the draws come from N(0, alpha) on a seeded mt19937_64
    Rng replay(99);
    std::normal_distribution<float> dist(0.0f, std::sqrt(0.7f));
    CHECK(rho[0] == dist(replay));
    CHECK(max_abs_diff(out, resample_oracle(two, rho)) <= 1e-6);
  }
  SUBCASE("alpha out of range") {
    CHECK_THROWS_WITH_AS(resample_ll(ll, ResampleConfig{1.5f, 0}), doctest::Contains("InvalidArg"), Error);
  }
  SUBCASE("gradient through the batch spread") {
    Tensor x = random_tensor({3, 2, 2, 2}, rng);
    x.set_requires_grad(true);
    const Tensor w = random_tensor({3, 2, 2, 2}, rng);
    const std::vector<float> rho{0.8f, -0.5f, 1.3f};
    const auto r = gradcheck([&] { return sum(mul(resample_ll(x, rho), w)); }, {x});
    CHECK(r.ok);
  }
}

TEST_CASE("histogram_equalize") {
  SUBCASE("constant plane is unchanged") {
    const Tensor p({3, 3}, 2.5f);
    CHECK(bit_equal(histogram_equalize(p), p));
  }
  SUBCASE("four distinct values") {
    const Tensor p({2, 2}, {1, 2, 3, 4});
    CHECK(histogram_equalize(p).values() == std::vector<float>{0.25f, 0.5f, 0.75f, 1.0f});
  }
  SUBCASE("two-level plane") {
    const Tensor p({2, 2}, {0, 1, 1, 0});
    CHECK(histogram_equalize(p).values() == std::vector<float>{0.5f, 1.0f, 1.0f, 0.5f});
  }
  SUBCASE("ramp of 256 distinct values") {
    // An evenly spaced ramp puts value rank r alone in bin r, so HE gives (r + 1) / 256.
    std::vector<int> rank(256);
    std::iota(rank.begin(), rank.end(), 0);
    std::shuffle(rank.begin(), rank.end(), Rng(3));
    std::vector<float> v(256);
    for (int i = 0; i < 256; ++i) v[i] = -2.0f + 0.01f * rank[i];
    const Tensor out = histogram_equalize(Tensor({16, 16}, v));
    float top = 0.0f;
    for (int i = 0; i < 256; ++i) {
      top = std::max(top, out.data()[i]);
      CHECK(out.data()[i] == doctest::Approx((rank[i] + 1) / 256.0));
    }
    CHECK(top == 1.0f);
  }
  SUBCASE("output in [0,1] and order preserving") {
    Rng rng(4);
    const Tensor p = random_tensor({9, 9}, rng);
    const Tensor out = histogram_equalize(p);
    for (int i = 0; i < 81; ++i) {
      CHECK(out.data()[i] >= 0.0f);
      CHECK(out.data()[i] <= 1.0f);
      for (int j = 0; j < 81; ++j)
        if (p.data()[i] < p.data()[j]) CHECK(out.data()[i] <= out.data()[j]);
    }
  }
}

TEST_CASE("gradient_map") {
  SUBCASE("3-4-5 magnitude on a flat plane") {
    const Tensor hl({1, 2, 2, 2}, 3.0f), lh({1, 2, 2, 2}, 4.0f), hh({1, 2, 2, 2}, 0.0f);
    const Tensor g = gradient_map(hl, lh, hh);
    for (float v : g.data()) CHECK(v == 5.0f);
  }
  SUBCASE("zero subbands") {
    const Tensor z({2, 1, 2, 2});
    const Tensor g = gradient_map(z, z, z);
    for (float v : g.data()) CHECK(v == 0.0f);
  }
  SUBCASE("per-plane equalization") {
    const Tensor hl({1, 1, 2, 2}, {1, 2, 3, 4}), z({1, 1, 2, 2});
    CHECK(gradient_map(hl, z, z).values() == std::vector<float>{0.25f, 0.5f, 0.75f, 1.0f});
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_WITH_AS(gradient_map(Tensor({1, 1, 2, 2}), Tensor({1, 1, 2, 2}), Tensor({1, 1, 2, 3})),
                         doctest::Contains("ShapeMismatch"), Error);
  }
}

TEST_CASE("spatial_attention") {
  Rng rng(12);
  SUBCASE("zero weights give 0.5") {
    const Tensor a = spatial_attention(random_tensor({2, 3, 4, 4}, rng), SpatAttnParams::zeros());
    CHECK(a.shape() == Shape{2, 1, 4, 4});
    for (float v : a.data()) CHECK(v == 0.5f);
  }
  SUBCASE("range") {
    const auto p = SpatAttnParams::make(rng);
    const Tensor a = spatial_attention(scale(random_tensor({2, 5, 6, 6}, rng), 4.0f), p);
    for (float v : a.data()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }
  SUBCASE("single-position oracle") {
    // With a 1x1 map every reflected tap reads the same pixel.
    auto p = SpatAttnParams::zeros();
    p.conv7 = random_tensor({1, 2, 7, 7}, rng);
    p.bias = Tensor({1}, 0.3f);
    const Tensor f({1, 3, 1, 1}, {0.2f, -0.7f, 1.1f});
    const double mean = (0.2 - 0.7 + 1.1) / 3.0, mx = 1.1;
    double z = 0.3;
    for (int t = 0; t < 49; ++t) z += p.conv7.data()[t] * mean + p.conv7.data()[49 + t] * mx;
    const double expected = 1.0 / (1.0 + std::exp(-z));
    CHECK(spatial_attention(f, p).item() == doctest::Approx(expected).epsilon(1e-5));
  }
}

TEST_CASE("cross_modal_weight") {
  Rng rng(13);
  const Tensor f = random_tensor({2, 3, 4, 4}, rng);
  const Conv2d conv = Conv2d::kaiming(3, 3, 3, rng);
  SUBCASE("unit attention leaves the convolution") {
    CHECK(bit_equal(cross_modal_weight(f, Tensor({2, 1, 4, 4}, 1.0f), conv), conv(f)));
  }
  SUBCASE("half attention with an identity 1x1 conv") {
    const Tensor out = cross_modal_weight(f, Tensor({2, 1, 4, 4}, 0.5f), Conv2d::dirac(3, 1));
    CHECK(max_abs_diff(out, scale(f, 0.5f)) <= 1e-7);
  }
  SUBCASE("spatial mismatch") {
    CHECK_THROWS_WITH_AS(cross_modal_weight(f, Tensor({2, 1, 2, 4}, 1.0f), conv), doctest::Contains("ShapeMismatch"),
                         Error);
  }
}

TEST_CASE("mwdis_forward") {
  Rng rng(14);
  const Tensor x1 = random_tensor({4, 3, 6, 6}, rng);
  const Tensor x2 = random_tensor({4, 2, 6, 6}, rng);
  auto params = MwdisParams::make(3, 2, rng);

  SUBCASE("shapes") {
    const auto [y1, y2] = mwdis_forward(x1, x2, {0.5f, 1}, params);
    CHECK(y1.shape() == x1.shape());
    CHECK(y2.shape() == x2.shape());
  }
  SUBCASE("pure round trip") {
    MwdisOptions opts;
    opts.resample = false;
    opts.bypass_attention = true;
    const auto [y1, y2] = mwdis_forward(x1, x2, {0.0f, 1}, params, opts);
    CHECK(max_abs_diff(y1, x1) <= 1e-5);
    CHECK(max_abs_diff(y2, x2) <= 1e-5);
  }
  SUBCASE("seeded reruns agree, other seeds differ") {
    const auto a = mwdis_forward(x1, x2, {0.5f, 7}, params);
    const auto b = mwdis_forward(x1, x2, {0.5f, 7}, params);
    CHECK(bit_equal(a.first, b.first));
    CHECK(bit_equal(a.second, b.second));
    const auto c = mwdis_forward(x1, x2, {0.5f, 8}, params);
    CHECK_FALSE(bit_equal(a.first, c.first));
  }
  SUBCASE("test path ignores alpha") {
    MwdisOptions opts;
    opts.resample = false;
    const auto a = mwdis_forward(x1, x2, {0.9f, 7}, params, opts);
    const auto b = mwdis_forward(x1, x2, {0.0f, 3}, params, opts);
    CHECK(bit_equal(a.first, b.first));
  }
  SUBCASE("swap symmetry with shared branches") {
    const auto shared = shared_params(3, rng);
    const Tensor z = random_tensor({4, 3, 6, 6}, rng);
    const auto a = mwdis_forward(x1, z, {0.5f, 21}, shared);
    const auto b = mwdis_forward(z, x1, {0.5f, 21}, shared);
    CHECK(bit_equal(a.first, b.second));
    CHECK(bit_equal(a.second, b.first));
  }
  SUBCASE("mismatched grids") {
    CHECK_THROWS_WITH_AS(mwdis_forward(x1, random_tensor({4, 2, 4, 4}, rng), {0.5f, 1}, params),
                         doctest::Contains("ShapeMismatch"), Error);
    CHECK_THROWS_WITH_AS(mwdis_forward(random_tensor({4, 3, 5, 5}, rng), random_tensor({4, 2, 5, 5}, rng), {0.5f, 1},
                                       params),
                         doctest::Contains("OddExtent"), Error);
  }
}

TEST_CASE("mwdis_forward gradient check") {
  // The equalized gradient map is piecewise constant; central differences are
  // only meaningful when no probe can move a magnitude across a bin edge.
  Rng rng(15);
  Tensor x1, x2;
  for (int attempt = 0;; ++attempt) {
    REQUIRE(attempt < 200);
    x1 = random_tensor({2, 2, 4, 4}, rng);
    x2 = random_tensor({2, 2, 4, 4}, rng);
    if (bins_well_separated(x1) && bins_well_separated(x2)) break;
  }
  x1.set_requires_grad(true);
  x2.set_requires_grad(true);
  const auto params = MwdisParams::make(2, 2, rng);
  const Tensor w1 = random_tensor({2, 2, 4, 4}, rng), w2 = random_tensor({2, 2, 4, 4}, rng);
  auto loss = [&] {
    const auto [y1, y2] = mwdis_forward(x1, x2, {0.5f, 4}, params);
    return add(sum(mul(y1, w1)), sum(mul(y2, w2)));
  };
  std::vector<Tensor> wrt{x1, x2};
  ParamList named;
  params.collect("mwdis", named);
  for (const auto& p : named) wrt.push_back(p.tensor);
  const auto r = gradcheck(loss, wrt);
  INFO("rel error " << r.rel_error << " worst " << r.worst);
  CHECK(r.ok);
}
