#include <cmath>

#include "doctest.h"
#include "rsmg/gradcheck.hpp"
#include "rsmg/wavelet.hpp"
#include "test_util.hpp"

using namespace rsmg;
using rsmg::test::max_abs_diff;
using rsmg::test::random_tensor;

namespace {

// Separable route: 1-D orthonormal Haar along rows, then along columns.
SubbandSet separable_haar(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double r = 1.0 / std::sqrt(2.0);
  Tensor lo_cols({n, c, h, w / 2}), hi_cols({n, c, h, w / 2});
  for (int p = 0; p < n * c; ++p)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w / 2; ++j) {
        const double a = x.data()[(std::int64_t(p) * h + i) * w + 2 * j];
        const double b = x.data()[(std::int64_t(p) * h + i) * w + 2 * j + 1];
        lo_cols.data()[(std::int64_t(p) * h + i) * (w / 2) + j] = static_cast<float>((a + b) * r);
        hi_cols.data()[(std::int64_t(p) * h + i) * (w / 2) + j] = static_cast<float>((a - b) * r);
      }
  auto rows = [&](const Tensor& t, bool high) {
    Tensor out({n, c, h / 2, w / 2});
    for (int p = 0; p < n * c; ++p)
      for (int i = 0; i < h / 2; ++i)
        for (int j = 0; j < w / 2; ++j) {
          const double a = t.data()[(std::int64_t(p) * h + 2 * i) * (w / 2) + j];
          const double b = t.data()[(std::int64_t(p) * h + 2 * i + 1) * (w / 2) + j];
          out.data()[(std::int64_t(p) * (h / 2) + i) * (w / 2) + j] = static_cast<float>((high ? a - b : a + b) * r);
        }
    return out;
  };
  // hl: low across columns, high across rows (top minus bottom); lh: the converse.
  return {rows(lo_cols, false), rows(lo_cols, true), rows(hi_cols, false), rows(hi_cols, true)};
}

double energy(const Tensor& t) {
  double e = 0.0;
  for (float v : t.data()) e += double(v) * v;
  return e;
}

}  // namespace

TEST_CASE("dwt2 examples") {
  SUBCASE("constant image") {
    const float v = 0.75f;
    const auto s = dwt2(Tensor({1, 2, 4, 6}, v));
    for (float x : s.ll.data()) CHECK(x == 2 * v);
    for (const Tensor* t : {&s.hl, &s.lh, &s.hh})
      for (float x : t->data()) CHECK(x == 0.0f);
  }
  SUBCASE("single block against the separable oracle") {
    const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    const auto s = dwt2(x);
    const auto o = separable_haar(x);
    CHECK(o.ll.item() == doctest::Approx(5.0));
    CHECK(o.hl.item() == doctest::Approx(-2.0));
    CHECK(o.lh.item() == doctest::Approx(-1.0));
    CHECK(o.hh.item() == doctest::Approx(0.0));
    CHECK(s.ll.item() == 5.0f);
    CHECK(s.hl.item() == -2.0f);
    CHECK(s.lh.item() == -1.0f);
    CHECK(s.hh.item() == 0.0f);
  }
  SUBCASE("random tensor against the separable oracle") {
    Rng rng(7);
    const Tensor x = random_tensor({2, 3, 6, 8}, rng);
    const auto s = dwt2(x);
    const auto o = separable_haar(x);
    CHECK(max_abs_diff(s.ll, o.ll) <= 1e-6);
    CHECK(max_abs_diff(s.hl, o.hl) <= 1e-6);
    CHECK(max_abs_diff(s.lh, o.lh) <= 1e-6);
    CHECK(max_abs_diff(s.hh, o.hh) <= 1e-6);
  }
  SUBCASE("odd extent") {
    CHECK_THROWS_WITH_AS(dwt2(Tensor({1, 1, 3, 4})), doctest::Contains("OddExtent"), Error);
    CHECK_THROWS_WITH_AS(dwt2(Tensor({1, 1, 4, 5})), doctest::Contains("OddExtent"), Error);
  }
}

TEST_CASE("idwt2 examples") {
  Rng rng(8);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  CHECK(max_abs_diff(idwt2(dwt2(x)), x) <= 1e-5);

  const Tensor z({1, 2, 3, 3});
  const Tensor zero_img = idwt2({z, z, z, z});
  for (float v : zero_img.data()) CHECK(v == 0.0f);

  const float c = -1.25f;
  const Tensor ll({1, 2, 3, 3}, 2 * c);
  const Tensor flat = idwt2({ll, z, z, z});
  for (float v : flat.data()) CHECK(v == doctest::Approx(c));

  CHECK_THROWS_WITH_AS(idwt2({ll, Tensor({1, 2, 3, 2}), z, z}), doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("wavelet properties") {
  Rng rng(9);
  for (const Shape& shape : {Shape{1, 1, 2, 2}, Shape{2, 4, 8, 8}, Shape{4, 8, 16, 16}}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor(shape, rng);
      const auto s = dwt2(x);
      CHECK(max_abs_diff(idwt2(s), x) <= 1e-5);
      const double ein = energy(x);
      const double eout = energy(s.ll) + energy(s.hl) + energy(s.lh) + energy(s.hh);
      CHECK(std::abs(eout - ein) / ein <= 1e-4);

      const Tensor y = random_tensor(shape, rng);
      const float alpha = 0.6f, beta = -1.3f;
      const auto lhs = dwt2(add(scale(x, alpha), scale(y, beta)));
      const auto sy = dwt2(y);
      CHECK(max_abs_diff(lhs.ll, add(scale(s.ll, alpha), scale(sy.ll, beta))) <= 1e-5);
      CHECK(max_abs_diff(lhs.hl, add(scale(s.hl, alpha), scale(sy.hl, beta))) <= 1e-5);
      CHECK(max_abs_diff(lhs.lh, add(scale(s.lh, alpha), scale(sy.lh, beta))) <= 1e-5);
      CHECK(max_abs_diff(lhs.hh, add(scale(s.hh, alpha), scale(sy.hh, beta))) <= 1e-5);
    }
  }
}

TEST_CASE("wavelet gradients") {
  Rng rng(10);
  Tensor x = param(random_tensor({2, 2, 4, 4}, rng));
  const Tensor w1 = random_tensor({2, 2, 2, 2}, rng), w2 = random_tensor({2, 2, 2, 2}, rng);
  const auto analysis = gradcheck(
      [&] {
        const auto s = dwt2(x);
        return sum(add(mul(s.hl, w1), mul(s.lh, w2)));
      },
      {x});
  CHECK(analysis.ok);

  Tensor ll = param(random_tensor({1, 2, 2, 2}, rng)), hh = param(random_tensor({1, 2, 2, 2}, rng));
  const Tensor lh = random_tensor({1, 2, 2, 2}, rng);
  const Tensor wo = random_tensor({1, 2, 4, 4}, rng);
  const auto synthesis = gradcheck([&] { return sum(mul(idwt2({ll, lh, lh, hh}), wo)); }, {ll, hh});
  CHECK(synthesis.ok);
}
