#include <cmath>
#include <numbers>

#include "doctest.h"
#include "rsmg/gradcheck.hpp"
#include "rsmg/nn.hpp"
#include "rsmg/optim.hpp"
#include "test_util.hpp"

using namespace rsmg;
using rsmg::test::random_tensor;

namespace {

std::vector<float> matmul_oracle(const std::vector<float>& a, const std::vector<float>& b, int m, int k, int n) {
  std::vector<float> c(std::size_t(m) * n, 0.0f);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

// Direct sliding-window cross-correlation.
std::vector<float> conv_oracle(const Tensor& x, const Tensor& w, int stride, PadMode mode) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2), p = (k - 1) / 2;
  const int ho = (h + 2 * p - k) / stride + 1, wo = (wd + 2 * p - k) / stride + 1;
  std::vector<float> out(std::size_t(n) * cout * ho * wo, 0.0f);
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int iy = oy * stride + ky - p, ix = ox * stride + kx - p;
                if (mode == PadMode::Reflect) {
                  while (iy < 0 || iy >= h) iy = iy < 0 ? -iy : 2 * (h - 1) - iy;
                  while (ix < 0 || ix >= wd) ix = ix < 0 ? -ix : 2 * (wd - 1) - ix;
                } else if (iy < 0 || iy >= h || ix < 0 || ix >= wd) {
                  continue;
                }
                acc += double(x.data()[((b * cin + ci) * h + iy) * wd + ix]) *
                       w.data()[((co * cin + ci) * k + ky) * k + kx];
              }
          out[((b * cout + co) * ho + oy) * wo + ox] = static_cast<float>(acc);
        }
  return out;
}

}  // namespace

TEST_CASE("matmul") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  SUBCASE("identity") {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    CHECK(matmul(a, eye).values() == a.values());
  }
  SUBCASE("against triple-loop oracle") {
    const Tensor b({2, 2}, {5, 6, 7, 8});
    const auto expected = matmul_oracle(a.values(), b.values(), 2, 2, 2);
    CHECK(expected == std::vector<float>{19, 22, 43, 50});
    CHECK(matmul(a, b).values() == expected);
    Rng rng(3);
    const Tensor c = random_tensor({5, 7}, rng), d = random_tensor({7, 3}, rng);
    const auto ref = matmul_oracle(c.values(), d.values(), 5, 7, 3);
    const auto got = matmul(c, d).values();
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
  SUBCASE("inner dimension mismatch") {
    const Tensor b({2, 3});
    CHECK_THROWS_WITH_AS(matmul(Tensor({2, 3}), b), doctest::Contains("ShapeMismatch"), Error);
  }
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity kernel") {
    Rng rng(1);
    const Tensor x = random_tensor({2, 1, 5, 4}, rng);
    const Tensor w({1, 1, 1, 1}, {1.0f});
    CHECK(conv2d(x, w).values() == x.values());
  }
  SUBCASE("3x3 ones on constant image") {
    const float v = 1.5f;
    const Tensor x({1, 1, 5, 5}, v);
    const Tensor w({1, 1, 3, 3}, 1.0f);
    const auto got = conv2d(x, w).values();
    const auto ref = conv_oracle(x, w, 1, PadMode::Zero);
    CHECK(got == ref);
    CHECK(got[2 * 5 + 2] == doctest::Approx(9 * v));
    CHECK(got[0] == doctest::Approx(4 * v));
  }
  SUBCASE("stride and reflect padding match the sliding-window oracle") {
    Rng rng(2);
    const Tensor x = random_tensor({2, 3, 7, 6}, rng);
    const Tensor w = random_tensor({4, 3, 5, 5}, rng);
    for (int stride : {1, 2})
      for (PadMode mode : {PadMode::Zero, PadMode::Reflect}) {
        const auto got = conv2d(x, w, nullptr, stride, mode).values();
        const auto ref = conv_oracle(x, w, stride, mode);
        REQUIRE(got.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-4));
      }
  }
  SUBCASE("output extent arithmetic") {
    const Tensor y = conv2d(Tensor({1, 2, 11, 11}), Tensor({3, 2, 3, 3}), nullptr, 2);
    CHECK(y.shape() == Shape{1, 3, 6, 6});
  }
  SUBCASE("errors") {
    CHECK_THROWS_WITH_AS(conv2d(Tensor({1, 1, 4, 4}), Tensor({1, 1, 2, 2})), doctest::Contains("InvalidArg"), Error);
    CHECK_THROWS_WITH_AS(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3})), doctest::Contains("ShapeMismatch"),
                         Error);
  }
}

TEST_CASE("softmax") {
  CHECK(softmax(Tensor({3}, 2.5f)).values() == std::vector<float>(3, 1.0f / 3.0f));
  const auto two = softmax(Tensor({2}, {0.0f, std::log(3.0f)})).values();
  CHECK(two[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(two[1] == doctest::Approx(0.75).epsilon(1e-6));
  CHECK(softmax(Tensor({1}, {-40.0f})).values() == std::vector<float>{1.0f});

  Rng rng(4);
  const Tensor x = scale(random_tensor({16, 9}, rng), 30.0f);
  const auto y = softmax(x).values();
  for (int r = 0; r < 16; ++r) {
    double s = 0.0;
    for (int j = 0; j < 9; ++j) s += y[r * 9 + j];
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  SUBCASE("causal mask zeroes the upper triangle") {
    const auto c = softmax(random_tensor({2, 3, 3}, rng), true).values();
    CHECK(c[0] == 1.0f);
    CHECK(c[1] == 0.0f);
    CHECK(c[2] == 0.0f);
    CHECK(c[5] == 0.0f);
  }
}

TEST_CASE("layer_norm") {
  const Tensor ones({2}, 1.0f), zeros({2});
  CHECK(layer_norm(Tensor({1, 2}, 7.0f), ones, zeros).values() == std::vector<float>{0.0f, 0.0f});
  const auto y = layer_norm(Tensor({1, 2}, {1.0f, 3.0f}), ones, zeros).values();
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(-expect).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(expect).epsilon(1e-6));
  CHECK(layer_norm(Tensor({1, 2}, {1.0f, 3.0f}), zeros, Tensor({2}, 5.0f)).values() == std::vector<float>{5.0f, 5.0f});

  Rng rng(5);
  const Tensor x = add_scalar(scale(random_tensor({32, 24}, rng), 10.0f), 3.0f);
  const auto out = layer_norm(x, Tensor({24}, 1.0f), Tensor({24})).values();
  for (int r = 0; r < 32; ++r) {
    double mu = 0.0;
    for (int j = 0; j < 24; ++j) mu += out[r * 24 + j];
    CHECK(std::abs(mu / 24.0) <= 1e-5);
  }
}

TEST_CASE("elementwise ops") {
  Rng rng(6);
  const Tensor x = random_tensor({3, 4}, rng);
  CHECK(mul(x, Tensor({3, 4}, 1.0f)).values() == x.values());
  CHECK(sigmoid(Tensor({1}, 0.0f)).item() == 0.5f);
  const double gelu_ref = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(gelu(Tensor({1}, 1.0f)).item() == doctest::Approx(gelu_ref).epsilon(1e-6));
  CHECK(gelu_ref == doctest::Approx(0.8413).epsilon(1e-4));

  SUBCASE("broadcast patterns") {
    const Tensor map({2, 3, 2, 2});
    CHECK(add(map, Tensor::scalar(1.0f)).values() == std::vector<float>(24, 1.0f));
    const auto ch = add(map, Tensor({3}, {1.0f, 2.0f, 3.0f})).values();
    CHECK(ch[0] == 1.0f);
    CHECK(ch[4] == 2.0f);
    CHECK(ch[12 + 8] == 3.0f);
    Tensor attn({2, 1, 2, 2});
    for (int i = 0; i < 8; ++i) attn.data()[i] = float(i);
    const auto m = add(map, attn).values();
    CHECK(m[1] == 1.0f);
    CHECK(m[4 + 1] == 1.0f);
    CHECK(m[12 + 4 + 2] == 6.0f);
    CHECK_THROWS_WITH_AS(add(map, Tensor({2, 2})), doctest::Contains("ShapeMismatch"), Error);
  }
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    Tensor x = param(Tensor({2, 3}, 0.7f));
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(sum(x));
    CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>(6, 1.0f));
  }
  SUBCASE("sum of squares at 3 matches central difference") {
    Tensor x = param(Tensor({1}, 3.0f));
    {
      Tape tape;
      Tape::Scope scope(tape);
      backward(sum(square(x)));
    }
    const double h = 1e-3;
    const double fd = ((3.0 + h) * (3.0 + h) - (3.0 - h) * (3.0 - h)) / (2 * h);
    CHECK(x.grad()[0] == doctest::Approx(fd).epsilon(1e-4));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
  }
  SUBCASE("repeated backward accumulates on leaves") {
    Tensor x = param(Tensor({1}, 2.0f));
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(8.0));
    x.zero_grad();
    CHECK(x.grad().empty());
  }
  SUBCASE("two tapes") {
    Tensor x = param(Tensor({2}, 1.0f));
    Tape first;
    Tensor y1;
    {
      Tape::Scope scope(first);
      y1 = square(x);
    }
    Tape second;
    Tape::Scope scope(second);
    const Tensor y2 = square(x);
    CHECK_THROWS_WITH_AS(add(y1, y2), doctest::Contains("DetachedTensor"), Error);
    CHECK_THROWS_WITH_AS(second.backward(sum(y1)), doctest::Contains("DetachedTensor"), Error);
  }
  SUBCASE("non-scalar loss") {
    Tensor x = param(Tensor({2}, 1.0f));
    Tape tape;
    Tape::Scope scope(tape);
    CHECK_THROWS_WITH_AS(tape.backward(square(x)), doctest::Contains("NotScalar"), Error);
  }
  SUBCASE("nodes are topologically ordered") {
    Tensor x = param(Tensor({2}, 1.0f));
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor y = sum(mul(sigmoid(x), gelu(x)));
    REQUIRE(tape.size() == 4);
    for (std::size_t i = 0; i < tape.size(); ++i)
      for (auto in : tape.node_inputs(i)) CHECK(in < static_cast<std::int64_t>(i));
    CHECK(std::string(tape.op_name(3)) == "sum");
  }
  SUBCASE("no active tape means no recording") {
    Tensor x = param(Tensor({2}, 1.0f));
    const Tensor y = square(x);
    CHECK_FALSE(y.requires_grad());
    CHECK_THROWS_WITH_AS(backward(sum(y)), doctest::Contains("DetachedTensor"), Error);
  }
}

TEST_CASE("gradient check of every op") {
  Rng rng(11);
  auto check = [](const char* name, const std::function<Tensor()>& f, std::vector<Tensor> wrt) {
    const auto r = gradcheck(f, wrt);
    INFO(name << " rel err " << r.rel_error << " at " << r.worst);
    CHECK(r.ok);
  };
  Tensor a = param(random_tensor({3, 4}, rng));
  Tensor b = param(random_tensor({3, 4}, rng));
  const Tensor w = random_tensor({3, 4}, rng);
  auto weighted = [w](const Tensor& t) { return sum(mul(t, w)); };

  check("add", [&] { return weighted(add(a, b)); }, {a, b});
  check("sub", [&] { return weighted(sub(a, b)); }, {a, b});
  check("mul", [&] { return weighted(mul(a, b)); }, {a, b});
  check("scale", [&] { return weighted(add_scalar(scale(a, -1.7f), 0.3f)); }, {a});
  check("gelu", [&] { return weighted(gelu(a)); }, {a});
  check("sigmoid", [&] { return weighted(sigmoid(a)); }, {a});
  check("square", [&] { return weighted(square(a)); }, {a});
  check("exp", [&] { return weighted(exp(a)); }, {a});
  Tensor pos = param(add_scalar(Tensor({3, 4}, 0.0f), 1.5f));
  for (auto& v : pos.data()) v += 0.3f * std::uniform_real_distribution<float>(-1, 1)(rng);
  check("sqrt", [&] { return weighted(sqrt(pos)); }, {pos});
  check("log", [&] { return weighted(log(pos)); }, {pos});
  Tensor away = param(random_tensor({3, 4}, rng));
  for (auto& v : away.data()) v = v < 0 ? v - 0.1f : v + 0.1f;
  check("relu", [&] { return weighted(relu(away)); }, {away});
  check("maximum", [&] { return weighted(maximum(away, scale(away, -1.0f))); }, {away});

  Tensor m1 = param(random_tensor({3, 5}, rng)), m2 = param(random_tensor({5, 4}, rng));
  check("matmul", [&] { return weighted(matmul(m1, m2)); }, {m1, m2});
  Tensor b1 = param(random_tensor({2, 3, 5}, rng)), b2 = param(random_tensor({2, 5, 2}, rng));
  const Tensor wb = random_tensor({2, 3, 2}, rng);
  check("bmm", [&] { return sum(mul(bmm(b1, b2), wb)); }, {b1, b2});

  Tensor x4 = param(random_tensor({2, 3, 4, 4}, rng));
  Tensor ch = param(random_tensor({3}, rng));
  Tensor mp = param(random_tensor({2, 1, 4, 4}, rng));
  const Tensor w4 = random_tensor({2, 3, 4, 4}, rng);
  auto weighted4 = [w4](const Tensor& t) { return sum(mul(t, w4)); };
  check("mul channel broadcast", [&] { return weighted4(mul(x4, ch)); }, {x4, ch});
  check("mul map broadcast", [&] { return weighted4(mul(x4, mp)); }, {x4, mp});
  Tensor sc = param(Tensor({1}, 0.4f));
  check("mul scalar broadcast", [&] { return weighted4(mul(x4, sc)); }, {x4, sc});
  check("permute", [&] { return sum(mul(permute(x4, {0, 2, 3, 1}), permute(w4, {0, 2, 3, 1}))); }, {x4});
  check("slice+concat",
        [&] { return weighted4(concat({slice(x4, 1, 2, 1), slice(x4, 1, 0, 2)}, 1)); }, {x4});

  Tensor cw = param(random_tensor({2, 3, 3, 3}, rng)), cb = param(random_tensor({2}, rng));
  for (PadMode mode : {PadMode::Zero, PadMode::Reflect})
    for (int stride : {1, 2}) {
      const Tensor wo = random_tensor(conv2d(x4, cw, &cb, stride, mode).shape(), rng);
      check("conv2d", [&] { return sum(mul(conv2d(x4, cw, &cb, stride, mode), wo)); }, {x4, cw, cb});
    }
  Tensor pw = param(random_tensor({5, 3, 1, 1}, rng));
  const Tensor wpw = random_tensor({2, 5, 4, 4}, rng);
  check("conv2d 1x1", [&] { return sum(mul(conv2d(x4, pw), wpw)); }, {x4, pw});

  Tensor odd = param(random_tensor({1, 2, 3, 5}, rng));
  const Tensor wpad = random_tensor({1, 2, 4, 6}, rng);
  check("pad_reflect", [&] { return sum(mul(pad_reflect(odd, 0, 1, 0, 1), wpad)); }, {odd});
  const Tensor wpool = random_tensor({2, 3, 2, 2}, rng);
  check("avg_pool2", [&] { return sum(mul(avg_pool2(x4), wpool)); }, {x4});
  const Tensor wg = random_tensor({2, 3}, rng);
  check("mean_hw", [&] { return sum(mul(mean_hw(x4), wg)); }, {x4});
  const Tensor wc = random_tensor({2, 1, 4, 4}, rng);
  check("channel_mean", [&] { return sum(mul(channel_mean(x4), wc)); }, {x4});
  check("channel_max", [&] { return sum(mul(channel_max(x4), wc)); }, {x4});

  check("softmax", [&] { return weighted(softmax(a)); }, {a});
  Tensor sq = param(random_tensor({2, 3, 3}, rng));
  const Tensor wsq = random_tensor({2, 3, 3}, rng);
  check("causal softmax", [&] { return sum(mul(softmax(sq, true), wsq)); }, {sq});
  check("log_softmax", [&] { return weighted(log_softmax(a)); }, {a});
  Tensor gamma = param(random_tensor({4}, rng)), beta = param(random_tensor({4}, rng));
  check("layer_norm", [&] { return weighted(layer_norm(a, gamma, beta)); }, {a, gamma, beta});
  const Tensor wl = random_tensor({3}, rng);
  check("sum_last", [&] { return sum(mul(sum_last(a), wl)); }, {a});
  check("l2_normalize_rows", [&] { return weighted(l2_normalize_rows(a)); }, {a});
  const std::vector<int> rows{2, 0, 2};
  check("gather_rows", [&] { return weighted(gather_rows(a, rows)); }, {a});
  const std::vector<int> labels{1, 3, 0};
  check("cross_entropy", [&] { return cross_entropy(a, labels); }, {a});
  check("reshape", [&] { return sum(mul(reshape(a, {4, 3}), reshape(w, {4, 3}))); }, {a});
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient, no decay") {
    AdamState st;
    st.weight_decay = 0.0f;
    st.lr = 0.1f;
    std::vector<Tensor> p{param(Tensor({3}, 1.0f))};
    adam_step(st, p);
    CHECK(p[0].values() == std::vector<float>(3, 1.0f));
    CHECK(st.step == 1);
  }
  SUBCASE("single step hand oracle") {
    AdamState st;
    st.weight_decay = 0.0f;
    st.lr = 0.1f;
    std::vector<Tensor> p{param(Tensor({1}, 1.0f))};
    p[0].impl()->grad_buffer()[0] = 1.0f;
    adam_step(st, p);
    // m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
    CHECK(p[0].item() == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-6));
    CHECK(p[0].item() == doctest::Approx(0.9).epsilon(1e-6));
  }
  SUBCASE("decay path") {
    AdamState st;
    st.weight_decay = 1e-4f;
    st.lr = 0.1f;
    std::vector<Tensor> p{param(Tensor({1}, 1.0f))};
    adam_step(st, p);
    const double g = 1e-4;  // wd * theta
    const double m_hat = ((1 - 0.9) * g) / (1 - 0.9);
    const double v_hat = ((1 - 0.999) * g * g) / (1 - 0.999);
    const double expected = 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(p[0].item() == doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("step count and moment shapes") {
    AdamState st;
    std::vector<Tensor> p{param(Tensor({2, 2})), param(Tensor({3}))};
    adam_step(st, p);
    adam_step(st, p);
    CHECK(st.step == 2);
    CHECK(st.m[0].size() == 4);
    CHECK(st.v[1].size() == 3);
    std::vector<Tensor> other{param(Tensor({5})), param(Tensor({3}))};
    CHECK_THROWS_WITH_AS(adam_step(st, other), doctest::Contains("ShapeMismatch"), Error);
  }
}

TEST_CASE("cosine_lr") {
  CHECK(cosine_lr(0, 100, 1e-3f, 1e-5f) == doctest::Approx(1e-3));
  CHECK(cosine_lr(100, 100, 1e-3f, 1e-5f) == doctest::Approx(1e-5));
  CHECK(cosine_lr(50, 100, 1e-3f, 1e-5f) == doctest::Approx((1e-3 + 1e-5) / 2));
  CHECK_THROWS_WITH_AS(cosine_lr(101, 100, 1e-3f), doctest::Contains("InvalidArg"), Error);
}

TEST_CASE("tape determinism") {
  auto run = [] {
    Rng rng(99);
    Tensor w = param(random_tensor({6, 5}, rng));
    const Tensor x = random_tensor({4, 6}, rng);
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor loss = mean(square(gelu(matmul(x, w))));
    tape.backward(loss);
    return std::pair{loss.item(), std::vector<float>(w.grad().begin(), w.grad().end())};
  };
  const auto first = run();
  const auto second = run();
  CHECK(std::memcmp(&first.first, &second.first, sizeof(float)) == 0);
  CHECK(first.second == second.second);
}
