#include "rsmg/nn.hpp"

#include <cmath>

namespace rsmg {

Tensor uniform(Shape shape, float bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor normal(Shape shape, float stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor param(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  return param(uniform(std::move(shape), bound, rng));
}

Tensor xavier_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  return param(uniform(std::move(shape), bound, rng));
}

Conv2d Conv2d::kaiming(int cin, int cout, int k, Rng& rng, PadMode pad) {
  return {kaiming_uniform({cout, cin, k, k}, cin * k * k, rng), param(Tensor(Shape{cout})), pad};
}

Conv2d Conv2d::zeros(int cin, int cout, int k, PadMode pad) {
  return {param(Tensor(Shape{cout, cin, k, k})), param(Tensor(Shape{cout})), pad};
}

Conv2d Conv2d::dirac(int channels, int k, PadMode pad) {
  Conv2d c = zeros(channels, channels, k, pad);
  const int centre = (k - 1) / 2;
  for (int i = 0; i < channels; ++i) c.weight.data()[((std::size_t(i) * channels + i) * k + centre) * k + centre] = 1.0f;
  return c;
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear Linear::xavier(int in, int out, Rng& rng, bool with_bias) {
  Linear l{xavier_uniform({in, out}, in, out, rng), {}};
  if (with_bias) l.bias = param(Tensor(Shape{out}));
  return l;
}

Linear Linear::zeros(int in, int out, bool with_bias) {
  Linear l{param(Tensor(Shape{in, out})), {}};
  if (with_bias) l.bias = param(Tensor(Shape{out}));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  const int in = weight.dim(0);
  if (x.dim(-1) != in) throw Error(ErrorCode::ShapeMismatch, "linear input " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(1);
  const Tensor flat = x.rank() == 2 ? x : reshape(x, {static_cast<int>(x.numel() / in), in});
  Tensor y = linear(flat, weight, bias.defined() ? &bias : nullptr);
  return x.rank() == 2 ? y : reshape(y, out_shape);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::make(int dim) { return {param(Tensor(Shape{dim}, 1.0f)), param(Tensor(Shape{dim}))}; }

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

Tensor to_tokens(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return reshape(permute(x, {0, 2, 3, 1}), {n, h * w, c});
}

Tensor from_tokens(const Tensor& t, int h, int w) {
  const int n = t.dim(0), c = t.dim(2);
  if (t.dim(1) != h * w) throw Error(ErrorCode::ShapeMismatch, "token count does not match map extent");
  return permute(reshape(t, {n, h, w, c}), {0, 3, 1, 2});
}

Tensor channel_layer_norm(const Tensor& x, const LayerNorm& ln) {
  const int h = x.dim(2), w = x.dim(3);
  return from_tokens(ln(to_tokens(x)), h, w);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, bool causal) {
  const int n = q.dim(0), t = q.dim(1), d = q.dim(2);
  if (d % heads != 0) throw Error(ErrorCode::InvalidArg, "attention width not divisible by heads");
  const int dh = d / heads;
  auto split = [&](const Tensor& x) {
    return reshape(permute(reshape(x, {n, t, heads, dh}), {0, 2, 1, 3}), {n * heads, t, dh});
  };
  const Tensor qh = split(scale(q, 1.0f / std::sqrt(static_cast<float>(dh)))), kh = split(k), vh = split(v);
  const Tensor scores = bmm(qh, permute(kh, {0, 2, 1}));
  const Tensor attn = softmax(scores, causal);
  const Tensor ctx = bmm(attn, vh);
  return reshape(permute(reshape(ctx, {n, heads, t, dh}), {0, 2, 1, 3}), {n, t, d});
}

}  // namespace rsmg
