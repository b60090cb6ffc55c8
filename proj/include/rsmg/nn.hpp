#pragma once

#include <random>
#include <string>
#include <vector>

#include "rsmg/ops.hpp"

namespace rsmg {

using Rng = std::mt19937_64;

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

Tensor uniform(Shape shape, float bound, Rng& rng);
Tensor normal(Shape shape, float stddev, Rng& rng);
/// Marks `t` as a trainable leaf.
Tensor param(Tensor t);

/// Kaiming-uniform (gain sqrt(2)) for a weight with the given fan-in.
Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng);
Tensor xavier_uniform(Shape shape, int fan_in, int fan_out, Rng& rng);

struct Conv2d {
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout]
  PadMode pad = PadMode::Zero;

  static Conv2d kaiming(int cin, int cout, int k, Rng& rng, PadMode pad = PadMode::Zero);
  static Conv2d zeros(int cin, int cout, int k, PadMode pad = PadMode::Zero);
  /// Identity map (requires cin == cout): centre tap 1 on the diagonal.
  static Conv2d dirac(int channels, int k, PadMode pad = PadMode::Zero);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, &bias, 1, pad); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]; undefined when the layer has no bias

  static Linear xavier(int in, int out, Rng& rng, bool with_bias = true);
  static Linear zeros(int in, int out, bool with_bias = true);

  /// Applies to the last axis of any-rank input.
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm make(int dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// [N,C,H,W] -> [N,H*W,C]
Tensor to_tokens(const Tensor& x);
/// [N,H*W,C] -> [N,C,H,W]
Tensor from_tokens(const Tensor& t, int h, int w);
/// Layer norm over channels at every pixel of an [N,C,H,W] map.
Tensor channel_layer_norm(const Tensor& x, const LayerNorm& ln);

/// Multi-head scaled dot-product attention over [N,T,D] inputs already projected
/// to q, k, v. Returns [N,T,D].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, bool causal = false);

}  // namespace rsmg
