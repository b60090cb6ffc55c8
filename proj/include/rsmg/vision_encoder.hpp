#pragma once

#include <array>
#include <vector>

#include "rsmg/nn.hpp"

namespace rsmg {

struct EncoderConfig {
  int c_in = 0;
  int c_model = 64;
  int heads_spatial = 4;
  int patch = 11;
  /// false selects the baseline backbone: 1x1 stem, then a plain ViT block in
  /// parallel with residual conv blocks (three in total over two stages).
  bool sfie = true;

  /// Throws ConfigError.
  void validate() const;
};

struct StageFeatures {
  Tensor f1;  // [N, c_model, p', p']
  Tensor f2;  // [N, c_model, p'/2, p'/2]
};

/// Two-layer pointwise MLP with 2x expansion; the second layer starts at zero.
struct Mlp {
  Conv2d fc1, fc2;

  static Mlp make(int c, Rng& rng);
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct FrgcmParams {
  Conv2d proj_in;                // Cin -> c
  std::array<Conv2d, 2> conv_a;  // per group, first 3x3
  std::array<Conv2d, 2> conv_b;  // per group, second 3x3
  Conv2d interact;               // 3x3 on the progressive sum
  Conv2d proj_out;               // 3c/2 -> c, zero at init

  static FrgcmParams make(int c_in, int c, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// u = proj_in(x); groups g1, g2 of u each run a = gelu(conv_a(g)), b = gelu(conv_b(a));
/// s = (a1 + a2) + (b1 + b2); i = gelu(interact(s)); out = u + proj_out([b1; b2; i]).
Tensor frgcm_forward(const Tensor& x, const FrgcmParams& p);

struct MhwsaParams {
  std::array<Conv2d, 4> expand;  // per subband, 1x1 C -> 4C
  std::array<Conv2d, 4> cpool;   // per subband, 1x1 2C -> C, zero at init

  static MhwsaParams make(int c, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Each Haar subband is one attention head: its expansion is chunked into
/// Q, K, V and a local path L; head = cpool([softmax(QK^T / sqrt(C)) V; L]).
/// The four heads are recombined by the inverse transform.
Tensor mhwsa_forward(const Tensor& z, const MhwsaParams& p);

struct WctMixerParams {
  LayerNorm ln1, ln2;
  MhwsaParams attn;
  Mlp mlp;

  static WctMixerParams make(int c, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor wctmixer_forward(const Tensor& z, const WctMixerParams& p);

struct CtMixerParams {
  LayerNorm ln1, ln2;
  Conv2d local;  // 3x3; weight undefined for the plain ViT block
  Linear wq, wk, wv;
  Conv2d proj;  // 1x1, zero at init
  Mlp mlp;
  int heads = 4;

  static CtMixerParams make(int c, int heads, Rng& rng, bool with_local = true);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// z + proj(local(LN z) + MHSA(LN z)), then + MLP(LN).
Tensor ctmixer_forward(const Tensor& z, const CtMixerParams& p);

struct ResBlock {
  Conv2d c1, c2;  // c2 zero at init

  static ResBlock make(int c, Rng& rng);
  Tensor operator()(const Tensor& x) const { return add(x, c2(gelu(c1(x)))); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct SfieParams {
  EncoderConfig cfg;
  FrgcmParams frgcm;                  // sfie
  Conv2d stem;                        // baseline
  std::array<WctMixerParams, 2> wct;  // sfie, per stage
  std::array<CtMixerParams, 2> ct;    // per stage; plain ViT block for the baseline
  std::array<std::vector<ResBlock>, 2> res;  // baseline, per stage

  static SfieParams make(const EncoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Reflect-pads odd extents to even, then stage 1 at full size and stage 2
/// after 2x2 average pooling; each stage sums its two branches.
StageFeatures sfie_forward(const Tensor& x, const SfieParams& p);

/// Reflect-pad the bottom/right edge by one when an extent is odd.
Tensor pad_to_even(const Tensor& x);

}  // namespace rsmg
