#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rsmg/nn.hpp"
#include "rsmg/wavelet.hpp"

namespace rsmg {

struct ResampleConfig {
  float alpha = 0.5f;  // variance of the per-sample shift strength rho ~ N(0, alpha)
  std::uint64_t seed = 0;
};

/// CBAM-style spatial attention: sigmoid(conv7x7([channel mean; channel max]) + b).
struct SpatAttnParams {
  Tensor conv7;  // [1, 2, 7, 7]
  Tensor bias;   // [1]

  static SpatAttnParams make(Rng& rng);
  static SpatAttnParams zeros();
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Draws one rho per sample; alpha == 0 yields exact zeros.
std::vector<float> draw_rho(int n, const ResampleConfig& cfg);

/// F_hat = F + rho_n * sigma, sigma being the per-(channel, position) standard
/// deviation over the batch (population form). rho is a constant; gradients
/// flow through sigma. Draws are written to `rho_out` if given.
Tensor resample_ll(const Tensor& ll, const ResampleConfig& cfg, std::vector<float>* rho_out = nullptr);
Tensor resample_ll(const Tensor& ll, std::span<const float> rho);

/// 256 uniform bins over [min, max]; each value maps to the CDF of its bin.
/// Planes with max - min < 1e-12 are returned unchanged.
void histogram_equalize(std::span<const float> in, std::span<float> out);
Tensor histogram_equalize(const Tensor& plane);

/// HE(sqrt(hl^2 + lh^2 + hh^2)) per (sample, channel) plane. The result is
/// piecewise constant in its inputs and carries no gradient.
Tensor gradient_map(const Tensor& hl, const Tensor& lh, const Tensor& hh);

Tensor spatial_attention(const Tensor& f, const SpatAttnParams& params);

/// attn_other [N,1,h,w] times Conv(f_own), broadcast over channels.
Tensor cross_modal_weight(const Tensor& f_own, const Tensor& attn_other, const Conv2d& conv);

struct MwdisBranch {
  std::array<Conv2d, 4> convs;  // ll, hl, lh, hh
  SpatAttnParams attn_ll;       // applied to this modality's resampled LL
  SpatAttnParams attn_high;     // applied to this modality's gradient map

  /// Identity convs and random attention kernels.
  static MwdisBranch make(int channels, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MwdisParams {
  std::array<MwdisBranch, 2> branch;

  static MwdisParams make(int c1, int c2, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MwdisOptions {
  bool resample = true;           // false at test time: alpha is taken as 0
  bool bypass_attention = false;  // test hook: attention maps are all ones
};

/// Decompose both modalities, resample, cross-weight each subband with the
/// other modality's attention, reconstruct. Inputs must have even H, W.
std::pair<Tensor, Tensor> mwdis_forward(const Tensor& x1, const Tensor& x2, const ResampleConfig& cfg,
                                        const MwdisParams& params, const MwdisOptions& opts = {});

}  // namespace rsmg
