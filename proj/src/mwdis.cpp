#include "rsmg/mwdis.hpp"

#include <algorithm>
#include <cmath>

namespace rsmg {

SpatAttnParams SpatAttnParams::make(Rng& rng) {
  return {kaiming_uniform({1, 2, 7, 7}, 2 * 7 * 7, rng), param(Tensor(Shape{1}))};
}

SpatAttnParams SpatAttnParams::zeros() { return {param(Tensor(Shape{1, 2, 7, 7})), param(Tensor(Shape{1}))}; }

void SpatAttnParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".conv7", conv7});
  out.push_back({prefix + ".bias", bias});
}

std::vector<float> draw_rho(int n, const ResampleConfig& cfg) {
  if (cfg.alpha < 0.0f || cfg.alpha > 1.0f) throw Error(ErrorCode::InvalidArg, "alpha must lie in [0, 1]");
  std::vector<float> rho(n, 0.0f);
  if (cfg.alpha == 0.0f) return rho;
  Rng rng(cfg.seed);
  std::normal_distribution<float> dist(0.0f, std::sqrt(cfg.alpha));
  for (auto& r : rho) r = dist(rng);
  return rho;
}

Tensor resample_ll(const Tensor& ll, std::span<const float> rho) {
  if (ll.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "resample_ll expects [N,C,h,w]");
  const int n = ll.dim(0);
  if (static_cast<int>(rho.size()) != n) throw Error(ErrorCode::ShapeMismatch, "one rho per sample required");
  if (std::all_of(rho.begin(), rho.end(), [](float r) { return r == 0.0f; })) return ll;
  const std::int64_t inner = ll.numel() / n;
  auto x = ll.data();
  std::vector<double> mu(inner, 0.0), sigma(inner, 0.0);
  for (int i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < inner; ++j) mu[j] += x[i * inner + j];
  for (auto& m : mu) m /= n;
  for (int i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < inner; ++j) {
      const double d = x[i * inner + j] - mu[j];
      sigma[j] += d * d;
    }
  for (auto& s : sigma) s = std::sqrt(s / n);
  Tensor out(ll.shape());
  auto o = out.data();
  for (int i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < inner; ++j)
      o[i * inner + j] = x[i * inner + j] + rho[i] * static_cast<float>(sigma[j]);

  std::vector<float> r(rho.begin(), rho.end());
  record_if_needed("resample_ll", {&ll}, out, [ll, r, mu, sigma, n, inner](std::span<const float> g) {
    auto x = ll.data();
    auto gx = ll.impl()->grad_buffer();
    for (std::int64_t j = 0; j < inner; ++j) {
      double g_sigma = 0.0;
      for (int i = 0; i < n; ++i) {
        gx[i * inner + j] += g[i * inner + j];
        g_sigma += double(g[i * inner + j]) * r[i];
      }
      // zero-variance positions take the zero subgradient
      if (sigma[j] <= 0.0) continue;
      const double k = g_sigma / (n * sigma[j]);
      for (int i = 0; i < n; ++i) gx[i * inner + j] += static_cast<float>(k * (x[i * inner + j] - mu[j]));
    }
  });
  return out;
}

Tensor resample_ll(const Tensor& ll, const ResampleConfig& cfg, std::vector<float>* rho_out) {
  auto rho = draw_rho(ll.dim(0), cfg);
  if (rho_out) *rho_out = rho;
  return resample_ll(ll, rho);
}

void histogram_equalize(std::span<const float> in, std::span<float> out) {
  const auto [lo_it, hi_it] = std::minmax_element(in.begin(), in.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi - lo < 1e-12) {
    std::copy(in.begin(), in.end(), out.begin());
    return;
  }
  constexpr int kBins = 256;
  auto bin_of = [&](float v) {
    const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * kBins));
    return std::clamp(b, 0, kBins - 1);
  };
  std::array<double, kBins> cdf{};
  for (float v : in) cdf[bin_of(v)] += 1.0;
  for (int b = 1; b < kBins; ++b) cdf[b] += cdf[b - 1];
  const double total = static_cast<double>(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<float>(cdf[bin_of(in[i])] / total);
}

Tensor histogram_equalize(const Tensor& plane) {
  Tensor out(plane.shape());
  histogram_equalize(plane.data(), out.data());
  return out;
}

Tensor gradient_map(const Tensor& hl, const Tensor& lh, const Tensor& hh) {
  if (hl.shape() != lh.shape() || hl.shape() != hh.shape() || hl.rank() != 4)
    throw Error(ErrorCode::ShapeMismatch, "gradient_map needs three equal [N,C,h,w] subbands");
  const std::int64_t plane = std::int64_t(hl.dim(2)) * hl.dim(3);
  const std::int64_t planes = hl.numel() / plane;
  std::vector<float> mag(hl.numel());
  for (std::int64_t i = 0; i < hl.numel(); ++i) {
    const float a = hl.data()[i], b = lh.data()[i], c = hh.data()[i];
    mag[i] = std::sqrt(a * a + b * b + c * c);
  }
  Tensor out(hl.shape());
  for (std::int64_t p = 0; p < planes; ++p)
    histogram_equalize(std::span<const float>(mag).subspan(p * plane, plane), out.data().subspan(p * plane, plane));
  return out;
}

Tensor spatial_attention(const Tensor& f, const SpatAttnParams& params) {
  const Tensor pooled = concat({channel_mean(f), channel_max(f)}, 1);
  return sigmoid(conv2d(pooled, params.conv7, &params.bias, 1, PadMode::Reflect));
}

Tensor cross_modal_weight(const Tensor& f_own, const Tensor& attn_other, const Conv2d& conv) {
  if (attn_other.rank() != 4 || attn_other.dim(1) != 1 || attn_other.dim(0) != f_own.dim(0) ||
      attn_other.dim(2) != f_own.dim(2) || attn_other.dim(3) != f_own.dim(3))
    throw Error(ErrorCode::ShapeMismatch, "attention map " + shape_str(attn_other.shape()) +
                                              " does not fit features " + shape_str(f_own.shape()));
  return mul(conv(f_own), attn_other);
}

MwdisBranch MwdisBranch::make(int channels, Rng& rng) {
  MwdisBranch b{{Conv2d::dirac(channels, 3), Conv2d::dirac(channels, 3), Conv2d::dirac(channels, 3),
                 Conv2d::dirac(channels, 3)},
                SpatAttnParams::make(rng),
                SpatAttnParams::make(rng)};
  return b;
}

void MwdisBranch::collect(const std::string& prefix, ParamList& out) const {
  static const char* names[4] = {"ll", "hl", "lh", "hh"};
  for (int i = 0; i < 4; ++i) convs[i].collect(prefix + ".conv_" + names[i], out);
  attn_ll.collect(prefix + ".attn_ll", out);
  attn_high.collect(prefix + ".attn_high", out);
}

MwdisParams MwdisParams::make(int c1, int c2, Rng& rng) {
  MwdisParams p;
  p.branch[0] = MwdisBranch::make(c1, rng);
  p.branch[1] = MwdisBranch::make(c2, rng);
  return p;
}

void MwdisParams::collect(const std::string& prefix, ParamList& out) const {
  branch[0].collect(prefix + ".m1", out);
  branch[1].collect(prefix + ".m2", out);
}

std::pair<Tensor, Tensor> mwdis_forward(const Tensor& x1, const Tensor& x2, const ResampleConfig& cfg,
                                        const MwdisParams& params, const MwdisOptions& opts) {
  if (x1.rank() != 4 || x2.rank() != 4 || x1.dim(0) != x2.dim(0) || x1.dim(2) != x2.dim(2) || x1.dim(3) != x2.dim(3))
    throw Error(ErrorCode::ShapeMismatch, "mwdis inputs " + shape_str(x1.shape()) + " and " + shape_str(x2.shape()));
  const SubbandSet s[2] = {dwt2(x1), dwt2(x2)};
  ResampleConfig rc = cfg;
  if (!opts.resample) rc.alpha = 0.0f;
  // One shift strength per sample, shared by both modalities.
  const auto rho = draw_rho(x1.dim(0), rc);

  Tensor attn_ll[2], attn_high[2];
  for (int m = 0; m < 2; ++m) {
    if (opts.bypass_attention) {
      attn_ll[m] = attn_high[m] = Tensor(Shape{x1.dim(0), 1, s[m].ll.dim(2), s[m].ll.dim(3)}, 1.0f);
      continue;
    }
    attn_ll[m] = spatial_attention(resample_ll(s[m].ll, rho), params.branch[m].attn_ll);
    attn_high[m] = spatial_attention(gradient_map(s[m].hl, s[m].lh, s[m].hh), params.branch[m].attn_high);
  }

  Tensor out[2];
  for (int m = 0; m < 2; ++m) {
    const int other = 1 - m;
    const auto& convs = params.branch[m].convs;
    out[m] = idwt2({cross_modal_weight(s[m].ll, attn_ll[other], convs[0]),
                    cross_modal_weight(s[m].hl, attn_high[other], convs[1]),
                    cross_modal_weight(s[m].lh, attn_high[other], convs[2]),
                    cross_modal_weight(s[m].hh, attn_high[other], convs[3])});
  }
  return {out[0], out[1]};
}

}  // namespace rsmg
