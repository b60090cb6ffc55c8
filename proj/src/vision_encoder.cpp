#include "rsmg/vision_encoder.hpp"

#include <cmath>

#include "rsmg/wavelet.hpp"

namespace rsmg {

void EncoderConfig::validate() const {
  if (c_in < 1) throw Error(ErrorCode::ConfigError, "encoder needs at least one input channel");
  if (c_model < 4 || c_model % 4 != 0) throw Error(ErrorCode::ConfigError, "c_model must be a positive multiple of 4");
  if (heads_spatial < 1 || c_model % heads_spatial != 0)
    throw Error(ErrorCode::ConfigError, "c_model must be divisible by heads_spatial");
  if (patch < 1 || patch % 2 == 0) throw Error(ErrorCode::ConfigError, "patch size must be odd");
}

Mlp Mlp::make(int c, Rng& rng) { return {Conv2d::kaiming(c, 2 * c, 1, rng), Conv2d::zeros(2 * c, c, 1)}; }

void Mlp::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

// ---- FRGCM ------------------------------------------------------------------

FrgcmParams FrgcmParams::make(int c_in, int c, Rng& rng) {
  if (c % 2 != 0) throw Error(ErrorCode::ConfigError, "FRGCM width must be even");
  const int g = c / 2;
  FrgcmParams p;
  p.proj_in = Conv2d::kaiming(c_in, c, 1, rng);
  for (int i = 0; i < 2; ++i) {
    p.conv_a[i] = Conv2d::kaiming(g, g, 3, rng);
    p.conv_b[i] = Conv2d::kaiming(g, g, 3, rng);
  }
  p.interact = Conv2d::kaiming(g, g, 3, rng);
  p.proj_out = Conv2d::zeros(3 * g, c, 1);
  return p;
}

void FrgcmParams::collect(const std::string& prefix, ParamList& out) const {
  proj_in.collect(prefix + ".proj_in", out);
  for (int i = 0; i < 2; ++i) {
    conv_a[i].collect(prefix + ".g" + std::to_string(i) + ".conv_a", out);
    conv_b[i].collect(prefix + ".g" + std::to_string(i) + ".conv_b", out);
  }
  interact.collect(prefix + ".interact", out);
  proj_out.collect(prefix + ".proj_out", out);
}

Tensor frgcm_forward(const Tensor& x, const FrgcmParams& p) {
  if (x.rank() != 4 || x.dim(1) != p.proj_in.weight.dim(1))
    throw Error(ErrorCode::ShapeMismatch, "FRGCM input " + shape_str(x.shape()));
  const Tensor u = p.proj_in(x);
  const int g = u.dim(1) / 2;
  Tensor a[2], b[2];
  for (int i = 0; i < 2; ++i) {
    a[i] = gelu(p.conv_a[i](slice(u, 1, i * g, g)));
    b[i] = gelu(p.conv_b[i](a[i]));
  }
  const Tensor running = add(add(a[0], a[1]), add(b[0], b[1]));
  const Tensor inter = gelu(p.interact(running));
  return add(u, p.proj_out(concat({b[0], b[1], inter}, 1)));
}

// ---- MHWSA / WCTMixer ---------------------------------------------------------

MhwsaParams MhwsaParams::make(int c, Rng& rng) {
  MhwsaParams p;
  for (int s = 0; s < 4; ++s) {
    p.expand[s] = Conv2d::kaiming(c, 4 * c, 1, rng);
    p.cpool[s] = Conv2d::zeros(2 * c, c, 1);
  }
  return p;
}

void MhwsaParams::collect(const std::string& prefix, ParamList& out) const {
  static const char* names[4] = {"ll", "hl", "lh", "hh"};
  for (int s = 0; s < 4; ++s) {
    expand[s].collect(prefix + ".expand_" + names[s], out);
    cpool[s].collect(prefix + ".cpool_" + names[s], out);
  }
}

namespace {

Tensor wavelet_head(const Tensor& band, const Conv2d& expand, const Conv2d& cpool) {
  const int c = band.dim(1), h = band.dim(2), w = band.dim(3);
  const Tensor e = expand(band);
  if (e.dim(1) % 4 != 0 || e.dim(1) / 4 != c)
    throw Error(ErrorCode::ChunkError, "expansion of " + std::to_string(e.dim(1)) + " channels cannot be split into Q, K, V, L");
  const Tensor q = to_tokens(slice(e, 1, 0, c));
  const Tensor k = to_tokens(slice(e, 1, c, c));
  const Tensor v = to_tokens(slice(e, 1, 2 * c, c));
  const Tensor local = slice(e, 1, 3 * c, c);
  const Tensor attended = from_tokens(multi_head_attention(q, k, v, 1), h, w);
  return cpool(concat({attended, local}, 1));
}

}  // namespace

Tensor mhwsa_forward(const Tensor& z, const MhwsaParams& p) {
  if (z.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "MHWSA input " + shape_str(z.shape()));
  if (z.dim(1) % 4 != 0) throw Error(ErrorCode::ChunkError, "MHWSA width must be a multiple of 4");
  const SubbandSet s = dwt2(z);
  return idwt2({wavelet_head(s.ll, p.expand[0], p.cpool[0]), wavelet_head(s.hl, p.expand[1], p.cpool[1]),
                wavelet_head(s.lh, p.expand[2], p.cpool[2]), wavelet_head(s.hh, p.expand[3], p.cpool[3])});
}

WctMixerParams WctMixerParams::make(int c, Rng& rng) {
  return {LayerNorm::make(c), LayerNorm::make(c), MhwsaParams::make(c, rng), Mlp::make(c, rng)};
}

void WctMixerParams::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  attn.collect(prefix + ".mhwsa", out);
  mlp.collect(prefix + ".mlp", out);
}

Tensor wctmixer_forward(const Tensor& z, const WctMixerParams& p) {
  const Tensor z1 = add(z, mhwsa_forward(channel_layer_norm(z, p.ln1), p.attn));
  return add(z1, p.mlp(channel_layer_norm(z1, p.ln2)));
}

// ---- CTMixer -------------------------------------------------------------------

CtMixerParams CtMixerParams::make(int c, int heads, Rng& rng, bool with_local) {
  CtMixerParams p;
  p.ln1 = LayerNorm::make(c);
  p.ln2 = LayerNorm::make(c);
  if (with_local) p.local = Conv2d::kaiming(c, c, 3, rng);
  p.wq = Linear::xavier(c, c, rng);
  p.wk = Linear::xavier(c, c, rng, false);  // a key bias only shifts every score equally
  p.wv = Linear::xavier(c, c, rng);
  p.proj = Conv2d::zeros(c, c, 1);
  p.mlp = Mlp::make(c, rng);
  p.heads = heads;
  return p;
}

void CtMixerParams::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  if (local.weight.defined()) local.collect(prefix + ".local", out);
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  proj.collect(prefix + ".proj", out);
  mlp.collect(prefix + ".mlp", out);
}

Tensor ctmixer_forward(const Tensor& z, const CtMixerParams& p) {
  if (z.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "CTMixer input " + shape_str(z.shape()));
  const int h = z.dim(2), w = z.dim(3);
  const Tensor tokens = p.ln1(to_tokens(z));
  Tensor mixed = from_tokens(multi_head_attention(p.wq(tokens), p.wk(tokens), p.wv(tokens), p.heads), h, w);
  if (p.local.weight.defined()) mixed = add(mixed, p.local(from_tokens(tokens, h, w)));
  const Tensor z1 = add(z, p.proj(mixed));
  return add(z1, p.mlp(channel_layer_norm(z1, p.ln2)));
}

// ---- SFIE ------------------------------------------------------------------------

ResBlock ResBlock::make(int c, Rng& rng) { return {Conv2d::kaiming(c, c, 3, rng), Conv2d::zeros(c, c, 3)}; }

void ResBlock::collect(const std::string& prefix, ParamList& out) const {
  c1.collect(prefix + ".c1", out);
  c2.collect(prefix + ".c2", out);
}

SfieParams SfieParams::make(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  SfieParams p;
  p.cfg = cfg;
  const int c = cfg.c_model;
  if (cfg.sfie) {
    p.frgcm = FrgcmParams::make(cfg.c_in, c, rng);
    for (int s = 0; s < 2; ++s) {
      p.wct[s] = WctMixerParams::make(c, rng);
      p.ct[s] = CtMixerParams::make(c, cfg.heads_spatial, rng);
    }
  } else {
    p.stem = Conv2d::kaiming(cfg.c_in, c, 1, rng);
    for (int s = 0; s < 2; ++s) {
      p.ct[s] = CtMixerParams::make(c, cfg.heads_spatial, rng, false);
      for (int i = 0; i < (s == 0 ? 2 : 1); ++i) p.res[s].push_back(ResBlock::make(c, rng));
    }
  }
  return p;
}

void SfieParams::collect(const std::string& prefix, ParamList& out) const {
  if (cfg.sfie) {
    frgcm.collect(prefix + ".frgcm", out);
  } else {
    stem.collect(prefix + ".stem", out);
  }
  for (int s = 0; s < 2; ++s) {
    const std::string stage = prefix + ".stage" + std::to_string(s + 1);
    if (cfg.sfie) wct[s].collect(stage + ".wct", out);
    ct[s].collect(stage + ".ct", out);
    for (std::size_t i = 0; i < res[s].size(); ++i) res[s][i].collect(stage + ".res" + std::to_string(i), out);
  }
}

Tensor pad_to_even(const Tensor& x) {
  const int pb = x.dim(2) % 2, pr = x.dim(3) % 2;
  if (pb == 0 && pr == 0) return x;
  return pad_reflect(x, 0, pb, 0, pr);
}

StageFeatures sfie_forward(const Tensor& x, const SfieParams& p) {
  if (x.rank() != 4 || x.dim(1) != p.cfg.c_in)
    throw Error(ErrorCode::ShapeMismatch, "encoder input " + shape_str(x.shape()) + " for c_in " + std::to_string(p.cfg.c_in));
  const Tensor padded = pad_to_even(x);
  auto stage = [&](const Tensor& u, int s) {
    if (p.cfg.sfie) return add(wctmixer_forward(u, p.wct[s]), ctmixer_forward(u, p.ct[s]));
    Tensor conv = u;
    for (const auto& block : p.res[s]) conv = block(conv);
    return add(ctmixer_forward(u, p.ct[s]), conv);
  };
  StageFeatures out;
  out.f1 = stage(p.cfg.sfie ? frgcm_forward(padded, p.frgcm) : p.stem(padded), 0);
  out.f2 = stage(pad_to_even(avg_pool2(out.f1)), 1);
  return out;
}

}  // namespace rsmg
