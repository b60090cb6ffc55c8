#include "rsmg/wavelet.hpp"

#include <array>

namespace rsmg {

namespace {

// Sign pattern of (a, b, c, d) for ll, hl, lh, hh. The basis is symmetric,
// so the same table drives analysis and synthesis.
constexpr std::array<std::array<float, 4>, 4> kHaar{{
    {1.0f, 1.0f, 1.0f, 1.0f},
    {1.0f, 1.0f, -1.0f, -1.0f},
    {1.0f, -1.0f, 1.0f, -1.0f},
    {1.0f, -1.0f, -1.0f, 1.0f},
}};

Tensor analysis_band(const Tensor& x, int band) {
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / 2, wo = w / 2;
  const auto& s = kHaar[band];
  Tensor out(Shape{x.dim(0), x.dim(1), ho, wo});
  auto in = x.data();
  auto o = out.data();
  for (int p = 0; p < nc; ++p) {
    const float* src = in.data() + std::int64_t(p) * h * w;
    float* dst = o.data() + std::int64_t(p) * ho * wo;
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        const float* r0 = src + 2 * i * w + 2 * j;
        const float* r1 = r0 + w;
        dst[i * wo + j] = 0.5f * (s[0] * r0[0] + s[1] * r0[1] + s[2] * r1[0] + s[3] * r1[1]);
      }
  }
  record_if_needed("dwt2", {&x}, out, [x, s, nc, h, w, ho, wo](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (int p = 0; p < nc; ++p) {
      float* dst = gx.data() + std::int64_t(p) * h * w;
      const float* gp = g.data() + std::int64_t(p) * ho * wo;
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const float v = 0.5f * gp[i * wo + j];
          float* r0 = dst + 2 * i * w + 2 * j;
          float* r1 = r0 + w;
          r0[0] += s[0] * v;
          r0[1] += s[1] * v;
          r1[0] += s[2] * v;
          r1[1] += s[3] * v;
        }
    }
  });
  return out;
}

}  // namespace

SubbandSet dwt2(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "dwt2 needs [N,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
    throw Error(ErrorCode::OddExtent, "dwt2 needs even H and W, got " + shape_str(x.shape()));
  return {analysis_band(x, 0), analysis_band(x, 1), analysis_band(x, 2), analysis_band(x, 3)};
}

Tensor idwt2(const SubbandSet& s) {
  const Tensor* bands[4] = {&s.ll, &s.hl, &s.lh, &s.hh};
  for (const Tensor* b : bands) {
    if (!b->defined() || b->rank() != 4 || b->shape() != s.ll.shape())
      throw Error(ErrorCode::ShapeMismatch, "idwt2 subbands disagree in shape");
  }
  const int n = s.ll.dim(0), c = s.ll.dim(1), ho = s.ll.dim(2), wo = s.ll.dim(3);
  const int h = 2 * ho, w = 2 * wo;
  const int nc = n * c;
  Tensor out(Shape{n, c, h, w});
  auto o = out.data();
  for (int p = 0; p < nc; ++p) {
    float* dst = o.data() + std::int64_t(p) * h * w;
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        const std::int64_t q = std::int64_t(p) * ho * wo + i * wo + j;
        float block[4] = {0.0f, 0.0f, 0.0f, 0.0f};
        for (int b = 0; b < 4; ++b) {
          const float v = 0.5f * bands[b]->data()[q];
          for (int e = 0; e < 4; ++e) block[e] += kHaar[b][e] * v;
        }
        float* r0 = dst + 2 * i * w + 2 * j;
        float* r1 = r0 + w;
        r0[0] = block[0];
        r0[1] = block[1];
        r1[0] = block[2];
        r1[1] = block[3];
      }
  }
  record_if_needed("idwt2", {&s.ll, &s.hl, &s.lh, &s.hh}, out,
                   [s, nc, h, w, ho, wo](std::span<const float> g) {
                     const Tensor* bands[4] = {&s.ll, &s.hl, &s.lh, &s.hh};
                     for (int b = 0; b < 4; ++b) {
                       if (!bands[b]->requires_grad()) continue;
                       auto gb = bands[b]->impl()->grad_buffer();
                       const auto& sign = kHaar[b];
                       for (int p = 0; p < nc; ++p) {
                         const float* src = g.data() + std::int64_t(p) * h * w;
                         for (int i = 0; i < ho; ++i)
                           for (int j = 0; j < wo; ++j) {
                             const float* r0 = src + 2 * i * w + 2 * j;
                             const float* r1 = r0 + w;
                             gb[std::int64_t(p) * ho * wo + i * wo + j] +=
                                 0.5f * (sign[0] * r0[0] + sign[1] * r0[1] + sign[2] * r1[0] + sign[3] * r1[1]);
                           }
                       }
                     }
                   });
  return out;
}

}  // namespace rsmg
