#include "rsmg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rsmg {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(const std::string& what, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch, what + ": " + shape_str(a) + " vs " + shape_str(b));
}

enum class Bcast { Same, Scalar, Channel, Map };

struct Broadcast {
  Bcast kind;
  std::int64_t channels = 1;
  std::int64_t inner = 1;

  std::int64_t index(std::int64_t i) const {
    switch (kind) {
      case Bcast::Same: return i;
      case Bcast::Scalar: return 0;
      case Bcast::Channel: return (i / inner) % channels;
      case Bcast::Map: return (i / (channels * inner)) * inner + i % inner;
    }
    return i;
  }
};

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return {Bcast::Same};
  if (b.numel() == 1) return {Bcast::Scalar};
  if (a.rank() >= 2) {
    std::int64_t inner = 1;
    for (int d = 2; d < a.rank(); ++d) inner *= a.dim(d);
    if (b.rank() == 1 && b.dim(0) == a.dim(1)) return {Bcast::Channel, a.dim(1), inner};
    if (b.rank() == a.rank() && b.dim(1) == 1) {
      bool ok = true;
      for (int d = 0; d < a.rank(); ++d) ok = ok && (d == 1 || a.dim(d) == b.dim(d));
      if (ok) return {Bcast::Map, a.dim(1), inner};
    }
  }
  shape_error(std::string(op) + " broadcast", a.shape(), b.shape());
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  const Broadcast bc = classify(a, b, op);
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  const auto n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = f(x[i], y[bc.index(i)]);
  record_if_needed(op, {&a, &b}, out, [a, b, bc, n, dfa, dfb](std::span<const float> g) {
    auto x = a.data();
    auto y = b.data();
    if (a.requires_grad()) {
      auto ga = a.impl()->grad_buffer();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * dfa(x[i], y[bc.index(i)]);
    }
    if (b.requires_grad()) {
      auto gb = b.impl()->grad_buffer();
      for (std::int64_t i = 0; i < n; ++i) {
        const auto j = bc.index(i);
        gb[j] += g[i] * dfb(x[i], y[j]);
      }
    }
  });
  return out;
}

template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D df) {
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  record_if_needed(op, {&x}, out, [x, out_impl = out.impl(), df](std::span<const float> g) {
    auto in = x.data();
    auto gx = x.impl()->grad_buffer();
    const auto& y = out_impl->data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(in[i], y[i]);
  });
  return out;
}

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
      [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
      [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](float x, float y) { return x * y; }, [](float, float y) { return y; },
      [](float x, float) { return x; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      "maximum", a, b, [](float x, float y) { return std::max(x, y); },
      [](float x, float y) { return x >= y ? 1.0f : 0.0f; }, [](float x, float y) { return x >= y ? 0.0f : 1.0f; });
}

Tensor scale(const Tensor& x, float s) {
  return unary("scale", x, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor add_scalar(const Tensor& x, float s) {
  return unary("add_scalar", x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
               [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      "gelu", x, [](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); },
      [](float v, float) {
        const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5f * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](float v) {
        if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
        const float e = std::exp(v);
        return e / (1.0f + e);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor sqrt(const Tensor& x) {
  return unary("sqrt", x, [](float v) { return std::sqrt(v); },
               [](float, float y) { return y > 0.0f ? 0.5f / y : 0.0f; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  MapMat(out.data().data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  record_if_needed("matmul", {&a, &b}, out, [a, b, m, k, n](std::span<const float> g) {
    CMapMat gc(g.data(), m, n);
    if (a.requires_grad())
      MapMat(a.impl()->grad_buffer().data(), m, k).noalias() += gc * CMapMat(b.data().data(), k, n).transpose();
    if (b.requires_grad())
      MapMat(b.impl()->grad_buffer().data(), k, n).noalias() += CMapMat(a.data().data(), m, k).transpose() * gc;
  });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    shape_error("bmm", a.shape(), b.shape());
  const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out(Shape{bs, m, n});
  for (int i = 0; i < bs; ++i) {
    MapMat(out.data().data() + std::int64_t(i) * m * n, m, n).noalias() =
        CMapMat(a.data().data() + std::int64_t(i) * m * k, m, k) *
        CMapMat(b.data().data() + std::int64_t(i) * k * n, k, n);
  }
  record_if_needed("bmm", {&a, &b}, out, [a, b, bs, m, k, n](std::span<const float> g) {
    for (int i = 0; i < bs; ++i) {
      CMapMat gc(g.data() + std::int64_t(i) * m * n, m, n);
      if (a.requires_grad())
        MapMat(a.impl()->grad_buffer().data() + std::int64_t(i) * m * k, m, k).noalias() +=
            gc * CMapMat(b.data().data() + std::int64_t(i) * k * n, k, n).transpose();
      if (b.requires_grad())
        MapMat(b.impl()->grad_buffer().data() + std::int64_t(i) * k * n, k, n).noalias() +=
            CMapMat(a.data().data() + std::int64_t(i) * m * k, m, k).transpose() * gc;
    }
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  Tensor y = matmul(x, w);
  return bias ? add(y, *bias) : y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  Tensor out(std::move(shape));
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  record_if_needed("reshape", {&x}, out, [x](std::span<const float> g) { accumulate_grad(x, g); });
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw Error(ErrorCode::InvalidArg, "permute rank mismatch");
  std::vector<std::int64_t> in_stride(r, 1);
  for (int d = r - 2; d >= 0; --d) in_stride[d] = in_stride[d + 1] * x.dim(d + 1);
  Shape out_shape(r);
  std::vector<std::int64_t> src_stride(r);
  std::vector<bool> seen(r, false);
  for (int d = 0; d < r; ++d) {
    if (perm[d] < 0 || perm[d] >= r || seen[perm[d]]) throw Error(ErrorCode::InvalidArg, "invalid permutation");
    seen[perm[d]] = true;
    out_shape[d] = x.dim(perm[d]);
    src_stride[d] = in_stride[perm[d]];
  }
  const auto n = x.numel();
  Tensor out(out_shape);
  auto walk = [out_shape, src_stride, n](auto&& visit) {
    const int r = static_cast<int>(out_shape.size());
    const int inner = out_shape[r - 1];
    const std::int64_t step = src_stride[r - 1];
    std::vector<int> idx(r, 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < n; i += inner) {
      visit(i, off, inner, step);
      for (int d = r - 2; d >= 0; --d) {
        ++idx[d];
        off += src_stride[d];
        if (idx[d] < out_shape[d]) break;
        off -= src_stride[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  };
  {
    float* o = out.data().data();
    const float* in = x.data().data();
    walk([&](std::int64_t i, std::int64_t off, int inner, std::int64_t step) {
      for (int k = 0; k < inner; ++k) o[i + k] = in[off + k * step];
    });
  }
  record_if_needed("permute", {&x}, out, [x, walk](std::span<const float> g) {
    float* gx = x.impl()->grad_buffer().data();
    walk([&](std::int64_t i, std::int64_t off, int inner, std::int64_t step) {
      for (int k = 0; k < inner; ++k) gx[off + k * step] += g[i + k];
    });
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::InvalidArg, "concat of nothing");
  const Tensor& first = parts.front();
  const int r = first.rank();
  if (axis < 0) axis += r;
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) shape_error("concat", first.shape(), p.shape());
    for (int d = 0; d < r; ++d)
      if (d != axis && p.dim(d) != first.dim(d)) shape_error("concat", first.shape(), p.shape());
    out_shape[axis] += p.dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= first.dim(d);
  const std::int64_t out_block = std::int64_t(out_shape[axis]) * inner;
  Tensor out(out_shape);
  auto o = out.data();
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t block = std::int64_t(p.dim(axis)) * inner;
    auto in = p.data();
    for (std::int64_t b = 0; b < outer; ++b)
      std::copy_n(in.begin() + b * block, block, o.begin() + b * out_block + offset);
    offset += block;
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  record_if_needed("concat", inputs, out, [parts, axis, outer, inner, out_block](std::span<const float> g) {
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const std::int64_t block = std::int64_t(p.dim(axis)) * inner;
      if (p.requires_grad()) {
        auto gp = p.impl()->grad_buffer();
        for (std::int64_t b = 0; b < outer; ++b)
          for (std::int64_t j = 0; j < block; ++j) gp[b * block + j] += g[b * out_block + offset + j];
      }
      offset += block;
    }
  });
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (start < 0 || length <= 0 || start + length > x.dim(axis))
    throw Error(ErrorCode::InvalidArg, "slice out of range for " + shape_str(x.shape()));
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= x.dim(d);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::int64_t in_block = std::int64_t(x.dim(axis)) * inner;
  const std::int64_t block = std::int64_t(length) * inner;
  const std::int64_t offset = std::int64_t(start) * inner;
  Tensor out(out_shape);
  auto o = out.data();
  auto in = x.data();
  for (std::int64_t b = 0; b < outer; ++b) std::copy_n(in.begin() + b * in_block + offset, block, o.begin() + b * block);
  record_if_needed("slice", {&x}, out, [x, outer, in_block, block, offset](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (std::int64_t b = 0; b < outer; ++b)
      for (std::int64_t j = 0; j < block; ++j) gx[b * in_block + offset + j] += g[b * block + j];
  });
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> rows) {
  if (table.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "gather_rows needs a 2-D table");
  const int v = table.dim(0), d = table.dim(1);
  if (rows.empty()) throw Error(ErrorCode::InvalidArg, "gather_rows with no rows");
  for (int r : rows)
    if (r < 0 || r >= v) throw Error(ErrorCode::InvalidArg, "row index out of range");
  auto ids = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
  Tensor out(Shape{static_cast<int>(rows.size()), d});
  auto o = out.data();
  auto in = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(in.begin() + std::int64_t(rows[i]) * d, d, o.begin() + std::int64_t(i) * d);
  record_if_needed("gather_rows", {&table}, out, [table, ids, d](std::span<const float> g) {
    auto gt = table.impl()->grad_buffer();
    for (std::size_t i = 0; i < ids->size(); ++i)
      for (int j = 0; j < d; ++j) gt[std::int64_t((*ids)[i]) * d + j] += g[i * d + j];
  });
  return out;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

namespace {

// Source spatial offset (or -1 for zero padding) for every (kernel tap, output position).
std::vector<int> conv_index(int h, int w, int k, int stride, PadMode mode, int ho, int wo) {
  const int pad = (k - 1) / 2;
  std::vector<int> src(std::size_t(k) * k * ho * wo);
  std::size_t t = 0;
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          int iy = oy * stride + ky - pad;
          int ix = ox * stride + kx - pad;
          if (mode == PadMode::Reflect) {
            iy = reflect_index(iy, h);
            ix = reflect_index(ix, w);
            src[t++] = iy * w + ix;
          } else {
            src[t++] = (iy < 0 || iy >= h || ix < 0 || ix >= w) ? -1 : iy * w + ix;
          }
        }
  return src;
}

void im2col(const float* x, int cin, int hw, const std::vector<int>& src, std::int64_t taps_positions, float* cols) {
  for (int c = 0; c < cin; ++c) {
    const float* xc = x + std::int64_t(c) * hw;
    float* cc = cols + std::int64_t(c) * taps_positions;
    for (std::int64_t t = 0; t < taps_positions; ++t) cc[t] = src[t] < 0 ? 0.0f : xc[src[t]];
  }
}

void col2im(const float* cols, int cin, int hw, const std::vector<int>& src, std::int64_t taps_positions, float* gx) {
  for (int c = 0; c < cin; ++c) {
    float* gc = gx + std::int64_t(c) * hw;
    const float* cc = cols + std::int64_t(c) * taps_positions;
    for (std::int64_t t = 0; t < taps_positions; ++t)
      if (src[t] >= 0) gc[src[t]] += cc[t];
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, PadMode pad) {
  if (x.rank() != 4 || w.rank() != 4) shape_error("conv2d rank", x.shape(), w.shape());
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) shape_error("conv2d channels", x.shape(), w.shape());
  if (w.dim(3) != k || k % 2 == 0) throw Error(ErrorCode::InvalidArg, "conv2d kernel must be square with odd extent");
  if (stride < 1) throw Error(ErrorCode::InvalidArg, "conv2d stride must be >= 1");
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) shape_error("conv2d bias", w.shape(), bias->shape());
  const int p = (k - 1) / 2;
  const int ho = (h + 2 * p - k) / stride + 1;
  const int wo = (wd + 2 * p - k) / stride + 1;
  const std::int64_t hw = std::int64_t(h) * wd;
  const std::int64_t pos = std::int64_t(ho) * wo;
  const std::int64_t ckk = std::int64_t(cin) * k * k;
  const bool pointwise = (k == 1 && stride == 1);
  auto src = std::make_shared<std::vector<int>>();
  if (!pointwise) *src = conv_index(h, wd, k, stride, pad, ho, wo);

  Tensor out(Shape{n, cout, ho, wo});
  std::vector<float> cols(pointwise ? 0 : std::size_t(ckk * pos));
  CMapMat wm(w.data().data(), cout, ckk);
  for (int i = 0; i < n; ++i) {
    const float* xi = x.data().data() + std::int64_t(i) * cin * hw;
    const float* colp = xi;
    if (!pointwise) {
      im2col(xi, cin, static_cast<int>(hw), *src, std::int64_t(k) * k * pos, cols.data());
      colp = cols.data();
    }
    MapMat om(out.data().data() + std::int64_t(i) * cout * pos, cout, pos);
    om.noalias() = wm * CMapMat(colp, ckk, pos);
    if (bias)
      for (int c = 0; c < cout; ++c) om.row(c).array() += bias->data()[c];
  }

  std::vector<const Tensor*> inputs{&x, &w};
  Tensor b = bias ? *bias : Tensor();
  if (bias) inputs.push_back(bias);
  record_if_needed("conv2d", inputs, out,
                   [x, w, b, src, n, cin, cout, k, hw, pos, ckk, pointwise](std::span<const float> g) {
                     std::vector<float> cols(pointwise ? 0 : std::size_t(ckk * pos));
                     std::vector<float> dcols(pointwise ? 0 : std::size_t(ckk * pos));
                     CMapMat wm(w.data().data(), cout, ckk);
                     const std::int64_t tp = std::int64_t(k) * k * pos;
                     for (int i = 0; i < n; ++i) {
                       CMapMat gm(g.data() + std::int64_t(i) * cout * pos, cout, pos);
                       const float* xi = x.data().data() + std::int64_t(i) * cin * hw;
                       if (w.requires_grad()) {
                         const float* colp = xi;
                         if (!pointwise) {
                           im2col(xi, cin, static_cast<int>(hw), *src, tp, cols.data());
                           colp = cols.data();
                         }
                         MapMat(w.impl()->grad_buffer().data(), cout, ckk).noalias() +=
                             gm * CMapMat(colp, ckk, pos).transpose();
                       }
                       if (x.requires_grad()) {
                         float* gx = x.impl()->grad_buffer().data() + std::int64_t(i) * cin * hw;
                         if (pointwise) {
                           MapMat(gx, cin, pos).noalias() += wm.transpose() * gm;
                         } else {
                           MapMat(dcols.data(), ckk, pos).noalias() = wm.transpose() * gm;
                           col2im(dcols.data(), cin, static_cast<int>(hw), *src, tp, gx);
                         }
                       }
                       if (b.defined() && b.requires_grad()) {
                         auto gb = b.impl()->grad_buffer();
                         for (int c = 0; c < cout; ++c) gb[c] += gm.row(c).sum();
                       }
                     }
                   });
  return out;
}

Tensor pad_reflect(const Tensor& x, int top, int bottom, int left, int right) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "pad_reflect needs [N,C,H,W]");
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw Error(ErrorCode::InvalidArg, "negative padding");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h + top + bottom, wo = w + left + right;
  auto src = std::make_shared<std::vector<int>>(std::size_t(ho) * wo);
  for (int y = 0; y < ho; ++y)
    for (int xx = 0; xx < wo; ++xx)
      (*src)[std::size_t(y) * wo + xx] = reflect_index(y - top, h) * w + reflect_index(xx - left, w);
  Tensor out(Shape{x.dim(0), x.dim(1), ho, wo});
  auto o = out.data();
  auto in = x.data();
  const std::int64_t plane_in = std::int64_t(h) * w, plane_out = std::int64_t(ho) * wo;
  for (int p = 0; p < nc; ++p)
    for (std::int64_t j = 0; j < plane_out; ++j) o[p * plane_out + j] = in[p * plane_in + (*src)[j]];
  record_if_needed("pad_reflect", {&x}, out, [x, src, nc, plane_in, plane_out](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (int p = 0; p < nc; ++p)
      for (std::int64_t j = 0; j < plane_out; ++j) gx[p * plane_in + (*src)[j]] += g[p * plane_out + j];
  });
  return out;
}

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "avg_pool2 needs [N,C,H,W]");
  const int nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / 2, wo = w / 2;
  if (ho < 1 || wo < 1) throw Error(ErrorCode::InvalidArg, "avg_pool2 input too small");
  Tensor out(Shape{x.dim(0), x.dim(1), ho, wo});
  auto o = out.data();
  auto in = x.data();
  for (int p = 0; p < nc; ++p) {
    const float* src = in.data() + std::int64_t(p) * h * w;
    float* dst = o.data() + std::int64_t(p) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        dst[y * wo + xx] = 0.25f * (src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1] +
                                    src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1]);
  }
  record_if_needed("avg_pool2", {&x}, out, [x, nc, h, w, ho, wo](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (int p = 0; p < nc; ++p) {
      float* dst = gx.data() + std::int64_t(p) * h * w;
      const float* gp = g.data() + std::int64_t(p) * ho * wo;
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          const float v = 0.25f * gp[y * wo + xx];
          dst[2 * y * w + 2 * xx] += v;
          dst[2 * y * w + 2 * xx + 1] += v;
          dst[(2 * y + 1) * w + 2 * xx] += v;
          dst[(2 * y + 1) * w + 2 * xx + 1] += v;
        }
    }
  });
  return out;
}

Tensor mean_hw(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "mean_hw needs [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t hw = std::int64_t(x.dim(2)) * x.dim(3);
  Tensor out(Shape{n, c});
  auto o = out.data();
  auto in = x.data();
  for (std::int64_t p = 0; p < std::int64_t(n) * c; ++p) {
    double s = 0.0;
    for (std::int64_t j = 0; j < hw; ++j) s += in[p * hw + j];
    o[p] = static_cast<float>(s / double(hw));
  }
  record_if_needed("mean_hw", {&x}, out, [x, hw](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    const float inv = 1.0f / static_cast<float>(hw);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::int64_t j = 0; j < hw; ++j) gx[p * hw + j] += g[p] * inv;
  });
  return out;
}

Tensor channel_mean(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "channel_mean needs [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t hw = std::int64_t(x.dim(2)) * x.dim(3);
  Tensor out(Shape{n, 1, x.dim(2), x.dim(3)});
  auto o = out.data();
  auto in = x.data();
  for (int i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < hw; ++j) {
      float s = 0.0f;
      for (int ch = 0; ch < c; ++ch) s += in[(std::int64_t(i) * c + ch) * hw + j];
      o[i * hw + j] = s / static_cast<float>(c);
    }
  record_if_needed("channel_mean", {&x}, out, [x, n, c, hw](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    const float inv = 1.0f / static_cast<float>(c);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (std::int64_t j = 0; j < hw; ++j) gx[(std::int64_t(i) * c + ch) * hw + j] += g[i * hw + j] * inv;
  });
  return out;
}

Tensor channel_max(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "channel_max needs [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t hw = std::int64_t(x.dim(2)) * x.dim(3);
  Tensor out(Shape{n, 1, x.dim(2), x.dim(3)});
  auto arg = std::make_shared<std::vector<std::int64_t>>(std::size_t(n * hw));
  auto o = out.data();
  auto in = x.data();
  for (int i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < hw; ++j) {
      std::int64_t best = std::int64_t(i) * c * hw + j;
      for (int ch = 1; ch < c; ++ch) {
        const std::int64_t idx = (std::int64_t(i) * c + ch) * hw + j;
        if (in[idx] > in[best]) best = idx;
      }
      (*arg)[i * hw + j] = best;
      o[i * hw + j] = in[best];
    }
  record_if_needed("channel_max", {&x}, out, [x, arg](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (std::size_t j = 0; j < g.size(); ++j) gx[(*arg)[j]] += g[j];
  });
  return out;
}

Tensor softmax(const Tensor& x, bool causal) {
  const int d = x.dim(-1);
  if (causal && (x.rank() < 2 || x.dim(-2) != d))
    throw Error(ErrorCode::ShapeMismatch, "causal softmax needs square trailing axes");
  using Row = Eigen::Map<Eigen::ArrayXf>;
  using CRow = Eigen::Map<const Eigen::ArrayXf>;
  const std::int64_t rows = x.numel() / d;
  Tensor out(x.shape());
  float* o = out.data().data();
  const float* in = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const int limit = causal ? static_cast<int>(r % d) + 1 : d;
    CRow xr(in + r * d, limit);
    Row yr(o + r * d, limit);
    yr = (xr - xr.maxCoeff()).exp();
    yr *= 1.0f / yr.sum();
  }
  record_if_needed("softmax", {&x}, out, [x, y = out.impl(), rows, d](std::span<const float> g) {
    float* gx = x.impl()->grad_buffer().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      CRow yr(y->data.data() + r * d, d);
      CRow gr(g.data() + r * d, d);
      const float dot = (gr * yr).sum();
      Row(gx + r * d, d) += yr * (gr - dot);
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& x) {
  const int d = x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = in.data() + r * d;
    const float mx = *std::max_element(xr, xr + d);
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += std::exp(double(xr[j] - mx));
    const float lse = mx + static_cast<float>(std::log(s));
    for (int j = 0; j < d; ++j) o[r * d + j] = xr[j] - lse;
  }
  record_if_needed("log_softmax", {&x}, out, [x, y = out.impl(), rows, d](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (int j = 0; j < d; ++j) gs += g[r * d + j];
      for (int j = 0; j < d; ++j)
        gx[r * d + j] += g[r * d + j] - std::exp(y->data[r * d + j]) * static_cast<float>(gs);
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const int d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) shape_error("layer_norm affine", x.shape(), gamma.shape());
  const std::int64_t rows = x.numel() / d;
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto rstd = std::make_shared<std::vector<float>>(rows);
  auto o = out.data();
  auto in = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = in.data() + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[r] = rs;
    for (int j = 0; j < d; ++j) {
      const float xh = static_cast<float>(xr[j] - mu) * rs;
      (*xhat)[r * d + j] = xh;
      o[r * d + j] = xh * gm[j] + bt[j];
    }
  }
  record_if_needed("layer_norm", {&x, &gamma, &beta}, out,
                   [x, gamma, beta, xhat, rstd, rows, d](std::span<const float> g) {
                     auto gm = gamma.data();
                     std::vector<float> dxh(d);
                     for (std::int64_t r = 0; r < rows; ++r) {
                       const float* gr = g.data() + r * d;
                       const float* xh = xhat->data() + r * d;
                       if (gamma.requires_grad()) {
                         auto gg = gamma.impl()->grad_buffer();
                         for (int j = 0; j < d; ++j) gg[j] += gr[j] * xh[j];
                       }
                       if (beta.requires_grad()) {
                         auto gb = beta.impl()->grad_buffer();
                         for (int j = 0; j < d; ++j) gb[j] += gr[j];
                       }
                       if (x.requires_grad()) {
                         double m1 = 0.0, m2 = 0.0;
                         for (int j = 0; j < d; ++j) {
                           dxh[j] = gr[j] * gm[j];
                           m1 += dxh[j];
                           m2 += double(dxh[j]) * xh[j];
                         }
                         m1 /= d;
                         m2 /= d;
                         auto gx = x.impl()->grad_buffer();
                         const float rs = (*rstd)[r];
                         for (int j = 0; j < d; ++j)
                           gx[r * d + j] += rs * (dxh[j] - static_cast<float>(m1) - xh[j] * static_cast<float>(m2));
                       }
                     }
                   });
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s));
  record_if_needed("sum", {&x}, out, [x](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (auto& v : gx) v += g[0];
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor sum_last(const Tensor& x) {
  const int d = x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  if (shape.empty()) shape = {1};
  Tensor out(shape);
  auto o = out.data();
  auto in = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += in[r * d + j];
    o[r] = static_cast<float>(s);
  }
  record_if_needed("sum_last", {&x}, out, [x, rows, d](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < d; ++j) gx[r * d + j] += g[r];
  });
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "l2_normalize_rows needs [N,D]");
  const int n = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  auto norms = std::make_shared<std::vector<float>>(n);
  auto o = out.data();
  auto in = x.data();
  for (int r = 0; r < n; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += double(in[r * d + j]) * in[r * d + j];
    const double nrm = std::sqrt(s);
    (*norms)[r] = static_cast<float>(nrm);
    for (int j = 0; j < d; ++j) o[r * d + j] = nrm < 1e-8 ? 0.0f : static_cast<float>(in[r * d + j] / nrm);
  }
  record_if_needed("l2_normalize_rows", {&x}, out, [x, y = out.impl(), norms, n, d](std::span<const float> g) {
    auto gx = x.impl()->grad_buffer();
    for (int r = 0; r < n; ++r) {
      const float nrm = (*norms)[r];
      if (nrm < 1e-8f) continue;
      const float* yr = y->data.data() + std::int64_t(r) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += double(yr[j]) * g[r * d + j];
      for (int j = 0; j < d; ++j) gx[r * d + j] += (g[r * d + j] - yr[j] * static_cast<float>(dot)) / nrm;
    }
  });
  return out;
}

Tensor soft_cross_entropy(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || logits.shape() != targets.shape())
    shape_error("soft_cross_entropy", logits.shape(), targets.shape());
  const int n = logits.dim(0);
  Tensor lp = log_softmax(logits);
  Tensor t = targets.requires_grad() ? targets.detach() : targets;
  return scale(sum(mul(lp, t)), -1.0f / static_cast<float>(n));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size())
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy: labels do not match logits rows");
  const int k = logits.dim(1);
  Tensor onehot(logits.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw Error(ErrorCode::InvalidArg, "label out of range");
    onehot.data()[i * k + labels[i]] = 1.0f;
  }
  return soft_cross_entropy(logits, onehot);
}

}  // namespace rsmg
