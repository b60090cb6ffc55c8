#include "rsmg/dtaug.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "rsmg/io.hpp"
#include "rsmg/ops.hpp"

namespace rsmg {

void SceneCube::validate() const {
  if (!hs.defined() || !lidar.defined() || hs.rank() != 3 || lidar.rank() != 3)
    throw Error(ErrorCode::DataError, "scene modalities must be [C,H,W]");
  if (hs.dim(1) != lidar.dim(1) || hs.dim(2) != lidar.dim(2))
    throw Error(ErrorCode::DataError, "hs and lidar grids differ");
  if (static_cast<std::int64_t>(labels.size()) != std::int64_t(height()) * width())
    throw Error(ErrorCode::DataError, "label raster does not cover the grid");
  for (int l : labels)
    if (l < -1 || l >= num_classes) throw Error(ErrorCode::DataError, "label out of range: " + std::to_string(l));
}

EigenDecomposition jacobi_eigen(std::vector<double> a, int n, double tol, int max_sweeps) {
  std::vector<double> v(std::size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto off_norm = [&] {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) s += a[i * n + j] * a[i * n + j];
    return std::sqrt(s);
  };
  EigenDecomposition out;
  while (off_norm() > tol && out.sweeps < max_sweeps) {
    ++out.sweeps;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a[i * n + i] > a[j * n + j]; });
  for (int idx : order) {
    out.values.push_back(a[idx * n + idx]);
    for (int k = 0; k < n; ++k) out.vectors.push_back(v[k * n + idx]);
  }
  return out;
}

PcaBasis pca_fit(const Tensor& x, int k) {
  if (x.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "pca expects [C,H,W]");
  if (k < 1) throw Error(ErrorCode::InvalidArg, "pca needs k >= 1");
  const int c = x.dim(0);
  const std::int64_t hw = std::int64_t(x.dim(1)) * x.dim(2);
  auto data = x.data();
  PcaBasis basis;
  basis.channels = c;
  basis.k = std::min(k, c);
  basis.mean.assign(c, 0.0);
  for (int i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) s += data[i * hw + p];
    basis.mean[i] = s / double(hw);
  }
  std::vector<double> cov(std::size_t(c) * c, 0.0);
  for (int i = 0; i < c; ++i)
    for (int j = i; j < c; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < hw; ++p)
        s += (data[i * hw + p] - basis.mean[i]) * (data[j * hw + p] - basis.mean[j]);
      cov[i * c + j] = cov[j * c + i] = s / double(std::max<std::int64_t>(hw - 1, 1));
    }
  for (int i = 0; i < c; ++i) basis.degenerate = basis.degenerate || cov[i * c + i] <= 0.0;

  const auto eig = jacobi_eigen(cov, c);
  double total = 0.0;
  for (double v : eig.values) total += std::max(v, 0.0);
  for (int r = 0; r < basis.k; ++r) {
    std::vector<double> row(eig.vectors.begin() + std::int64_t(r) * c, eig.vectors.begin() + std::int64_t(r + 1) * c);
    const auto big = std::max_element(row.begin(), row.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    if (*big < 0)
      for (auto& v : row) v = -v;
    basis.components.insert(basis.components.end(), row.begin(), row.end());
    basis.explained_ratio.push_back(total > 0 ? std::max(eig.values[r], 0.0) / total : 0.0);
  }
  return basis;
}

Tensor pca_project(const PcaBasis& basis, const Tensor& x, bool own_mean) {
  if (x.rank() != 3 || x.dim(0) != basis.channels)
    throw Error(ErrorCode::ShapeMismatch, "pca_project: cube " + shape_str(x.shape()) + " vs basis channels " +
                                              std::to_string(basis.channels));
  const int c = basis.channels;
  const std::int64_t hw = std::int64_t(x.dim(1)) * x.dim(2);
  auto data = x.data();
  std::vector<double> mean = basis.mean;
  if (own_mean)
    for (int i = 0; i < c; ++i) {
      double s = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) s += data[i * hw + p];
      mean[i] = s / double(hw);
    }
  Tensor out(Shape{basis.k, x.dim(1), x.dim(2)});
  auto o = out.data();
  for (std::int64_t p = 0; p < hw; ++p)
    for (int r = 0; r < basis.k; ++r) {
      double s = 0.0;
      for (int i = 0; i < c; ++i) s += basis.components[std::size_t(r) * c + i] * (data[i * hw + p] - mean[i]);
      o[r * hw + p] = static_cast<float>(s);
    }
  return out;
}

Tensor pca_reconstruct(const PcaBasis& basis, const Tensor& projected) {
  const int c = basis.channels;
  const std::int64_t hw = std::int64_t(projected.dim(1)) * projected.dim(2);
  Tensor out(Shape{c, projected.dim(1), projected.dim(2)});
  auto o = out.data();
  auto z = projected.data();
  for (std::int64_t p = 0; p < hw; ++p)
    for (int i = 0; i < c; ++i) {
      double s = basis.mean[i];
      for (int r = 0; r < basis.k; ++r) s += basis.components[std::size_t(r) * c + i] * z[r * hw + p];
      o[i * hw + p] = static_cast<float>(s);
    }
  return out;
}

PcaResult pca_reduce(const Tensor& x, int k) {
  PcaResult r;
  r.basis = pca_fit(x, k);
  r.projected = pca_project(r.basis, x);
  return r;
}

Tensor concat_diffusion(const Tensor& orig_reduced, const Tensor& diff_reduced) {
  const Tensor& second = diff_reduced.defined() ? diff_reduced : orig_reduced;
  if (orig_reduced.rank() != 3 || second.rank() != 3 || orig_reduced.dim(1) != second.dim(1) ||
      orig_reduced.dim(2) != second.dim(2))
    throw Error(ErrorCode::ShapeMismatch,
                "concat_diffusion grids differ: " + shape_str(orig_reduced.shape()) + " vs " + shape_str(second.shape()));
  return concat({orig_reduced, second}, 0);
}

Tensor extract_patch(const Tensor& cube, int row, int col, int p) {
  if (p < 1 || p % 2 == 0) throw Error(ErrorCode::InvalidArg, "patch size must be odd");
  const int c = cube.dim(0), h = cube.dim(1), w = cube.dim(2);
  if (row < 0 || row >= h || col < 0 || col >= w) throw Error(ErrorCode::InvalidArg, "patch centre outside the image");
  const int r = p / 2;
  Tensor out(Shape{c, p, p});
  auto o = out.data();
  auto in = cube.data();
  for (int ch = 0; ch < c; ++ch)
    for (int dy = 0; dy < p; ++dy) {
      const int y = reflect_index(row - r + dy, h);
      for (int dx = 0; dx < p; ++dx) {
        const int x = reflect_index(col - r + dx, w);
        o[(std::int64_t(ch) * p + dy) * p + dx] = in[(std::int64_t(ch) * h + y) * w + x];
      }
    }
  return out;
}

std::pair<Tensor, Tensor> extract_patch(const Tensor& m1, const Tensor& m2, int row, int col, int p) {
  return {extract_patch(m1, row, col, p), extract_patch(m2, row, col, p)};
}

std::vector<std::pair<int, int>> labeled_centers(const SceneCube& scene) {
  std::vector<std::pair<int, int>> out;
  const int w = scene.width();
  for (std::size_t i = 0; i < scene.labels.size(); ++i)
    if (scene.labels[i] >= 0) out.emplace_back(static_cast<int>(i) / w, static_cast<int>(i) % w);
  return out;
}

PatchBatch make_batch(const Tensor& m1, const Tensor& m2, const std::vector<int>& labels, int width,
                      const std::vector<std::pair<int, int>>& centers, int p) {
  const int n = static_cast<int>(centers.size());
  if (n == 0) throw Error(ErrorCode::InvalidArg, "empty batch");
  PatchBatch b;
  b.patch = p;
  b.m1 = Tensor(Shape{n, m1.dim(0), p, p});
  b.m2 = Tensor(Shape{n, m2.dim(0), p, p});
  const std::int64_t s1 = std::int64_t(m1.dim(0)) * p * p, s2 = std::int64_t(m2.dim(0)) * p * p;
  for (int i = 0; i < n; ++i) {
    const auto [row, col] = centers[i];
    const Tensor a = extract_patch(m1, row, col, p);
    const Tensor c = extract_patch(m2, row, col, p);
    std::copy(a.data().begin(), a.data().end(), b.m1.data().begin() + i * s1);
    std::copy(c.data().begin(), c.data().end(), b.m2.data().begin() + i * s2);
    b.labels.push_back(labels.empty() ? -1 : labels[std::size_t(row) * width + col]);
  }
  return b;
}

namespace {

void flip_sample(Tensor& t, int i, bool horizontal) {
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  auto d = t.data();
  for (int ch = 0; ch < c; ++ch) {
    float* plane = d.data() + (std::int64_t(i) * c + ch) * h * w;
    if (horizontal) {
      for (int y = 0; y < h; ++y) std::reverse(plane + y * w, plane + (y + 1) * w);
    } else {
      for (int y = 0; y < h / 2; ++y) std::swap_ranges(plane + y * w, plane + (y + 1) * w, plane + (h - 1 - y) * w);
    }
  }
}

void jitter_sample(Tensor& t, int i, float gain, float noise_fraction, std::mt19937_64& rng) {
  const std::int64_t len = std::int64_t(t.dim(1)) * t.dim(2) * t.dim(3);
  float* s = t.data().data() + i * len;
  double mu = 0.0, var = 0.0;
  for (std::int64_t j = 0; j < len; ++j) mu += s[j];
  mu /= double(len);
  for (std::int64_t j = 0; j < len; ++j) var += (s[j] - mu) * (s[j] - mu);
  const float sigma = noise_fraction * static_cast<float>(std::sqrt(var / double(len)));
  std::normal_distribution<float> noise(0.0f, 1.0f);
  for (std::int64_t j = 0; j < len; ++j) s[j] = gain * s[j] + sigma * noise(rng);
}

PatchBatch copy_batch(const PatchBatch& b) { return {b.m1.detach(), b.m2.detach(), b.labels, b.patch}; }

}  // namespace

PatchBatch flip_horizontal(const PatchBatch& batch, const std::vector<bool>& mask) {
  PatchBatch out = copy_batch(batch);
  for (int i = 0; i < out.size(); ++i)
    if (mask.at(i)) {
      flip_sample(out.m1, i, true);
      flip_sample(out.m2, i, true);
    }
  return out;
}

PatchBatch flip_vertical(const PatchBatch& batch, const std::vector<bool>& mask) {
  PatchBatch out = copy_batch(batch);
  for (int i = 0; i < out.size(); ++i)
    if (mask.at(i)) {
      flip_sample(out.m1, i, false);
      flip_sample(out.m2, i, false);
    }
  return out;
}

PatchBatch augment(const PatchBatch& batch, std::uint64_t seed, const AugmentConfig& cfg) {
  PatchBatch out = copy_batch(batch);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<float> gain(cfg.gain_lo, cfg.gain_hi);
  for (int i = 0; i < out.size(); ++i) {
    const bool h = coin(rng);
    const bool v = coin(rng);
    if (cfg.hflip && h) {
      flip_sample(out.m1, i, true);
      flip_sample(out.m2, i, true);
    }
    if (cfg.vflip && v) {
      flip_sample(out.m1, i, false);
      flip_sample(out.m2, i, false);
    }
    const float g1 = gain(rng);
    const float g2 = gain(rng);
    if (cfg.radiation) {
      jitter_sample(out.m1, i, g1, cfg.noise_fraction, rng);
      jitter_sample(out.m2, i, g2, cfg.noise_fraction, rng);
    }
  }
  return out;
}

void save_diffusion_features(const std::string& path, const Tensor& features) {
  if (features.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "diffusion features must be [C,H,W]");
  auto out = open_for_write(path);
  out.write(kAuxMagic, 8);
  for (int d = 0; d < 3; ++d) write_u32(out, static_cast<std::uint32_t>(features.dim(d)));
  write_floats(out, features.data());
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path);
}

Tensor load_diffusion_features(const std::string& path, std::optional<std::pair<int, int>> grid) {
  ByteReader in(read_all(path));
  if (in.remaining() < 8 || std::memcmp(in.take(8).data(), kAuxMagic, 8) != 0)
    throw Error(ErrorCode::BadMagic, path + " is not an RSMGA1 file");
  const auto c = in.u32(), h = in.u32(), w = in.u32();
  if (c == 0 || h == 0 || w == 0) throw Error(ErrorCode::DataError, "zero extent in " + path);
  if (grid && (int(h) != grid->first || int(w) != grid->second))
    throw Error(ErrorCode::GridMismatch, "diffusion grid " + std::to_string(h) + "x" + std::to_string(w) +
                                             " does not match the scene");
  Tensor t(Shape{int(c), int(h), int(w)});
  in.floats(t.data());
  return t;
}

}  // namespace rsmg
