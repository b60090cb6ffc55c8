#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rsmg/tensor.hpp"

namespace rsmg {

enum class Domain { Source, Target };

/// A labelled two-modality scene: an HS-like cube and a LiDAR-like raster on
/// one grid. Labels are row-major, -1 for unlabelled pixels.
struct SceneCube {
  Tensor hs;     // [C_hs, H, W]
  Tensor lidar;  // [C_li, H, W]
  std::vector<int> labels;
  int num_classes = 3;
  Domain domain = Domain::Source;

  int height() const { return hs.dim(1); }
  int width() const { return hs.dim(2); }
  /// Throws DataError on a broken layout or out-of-range label.
  void validate() const;
};

struct PatchBatch {
  Tensor m1;  // [N, C1, p, p]
  Tensor m2;  // [N, C2, p, p]
  std::vector<int> labels;
  int patch = 11;

  int size() const { return static_cast<int>(labels.size()); }
};

// ---- PCA ------------------------------------------------------------------

struct EigenDecomposition {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // row i is the eigenvector of values[i]
  int sweeps = 0;
};

/// Cyclic Jacobi on a symmetric n x n row-major matrix; stops when the
/// off-diagonal Frobenius norm is <= tol.
EigenDecomposition jacobi_eigen(std::vector<double> a, int n, double tol = 1e-10, int max_sweeps = 100);

struct PcaBasis {
  std::vector<double> mean;        // per input channel
  std::vector<double> components;  // [k_eff, C] row-major, orthonormal rows
  std::vector<double> explained_ratio;
  int channels = 0;
  int k = 0;
  bool degenerate = false;  // some channel had zero variance
};

/// Channels are features, pixels are samples. Components are ordered by
/// descending eigenvalue and signed so the largest-magnitude loading is positive.
PcaBasis pca_fit(const Tensor& x, int k);

/// Projects [C,H,W] onto the basis. With `own_mean`, the cube is centred on
/// its own channel means instead of the fitted ones.
Tensor pca_project(const PcaBasis& basis, const Tensor& x, bool own_mean = false);

/// Inverse projection back to [C,H,W].
Tensor pca_reconstruct(const PcaBasis& basis, const Tensor& projected);

struct PcaResult {
  Tensor projected;  // [k_eff, H, W]
  PcaBasis basis;
};

PcaResult pca_reduce(const Tensor& x, int k);

// ---- channel stacking and patches -------------------------------------------

/// Stacks original then diffusion channels. An undefined `diff_reduced` falls
/// back to duplicating `orig_reduced`.
Tensor concat_diffusion(const Tensor& orig_reduced, const Tensor& diff_reduced);

/// p x p window centred on (row, col) of a [C,H,W] cube, reflect-padded at borders.
Tensor extract_patch(const Tensor& cube, int row, int col, int p);
std::pair<Tensor, Tensor> extract_patch(const Tensor& m1, const Tensor& m2, int row, int col, int p);

/// Labelled pixel centres in row-major order.
std::vector<std::pair<int, int>> labeled_centers(const SceneCube& scene);

/// Builds a batch from the given centres; labels are the centre-pixel labels.
PatchBatch make_batch(const Tensor& m1, const Tensor& m2, const std::vector<int>& labels, int width,
                      const std::vector<std::pair<int, int>>& centers, int p);

// ---- augmentation -----------------------------------------------------------

struct AugmentConfig {
  bool hflip = true;
  bool vflip = true;
  bool radiation = true;
  float gain_lo = 0.9f;
  float gain_hi = 1.1f;
  float noise_fraction = 0.01f;  // noise sigma relative to the patch std
};

/// Per-sample random flips (shared by both modalities) and radiometric jitter
/// (gain times patch plus Gaussian noise). Labels are untouched.
PatchBatch augment(const PatchBatch& batch, std::uint64_t seed, const AugmentConfig& cfg);

/// Mirrors left-right the samples whose mask entry is set.
PatchBatch flip_horizontal(const PatchBatch& batch, const std::vector<bool>& mask);
PatchBatch flip_vertical(const PatchBatch& batch, const std::vector<bool>& mask);

// ---- diffusion feature files ("RSMGA1") --------------------------------------

inline constexpr char kAuxMagic[8] = {'R', 'S', 'M', 'G', 'A', '1', '\0', '\0'};

void save_diffusion_features(const std::string& path, const Tensor& features);

/// Reads a [C,H,W] tensor. When `grid` is given, H and W must match it (GridMismatch).
Tensor load_diffusion_features(const std::string& path, std::optional<std::pair<int, int>> grid = std::nullopt);

}  // namespace rsmg
