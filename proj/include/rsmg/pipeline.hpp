#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rsmg/config.hpp"
#include "rsmg/dtaug.hpp"
#include "rsmg/metrics.hpp"
#include "rsmg/msffa.hpp"
#include "rsmg/mwdis.hpp"
#include "rsmg/scene.hpp"
#include "rsmg/text_encoder.hpp"
#include "rsmg/vision_encoder.hpp"

namespace rsmg {

/// Scene-to-network input mapping fitted on the source scene. With DTAug, each
/// modality is PCA-reduced (source basis, each scene centred on its own mean),
/// scaled by the source component spread and stacked with its diffusion
/// reduction or, without one, a copy of itself. Without DTAug, channels are
/// standardised with source statistics.
struct Preprocessor {
  bool dtaug = true;
  std::array<PcaBasis, 2> pca;
  std::array<std::vector<float>, 2> shift;
  std::array<std::vector<float>, 2> spread;
  bool has_diffusion = false;
  PcaBasis diffusion_pca;
  std::vector<float> diffusion_spread;

  /// `diffusion` (optional, [C,H,W] on the source grid) feeds modality 1.
  static Preprocessor fit(const SceneCube& source, const RunConfig& cfg, const Tensor* diffusion = nullptr);
  /// Network input cubes for modality 1 and 2. Throws DataError when the
  /// scene's band counts differ from the fitted ones.
  std::pair<Tensor, Tensor> apply(const SceneCube& scene, const Tensor* diffusion = nullptr) const;
  int channels(int modality) const;
};

struct Model {
  RunConfig cfg;
  int num_classes = 3;
  Preprocessor prep;
  MwdisParams mwdis;
  std::array<SfieParams, 2> encoders;
  ProjectionHeads heads;
  std::array<Linear, 2> classifiers;
  TteParams text;
  LogitScale logit_scale;
  BpeVocab vocab;
  std::vector<ClassText> texts;
  std::vector<std::vector<int>> text_ids;

  /// Fresh parameters for the given input widths. Class texts come from the
  /// shipped catalog, which must list `num_classes` classes.
  static Model init(const RunConfig& cfg, int c1, int c2, int num_classes, const Preprocessor& prep);
  /// Parameters that the configured modules actually use.
  void collect(ParamList& out) const;
  /// Every parameter, for serialisation.
  void collect_all(ParamList& out) const;
};

struct ForwardOut {
  std::array<ModalityEmbeddings, 2> emb;
  std::array<Tensor, 2> logits;
};

/// Patches [N,C,p,p] per modality to embeddings and classifier scores. In
/// training mode MWDis resamples with `rho_seed`; otherwise it does not.
ForwardOut forward(const Model& model, const Tensor& m1, const Tensor& m2, bool training, std::uint64_t rho_seed = 0);

/// Class texts through the text encoder, row-aligned with `model.texts`.
TextEmbeddings embed_texts(const Model& model);

/// Training pixel centres: a `fraction` of the labelled source pixels,
/// per class (stratified) or overall (uniform), in row-major order.
std::vector<std::pair<int, int>> sample_training_pixels(const SceneCube& scene, float fraction, Sampling sampling,
                                                        std::uint64_t seed);

struct TrainResult {
  Model model;
  std::vector<float> loss_trace;  // total loss per step
  int steps_per_epoch = 0;
  int train_pixels = 0;
};

using StepCallback = std::function<void(int epoch, int step, const LossBreakdown& loss)>;

/// Reads `cfg.source` (and `cfg.source_diffusion` if set) and trains. The
/// target scene is never opened. Throws ConfigError or DataError.
TrainResult train(const RunConfig& cfg, const StepCallback& on_step = {});
TrainResult train(const RunConfig& cfg, const SceneCube& source, const Tensor* diffusion = nullptr,
                  const StepCallback& on_step = {});

/// Max-score predictions for the given pixel centres.
std::vector<int> predict_pixels(const Model& model, const SceneCube& scene,
                                const std::vector<std::pair<int, int>>& centers, const Tensor* diffusion = nullptr);
/// Row-major predictions for every pixel of the scene.
std::vector<int> predict_scene(const Model& model, const SceneCube& scene, const Tensor* diffusion = nullptr);
/// Metrics over all labelled pixels. Throws EmptyEvalSet.
Metrics evaluate(const Model& model, const SceneCube& scene, const Tensor* diffusion = nullptr);

/// Writes `model.json` into `dir` (created if missing). Throws IoError.
void save_model(const std::string& dir, const Model& model);
/// Throws IoError or ConfigError on a malformed model.
Model load_model(const std::string& dir);

}  // namespace rsmg
