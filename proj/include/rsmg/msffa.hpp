#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "rsmg/text_encoder.hpp"
#include "rsmg/vision_encoder.hpp"

namespace rsmg {

enum class FeatureDomain { Spatial = 0, LL = 1, LH = 2 };
inline constexpr int kScales = 2;
inline constexpr int kDomains = 3;

const char* to_string(FeatureDomain d);

/// e[scale][domain] for one modality, each [N, d_emb] with unit or zero rows.
using ModalityEmbeddings = std::array<std::array<Tensor, kDomains>, kScales>;

/// One bias-free head per (scale, domain), shared by both modalities so a zero
/// pooled vector stays zero.
struct ProjectionHeads {
  std::array<std::array<Linear, kDomains>, kScales> heads;

  static ProjectionHeads make(int c_model, int d_emb, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Spatial: GAP -> head. LL / LH: dwt2 then GAP of that subband -> head.
/// Rows are L2-normalised; rows with norm < 1e-8 become zero. `raw`, if
/// given, receives the head outputs before normalisation.
ModalityEmbeddings project_multiscale(const StageFeatures& feats, const ProjectionHeads& heads,
                                      ModalityEmbeddings* raw = nullptr);

/// Learnable inverse temperature; exp(log_tau_inv) is clamped to 100.
struct LogitScale {
  Tensor log_tau_inv;  // scalar, init ln(1 / 0.07)

  static LogitScale make();
  /// exp of the clamped value; past the clamp the result is a constant.
  Tensor value() const;
  /// Pulls the stored parameter back under ln(100) after an optimiser step.
  void clamp();
  void collect(const std::string& prefix, ParamList& out) const;
};

/// 0.5 [CE(rows) + CE(columns)] of `logits` against a target distribution
/// (rows sum to 1, symmetric under class-level pairing).
Tensor contrastive_from_logits(const Tensor& logits, const Tensor& targets);

/// Symmetric InfoNCE on scale * v t^T. With labels, each row's target is
/// uniform over the same-class columns; without, the diagonal. Rows where v
/// or t is zero are dropped; with nothing left the loss is a constant 0.
Tensor contrastive_loss(const Tensor& v, const Tensor& t, const Tensor& scale, const std::vector<int>* labels = nullptr);

/// Mean over rows of 1 - <e1_i, e2_i>; zero rows in either input are dropped.
Tensor vv_cosine_loss(const Tensor& e1, const Tensor& e2);

struct LossTerm {
  std::string name;
  Tensor value;
};

struct LossBreakdown {
  Tensor total;
  std::vector<LossTerm> terms;
};

/// PerTerm sums every term with weight 1. PerFamily gives the vision-text
/// family, the vision-vision family and each classifier weight 1, each family
/// being the mean of its enabled terms.
enum class LossWeighting { PerTerm, PerFamily };

const char* to_string(LossWeighting w);

struct MsffaOptions {
  TextMode text_mode = TextMode::SharedSpecific;
  bool vision_text = true;
  bool vision_vision = true;
  bool frequency = true;   // LL and LH domains alongside spatial
  bool multiscale = true;  // both stages, else stage 2 only
  LossWeighting weighting = LossWeighting::PerFamily;
};

/// Text embeddings row-aligned with `texts` (output of build_class_texts).
struct TextEmbeddings {
  Tensor rows;  // [K, d_emb]
  std::vector<ClassText> texts;

  /// Row index for (class, scope), or -1.
  int find(int cls, TextScope scope) const;
};

/// Equal-weight combination (see LossWeighting) of every enabled vision-text
/// contrastive term (modality x scale x domain x text scope), every
/// vision-vision term (scale x domain) and the cross-entropy of both
/// classifiers. Text terms are absent under TextMode::None.
LossBreakdown total_loss(const std::array<ModalityEmbeddings, 2>& emb, const TextEmbeddings& text,
                         const std::array<Tensor, 2>& class_logits, const std::vector<int>& labels,
                         const LogitScale& scale, const MsffaOptions& opts);

}  // namespace rsmg
