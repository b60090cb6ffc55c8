#include "rsmg/msffa.hpp"

#include <cmath>

#include "rsmg/wavelet.hpp"

namespace rsmg {

namespace {

constexpr float kMaxLogScale = 4.605170186f;  // ln 100

[[noreturn]] void shape_error(const std::string& what, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch, what + ": " + shape_str(a) + " vs " + shape_str(b));
}

bool zero_row(std::span<const float> data, int row, int d) {
  double n2 = 0.0;
  for (int j = 0; j < d; ++j) n2 += double(data[row * d + j]) * data[row * d + j];
  return n2 == 0.0;
}

void check_pair(const char* what, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) shape_error(what, a.shape(), b.shape());
}

}  // namespace

const char* to_string(LossWeighting w) { return w == LossWeighting::PerTerm ? "term" : "family"; }

const char* to_string(FeatureDomain d) {
  switch (d) {
    case FeatureDomain::Spatial: return "spatial";
    case FeatureDomain::LL: return "ll";
    case FeatureDomain::LH: return "lh";
  }
  return "?";
}

ProjectionHeads ProjectionHeads::make(int c_model, int d_emb, Rng& rng) {
  ProjectionHeads p;
  for (auto& scale : p.heads)
    for (auto& head : scale) head = Linear::xavier(c_model, d_emb, rng, false);
  return p;
}

void ProjectionHeads::collect(const std::string& prefix, ParamList& out) const {
  for (int s = 0; s < kScales; ++s)
    for (int d = 0; d < kDomains; ++d)
      heads[s][d].collect(prefix + ".s" + std::to_string(s + 1) + "." + to_string(FeatureDomain(d)), out);
}

ModalityEmbeddings project_multiscale(const StageFeatures& feats, const ProjectionHeads& heads,
                                      ModalityEmbeddings* raw) {
  ModalityEmbeddings out, pre;
  const Tensor* maps[kScales] = {&feats.f1, &feats.f2};
  for (int s = 0; s < kScales; ++s) {
    const Tensor& f = *maps[s];
    const SubbandSet bands = dwt2(f);
    pre[s][0] = heads.heads[s][0](mean_hw(f));
    pre[s][1] = heads.heads[s][1](mean_hw(bands.ll));
    pre[s][2] = heads.heads[s][2](mean_hw(bands.lh));
    for (int d = 0; d < kDomains; ++d) out[s][d] = l2_normalize_rows(pre[s][d]);
  }
  if (raw) *raw = pre;
  return out;
}

LogitScale LogitScale::make() { return {param(Tensor::scalar(std::log(1.0f / 0.07f)))}; }

Tensor LogitScale::value() const {
  if (log_tau_inv.item() >= kMaxLogScale) return Tensor::scalar(100.0f);
  return exp(log_tau_inv);
}

void LogitScale::clamp() {
  Tensor t = log_tau_inv;
  if (t.data()[0] > kMaxLogScale) t.data()[0] = kMaxLogScale;
}

void LogitScale::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".log_tau_inv", log_tau_inv});
}

Tensor contrastive_from_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || logits.dim(0) != logits.dim(1) || logits.shape() != targets.shape())
    shape_error("contrastive logits", logits.shape(), targets.shape());
  const Tensor rows = soft_cross_entropy(logits, targets);
  const Tensor cols = soft_cross_entropy(permute(logits, {1, 0}), permute(targets, {1, 0}));
  return scale(add(rows, cols), 0.5f);
}

Tensor contrastive_loss(const Tensor& v, const Tensor& t, const Tensor& scale_value, const std::vector<int>* labels) {
  check_pair("contrastive_loss", v, t);
  const int n = v.dim(0), d = v.dim(1);
  if (labels && static_cast<int>(labels->size()) != n)
    throw Error(ErrorCode::ShapeMismatch, "contrastive_loss: labels do not match rows");
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (!zero_row(v.data(), i, d) && !zero_row(t.data(), i, d)) keep.push_back(i);
  if (keep.empty()) return Tensor::scalar(0.0f);
  const int m = static_cast<int>(keep.size());
  const Tensor vk = m == n ? v : gather_rows(v, keep);
  const Tensor tk = m == n ? t : gather_rows(t, keep);

  Tensor targets(Shape{m, m});
  for (int i = 0; i < m; ++i) {
    if (!labels) {
      targets.data()[i * m + i] = 1.0f;
      continue;
    }
    int count = 0;
    for (int j = 0; j < m; ++j) count += (*labels)[keep[j]] == (*labels)[keep[i]];
    for (int j = 0; j < m; ++j)
      if ((*labels)[keep[j]] == (*labels)[keep[i]]) targets.data()[i * m + j] = 1.0f / static_cast<float>(count);
  }
  const Tensor logits = mul(matmul(vk, permute(tk, {1, 0})), scale_value);
  return contrastive_from_logits(logits, targets);
}

Tensor vv_cosine_loss(const Tensor& e1, const Tensor& e2) {
  check_pair("vv_cosine_loss", e1, e2);
  const int n = e1.dim(0), d = e1.dim(1);
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (!zero_row(e1.data(), i, d) && !zero_row(e2.data(), i, d)) keep.push_back(i);
  if (keep.empty()) return Tensor::scalar(0.0f);
  const bool all = static_cast<int>(keep.size()) == n;
  const Tensor a = all ? e1 : gather_rows(e1, keep);
  const Tensor b = all ? e2 : gather_rows(e2, keep);
  // mul is commutative per element, so swapping the inputs is bit-exact
  const Tensor cos = sum_last(mul(a, b));
  return add_scalar(scale(mean(cos), -1.0f), 1.0f);
}

int TextEmbeddings::find(int cls, TextScope scope) const {
  for (std::size_t i = 0; i < texts.size(); ++i)
    if (texts[i].cls == cls && texts[i].scope == scope) return static_cast<int>(i);
  return -1;
}

LossBreakdown total_loss(const std::array<ModalityEmbeddings, 2>& emb, const TextEmbeddings& text,
                         const std::array<Tensor, 2>& class_logits, const std::vector<int>& labels,
                         const LogitScale& scale_param, const MsffaOptions& opts) {
  LossBreakdown out;
  const int n = static_cast<int>(labels.size());
  for (int m = 0; m < 2; ++m)
    for (int s = 0; s < kScales; ++s)
      for (int d = 0; d < kDomains; ++d)
        if (emb[m][s][d].rank() != 2 || emb[m][s][d].dim(0) != n)
          throw Error(ErrorCode::ShapeMismatch, "total_loss: embeddings do not match labels");

  const int first_scale = opts.multiscale ? 0 : 1;
  const int domains = opts.frequency ? kDomains : 1;
  auto scale_name = [](int s) { return "s" + std::to_string(s + 1); };

  const bool use_text = opts.vision_text && opts.text_mode != TextMode::None;
  if (use_text) {
    std::vector<TextScope> scopes_m[2];
    for (int m = 0; m < 2; ++m) {
      if (opts.text_mode == TextMode::Shared || opts.text_mode == TextMode::SharedSpecific)
        scopes_m[m].push_back(TextScope::Shared);
      if (opts.text_mode == TextMode::Specific || opts.text_mode == TextMode::SharedSpecific)
        scopes_m[m].push_back(m == 0 ? TextScope::M1 : TextScope::M2);
    }
    const Tensor logit_scale = scale_param.value();
    for (int m = 0; m < 2; ++m) {
      for (TextScope scope : scopes_m[m]) {
        std::vector<int> rows(n);
        for (int i = 0; i < n; ++i) {
          rows[i] = text.find(labels[i], scope);
          if (rows[i] < 0)
            throw Error(ErrorCode::ConfigError, "no text for class " + std::to_string(labels[i]));
        }
        const Tensor t = gather_rows(text.rows, rows);
        const std::string scope_name = scope == TextScope::Shared ? "shared" : "specific";
        for (int s = first_scale; s < kScales; ++s)
          for (int d = 0; d < domains; ++d)
            out.terms.push_back({"vt.m" + std::to_string(m + 1) + "." + scale_name(s) + "." +
                                     to_string(FeatureDomain(d)) + "." + scope_name,
                                 contrastive_loss(emb[m][s][d], t, logit_scale, &labels)});
      }
    }
  }
  if (opts.vision_vision)
    for (int s = first_scale; s < kScales; ++s)
      for (int d = 0; d < domains; ++d)
        out.terms.push_back({"vv." + scale_name(s) + "." + to_string(FeatureDomain(d)),
                             vv_cosine_loss(emb[0][s][d], emb[1][s][d])});
  for (int m = 0; m < 2; ++m)
    out.terms.push_back({"ce.m" + std::to_string(m + 1), cross_entropy(class_logits[m], labels)});

  if (opts.weighting == LossWeighting::PerTerm) {
    out.total = out.terms.front().value;
    for (std::size_t i = 1; i < out.terms.size(); ++i) out.total = add(out.total, out.terms[i].value);
    return out;
  }
  out.total = add(out.terms.end()[-2].value, out.terms.end()[-1].value);
  for (const char* family : {"vt.", "vv."}) {
    Tensor acc;
    int count = 0;
    for (const auto& t : out.terms)
      if (t.name.rfind(family, 0) == 0) {
        acc = count++ ? add(acc, t.value) : t.value;
      }
    if (count) out.total = add(out.total, scale(acc, 1.0f / float(count)));
  }
  return out;
}

}  // namespace rsmg
