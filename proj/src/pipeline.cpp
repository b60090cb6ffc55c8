#include "rsmg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"
#include "rsmg/io.hpp"
#include "rsmg/optim.hpp"

namespace rsmg {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t x = seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xc2b2ae3d27d4eb4fULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum Stream : std::uint64_t { kInit = 1, kSample = 2, kShuffle = 3, kAugment = 4, kRho = 5 };

std::vector<float> channel_spread(const Tensor& cube) {
  const int c = cube.dim(0);
  const std::int64_t hw = std::int64_t(cube.dim(1)) * cube.dim(2);
  std::vector<float> out(c);
  for (int i = 0; i < c; ++i) {
    double s = 0.0, sq = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) s += cube.data()[i * hw + p];
    const double mean = s / double(hw);
    for (std::int64_t p = 0; p < hw; ++p) sq += (cube.data()[i * hw + p] - mean) * (cube.data()[i * hw + p] - mean);
    const double sd = std::sqrt(sq / double(hw));
    out[i] = static_cast<float>(sd > 1e-12 ? sd : 1.0);
  }
  return out;
}

std::vector<float> channel_means(const Tensor& cube) {
  const int c = cube.dim(0);
  const std::int64_t hw = std::int64_t(cube.dim(1)) * cube.dim(2);
  std::vector<float> out(c);
  for (int i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) s += cube.data()[i * hw + p];
    out[i] = static_cast<float>(s / double(hw));
  }
  return out;
}

/// (x - shift) / spread per channel, in place.
void normalize_channels(Tensor& cube, const std::vector<float>& shift, const std::vector<float>& spread) {
  const std::int64_t hw = std::int64_t(cube.dim(1)) * cube.dim(2);
  for (int i = 0; i < cube.dim(0); ++i) {
    const float s = shift.empty() ? 0.0f : shift[i];
    for (std::int64_t p = 0; p < hw; ++p) cube.data()[i * hw + p] = (cube.data()[i * hw + p] - s) / spread[i];
  }
}

Tensor pad_patch(const Tensor& x) { return x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0 ? x : pad_to_even(x); }

Tensor classifier_input(const ModalityEmbeddings& e, ClassifierInput which) {
  switch (which) {
    case ClassifierInput::Scale1: return e[0][0];
    case ClassifierInput::Scale2: return e[1][0];
    case ClassifierInput::Concat: return concat({e[0][0], e[1][0]}, 1);
  }
  return e[1][0];
}

int classifier_width(const RunConfig& cfg) {
  return cfg.classifier_input == ClassifierInput::Concat ? 2 * cfg.d_emb : cfg.d_emb;
}

}  // namespace

// ---- preprocessing -------------------------------------------------------------

Preprocessor Preprocessor::fit(const SceneCube& source, const RunConfig& cfg, const Tensor* diffusion) {
  source.validate();
  Preprocessor p;
  p.dtaug = cfg.dtaug;
  const Tensor* cubes[2] = {&source.hs, &source.lidar};
  for (int m = 0; m < 2; ++m) {
    if (cfg.dtaug) {
      p.pca[m] = pca_fit(*cubes[m], cfg.pca_k);
      p.spread[m] = channel_spread(pca_project(p.pca[m], *cubes[m]));
    } else {
      p.shift[m] = channel_means(*cubes[m]);
      p.spread[m] = channel_spread(*cubes[m]);
    }
  }
  if (cfg.dtaug && diffusion) {
    if (diffusion->rank() != 3 || diffusion->dim(1) != source.height() || diffusion->dim(2) != source.width())
      throw Error(ErrorCode::GridMismatch, "diffusion features do not match the source grid");
    p.has_diffusion = true;
    p.diffusion_pca = pca_fit(*diffusion, cfg.pca_k);
    p.diffusion_spread = channel_spread(pca_project(p.diffusion_pca, *diffusion));
  }
  return p;
}

std::pair<Tensor, Tensor> Preprocessor::apply(const SceneCube& scene, const Tensor* diffusion) const {
  scene.validate();
  const Tensor* cubes[2] = {&scene.hs, &scene.lidar};
  std::array<Tensor, 2> out;
  for (int m = 0; m < 2; ++m) {
    const int expected = dtaug ? pca[m].channels : static_cast<int>(spread[m].size());
    if (cubes[m]->dim(0) != expected)
      throw Error(ErrorCode::DataError, "modality " + std::to_string(m + 1) + " has " + std::to_string(cubes[m]->dim(0)) +
                                            " bands, model expects " + std::to_string(expected));
    if (!dtaug) {
      out[m] = cubes[m]->detach();
      normalize_channels(out[m], shift[m], spread[m]);
      continue;
    }
    Tensor reduced = pca_project(pca[m], *cubes[m], true);
    normalize_channels(reduced, {}, spread[m]);
    Tensor extra;
    if (m == 0 && has_diffusion) {
      if (!diffusion) throw Error(ErrorCode::DataError, "model expects diffusion features for this scene");
      if (diffusion->dim(1) != scene.height() || diffusion->dim(2) != scene.width())
        throw Error(ErrorCode::GridMismatch, "diffusion features do not match the scene grid");
      extra = pca_project(diffusion_pca, *diffusion, true);
      normalize_channels(extra, {}, diffusion_spread);
    }
    out[m] = concat_diffusion(reduced, extra);
  }
  return {out[0], out[1]};
}

int Preprocessor::channels(int modality) const {
  if (!dtaug) return static_cast<int>(spread[modality].size());
  const int k = pca[modality].k;
  return modality == 0 && has_diffusion ? k + diffusion_pca.k : 2 * k;
}

// ---- model ---------------------------------------------------------------------

Model Model::init(const RunConfig& cfg, int c1, int c2, int num_classes, const Preprocessor& prep) {
  cfg.validate();
  Model model;
  model.cfg = cfg;
  model.num_classes = num_classes;
  model.prep = prep;
  Rng rng(mix_seed(cfg.seed, kInit));
  model.mwdis = MwdisParams::make(c1, c2, rng);
  const int cin[2] = {c1, c2};
  for (int m = 0; m < 2; ++m) {
    EncoderConfig ec;
    ec.c_in = cin[m];
    ec.c_model = cfg.c_model;
    ec.heads_spatial = cfg.heads;
    ec.patch = cfg.patch;
    ec.sfie = cfg.sfie;
    model.encoders[m] = SfieParams::make(ec, rng);
  }
  model.heads = ProjectionHeads::make(cfg.c_model, cfg.d_emb, rng);
  for (auto& c : model.classifiers) c = Linear::xavier(classifier_width(cfg), num_classes, rng);

  model.vocab = BpeVocab::load(default_merges_path());
  const TextCatalog catalog = TextCatalog::load(default_catalog_path());
  if (static_cast<int>(catalog.classes.size()) != num_classes)
    throw Error(ErrorCode::ConfigError, "class text catalog lists " + std::to_string(catalog.classes.size()) +
                                            " classes, scene has " + std::to_string(num_classes));
  model.texts = build_class_texts(catalog, cfg.text_mode);
  for (const auto& t : model.texts) model.text_ids.push_back(model.vocab.encode(t.text));
  TteConfig tc;
  tc.vocab_size = model.vocab.size();
  tc.width = cfg.text_width;
  tc.layers = cfg.text_layers;
  tc.heads = 4;
  tc.d_emb = cfg.d_emb;
  model.text = TteParams::make(tc, rng);
  model.logit_scale = LogitScale::make();
  return model;
}

void Model::collect(ParamList& out) const {
  if (cfg.mwdis) mwdis.collect("mwdis", out);
  encoders[0].collect("enc1", out);
  encoders[1].collect("enc2", out);
  heads.collect("heads", out);
  classifiers[0].collect("cls1", out);
  classifiers[1].collect("cls2", out);
  if (cfg.msffa && !texts.empty()) {
    text.collect("text", out);
    logit_scale.collect("logit", out);
  }
}

void Model::collect_all(ParamList& out) const {
  mwdis.collect("mwdis", out);
  encoders[0].collect("enc1", out);
  encoders[1].collect("enc2", out);
  heads.collect("heads", out);
  classifiers[0].collect("cls1", out);
  classifiers[1].collect("cls2", out);
  text.collect("text", out);
  logit_scale.collect("logit", out);
}

ForwardOut forward(const Model& model, const Tensor& m1, const Tensor& m2, bool training, std::uint64_t rho_seed) {
  Tensor x1 = m1, x2 = m2;
  if (model.cfg.mwdis) {
    MwdisOptions opts;
    opts.resample = training;
    std::tie(x1, x2) = mwdis_forward(pad_patch(m1), pad_patch(m2), {model.cfg.alpha, rho_seed}, model.mwdis, opts);
  }
  ForwardOut out;
  const Tensor* inputs[2] = {&x1, &x2};
  for (int m = 0; m < 2; ++m) {
    ModalityEmbeddings raw;
    out.emb[m] = project_multiscale(sfie_forward(*inputs[m], model.encoders[m]), model.heads, &raw);
    out.logits[m] = model.classifiers[m](classifier_input(raw, model.cfg.classifier_input));
  }
  return out;
}

TextEmbeddings embed_texts(const Model& model) {
  TextEmbeddings t;
  t.texts = model.texts;
  if (!model.texts.empty()) t.rows = tte_forward(model.text_ids, model.text, model.vocab.eos());
  return t;
}

// ---- training ------------------------------------------------------------------

std::vector<std::pair<int, int>> sample_training_pixels(const SceneCube& scene, float fraction, Sampling sampling,
                                                        std::uint64_t seed) {
  if (!(fraction > 0.0f && fraction <= 1.0f)) throw Error(ErrorCode::ConfigError, "train_fraction must lie in (0, 1]");
  const auto centers = labeled_centers(scene);
  if (centers.empty()) throw Error(ErrorCode::DataError, "source scene has no labelled pixels");
  std::mt19937_64 rng(seed);
  std::vector<std::pair<int, int>> picked;
  auto take = [&](std::vector<std::pair<int, int>> pool) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(fraction) * pool.size())));
    picked.insert(picked.end(), pool.begin(), pool.begin() + std::min(n, pool.size()));
  };
  if (sampling == Sampling::Uniform) {
    take(centers);
  } else {
    std::vector<std::vector<std::pair<int, int>>> by_class(scene.num_classes);
    for (const auto& c : centers) by_class[scene.labels[std::size_t(c.first) * scene.width() + c.second]].push_back(c);
    for (auto& pool : by_class)
      if (!pool.empty()) take(std::move(pool));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

TrainResult train(const RunConfig& cfg, const StepCallback& on_step) {
  if (cfg.source.empty()) throw Error(ErrorCode::ConfigError, "no source scene configured");
  const SceneCube source = read_scene(cfg.source, Domain::Source);
  if (cfg.source_diffusion.empty()) return train(cfg, source, nullptr, on_step);
  const Tensor diffusion = load_diffusion_features(cfg.source_diffusion, std::make_pair(source.height(), source.width()));
  return train(cfg, source, &diffusion, on_step);
}

TrainResult train(const RunConfig& cfg, const SceneCube& source, const Tensor* diffusion, const StepCallback& on_step) {
  cfg.validate();
  if (source.domain != Domain::Source) throw Error(ErrorCode::DataError, "training accepts source-domain scenes only");
  const Preprocessor prep = Preprocessor::fit(source, cfg, diffusion);
  const auto [in1, in2] = prep.apply(source, diffusion);
  TrainResult result;
  result.model = Model::init(cfg, in1.dim(0), in2.dim(0), source.num_classes, prep);
  Model& model = result.model;

  auto centers = sample_training_pixels(source, cfg.train_fraction, cfg.sampling, mix_seed(cfg.seed, kSample));
  result.train_pixels = static_cast<int>(centers.size());
  const int n = result.train_pixels;
  result.steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const long total_steps = long(result.steps_per_epoch) * cfg.epochs;

  ParamList params;
  model.collect(params);
  AdamState adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;

  MsffaOptions loss_opts;
  loss_opts.text_mode = cfg.text_mode;
  loss_opts.vision_text = cfg.msffa && cfg.align_vision_text;
  loss_opts.vision_vision = cfg.msffa && cfg.align_vision_vision;
  loss_opts.frequency = cfg.align_frequency;
  loss_opts.multiscale = cfg.align_multiscale;
  loss_opts.weighting = cfg.loss_weighting;

  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, kShuffle));
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(centers.begin(), centers.end(), shuffle_rng);
    for (int start = 0; start < n; start += cfg.batch) {
      const std::vector<std::pair<int, int>> chunk(centers.begin() + start,
                                                   centers.begin() + std::min(n, start + cfg.batch));
      PatchBatch batch = make_batch(in1, in2, source.labels, source.width(), chunk, cfg.patch);
      if (cfg.dtaug) batch = augment(batch, mix_seed(cfg.seed, kAugment, step), AugmentConfig{});

      for (auto& p : params) p.tensor.zero_grad();
      Tape tape;
      Tape::Scope scope(tape);
      const ForwardOut out = forward(model, batch.m1, batch.m2, true, mix_seed(cfg.seed, kRho, step));
      const TextEmbeddings text = cfg.msffa ? embed_texts(model) : TextEmbeddings{};
      const LossBreakdown loss = total_loss(out.emb, text, out.logits, batch.labels, model.logit_scale, loss_opts);
      tape.backward(loss.total);
      adam.lr = cosine_lr(step, total_steps, cfg.lr);
      adam_step(adam, params);
      model.logit_scale.clamp();
      result.loss_trace.push_back(loss.total.item());
      if (on_step) on_step(epoch, static_cast<int>(step), loss);
      ++step;
    }
  }
  return result;
}

// ---- inference -----------------------------------------------------------------

std::vector<int> predict_pixels(const Model& model, const SceneCube& scene,
                                const std::vector<std::pair<int, int>>& centers, const Tensor* diffusion) {
  const auto [in1, in2] = model.prep.apply(scene, diffusion);
  std::vector<int> preds;
  preds.reserve(centers.size());
  const int bs = model.cfg.eval_batch;
  for (std::size_t start = 0; start < centers.size(); start += bs) {
    const std::vector<std::pair<int, int>> chunk(centers.begin() + start,
                                                 centers.begin() + std::min(centers.size(), start + bs));
    const PatchBatch batch = make_batch(in1, in2, {}, scene.width(), chunk, model.cfg.patch);
    const ForwardOut out = forward(model, batch.m1, batch.m2, false);
    const auto ids = predict_max_score(out.logits[0], out.logits[1]);
    preds.insert(preds.end(), ids.begin(), ids.end());
  }
  return preds;
}

std::vector<int> predict_scene(const Model& model, const SceneCube& scene, const Tensor* diffusion) {
  std::vector<std::pair<int, int>> centers;
  for (int r = 0; r < scene.height(); ++r)
    for (int c = 0; c < scene.width(); ++c) centers.emplace_back(r, c);
  return predict_pixels(model, scene, centers, diffusion);
}

Metrics evaluate(const Model& model, const SceneCube& scene, const Tensor* diffusion) {
  const auto centers = labeled_centers(scene);
  if (centers.empty()) throw Error(ErrorCode::EmptyEvalSet, "scene has no labelled pixels");
  const auto preds = predict_pixels(model, scene, centers, diffusion);
  std::vector<int> truth;
  truth.reserve(centers.size());
  for (const auto& [r, c] : centers) truth.push_back(scene.labels[std::size_t(r) * scene.width() + c]);
  return compute_metrics(truth, preds, model.num_classes);
}

// ---- persistence ---------------------------------------------------------------

namespace {

using nlohmann::json;

json basis_to_json(const PcaBasis& b) {
  return {{"mean", b.mean},         {"components", b.components}, {"explained_ratio", b.explained_ratio},
          {"channels", b.channels}, {"k", b.k},                   {"degenerate", b.degenerate}};
}

PcaBasis basis_from_json(const json& j) {
  PcaBasis b;
  b.mean = j.at("mean").get<std::vector<double>>();
  b.components = j.at("components").get<std::vector<double>>();
  b.explained_ratio = j.at("explained_ratio").get<std::vector<double>>();
  b.channels = j.at("channels").get<int>();
  b.k = j.at("k").get<int>();
  b.degenerate = j.at("degenerate").get<bool>();
  return b;
}

}  // namespace

void save_model(const std::string& dir, const Model& model) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir + ": " + ec.message());
  json j;
  j["format"] = "rsmg-model 1";
  j["config"] = format_config(model.cfg);
  j["num_classes"] = model.num_classes;
  const Preprocessor& p = model.prep;
  json prep{{"dtaug", p.dtaug}, {"has_diffusion", p.has_diffusion}};
  for (int m = 0; m < 2; ++m) {
    const std::string key = "m" + std::to_string(m + 1);
    prep[key] = {{"shift", p.shift[m]}, {"spread", p.spread[m]}};
    if (p.dtaug) prep[key]["pca"] = basis_to_json(p.pca[m]);
  }
  if (p.has_diffusion) prep["diffusion"] = {{"pca", basis_to_json(p.diffusion_pca)}, {"spread", p.diffusion_spread}};
  j["preprocess"] = prep;
  ParamList params;
  model.collect_all(params);
  json tensors = json::object();
  for (const auto& np : params) tensors[np.name] = {{"shape", np.tensor.shape()}, {"data", np.tensor.values()}};
  j["params"] = tensors;
  auto out = open_for_write((std::filesystem::path(dir) / "model.json").string());
  out << j.dump();
  if (!out) throw Error(ErrorCode::IoError, "failed writing model to " + dir);
}

Model load_model(const std::string& dir) {
  const auto bytes = read_all((std::filesystem::path(dir) / "model.json").string());
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("model.json: ") + e.what());
  }
  try {
    if (j.at("format") != "rsmg-model 1") throw Error(ErrorCode::ConfigError, "unsupported model format");
    const RunConfig cfg = parse_config(j.at("config").get<std::string>());
    Preprocessor p;
    const json& prep = j.at("preprocess");
    p.dtaug = prep.at("dtaug").get<bool>();
    p.has_diffusion = prep.at("has_diffusion").get<bool>();
    for (int m = 0; m < 2; ++m) {
      const json& mj = prep.at("m" + std::to_string(m + 1));
      p.shift[m] = mj.at("shift").get<std::vector<float>>();
      p.spread[m] = mj.at("spread").get<std::vector<float>>();
      if (p.dtaug) p.pca[m] = basis_from_json(mj.at("pca"));
    }
    if (p.has_diffusion) {
      p.diffusion_pca = basis_from_json(prep.at("diffusion").at("pca"));
      p.diffusion_spread = prep.at("diffusion").at("spread").get<std::vector<float>>();
    }
    Model model = Model::init(cfg, p.channels(0), p.channels(1), j.at("num_classes").get<int>(), p);
    ParamList params;
    model.collect_all(params);
    const json& tensors = j.at("params");
    if (tensors.size() != params.size()) throw Error(ErrorCode::ConfigError, "model parameter count mismatch");
    for (auto& np : params) {
      const json& t = tensors.at(np.name);
      if (t.at("shape").get<Shape>() != np.tensor.shape())
        throw Error(ErrorCode::ConfigError, "parameter " + np.name + " has the wrong shape");
      const auto data = t.at("data").get<std::vector<float>>();
      if (static_cast<std::int64_t>(data.size()) != np.tensor.numel())
        throw Error(ErrorCode::ConfigError, "parameter " + np.name + " has the wrong size");
      std::copy(data.begin(), data.end(), np.tensor.data().begin());
    }
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("model.json: ") + e.what());
  }
}

}  // namespace rsmg
