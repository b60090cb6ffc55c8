#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "checks.hpp"
#include "rsmg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rsmg;

namespace {

// A model directory holds model.json itself or one run_<i> subdirectory per run.
std::vector<std::string> model_dirs(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "model.json")) return {dir};
  std::vector<std::string> out;
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory() && fs::exists(e.path() / "model.json")) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorCode::IoError, "no model.json under " + dir);
  return out;
}

std::optional<Tensor> load_aux(const std::string& path, const SceneCube& scene) {
  if (path.empty()) return std::nullopt;
  return load_diffusion_features(path, std::make_pair(scene.height(), scene.width()));
}

int run_synth(const std::string& out, std::uint64_t seed, const std::string& shift, int height, int width, int bands) {
  SynthSpec spec = SynthSpec::desk();
  if (height > 0) spec.height = height;
  if (width > 0) spec.width = width;
  if (bands > 0) spec.bands = bands;
  const ShiftSpec s = ShiftSpec::parse(shift);
  const auto [source, target] = synth_dataset(spec, s, seed);
  fs::create_directories(out);
  write_scene((fs::path(out) / "source.rsmg").string(), source);
  write_scene((fs::path(out) / "target.rsmg").string(), target);
  std::cout << "wrote " << spec.height << "x" << spec.width << " scenes to " << out << " (shift " << s.format()
            << ")\n";
  return 0;
}

int run_train(RunConfig cfg, const std::string& out) {
  cfg.validate();
  const int runs = cfg.runs;
  for (int r = 0; r < runs; ++r) {
    RunConfig run = cfg;
    run.seed = cfg.seed + static_cast<std::uint64_t>(r);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res = train(run);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string dir = runs == 1 ? out : (fs::path(out) / ("run_" + std::to_string(r))).string();
    save_model(dir, res.model);
    std::cout << "run " << r << " seed " << run.seed << ": " << res.loss_trace.size() << " steps, loss "
              << res.loss_trace.front() << " -> " << res.loss_trace.back() << ", " << secs << " s -> " << dir << "\n";
  }
  return 0;
}

int run_eval(const std::string& model_dir, const std::string& target_path, const std::string& report,
             const std::string& aux_path) {
  const SceneCube target = read_scene(target_path, Domain::Target);
  const auto aux = load_aux(aux_path, target);
  std::vector<Metrics> runs;
  for (const auto& dir : model_dirs(model_dir)) {
    const Model model = load_model(dir);
    runs.push_back(evaluate(model, target, aux ? &*aux : nullptr));
    std::cout << dir << ": oa " << runs.back().oa << " aa " << runs.back().aa << " kappa " << runs.back().kappa << "\n";
  }
  const auto summary = aggregate(runs);
  std::cout << format_report(summary);
  if (!report.empty()) write_report(report, summary);
  return 0;
}

int run_predict(const std::string& model_dir, const std::string& scene_path, const std::string& map,
                const std::string& aux_path) {
  const SceneCube scene = read_scene(scene_path, Domain::Target);
  const auto aux = load_aux(aux_path, scene);
  const Model model = load_model(model_dirs(model_dir).front());
  const auto preds = predict_scene(model, scene, aux ? &*aux : nullptr);
  write_classification_map(map, preds, scene.height(), scene.width());
  std::cout << "wrote " << scene.width() << "x" << scene.height() << " map to " << map << "\n";
  return 0;
}

int run_selftest(const std::string& workdir) {
  bool all = true;
  for (const auto& check : checks::quick_checks(workdir)) {
    checks::Outcome outcome;
    try {
      outcome = check.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    all = all && outcome.ok;
    std::cout << (outcome.ok ? "PASS" : "FAIL") << "  " << check.name << ": " << outcome.detail << "\n";
  }
  return all ? 0 : 1;
}

int run_bpe_train(const std::string& catalog_path, int merges, const std::string& out) {
  const TextCatalog catalog = TextCatalog::load(catalog_path);
  const BpeVocab vocab(train_bpe(catalog.all_texts(), merges));
  vocab.save(out);
  std::cout << "wrote " << vocab.merges().size() << " merges to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Two-modality scene generalisation: synthesis, training, evaluation"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic source/target scene pair");
  std::string synth_out, shift = "standard";
  std::uint64_t synth_seed = 0;
  int height = 0, width = 0, bands = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--shift", shift, "identity, standard or key=value list (gain, offset, morph, noise, seed)");
  synth->add_option("--height", height, "scene height (default: desk size)");
  synth->add_option("--width", width, "scene width (default: desk size)");
  synth->add_option("--bands", bands, "modality-1 bands");

  auto* tr = app.add_subcommand("train", "train one model per run on a source scene");
  std::string config_path, preset = "desk", train_out, source, train_aux;
  std::vector<std::string> settings;
  int level = 0, runs = 0;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> sampling;
  tr->add_option("--config", config_path, "key = value config file");
  tr->add_option("--preset", preset, "base preset: desk or full");
  tr->add_option("--source", source, "source scene (overrides the config)");
  tr->add_option("--diffusion", train_aux, "diffusion features of the source scene");
  tr->add_option("--out", train_out, "model directory")->required();
  tr->add_option("--level", level, "ablation rung 1..5");
  tr->add_option("--runs", runs, "number of runs (seeds seed, seed+1, ...)");
  tr->add_option("--seed", train_seed, "base seed");
  tr->add_option("--sampling", sampling, "stratified or uniform");
  tr->add_option("--set", settings, "extra key=value settings");

  auto* ev = app.add_subcommand("eval", "evaluate every run of a model on a scene");
  std::string eval_model, eval_target, report, eval_aux;
  ev->add_option("--model", eval_model, "model directory")->required();
  ev->add_option("--target", eval_target, "scene to evaluate")->required();
  ev->add_option("--report", report, "metric<TAB>mean<TAB>std report file");
  ev->add_option("--diffusion", eval_aux, "diffusion features of the scene");

  auto* pr = app.add_subcommand("predict", "write a classification map of a scene");
  std::string pred_model, pred_scene, map, pred_aux;
  pr->add_option("--model", pred_model, "model directory (the first run is used)")->required();
  pr->add_option("--scene", pred_scene, "scene file")->required();
  pr->add_option("--map", map, "output P6 image")->required();
  pr->add_option("--diffusion", pred_aux, "diffusion features of the scene");

  auto* st = app.add_subcommand("selftest", "run the wavelet, gradient, metric and IO checks");
  std::string workdir = (fs::temp_directory_path() / "rsmg_selftest").string();
  st->add_option("--workdir", workdir, "scratch directory");

  auto* bpe = app.add_subcommand("bpe-train", "learn BPE merges from a class-text catalog");
  std::string catalog = default_catalog_path(), merges_out;
  int merges = 200;
  bpe->add_option("--catalog", catalog, "class<TAB>scope<TAB>text file");
  bpe->add_option("--merges", merges, "maximum number of merges");
  bpe->add_option("--out", merges_out, "merges file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(synth_out, synth_seed, shift, height, width, bands);
    if (*tr) {
      RunConfig cfg = preset_config(preset);
      if (!config_path.empty()) cfg = load_config(config_path, cfg);
      if (!source.empty()) cfg.source = source;
      if (!train_aux.empty()) cfg.source_diffusion = train_aux;
      if (level) apply_net_level(cfg, level);
      if (runs) cfg.runs = runs;
      if (train_seed) cfg.seed = *train_seed;
      if (sampling) apply_setting(cfg, "sampling", *sampling);
      for (const auto& s : settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "--set expects key=value, got '" + s + "'");
        apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
      }
      if (cfg.source.empty()) throw Error(ErrorCode::ConfigError, "no source scene given");
      return run_train(cfg, train_out);
    }
    if (*ev) return run_eval(eval_model, eval_target, report, eval_aux);
    if (*pr) return run_predict(pred_model, pred_scene, map, pred_aux);
    if (*st) return run_selftest(workdir);
    if (*bpe) return run_bpe_train(catalog, merges, merges_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
