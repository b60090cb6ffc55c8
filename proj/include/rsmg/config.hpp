#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsmg/msffa.hpp"

namespace rsmg {

enum class Sampling { Stratified, Uniform };
enum class ClassifierInput { Scale1, Scale2, Concat };

const char* to_string(Sampling s);
const char* to_string(ClassifierInput c);

struct RunConfig {
  float lr = 1e-3f;
  int batch = 128;
  int patch = 11;
  int epochs = 20;
  float weight_decay = 1e-4f;
  float alpha = 0.5f;  // MWDis resampling variance
  std::uint64_t seed = 0;
  float train_fraction = 0.10f;
  TextMode text_mode = TextMode::SharedSpecific;

  bool dtaug = true;
  bool mwdis = true;
  bool sfie = true;
  bool msffa = true;

  // per-term alignment toggles inside MSFFA
  bool align_vision_text = true;
  bool align_vision_vision = true;
  bool align_frequency = true;
  bool align_multiscale = true;
  LossWeighting loss_weighting = LossWeighting::PerFamily;

  std::string source;
  std::string target;
  std::string source_diffusion;  // optional RSMGA1 file for the source scene

  int c_model = 64;
  int heads = 4;
  int d_emb = 128;
  int pca_k = 30;
  int text_width = 128;
  int text_layers = 2;
  int eval_batch = 256;
  int runs = 10;
  Sampling sampling = Sampling::Stratified;
  ClassifierInput classifier_input = ClassifierInput::Scale2;

  /// Throws ConfigError.
  void validate() const;
};

/// "full" keeps the published sizes; "desk" shrinks widths for CPU runs.
RunConfig preset_config(const std::string& name);

/// Turns the four module flags into rung 1..5 of the ablation ladder.
void apply_net_level(RunConfig& cfg, int level);
int net_level(const RunConfig& cfg);

/// Sets one `key = value` field; unknown keys and malformed values throw ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// `key = value` lines on top of `base`. A `preset` key, if present, must come
/// first. Blank lines and '#' comments are ignored.
RunConfig load_config(const std::string& path, RunConfig base = {});
RunConfig parse_config(const std::string& text, RunConfig base = {});
std::string format_config(const RunConfig& cfg);

}  // namespace rsmg
