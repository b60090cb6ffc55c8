#include "rsmg/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "rsmg/io.hpp"

namespace rsmg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw Error(ErrorCode::ConfigError, key + ": not a number: '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true/false, got '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"lr", [](RunConfig& c, auto& k, auto& v) { c.lr = parse_number<float>(k, v); }},
      {"batch", [](RunConfig& c, auto& k, auto& v) { c.batch = parse_number<int>(k, v); }},
      {"patch", [](RunConfig& c, auto& k, auto& v) { c.patch = parse_number<int>(k, v); }},
      {"epochs", [](RunConfig& c, auto& k, auto& v) { c.epochs = parse_number<int>(k, v); }},
      {"weight_decay", [](RunConfig& c, auto& k, auto& v) { c.weight_decay = parse_number<float>(k, v); }},
      {"alpha", [](RunConfig& c, auto& k, auto& v) { c.alpha = parse_number<float>(k, v); }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"train_fraction", [](RunConfig& c, auto& k, auto& v) { c.train_fraction = parse_number<float>(k, v); }},
      {"text_mode", [](RunConfig& c, auto&, auto& v) { c.text_mode = parse_text_mode(v); }},
      {"dtaug", [](RunConfig& c, auto& k, auto& v) { c.dtaug = parse_bool(k, v); }},
      {"mwdis", [](RunConfig& c, auto& k, auto& v) { c.mwdis = parse_bool(k, v); }},
      {"sfie", [](RunConfig& c, auto& k, auto& v) { c.sfie = parse_bool(k, v); }},
      {"msffa", [](RunConfig& c, auto& k, auto& v) { c.msffa = parse_bool(k, v); }},
      {"align_vision_text", [](RunConfig& c, auto& k, auto& v) { c.align_vision_text = parse_bool(k, v); }},
      {"align_vision_vision", [](RunConfig& c, auto& k, auto& v) { c.align_vision_vision = parse_bool(k, v); }},
      {"align_frequency", [](RunConfig& c, auto& k, auto& v) { c.align_frequency = parse_bool(k, v); }},
      {"align_multiscale", [](RunConfig& c, auto& k, auto& v) { c.align_multiscale = parse_bool(k, v); }},
      {"net", [](RunConfig& c, auto& k, auto& v) { apply_net_level(c, parse_number<int>(k, v)); }},
      {"source", [](RunConfig& c, auto&, auto& v) { c.source = v; }},
      {"target", [](RunConfig& c, auto&, auto& v) { c.target = v; }},
      {"source_diffusion", [](RunConfig& c, auto&, auto& v) { c.source_diffusion = v; }},
      {"c_model", [](RunConfig& c, auto& k, auto& v) { c.c_model = parse_number<int>(k, v); }},
      {"heads", [](RunConfig& c, auto& k, auto& v) { c.heads = parse_number<int>(k, v); }},
      {"d_emb", [](RunConfig& c, auto& k, auto& v) { c.d_emb = parse_number<int>(k, v); }},
      {"pca_k", [](RunConfig& c, auto& k, auto& v) { c.pca_k = parse_number<int>(k, v); }},
      {"text_width", [](RunConfig& c, auto& k, auto& v) { c.text_width = parse_number<int>(k, v); }},
      {"text_layers", [](RunConfig& c, auto& k, auto& v) { c.text_layers = parse_number<int>(k, v); }},
      {"eval_batch", [](RunConfig& c, auto& k, auto& v) { c.eval_batch = parse_number<int>(k, v); }},
      {"runs", [](RunConfig& c, auto& k, auto& v) { c.runs = parse_number<int>(k, v); }},
      {"sampling",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "stratified") c.sampling = Sampling::Stratified;
         else if (v == "uniform") c.sampling = Sampling::Uniform;
         else throw Error(ErrorCode::ConfigError, k + ": expected stratified or uniform");
       }},
      {"loss_weighting",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "term") c.loss_weighting = LossWeighting::PerTerm;
         else if (v == "family") c.loss_weighting = LossWeighting::PerFamily;
         else throw Error(ErrorCode::ConfigError, k + ": expected term or family");
       }},
      {"classifier_input",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "scale1") c.classifier_input = ClassifierInput::Scale1;
         else if (v == "scale2") c.classifier_input = ClassifierInput::Scale2;
         else if (v == "concat") c.classifier_input = ClassifierInput::Concat;
         else throw Error(ErrorCode::ConfigError, k + ": expected scale1, scale2 or concat");
       }},
  };
  return table;
}

}  // namespace

const char* to_string(Sampling s) { return s == Sampling::Stratified ? "stratified" : "uniform"; }

const char* to_string(ClassifierInput c) {
  switch (c) {
    case ClassifierInput::Scale1: return "scale1";
    case ClassifierInput::Scale2: return "scale2";
    case ClassifierInput::Concat: return "concat";
  }
  return "?";
}

void RunConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::ConfigError, std::string(what) + " must be positive");
  };
  positive(lr > 0.0f, "lr");
  positive(batch > 0, "batch");
  positive(patch > 0, "patch");
  positive(epochs > 0, "epochs");
  positive(weight_decay >= 0.0f, "weight_decay");
  positive(c_model > 0 && heads > 0 && d_emb > 0 && pca_k > 0, "model sizes");
  positive(text_width > 0 && text_layers > 0 && eval_batch > 0 && runs > 0, "text sizes and counts");
  if (patch % 2 == 0) throw Error(ErrorCode::ConfigError, "patch must be odd");
  if (!(train_fraction > 0.0f && train_fraction <= 1.0f))
    throw Error(ErrorCode::ConfigError, "train_fraction must lie in (0, 1]");
  if (alpha < 0.0f || alpha > 1.0f) throw Error(ErrorCode::ConfigError, "alpha must lie in [0, 1]");
  if (text_width % 4 != 0) throw Error(ErrorCode::ConfigError, "text_width must be a multiple of 4");
}

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  if (name == "full") return cfg;
  if (name == "desk") {
    cfg.c_model = 16;
    cfg.heads = 4;
    cfg.d_emb = 32;
    cfg.pca_k = 8;
    cfg.text_width = 32;
    cfg.runs = 5;
    return cfg;
  }
  throw Error(ErrorCode::ConfigError, "unknown preset '" + name + "'");
}

void apply_net_level(RunConfig& cfg, int level) {
  if (level < 1 || level > 5) throw Error(ErrorCode::ConfigError, "net level must be 1..5");
  cfg.dtaug = level >= 2;
  cfg.mwdis = level >= 3;
  cfg.sfie = level >= 4;
  cfg.msffa = level >= 5;
}

int net_level(const RunConfig& cfg) {
  // flags outside the ladder report 0
  for (int level = 1; level <= 5; ++level) {
    RunConfig probe = cfg;
    apply_net_level(probe, level);
    if (probe.dtaug == cfg.dtaug && probe.mwdis == cfg.mwdis && probe.sfie == cfg.sfie && probe.msffa == cfg.msffa)
      return level;
  }
  return 0;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool seen_setting = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key == "preset") {
      if (seen_setting) throw Error(ErrorCode::ConfigError, "preset must precede other settings");
      base = preset_config(value);
      continue;
    }
    seen_setting = true;
    apply_setting(base, key, value);
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  const auto bytes = read_all(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), std::move(base));
}

std::string format_config(const RunConfig& c) {
  std::ostringstream out;
  out.precision(9);
  auto flag = [](bool b) { return b ? "true" : "false"; };
  out << "lr = " << c.lr << "\nbatch = " << c.batch << "\npatch = " << c.patch << "\nepochs = " << c.epochs
      << "\nweight_decay = " << c.weight_decay << "\nalpha = " << c.alpha << "\nseed = " << c.seed
      << "\ntrain_fraction = " << c.train_fraction << "\ntext_mode = " << to_string(c.text_mode)
      << "\ndtaug = " << flag(c.dtaug) << "\nmwdis = " << flag(c.mwdis) << "\nsfie = " << flag(c.sfie)
      << "\nmsffa = " << flag(c.msffa) << "\nalign_vision_text = " << flag(c.align_vision_text)
      << "\nalign_vision_vision = " << flag(c.align_vision_vision) << "\nalign_frequency = " << flag(c.align_frequency)
      << "\nalign_multiscale = " << flag(c.align_multiscale)
      << "\nloss_weighting = " << to_string(c.loss_weighting) << "\nc_model = " << c.c_model << "\nheads = " << c.heads
      << "\nd_emb = " << c.d_emb << "\npca_k = " << c.pca_k << "\ntext_width = " << c.text_width
      << "\ntext_layers = " << c.text_layers << "\neval_batch = " << c.eval_batch << "\nruns = " << c.runs
      << "\nsampling = " << to_string(c.sampling) << "\nclassifier_input = " << to_string(c.classifier_input) << "\n";
  if (!c.source.empty()) out << "source = " << c.source << "\n";
  if (!c.target.empty()) out << "target = " << c.target << "\n";
  if (!c.source_diffusion.empty()) out << "source_diffusion = " << c.source_diffusion << "\n";
  return out.str();
}

}  // namespace rsmg
