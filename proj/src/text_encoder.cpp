#include "rsmg/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "rsmg/io.hpp"

namespace rsmg {

namespace {

std::string pair_key(const std::string& a, const std::string& b) { return a + '\n' + b; }

std::string lower_ascii(std::string s) {
  for (auto& ch : s) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 128) ch = static_cast<char>(std::tolower(u));
  }
  return s;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<std::string> initial_symbols(const std::string& word) {
  std::vector<std::string> syms;
  for (char ch : word) syms.emplace_back(1, ch);
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

void apply_merge(std::vector<std::string>& syms, const std::string& a, const std::string& b) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (std::size_t i = 0; i < syms.size(); ++i) {
    if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(syms[i]);
    }
  }
  syms = std::move(out);
}

}  // namespace

BpeVocab::BpeVocab() : BpeVocab(std::vector<Merge>{}) {}

BpeVocab::BpeVocab(std::vector<Merge> merges) : merges_(std::move(merges)) {
  auto add = [&](std::string tok) {
    if (ids_.count(tok)) throw Error(ErrorCode::ConfigError, "duplicate BPE token '" + tok + "'");
    ids_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(tok));
  };
  for (int b = 0; b < 256; ++b) add(std::string(1, static_cast<char>(b)));
  for (int b = 0; b < 256; ++b) add(std::string(1, static_cast<char>(b)) + kEndOfWord);
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [a, b] = merges_[r];
    if (!ids_.count(a) || !ids_.count(b))
      throw Error(ErrorCode::ConfigError, "merge " + std::to_string(r) + " uses an unknown token");
    rank_.emplace(pair_key(a, b), static_cast<int>(r));
    add(a + b);
  }
  bos_ = static_cast<int>(tokens_.size());
  tokens_.push_back("<bos>");
  eos_ = static_cast<int>(tokens_.size());
  tokens_.push_back("<eos>");
  if (size() > kVocabCapacity) throw Error(ErrorCode::ConfigError, "vocabulary exceeds capacity");
}

BpeVocab BpeVocab::load(const std::string& path) {
  auto in = open_for_read(path);
  std::vector<Merge> merges;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Merge m;
    std::string extra;
    if (!(ls >> m.first >> m.second) || (ls >> extra))
      throw Error(ErrorCode::ConfigError, "malformed merge line '" + line + "' in " + path);
    merges.push_back(std::move(m));
  }
  return BpeVocab(std::move(merges));
}

void BpeVocab::save(const std::string& path) const {
  auto out = open_for_write(path);
  out << "#version: rsmg-bpe 1\n";
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
}

std::vector<std::string> BpeVocab::merge_word(const std::string& word) const {
  auto syms = initial_symbols(word);
  while (syms.size() > 1) {
    int best = std::numeric_limits<int>::max();
    std::size_t at = 0;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto it = rank_.find(pair_key(syms[i], syms[i + 1]));
      if (it != rank_.end() && it->second < best) {
        best = it->second;
        at = i;
      }
    }
    if (best == std::numeric_limits<int>::max()) break;
    const std::string a = syms[at], b = syms[at + 1];
    apply_merge(syms, a, b);
  }
  return syms;
}

std::vector<int> BpeVocab::encode(const std::string& text) const {
  std::vector<int> ids{bos_};
  for (const auto& word : split_words(lower_ascii(text)))
    for (const auto& sym : merge_word(word)) ids.push_back(ids_.at(sym));
  if (static_cast<int>(ids.size()) + 1 > kContextLen) ids.resize(kContextLen - 1);
  ids.push_back(eos_);
  return ids;
}

std::string BpeVocab::decode(const std::vector<int>& ids) const {
  std::string out;
  const std::string eow = kEndOfWord;
  for (int id : ids) {
    if (id == bos_ || id == eos_) continue;
    std::string tok = token_of(id);
    if (tok.size() >= eow.size() && tok.compare(tok.size() - eow.size(), eow.size(), eow) == 0) {
      tok.resize(tok.size() - eow.size());
      tok += ' ';
    }
    out += tok;
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

int BpeVocab::id_of(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw Error(ErrorCode::InvalidArg, "unknown token '" + token + "'");
  return it->second;
}

std::vector<BpeVocab::Merge> train_bpe(const std::vector<std::string>& corpus, int num_merges) {
  std::map<std::vector<std::string>, int> words;
  for (const auto& text : corpus)
    for (const auto& w : split_words(lower_ascii(text))) ++words[initial_symbols(w)];
  std::vector<std::pair<std::vector<std::string>, int>> state(words.begin(), words.end());

  std::vector<BpeVocab::Merge> merges;
  while (static_cast<int>(merges.size()) < num_merges) {
    std::map<BpeVocab::Merge, int> counts;
    for (const auto& [syms, freq] : state)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += freq;
    const BpeVocab::Merge* best = nullptr;
    int best_count = 1;
    for (const auto& [pair, count] : counts)
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    if (!best) break;
    const BpeVocab::Merge m = *best;
    merges.push_back(m);
    for (auto& entry : state) apply_merge(entry.first, m.first, m.second);
  }
  return merges;
}

// ---- class texts ----------------------------------------------------------------

const char* to_string(TextMode mode) {
  switch (mode) {
    case TextMode::None: return "none";
    case TextMode::Shared: return "shared";
    case TextMode::Specific: return "specific";
    case TextMode::SharedSpecific: return "shared+specific";
  }
  return "?";
}

TextMode parse_text_mode(const std::string& s) {
  for (auto m : {TextMode::None, TextMode::Shared, TextMode::Specific, TextMode::SharedSpecific})
    if (s == to_string(m)) return m;
  throw Error(ErrorCode::ConfigError, "unknown text mode '" + s + "'");
}

TextCatalog TextCatalog::load(const std::string& path) {
  auto in = open_for_read(path);
  TextCatalog cat;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw Error(ErrorCode::ConfigError, path + ":" + std::to_string(lineno) + ": expected class<TAB>scope<TAB>text");
    const std::string cls = line.substr(0, t1), scope = line.substr(t1 + 1, t2 - t1 - 1), text = line.substr(t2 + 1);
    auto it = std::find(cat.classes.begin(), cat.classes.end(), cls);
    if (it == cat.classes.end()) {
      cat.classes.push_back(cls);
      cat.shared.emplace_back();
      cat.specific.emplace_back();
      it = cat.classes.end() - 1;
    }
    const auto k = it - cat.classes.begin();
    if (scope == "shared") {
      cat.shared[k] = text;
    } else if (scope == "m1") {
      cat.specific[k][0] = text;
    } else if (scope == "m2") {
      cat.specific[k][1] = text;
    } else {
      throw Error(ErrorCode::ConfigError, path + ":" + std::to_string(lineno) + ": unknown scope '" + scope + "'");
    }
  }
  cat.validate();
  return cat;
}

void TextCatalog::validate() const {
  if (classes.empty()) throw Error(ErrorCode::ConfigError, "text catalog has no classes");
  for (std::size_t k = 0; k < classes.size(); ++k)
    if (shared[k].empty() || specific[k][0].empty() || specific[k][1].empty())
      throw Error(ErrorCode::ConfigError, "class '" + classes[k] + "' needs shared, m1 and m2 texts");
}

std::vector<std::string> TextCatalog::all_texts() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    out.push_back(shared[k]);
    out.push_back(specific[k][0]);
    out.push_back(specific[k][1]);
  }
  return out;
}

std::vector<ClassText> build_class_texts(const TextCatalog& catalog, TextMode mode) {
  std::vector<ClassText> out;
  const bool with_shared = mode == TextMode::Shared || mode == TextMode::SharedSpecific;
  const bool with_specific = mode == TextMode::Specific || mode == TextMode::SharedSpecific;
  for (int k = 0; k < static_cast<int>(catalog.classes.size()); ++k) {
    if (with_shared) out.push_back({k, TextScope::Shared, catalog.shared[k]});
    if (with_specific) {
      out.push_back({k, TextScope::M1, catalog.specific[k][0]});
      out.push_back({k, TextScope::M2, catalog.specific[k][1]});
    }
  }
  return out;
}

std::string default_merges_path() { return std::string(RSMG_ASSET_DIR) + "/bpe_merges.txt"; }
std::string default_catalog_path() { return std::string(RSMG_ASSET_DIR) + "/class_texts.tsv"; }

// ---- transformer --------------------------------------------------------------

TteBlock TteBlock::make(int width, Rng& rng) {
  TteBlock b;
  b.ln1 = LayerNorm::make(width);
  b.ln2 = LayerNorm::make(width);
  b.wq = Linear::xavier(width, width, rng);
  b.wk = Linear::xavier(width, width, rng, false);
  b.wv = Linear::xavier(width, width, rng);
  b.wo = Linear::zeros(width, width);
  b.fc1 = Linear::xavier(width, 2 * width, rng);
  b.fc2 = Linear::zeros(2 * width, width);
  return b;
}

void TteBlock::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  wo.collect(prefix + ".wo", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

TteParams TteParams::make(const TteConfig& cfg, Rng& rng) {
  if (cfg.vocab_size < 1 || cfg.width < 1 || cfg.width % cfg.heads != 0 || cfg.d_emb < 1)
    throw Error(ErrorCode::ConfigError, "invalid text encoder configuration");
  TteParams p;
  p.cfg = cfg;
  p.token_emb = param(normal({cfg.vocab_size, cfg.width}, 0.02f, rng));
  p.pos_emb = param(normal({kContextLen, cfg.width}, 0.01f, rng));
  for (int l = 0; l < cfg.layers; ++l) p.blocks.push_back(TteBlock::make(cfg.width, rng));
  p.ln_final = LayerNorm::make(cfg.width);
  p.proj = Linear::xavier(cfg.width, cfg.d_emb, rng, false);
  return p;
}

void TteParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".token_emb", token_emb});
  out.push_back({prefix + ".pos_emb", pos_emb});
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(prefix + ".block" + std::to_string(l), out);
  ln_final.collect(prefix + ".ln_final", out);
  proj.collect(prefix + ".proj", out);
}

Tensor tte_forward(const std::vector<std::vector<int>>& ids, const TteParams& params, int eos_id) {
  if (ids.empty()) throw Error(ErrorCode::InvalidArg, "no sequences to embed");
  const int k = static_cast<int>(ids.size());
  int t = 0;
  for (const auto& seq : ids) {
    if (seq.empty()) throw Error(ErrorCode::InvalidArg, "empty token sequence");
    if (static_cast<int>(seq.size()) > kContextLen)
      throw Error(ErrorCode::ContextOverflow,
                  std::to_string(seq.size()) + " tokens exceed the context of " + std::to_string(kContextLen));
    t = std::max(t, static_cast<int>(seq.size()));
  }
  const int width = params.cfg.width;
  // Right-pad with EOS; the causal mask keeps padding out of every pooled position.
  std::vector<int> flat(std::size_t(k) * t, eos_id), pool(k);
  for (int s = 0; s < k; ++s) {
    const auto eos_at = std::find(ids[s].begin(), ids[s].end(), eos_id);
    if (eos_at == ids[s].end()) throw Error(ErrorCode::InvalidArg, "token sequence without EOS");
    pool[s] = s * t + static_cast<int>(eos_at - ids[s].begin());
    for (std::size_t i = 0; i < ids[s].size(); ++i) {
      const int id = ids[s][i];
      if (id < 0 || id >= params.cfg.vocab_size) throw Error(ErrorCode::InvalidArg, "token id out of range");
      flat[std::size_t(s) * t + i] = id;
    }
  }
  std::vector<int> positions(std::size_t(k) * t);
  for (int s = 0; s < k; ++s)
    for (int i = 0; i < t; ++i) positions[std::size_t(s) * t + i] = i;

  Tensor x = reshape(add(gather_rows(params.token_emb, flat), gather_rows(params.pos_emb, positions)), {k, t, width});
  for (const auto& b : params.blocks) {
    const Tensor h = b.ln1(x);
    x = add(x, b.wo(multi_head_attention(b.wq(h), b.wk(h), b.wv(h), params.cfg.heads, true)));
    x = add(x, b.fc2(gelu(b.fc1(b.ln2(x)))));
  }
  const Tensor pooled = gather_rows(reshape(x, {k * t, width}), pool);
  return l2_normalize_rows(params.proj(params.ln_final(pooled)));
}

Tensor tte_forward(const std::vector<int>& ids, const TteParams& params, int eos_id) {
  return reshape(tte_forward(std::vector<std::vector<int>>{ids}, params, eos_id), {params.cfg.d_emb});
}

}  // namespace rsmg
