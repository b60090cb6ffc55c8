#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rsmg/nn.hpp"

namespace rsmg {

inline constexpr int kVocabCapacity = 49152;
inline constexpr int kContextLen = 76;
inline constexpr const char* kEndOfWord = "</w>";

/// Byte-level BPE. Ids 0..255 are raw bytes, 256..511 are bytes closing a word
/// (suffix "</w>"), then one id per merge in rank order, then BOS and EOS.
class BpeVocab {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeVocab();  // byte-level only, no merges
  explicit BpeVocab(std::vector<Merge> merges);

  /// One "a b" pair per line, rank = line order. Blank lines and lines starting
  /// with '#' are skipped. Throws IoError or ConfigError.
  static BpeVocab load(const std::string& path);
  void save(const std::string& path) const;

  /// Lower-case, split on whitespace, merge by rank, wrap in BOS/EOS. Sequences
  /// longer than context_len are cut to context_len - 1 tokens plus EOS.
  std::vector<int> encode(const std::string& text) const;
  /// Inverse of encode up to lower-casing and whitespace normalisation.
  std::string decode(const std::vector<int>& ids) const;

  /// Symbols of one already lower-cased word after merging (used by tests).
  std::vector<std::string> merge_word(const std::string& word) const;

  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const { return tokens_.at(id); }
  int bos() const { return bos_; }
  int eos() const { return eos_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  int context_len() const { return kContextLen; }
  const std::vector<Merge>& merges() const { return merges_; }

 private:
  std::vector<Merge> merges_;
  std::unordered_map<std::string, int> rank_;  // key "a\nb"
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tokens_;
  int bos_ = 0;
  int eos_ = 0;
};

/// Learns up to `num_merges` merges from a corpus; each step merges the most
/// frequent adjacent pair (ties broken by the smaller pair) until no pair
/// occurs at least twice.
std::vector<BpeVocab::Merge> train_bpe(const std::vector<std::string>& corpus, int num_merges);

// ---- class texts ----------------------------------------------------------------

enum class TextScope { Shared, M1, M2 };
enum class TextMode { None, Shared, Specific, SharedSpecific };

const char* to_string(TextMode mode);
/// "none", "shared", "specific", "shared+specific"; throws ConfigError.
TextMode parse_text_mode(const std::string& s);

struct TextCatalog {
  std::vector<std::string> classes;
  std::vector<std::string> shared;                 // per class
  std::vector<std::array<std::string, 2>> specific;  // per class, m1 then m2

  /// `class<TAB>scope<TAB>text` lines, scope in {shared, m1, m2}. Class order
  /// follows first appearance. Throws IoError or ConfigError.
  static TextCatalog load(const std::string& path);
  /// Every class needs all three non-empty texts (ConfigError).
  void validate() const;
  std::vector<std::string> all_texts() const;
};

struct ClassText {
  int cls = 0;
  TextScope scope = TextScope::Shared;
  std::string text;
};

std::vector<ClassText> build_class_texts(const TextCatalog& catalog, TextMode mode);

std::string default_merges_path();
std::string default_catalog_path();

// ---- transformer --------------------------------------------------------------

struct TteConfig {
  int vocab_size = 0;
  int width = 128;
  int heads = 4;
  int layers = 2;
  int d_emb = 128;
};

struct TteBlock {
  LayerNorm ln1, ln2;
  Linear wq, wk, wv, wo;  // wo zero at init
  Linear fc1, fc2;        // fc2 zero at init

  static TteBlock make(int width, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct TteParams {
  TteConfig cfg;
  Tensor token_emb;  // [vocab, width]
  Tensor pos_emb;    // [context_len, width]
  std::vector<TteBlock> blocks;
  LayerNorm ln_final;
  Linear proj;  // width -> d_emb, no bias

  static TteParams make(const TteConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Embeds token sequences (each with an EOS) as unit rows [K, d_emb], pooled at
/// each sequence's first EOS. Throws ContextOverflow past context_len and
/// InvalidArg for empty sequences, missing EOS or out-of-range ids.
Tensor tte_forward(const std::vector<std::vector<int>>& ids, const TteParams& params, int eos_id);
Tensor tte_forward(const std::vector<int>& ids, const TteParams& params, int eos_id);

}  // namespace rsmg
