#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rsmg/gradcheck.hpp"
#include "rsmg/text_encoder.hpp"
#include "test_util.hpp"

using namespace rsmg;
using rsmg::test::max_abs_diff;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rsmg_test_" + name)).string();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

TteParams small_tte(int vocab, Rng& rng) {
  TteConfig cfg;
  cfg.vocab_size = vocab;
  cfg.width = 16;
  cfg.heads = 4;
  cfg.d_emb = 8;
  return TteParams::make(cfg, rng);
}

}  // namespace

TEST_CASE("bpe encode basics") {
  const BpeVocab vocab;
  CHECK(vocab.size() == 514);
  CHECK(vocab.encode("") == std::vector<int>{vocab.bos(), vocab.eos()});
  CHECK(vocab.encode("   \t\n ") == std::vector<int>{vocab.bos(), vocab.eos()});
  CHECK(vocab.encode("ROADS") == vocab.encode("roads"));
  CHECK(vocab.encode("Roads  are\tgray") == vocab.encode("roads are gray"));
  // byte-level fallback: 'a' then 'b' closing the word
  CHECK(vocab.encode("ab") == std::vector<int>{vocab.bos(), 'a', 256 + 'b', vocab.eos()});
}

TEST_CASE("bpe merge trace on a three-merge vocabulary") {
  const BpeVocab vocab({{"l", "o"}, {"lo", "w</w>"}, {"lo", "w"}});
  // low:   l o w</w> -> lo w</w> -> low</w>
  // lower: l o w e r</w> -> lo w e r</w> -> low e r</w>   ("lo w</w>" never applies)
  CHECK(vocab.merge_word("low") == std::vector<std::string>{"low</w>"});
  CHECK(vocab.merge_word("lower") == std::vector<std::string>{"low", "e", "r</w>"});
  const std::vector<int> expected{vocab.bos(), vocab.id_of("low</w>"), vocab.id_of("low"), 'e', 256 + 'r', vocab.eos()};
  CHECK(vocab.encode("low lower") == expected);
  CHECK(vocab.id_of("lo") == 512);
  CHECK(vocab.id_of("low") == 514);
  CHECK(vocab.bos() == 515);
  CHECK(vocab.decode(expected) == "low lower");
}

TEST_CASE("bpe training") {
  // pair counts: (l,o)=5, then (lo,w</w>)=3, then the tie (lo,w)=(w,e)=2 goes to the smaller pair
  const auto merges = train_bpe({"low low low lower lowest"}, 10);
  const std::vector<BpeVocab::Merge> expected{{"l", "o"}, {"lo", "w</w>"}, {"lo", "w"}, {"low", "e"}};
  CHECK(merges == expected);
  CHECK(train_bpe({"low low low lower lowest"}, 2).size() == 2);
}

TEST_CASE("bpe files") {
  const BpeVocab vocab(train_bpe({"roads are gray roads are flat", "trees are green"}, 20));
  const auto path = temp_path("merges.txt");
  vocab.save(path);
  const BpeVocab back = BpeVocab::load(path);
  CHECK(back.merges() == vocab.merges());
  CHECK(back.encode("roads are green") == vocab.encode("roads are green"));

  write_file(path, "a b c\n");
  CHECK_THROWS_WITH_AS(BpeVocab::load(path), doctest::Contains("ConfigError"), Error);
  write_file(path, "xy z\n");
  CHECK_THROWS_WITH_AS(BpeVocab::load(path), doctest::Contains("ConfigError"), Error);
  std::filesystem::remove(path);
  CHECK_THROWS_WITH_AS(BpeVocab::load(path), doctest::Contains("IoError"), Error);
}

TEST_CASE("bpe properties on the shipped assets") {
  const BpeVocab vocab = BpeVocab::load(default_merges_path());
  const TextCatalog cat = TextCatalog::load(default_catalog_path());
  CHECK(vocab.size() <= kVocabCapacity);
  CHECK(!vocab.merges().empty());
  for (const auto& text : cat.all_texts()) {
    const auto ids = vocab.encode(text);
    CHECK(static_cast<int>(ids.size()) <= kContextLen);
    std::string lowered = text;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
    CHECK(vocab.decode(ids) == lowered);
    CHECK(vocab.encode(vocab.decode(ids)) == ids);
  }
  SUBCASE("non-ASCII bytes round trip through byte tokens") {
    const std::string s = "caf\xc3\xa9 ro\xc3\xbcte";
    CHECK(vocab.decode(vocab.encode(s)) == s);
  }
  SUBCASE("truncation keeps EOS last") {
    std::string longer;
    for (int i = 0; i < 200; ++i) longer += "zq ";
    const auto ids = vocab.encode(longer);
    CHECK(ids.size() == std::size_t(kContextLen));
    CHECK(ids.back() == vocab.eos());
    CHECK(ids.front() == vocab.bos());
  }
}

TEST_CASE("text catalog") {
  const TextCatalog cat = TextCatalog::load(default_catalog_path());
  CHECK(cat.classes == std::vector<std::string>{"Trees", "Roads", "Buildings"});
  CHECK(cat.all_texts().size() == 9);
  for (const auto& t : cat.all_texts()) CHECK(!t.empty());
  CHECK(build_class_texts(cat, TextMode::None).empty());
  CHECK(build_class_texts(cat, TextMode::Shared).size() == 3);
  CHECK(build_class_texts(cat, TextMode::Specific).size() == 6);
  const auto all = build_class_texts(cat, TextMode::SharedSpecific);
  CHECK(all.size() == 9);
  CHECK(all[0].scope == TextScope::Shared);
  CHECK(all[2].scope == TextScope::M2);
  CHECK(all[8].cls == 2);
  CHECK(parse_text_mode("shared+specific") == TextMode::SharedSpecific);
  CHECK_THROWS_WITH_AS(parse_text_mode("both"), doctest::Contains("ConfigError"), Error);

  const auto path = temp_path("catalog.tsv");
  write_file(path, "Trees\tshared\tgreen\nTrees\tm1\tbright\n");
  CHECK_THROWS_WITH_AS(TextCatalog::load(path), doctest::Contains("ConfigError"), Error);
  write_file(path, "Trees\tshared\tgreen\nTrees\tm3\tbright\n");
  CHECK_THROWS_WITH_AS(TextCatalog::load(path), doctest::Contains("ConfigError"), Error);
  std::filesystem::remove(path);
}

TEST_CASE("tte_forward") {
  Rng rng(31);
  const BpeVocab vocab = BpeVocab::load(default_merges_path());
  TteConfig cfg;
  cfg.vocab_size = vocab.size();
  const TteParams params = TteParams::make(cfg, rng);
  const auto a = vocab.encode("roads look dark gray");
  const auto b = vocab.encode("trees stand tall");

  SUBCASE("unit norm") {
    for (const auto& ids : {a, b, vocab.encode("")}) {
      const Tensor e = tte_forward(ids, params, vocab.eos());
      CHECK(e.shape() == Shape{128});
      double n2 = 0.0;
      for (float v : e.data()) n2 += double(v) * v;
      CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  SUBCASE("tokens after EOS do not matter") {
    auto padded = a;
    padded.insert(padded.end(), {5, 77, 300});
    CHECK(max_abs_diff(tte_forward(a, params, vocab.eos()), tte_forward(padded, params, vocab.eos())) <= 1e-6);
  }
  SUBCASE("batch order does not change embeddings") {
    const Tensor ab = tte_forward({a, b}, params, vocab.eos());
    const Tensor ba = tte_forward({b, a}, params, vocab.eos());
    CHECK(max_abs_diff(slice(ab, 0, 0, 1), slice(ba, 0, 1, 1)) <= 1e-6);
    CHECK(max_abs_diff(slice(ab, 0, 1, 1), slice(ba, 0, 0, 1)) <= 1e-6);
    CHECK(max_abs_diff(reshape(slice(ab, 0, 0, 1), {128}), tte_forward(a, params, vocab.eos())) <= 1e-6);
  }
  SUBCASE("errors") {
    std::vector<int> too_long(kContextLen + 1, 'a');
    too_long.back() = vocab.eos();
    CHECK_THROWS_WITH_AS(tte_forward(too_long, params, vocab.eos()), doctest::Contains("ContextOverflow"), Error);
    CHECK_THROWS_WITH_AS(tte_forward(std::vector<int>{1, 2}, params, vocab.eos()), doctest::Contains("InvalidArg"),
                         Error);
  }
}

TEST_CASE("tte_forward gradient check") {
  Rng rng(32);
  TteParams params = small_tte(20, rng);
  ParamList named;
  params.collect("tte", named);
  std::uniform_real_distribution<float> dist(-0.3f, 0.3f);
  for (const auto& n : named) {
    Tensor t = n.tensor;
    if (std::all_of(t.data().begin(), t.data().end(), [](float v) { return v == 0.0f; }))
      for (auto& v : t.data()) v = dist(rng);
  }
  const std::vector<int> ids{18, 4, 19};
  Rng wrng(33);
  const Tensor w = rsmg::test::random_tensor({8}, wrng);
  std::vector<Tensor> wrt;
  for (const auto& n : named) wrt.push_back(n.tensor);
  const auto r = gradcheck([&] { return sum(mul(tte_forward(ids, params, 19), w)); }, wrt);
  INFO(r.rel_error << " " << r.worst);
  CHECK(r.ok);
}
