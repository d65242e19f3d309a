#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <map>

#include "faircop/encoding.hpp"
#include "faircop/vecmath.hpp"
#include "fixtures.hpp"
#include "json.hpp"

using namespace faircop;
using faircop::testing::small_corpus;
using faircop::testing::TempDir;

namespace {

Corpus tiny() {
  std::vector<ImageRecord> recs{{"a", {{"g", "m"}}, std::nullopt}, {"b", {{"g", "f"}}, "b.png"}};
  EmbeddingView v{"mix", 2, {1, 0, 0, 1}};
  return Corpus(recs, {v}, {{"g", {"f", "m"}}}, {"g"});
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Corpus, AccessorsAndLookup) {
  const auto c = tiny();
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.index_of("b"), 1u);
  EXPECT_FALSE(c.index_of("zz").has_value());
  EXPECT_THROW(c.require_index("zz"), CorpusError);
  EXPECT_TRUE(c.has_view("mix"));
  EXPECT_FALSE(c.has_view("hog"));
}

TEST(Corpus, RejectsDuplicateIds) {
  std::vector<ImageRecord> recs{{"a", {{"g", "m"}}, std::nullopt}, {"a", {{"g", "f"}}, std::nullopt}};
  EXPECT_THROW(Corpus(recs, {EmbeddingView{"mix", 1, {1, 2}}}, {{"g", {"f", "m"}}}, {}), CorpusError);
}

TEST(Corpus, RejectsUnknownAttributeValue) {
  std::vector<ImageRecord> recs{{"a", {{"g", "x"}}, std::nullopt}};
  try {
    Corpus(recs, {EmbeddingView{"mix", 1, {1}}}, {{"g", {"f", "m"}}}, {});
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("record 0"), std::string::npos);
  }
}

TEST(Corpus, RejectsRowCountMismatchAndNonFinite) {
  std::vector<ImageRecord> recs{{"a", {{"g", "m"}}, std::nullopt}};
  EXPECT_THROW(Corpus(recs, {EmbeddingView{"mix", 2, {1, 2, 3, 4}}}, {{"g", {"m"}}}, {}), CorpusError);
  EXPECT_THROW(Corpus(recs, {EmbeddingView{"mix", 1, {NAN}}}, {{"g", {"m"}}}, {}), CorpusError);
}

TEST(Matrix, EncodingLayout) {
  const std::vector<float> data{1.0f, -2.5f};
  const auto bytes = encode_matrix(data, 1, 2);
  ASSERT_EQ(bytes.size(), 4u + 4 + 8 + 8 + 8);
  EXPECT_EQ(std::memcmp(bytes.data(), "FCPE", 4), 0);
  EXPECT_EQ(bytes[4], 1);  // version, little endian
  EXPECT_EQ(bytes[8], 1);  // rows
  EXPECT_EQ(bytes[16], 2);  // dim
  // 1.0f = 0x3F800000 little endian
  EXPECT_EQ(bytes[24], 0x00);
  EXPECT_EQ(bytes[27], 0x3F);
  EXPECT_EQ(bytes[26], 0x80);
}

TEST(Matrix, RoundTripBitExact) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g;
  EmbeddingView v{"x", 7, {}};
  for (int i = 0; i < 7 * 13; ++i) v.data.push_back(g(rng));
  v.data[3] = -0.0f;
  v.data[4] = std::numeric_limits<float>::denorm_min();
  const auto bytes = encode_matrix(v.data, 13, 7);
  const auto back = decode_matrix(bytes, "x");
  ASSERT_EQ(back.dim, 7u);
  ASSERT_EQ(back.data.size(), v.data.size());
  EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), v.data.size() * sizeof(float)), 0);
}

TEST(Matrix, RejectsBadHeaderAndTruncation) {
  auto bytes = encode_matrix(std::vector<float>{1, 2, 3, 4}, 2, 2);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_matrix(bad, "x"), CorpusError);
  bytes.pop_back();
  EXPECT_THROW(decode_matrix(bytes, "x"), CorpusError);
}

TEST(Persistence, SaveLoadBitExact) {
  TempDir dir;
  const auto c = small_corpus(60);
  save_corpus(c, dir.path());
  const auto back = load_corpus(dir.path());
  ASSERT_EQ(back.size(), c.size());
  EXPECT_EQ(back.records(), c.records());
  EXPECT_EQ(back.schema(), c.schema());
  EXPECT_EQ(back.sensitive_attributes(), c.sensitive_attributes());
  for (const auto& v : c.views()) {
    const auto& w = back.view(v.name);
    EXPECT_EQ(sha256_hex({reinterpret_cast<const std::uint8_t*>(v.data.data()), v.data.size() * 4}),
              sha256_hex({reinterpret_cast<const std::uint8_t*>(w.data.data()), w.data.size() * 4}));
  }
  // manifest path works as well as the directory
  EXPECT_EQ(load_corpus(dir.path() / "manifest.json").size(), c.size());
}

TEST(Persistence, ManifestHashMatchesFile) {
  TempDir dir;
  save_corpus(small_corpus(10), dir.path());
  const auto manifest = nlohmann::json::parse(file_bytes(dir.path() / "manifest.json"));
  for (const auto& v : manifest["views"]) {
    EXPECT_EQ(v["sha256"].get<std::string>(),
              sha256_hex(std::string_view(file_bytes(dir.path() / v["file"].get<std::string>()))));
  }
}

TEST(Persistence, DetectsTamperedMatrix) {
  TempDir dir;
  save_corpus(small_corpus(10), dir.path());
  const auto file = dir.path() / "view_mix.fcpe";
  auto bytes = file_bytes(file);
  bytes.back() ^= 0x01;
  std::ofstream(file, std::ios::binary | std::ios::trunc) << bytes;
  EXPECT_THROW(load_corpus(dir.path()), CorpusError);
}

TEST(Persistence, MissingManifest) {
  TempDir dir;
  EXPECT_THROW(load_corpus(dir.path()), CorpusError);
}

TEST(Synthesis, DeterministicPerSeed) {
  const auto a = small_corpus(50, 9);
  const auto b = small_corpus(50, 9);
  const auto c = small_corpus(50, 10);
  EXPECT_EQ(a.records(), b.records());
  EXPECT_EQ(a.view("mix").data, b.view("mix").data);
  EXPECT_NE(a.view("mix").data, c.view("mix").data);
}

TEST(Synthesis, SchemaAndIds) {
  const auto c = small_corpus(120);
  EXPECT_EQ(c.schema().size(), 8u);
  EXPECT_EQ(c.sensitive_attributes(), (std::vector<std::string>{"gender", "complexion"}));
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c.index_of(c.id(i)), i);
}

TEST(Synthesis, SameClassesAreCloser) {
  // records sharing every attribute should be more similar than random pairs
  SynthConfig cfg;
  cfg.n = 400;
  cfg.attributes = {numbered_attribute("a", 2), numbered_attribute("b", 2)};
  cfg.views = {{"mix", 16, 0.05}};
  const auto c = synthesize_corpus(cfg);
  double same = 0, diff = 0;
  int ns = 0, nd = 0;
  for (std::size_t i = 0; i < 60; ++i) {
    for (std::size_t j = i + 1; j < 60; ++j) {
      const double s = cosine_sim(to_vector(c.view("mix").row(i)), to_vector(c.view("mix").row(j)));
      if (c.record(i).attributes == c.record(j).attributes) {
        same += s;
        ++ns;
      } else {
        diff += s;
        ++nd;
      }
    }
  }
  ASSERT_GT(ns, 0);
  EXPECT_GT(same / ns, diff / nd + 0.2);
}

TEST(Synthesis, InvalidConfig) {
  SynthConfig cfg;
  cfg.n = 0;
  cfg.attributes = face_like_schema();
  cfg.views = {{"mix", 4, 0.1}};
  EXPECT_THROW(synthesize_corpus(cfg), CorpusError);
  cfg.n = 10;
  cfg.views.clear();
  EXPECT_THROW(synthesize_corpus(cfg), CorpusError);
}

TEST(Filter, UnknownAttributeNamed) {
  const auto c = small_corpus(20);
  try {
    validate_filter(c, {{"hat", {"yes"}}});
    FAIL();
  } catch (const UnknownAttributeError& e) {
    EXPECT_EQ(e.attribute(), "hat");
  }
  EXPECT_THROW(validate_filter(c, {{"gender", {"zzz"}}}), UnknownAttributeError);
}

TEST(Filter, MatchingIndices) {
  const auto c = small_corpus(200);
  const auto idx = matching_indices(c, {{"gender", {"female"}}});
  for (auto i : idx) EXPECT_EQ(c.record(i).attributes.at("gender"), "female");
  std::size_t expected = 0;
  for (const auto& r : c.records()) expected += r.attributes.at("gender") == "female";
  EXPECT_EQ(idx.size(), expected);
  EXPECT_EQ(matching_indices(c, {}).size(), c.size());
}

TEST(StratifiedSample, BalancesSensitiveCells) {
  const auto c = small_corpus(600);
  Rng rng(4);
  const auto all = matching_indices(c, {});
  const auto s = stratified_sample_indices(c, all, 60, rng);
  ASSERT_EQ(s.size(), 60u);
  std::set<std::size_t> uniq(s.begin(), s.end());
  EXPECT_EQ(uniq.size(), 60u);
  // gender(2) x complexion(3) = 6 cells, 10 each
  std::map<std::string, int> cells;
  for (auto i : s) {
    const auto& a = c.record(i).attributes;
    ++cells[a.at("gender") + "/" + a.at("complexion")];
  }
  EXPECT_EQ(cells.size(), 6u);
  for (const auto& [_, n] : cells) EXPECT_EQ(n, 10);
}

TEST(StratifiedSample, SmallPoolReturnsEverything) {
  const auto c = small_corpus(30);
  Rng rng(1);
  const std::vector<std::size_t> pool{3, 5, 7};
  auto s = stratified_sample_indices(c, pool, 10, rng);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(s, pool);
  EXPECT_TRUE(stratified_sample_indices(c, pool, 0, rng).empty());
}
