// Copyright 2026 The touchrag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "touchrag/core.hpp"
#include "touchrag/corpus.hpp"
#include "touchrag/features.hpp"

using namespace touchrag;

namespace {

template <typename E, typename Fn>
std::string message_of(Fn fn) {
  try {
    fn();
  } catch (const E& e) {
    return e.what();
  }
  FAIL("expected exception was not thrown");
  return {};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

corp::ManifestRecord record(uint64_t id, const std::string& cls) {
  corp::ManifestRecord r;
  r.id = id;
  r.class_name = cls;
  r.source_caption = "a photo of " + cls;
  r.image_ref = "img/" + std::to_string(id) + ".png";
  return r;
}

// Scripted in-process captioner: returns the queued lines in order, then
// repeats the last one. No subprocess machinery needed to test retries.
class ScriptedCaptioner : public corp::Captioner {
 public:
  explicit ScriptedCaptioner(std::vector<std::string> lines)
      : lines_(std::move(lines)) {}
  std::string caption_line(const std::string&) override {
    ++calls;
    size_t i = std::min(next_++, lines_.size() - 1);
    return lines_[i];
  }
  int calls = 0;

 private:
  std::vector<std::string> lines_;
  size_t next_ = 0;
};

}  // namespace

// --- caption parsing ---------------------------------------------------------

TEST_CASE("parse accepts a clean five-adjective caption") {
  auto cap = corp::TactileCaption::parse("soft, fuzzy, pliable, dense, grainy");
  CHECK(cap.adjectives()[0] == "soft");
  CHECK(cap.adjectives()[4] == "grainy");
  CHECK(cap.str() == "soft, fuzzy, pliable, dense, grainy");
}

TEST_CASE("parse normalizes case, spacing, and one trailing period") {
  auto cap = corp::TactileCaption::parse("  Soft,supple , Grainy,\tfirm , cool.");
  CHECK(cap.str() == "soft, supple, grainy, firm, cool");
  // Other trailing punctuation that captioners produce.
  CHECK(corp::TactileCaption::parse("a, b, c, d, e!").adjectives()[4] == "e");
  CHECK(corp::TactileCaption::parse("a, b, c, d, e;").adjectives()[4] == "e");
}

TEST_CASE("parse rejects wrong counts with the count in the message") {
  std::string msg = message_of<ValidationError>(
      [] { corp::TactileCaption::parse("soft, fuzzy, pliable, dense"); });
  CHECK(contains(msg, "has 4 adjectives, expected 5"));
  CHECK(contains(message_of<ValidationError>([] {
          corp::TactileCaption::parse("a, b, c, d, e, f");
        }),
        "has 6 adjectives"));
}

TEST_CASE("parse rejects empty positions and embedded whitespace") {
  std::string msg = message_of<ValidationError>(
      [] { corp::TactileCaption::parse("soft,, fuzzy, pliable, dense, grainy"); });
  CHECK(contains(msg, "empty adjective at position 2"));
  CHECK(contains(message_of<ValidationError>([] {
          corp::TactileCaption::parse("very soft, fuzzy, pliable, dense, grainy");
        }),
        "contains whitespace"));
  CHECK_THROWS_AS(corp::TactileCaption::parse(""), ValidationError);
}

TEST_CASE("canonical form is order-insensitive, str is not") {
  auto a = corp::TactileCaption::parse("soft, fuzzy, pliable, dense, grainy");
  auto b = corp::TactileCaption::parse("grainy, dense, pliable, fuzzy, soft");
  CHECK(a.canonical() == b.canonical());
  CHECK(a.canonical() == "dense,fuzzy,grainy,pliable,soft");
  CHECK(a.str() != b.str());
}

// --- lexicon and offline captioner -------------------------------------------

TEST_CASE("lexicon adjectives are globally unique across materials") {
  std::set<std::string_view> seen;
  for (const auto& mat : corp::lexicon())
    for (auto adj : mat.adjectives) CHECK(seen.insert(adj).second);
  CHECK(seen.size() == corp::kMaterialCount * corp::kAdjectivesPerMaterial);
}

TEST_CASE("material_of_class is the stable hash shared with embeddings") {
  CHECK(corp::material_of_class("object_c0003") ==
        fnv1a("object_c0003") % corp::kMaterialCount);
  CHECK(corp::material_of_class("object_c0003") ==
        corp::material_of_class("object_c0003"));
}

TEST_CASE("offline captioner picks five distinct adjectives of the class material") {
  corp::LexiconCaptioner cap;
  const std::string cls = "object_c0007";
  std::string prompt = corp::caption_prompt(record(1, cls));
  std::string line1 = cap.caption_line(prompt);
  std::string line2 = cap.caption_line(prompt);
  CHECK(line1 == line2);  // deterministic: no hidden state

  auto parsed = corp::TactileCaption::parse(line1);
  const auto& mat = corp::lexicon()[corp::material_of_class(cls)];
  std::set<std::string> words;
  for (const auto& adj : parsed.adjectives()) {
    CHECK(words.insert(adj).second);  // five distinct words
    bool in_material =
        std::find(mat.adjectives.begin(), mat.adjectives.end(), adj) !=
        mat.adjectives.end();
    CHECK(in_material);
  }
}

TEST_CASE("caption_prompt carries the class and demands touch-only output") {
  std::string p = corp::caption_prompt(record(5, "velvet_cushion"));
  CHECK(contains(p, "Object: velvet_cushion."));
  CHECK(contains(p, "5 adjectives"));
  CHECK_THROWS_AS(corp::caption_prompt(record(5, "")), ValidationError);
}

// --- recaption retry policy ---------------------------------------------------

TEST_CASE("recaption returns on the first valid response") {
  ScriptedCaptioner cap({"tough, worn, creased, thick, oiled"});
  auto parsed = corp::recaption(record(1, "satchel"), cap);
  CHECK(parsed.str() == "tough, worn, creased, thick, oiled");
  CHECK(cap.calls == 1);
}

TEST_CASE("recaption retries malformed output, then succeeds") {
  ScriptedCaptioner cap({"only three, words, here",
                         "tough, worn, creased, thick, oiled"});
  auto parsed = corp::recaption(record(1, "satchel"), cap);
  CHECK(parsed.adjectives()[0] == "tough");
  CHECK(cap.calls == 2);
}

TEST_CASE("recaption gives up after retries and reports the last response") {
  ScriptedCaptioner cap({"still not a caption"});
  std::string msg = message_of<ValidationError>(
      [&] { corp::recaption(record(42, "satchel"), cap, 2); });
  CHECK(cap.calls == 3);  // initial try + 2 retries
  CHECK(contains(msg, "id 42"));
  CHECK(contains(msg, "class 'satchel'"));
  CHECK(contains(msg, "failed after 3 attempts"));
  CHECK(contains(msg, "still not a caption"));
}

// --- pipe captioner ------------------------------------------------------------

TEST_CASE("pipe captioner speaks the one-line protocol with a real child") {
  corp::PipeCaptioner cap(
      {"/bin/sh", "-c",
       "while read line; do echo 'soft, woven, airy, light, supple'; done"});
  auto parsed = corp::recaption(record(1, "scarf"), cap);
  CHECK(parsed.str() == "soft, woven, airy, light, supple");
  // The child stays up across requests.
  CHECK(corp::recaption(record(2, "scarf"), cap).str() ==
        "soft, woven, airy, light, supple");
}

TEST_CASE("pipe captioner recovers when the child fails once") {
  corp::PipeCaptioner cap(
      {"/bin/sh", "-c",
       "n=0; while read line; do n=$((n+1)); "
       "if [ $n -lt 2 ]; then echo 'malformed'; "
       "else echo 'cold, hard, slick, rigid, dense'; fi; done"});
  auto parsed = corp::recaption(record(9, "ingot"), cap);
  CHECK(parsed.str() == "cold, hard, slick, rigid, dense");
}

TEST_CASE("echoed prompts are rejected as captions, with the raw text kept") {
  // `cat` answers every prompt with the prompt itself, which never parses.
  corp::PipeCaptioner cap({"/bin/cat"});
  std::string msg = message_of<ValidationError>(
      [&] { corp::recaption(record(3, "mirror"), cap, 1); });
  CHECK(contains(msg, "failed after 2 attempts"));
  CHECK(contains(msg, "Object: mirror"));  // raw response = echoed prompt
}

TEST_CASE("empty response lines are transport errors and eventually surface") {
  corp::PipeCaptioner cap({"/bin/sh", "-c", "while read line; do echo; done"});
  CHECK_THROWS_AS(corp::recaption(record(4, "void"), cap, 1), IoError);
}

TEST_CASE("a child that cannot exec surfaces as a transport error") {
  corp::PipeCaptioner cap({"/nonexistent/binary"});
  CHECK_THROWS_AS(cap.caption_line("hello"), IoError);
  CHECK_THROWS_AS(corp::PipeCaptioner({}), ConfigError);
}

// --- stratified sampling --------------------------------------------------------

namespace {

std::vector<corp::ManifestRecord> manifest_of(
    const std::vector<std::pair<std::string, size_t>>& classes) {
  std::vector<corp::ManifestRecord> m;
  uint64_t id = 0;
  for (const auto& [cls, n] : classes)
    for (size_t i = 0; i < n; ++i) m.push_back(record(id++, cls));
  return m;
}

std::map<std::string, size_t> class_counts(
    const std::vector<corp::ManifestRecord>& recs) {
  std::map<std::string, size_t> counts;
  for (const auto& r : recs) ++counts[r.class_name];
  return counts;
}

}  // namespace

TEST_CASE("stratified sampling balances classes and rolls over shortfalls") {
  // Classes of size 5, 5, and 1. Target 6 wants 2 per class; the singleton
  // contributes its one member and the missing unit rolls to a class with
  // spare members.
  auto manifest = manifest_of({{"a", 5}, {"b", 5}, {"c", 1}});
  auto sample = corp::stratified_sample(manifest, 6, 17);
  REQUIRE(sample.size() == 6);
  auto counts = class_counts(sample);
  CHECK(counts["c"] == 1);
  CHECK(counts["a"] + counts["b"] == 5);
  CHECK(counts["a"] >= 2);
  CHECK(counts["b"] >= 2);
}

TEST_CASE("stratified sampling covers every class when possible") {
  auto manifest = manifest_of({{"a", 1}, {"b", 1}, {"c", 1}, {"d", 1}, {"e", 1},
                               {"f", 1}, {"g", 1}, {"h", 1}, {"i", 1}, {"j", 1}});
  auto sample = corp::stratified_sample(manifest, 10, 1);
  CHECK(class_counts(sample).size() == 10);
}

TEST_CASE("stratified sampling preserves manifest order and is seeded") {
  auto manifest = manifest_of({{"a", 40}, {"b", 40}, {"c", 40}});
  auto s1 = corp::stratified_sample(manifest, 30, 5);
  auto s2 = corp::stratified_sample(manifest, 30, 5);
  auto s3 = corp::stratified_sample(manifest, 30, 6);
  REQUIRE(s1.size() == 30);

  bool identical = true;
  for (size_t i = 0; i < s1.size(); ++i)
    identical = identical && s1[i].id == s2[i].id;
  CHECK(identical);

  bool differs = s3.size() != s1.size();
  for (size_t i = 0; i < std::min(s1.size(), s3.size()); ++i)
    differs = differs || s1[i].id != s3[i].id;
  CHECK(differs);  // 120 choose 30: seeds almost surely disagree somewhere

  // Relative order of the input survives; equal shares per class.
  for (size_t i = 1; i < s1.size(); ++i) CHECK(s1[i - 1].id < s1[i].id);
  auto counts = class_counts(s1);
  CHECK(counts["a"] == 10);
  CHECK(counts["b"] == 10);
  CHECK(counts["c"] == 10);
}

TEST_CASE("stratified sampling edge cases") {
  auto manifest = manifest_of({{"a", 2}, {"b", 2}});
  CHECK(corp::stratified_sample(manifest, 0, 1).empty());
  CHECK(corp::stratified_sample(manifest, 4, 1).size() == 4);
  std::string msg = message_of<ConfigError>(
      [&] { corp::stratified_sample(manifest, 5, 1); });
  CHECK(contains(msg, "target 5 exceeds manifest size 4"));
}

// --- shard building and corpus loading -------------------------------------------

namespace {

std::vector<feat::ShardRecord> synthetic_entries(size_t n, size_t dim) {
  corp::LexiconCaptioner cap;
  auto manifest = corp::synthetic_manifest(n, std::max<size_t>(1, n / 4), 1);
  std::vector<feat::ShardRecord> entries;
  entries.reserve(n);
  for (const auto& rec : manifest)
    entries.push_back(corp::make_entry(rec, cap, dim, 0.1));
  return entries;
}

}  // namespace

TEST_CASE("build_shards splits on capacity and load_corpus round trips") {
  testutil::TempDir dir("corpus_rt");
  auto entries = synthetic_entries(250, 16);
  auto result = corp::build_shards(entries, 100, dir.path().string());

  CHECK(result.entries == 250);
  REQUIRE(result.shard_paths.size() == 3);  // 100 + 100 + 50
  CHECK(contains(result.shard_paths[0], "shard_0000.imnt"));
  CHECK(contains(result.shard_paths[2], "shard_0002.imnt"));
  CHECK(feat::read_shard(result.shard_paths[0]).size() == 100);
  CHECK(feat::read_shard(result.shard_paths[2]).size() == 50);

  auto loaded = corp::load_corpus(result.manifest_path);
  REQUIRE(loaded.size() == entries.size());
  bool equal = true;
  for (size_t i = 0; i < entries.size(); ++i) {
    equal = equal && loaded[i].id == entries[i].id &&
            loaded[i].class_name == entries[i].class_name &&
            loaded[i].caption == entries[i].caption &&
            loaded[i].r_v == entries[i].r_v && loaded[i].r_l == entries[i].r_l;
  }
  CHECK(equal);  // synth embeddings are already f32: round trip is lossless
}

TEST_CASE("build_shards validates captions and dims before writing") {
  testutil::TempDir dir("corpus_bad");
  auto entries = synthetic_entries(4, 16);
  SUBCASE("invalid caption") {
    entries[2].caption = "not a caption";
    CHECK_THROWS_AS(corp::build_shards(entries, 10, dir.path().string()),
                    ValidationError);
  }
  SUBCASE("dim mismatch names the entry") {
    entries[3].r_l.resize(8);
    std::string msg = message_of<DimensionError>(
        [&] { corp::build_shards(entries, 10, dir.path().string()); });
    CHECK(contains(msg, "entry " + std::to_string(entries[3].id)));
  }
  SUBCASE("zero capacity") {
    CHECK_THROWS_AS(corp::build_shards(entries, 0, dir.path().string()),
                    ConfigError);
  }
  SUBCASE("zero entries still write a manifest") {
    auto result = corp::build_shards({}, 10, dir.path().string());
    CHECK(result.entries == 0);
    CHECK(result.shard_paths.empty());
    CHECK(corp::load_corpus(result.manifest_path).empty());
  }
}

TEST_CASE("load_corpus cross-checks the manifest against shard contents") {
  testutil::TempDir dir("corpus_xcheck");
  auto entries = synthetic_entries(6, 16);
  auto result = corp::build_shards(entries, 4, dir.path().string());
  const std::string manifest = read_file(result.manifest_path);

  SUBCASE("wrong column count") {
    write_file(result.manifest_path, "1\t2\t3\n");
    std::string msg = message_of<FormatError>(
        [&] { corp::load_corpus(result.manifest_path); });
    CHECK(contains(msg, ":1: expected 5 tab-separated columns, got 3"));
  }
  SUBCASE("non-numeric id") {
    std::string bad = "abc" + manifest.substr(1);
    write_file(result.manifest_path, bad);
    CHECK(contains(message_of<FormatError>(
                       [&] { corp::load_corpus(result.manifest_path); }),
                   "non-numeric id"));
  }
  SUBCASE("manifest/shard disagreement") {
    // Plant a caption in the first manifest row that the shard cannot have.
    size_t nl1 = manifest.find('\n');
    std::string row0 = manifest.substr(0, nl1);
    size_t t2 = row0.find('\t', row0.find('\t') + 1);
    size_t t3 = row0.find('\t', t2 + 1);
    row0.replace(t2 + 1, t3 - t2 - 1, "altered, bogus, fake, wrong, planted");
    write_file(result.manifest_path, row0 + manifest.substr(nl1));
    std::string msg = message_of<FormatError>(
        [&] { corp::load_corpus(result.manifest_path); });
    CHECK(contains(msg, "disagrees with shard"));
  }
  SUBCASE("row index out of range") {
    // Point the last row at a row index past the end of its shard.
    size_t last_tab = manifest.rfind('\t');
    std::string bad = manifest.substr(0, last_tab + 1) + "99\n";
    write_file(result.manifest_path, bad);
    std::string msg = message_of<FormatError>(
        [&] { corp::load_corpus(result.manifest_path); });
    CHECK(contains(msg, "points at row 99"));
    CHECK(contains(msg, "which has only 2 rows"));
  }
  SUBCASE("missing shard file") {
    std::filesystem::remove(result.shard_paths[0]);
    CHECK_THROWS_AS(corp::load_corpus(result.manifest_path), IoError);
  }
}

// --- vocabulary statistics --------------------------------------------------------

TEST_CASE("vocab_stats counts canonical captions and ranks words") {
  auto mk = [](uint64_t id, const char* caption) {
    feat::ShardRecord r;
    r.id = id;
    r.class_name = "c";
    r.caption = caption;
    r.r_v = {1, 0, 0, 0, 0, 0, 0, 0};
    r.r_l = {0, 1, 0, 0, 0, 0, 0, 0};
    return r;
  };
  std::vector<feat::ShardRecord> entries = {
      mk(0, "soft, fuzzy, warm, woven, light"),
      mk(1, "light, woven, warm, fuzzy, soft"),  // same multiset, new order
      mk(2, "soft, cold, hard, slick, dense"),
  };
  auto stats = corp::vocab_stats(entries, 3);
  CHECK(stats.unique_captions == 2);  // the first two canonicalize together
  CHECK(stats.unique_words == 9);
  REQUIRE(stats.top_words.size() == 3);
  CHECK(stats.top_words[0].first == "soft");  // 3 uses
  CHECK(stats.top_words[0].second == 3);
  // Count ties break word-ascending.
  CHECK(stats.top_words[1].second == 2);
  CHECK(stats.top_words[1].first == "fuzzy");
  CHECK(stats.top_words[2].first == "light");
}

// --- synthetic manifest --------------------------------------------------------------

TEST_CASE("synthetic_manifest spreads records round-robin over classes") {
  auto m = corp::synthetic_manifest(20, 5, 9);
  REQUIRE(m.size() == 20);
  auto counts = class_counts(m);
  CHECK(counts.size() == 5);
  for (const auto& [cls, n] : counts) {
    CHECK(n == 4);  // 20 / 5, exactly
    CHECK(cls.rfind("object_c", 0) == 0);
    CHECK(cls.size() == std::string("object_c0000").size());
  }
  for (size_t i = 0; i < m.size(); ++i) CHECK(m[i].id == i);

  // Deterministic per seed; the seed shifts the round-robin phase.
  auto again = corp::synthetic_manifest(20, 5, 9);
  bool identical = true;
  for (size_t i = 0; i < m.size(); ++i)
    identical = identical && m[i].class_name == again[i].class_name;
  CHECK(identical);

  CHECK_THROWS_AS(corp::synthetic_manifest(0, 5, 1), ConfigError);
  CHECK_THROWS_AS(corp::synthetic_manifest(5, 0, 1), ConfigError);
}

TEST_CASE("make_entry ties caption and embeddings to the same material") {
  corp::LexiconCaptioner cap;
  auto rec = record(12, "object_c0002");
  auto entry = corp::make_entry(rec, cap, 16, 0.2);
  CHECK(entry.id == 12);
  CHECK(entry.class_name == "object_c0002");

  uint64_t material = corp::material_of_class(rec.class_name);
  CHECK(entry.r_v ==
        feat::synth_embed(feat::Kind::kVisual, material, rec.id, 16, 0.2));
  CHECK(entry.r_l ==
        feat::synth_embed(feat::Kind::kText, material, rec.id, 16, 0.2));

  // The caption's words come from the material the embeddings encode.
  const auto& mat = corp::lexicon()[material];
  for (const auto& adj : corp::TactileCaption::parse(entry.caption).adjectives()) {
    bool in_material =
        std::find(mat.adjectives.begin(), mat.adjectives.end(), adj) !=
        mat.adjectives.end();
    CHECK(in_material);
  }
}
