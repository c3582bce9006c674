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
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "touchrag/core.hpp"
#include "touchrag/features.hpp"
#include "touchrag/index.hpp"

using namespace touchrag;

namespace {

using Corpus = std::vector<feat::ShardRecord>;

std::shared_ptr<const Corpus> share(Corpus corpus) {
  return std::make_shared<const Corpus>(std::move(corpus));
}

feat::ShardRecord entry(uint64_t id, feat::FeatureVec r_l, feat::FeatureVec r_v,
                        const char* cls = "object_c0000") {
  feat::ShardRecord rec;
  rec.id = id;
  rec.class_name = cls;
  rec.caption = "cold, hard, slick, rigid, dense";
  rec.r_v = std::move(r_v);
  rec.r_l = std::move(r_l);
  return rec;
}

// Random unit corpus with distinct ids; text keys carry the signal.
std::shared_ptr<const Corpus> random_corpus(size_t n, size_t dim, uint64_t seed) {
  Rng rng(seed);
  Corpus corpus;
  corpus.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    feat::FeatureVec l(dim), v(dim);
    for (double& x : l) x = rng.normal();
    for (double& x : v) x = rng.normal();
    corpus.push_back(entry(i, feat::l2_normalize(l), feat::l2_normalize(v)));
  }
  return share(std::move(corpus));
}

}  // namespace

// --- exact scores on a hand corpus --------------------------------------------

TEST_CASE("scores on an axis-aligned corpus match cosine by hand") {
  const double r = 1.0 / std::sqrt(2.0);
  auto corpus = share({
      entry(1, {1.0, 0.0}, {0.0, 1.0}),
      entry(2, {0.0, 1.0}, {1.0, 0.0}),
      entry(3, {r, r}, {r, r}),
  });
  auto index = idx::VectorIndex::build(corpus, idx::VectorIndex::Key::kText);
  REQUIRE(index.size() == 3);
  CHECK(index.dim() == 2);

  auto hits = index.topk({1.0, 0.0}, 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].id == 1);
  CHECK(hits[0].score == 1.0);  // exact: unit key, unit query, axis dot
  CHECK(hits[1].id == 3);
  CHECK(hits[1].score == doctest::Approx(r).epsilon(1e-7));
  CHECK(hits[2].id == 2);
  CHECK(hits[2].score == 0.0);

  // The image index ranks by r_v, which flips entries 1 and 2.
  auto image = idx::VectorIndex::build(corpus, idx::VectorIndex::Key::kImage);
  auto vhits = image.topk({1.0, 0.0}, 1);
  REQUIRE(vhits.size() == 1);
  CHECK(vhits[0].id == 2);
}

TEST_CASE("unnormalized corpus keys and queries still score as cosine") {
  // Keys are re-normalized at build time and the query norm divides the
  // score, so raw magnitudes cancel out.
  auto corpus = share({entry(1, {3.0, 0.0}, {1.0, 0.0})});
  auto index = idx::VectorIndex::build(corpus);
  auto hits = index.topk({0.5, 0.5}, 1);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].score == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-7));
}

TEST_CASE("hits carry the corpus payload for downstream stages") {
  Corpus corpus = {entry(7, {1.0, 0.0}, {0.25, 0.5}, "object_c0013")};
  corpus[0].caption = "soft, woven, airy, light, supple";
  auto index = idx::VectorIndex::build(share(std::move(corpus)));
  auto hits = index.topk({1.0, 0.0}, 1);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].class_name == "object_c0013");
  CHECK(hits[0].caption == "soft, woven, airy, light, supple");
  // Payload vectors are returned as stored, not re-normalized: the
  // integrator decides what to do with them.
  CHECK(hits[0].r_v == feat::FeatureVec{0.25, 0.5});
  CHECK(hits[0].r_l == feat::FeatureVec{1.0, 0.0});
}

// --- agreement with the exhaustive oracle -------------------------------------

TEST_CASE("bounded top-k agrees with full-sort oracle, scores bitwise") {
  const size_t n = 2000, dim = 32;
  auto index = idx::VectorIndex::build(random_corpus(n, dim, 11));
  Rng rng(99);
  for (int q = 0; q < 25; ++q) {
    feat::FeatureVec query(dim);
    for (double& x : query) x = rng.normal();
    for (size_t k : {size_t(1), size_t(5), size_t(17)}) {
      auto fast = index.topk(query, k);
      auto slow = index.oracle_topk(query, k);
      REQUIRE(fast.size() == slow.size());
      bool same = true;
      for (size_t i = 0; i < fast.size(); ++i)
        same = same && fast[i].id == slow[i].id &&
               fast[i].score == slow[i].score;  // shared scorer: bitwise
      CHECK(same);
    }
  }
}

TEST_CASE("self-query puts the entry itself at rank one") {
  auto corpus = random_corpus(128, 16, 5);
  auto index = idx::VectorIndex::build(corpus);
  for (size_t i = 0; i < corpus->size(); i += 13) {
    auto hits = index.topk((*corpus)[i].r_l, 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].id == (*corpus)[i].id);
    CHECK(hits[0].score == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("equal scores break ties toward the smaller id") {
  // Two identical keys under different ids, inserted high-id first.
  auto corpus = share({
      entry(9, {0.6, 0.8}, {1, 0}),
      entry(4, {0.6, 0.8}, {1, 0}),
      entry(2, {1.0, 0.0}, {1, 0}),
  });
  auto index = idx::VectorIndex::build(corpus);
  auto hits = index.topk({0.6, 0.8}, 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].id == 4);  // tie with 9, smaller id first
  CHECK(hits[1].id == 9);
  CHECK(hits[0].score == hits[1].score);
  CHECK(hits[2].id == 2);

  // The bounded heap must evict the right duplicate when k cuts the tie.
  auto top1 = index.topk({0.6, 0.8}, 1);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].id == 4);
  auto oracle1 = index.oracle_topk({0.6, 0.8}, 1);
  CHECK(oracle1[0].id == 4);
}

TEST_CASE("power-of-two query scaling changes nothing") {
  // Exactly representable scaling commutes with f32 staging, so both the
  // ranking and the reported cosine scores are bit-identical.
  const size_t dim = 16;
  auto index = idx::VectorIndex::build(random_corpus(200, dim, 3));
  Rng rng(4);
  feat::FeatureVec q(dim);
  for (double& x : q) x = rng.normal();
  feat::FeatureVec q4 = q;
  for (double& x : q4) x *= 4.0;

  auto a = index.topk(q, 10);
  auto b = index.topk(q4, 10);
  REQUIRE(a.size() == b.size());
  bool same = true;
  for (size_t i = 0; i < a.size(); ++i)
    same = same && a[i].id == b[i].id && a[i].score == b[i].score;
  CHECK(same);
}

TEST_CASE("growing k extends the previous ranking as a prefix") {
  const size_t dim = 12;
  auto index = idx::VectorIndex::build(random_corpus(64, dim, 21));
  feat::FeatureVec q(dim, 0.0);
  q[0] = 1.0;
  q[3] = -0.5;
  auto small = index.topk(q, 3);
  auto large = index.topk(q, 9);
  REQUIRE(large.size() == 9);
  bool prefix = true;
  for (size_t i = 0; i < small.size(); ++i)
    prefix = prefix && small[i].id == large[i].id;
  CHECK(prefix);
}

// --- validation and edge cases --------------------------------------------------

TEST_CASE("k beyond the corpus returns everything, ranked") {
  auto index = idx::VectorIndex::build(random_corpus(5, 8, 2));
  auto hits = index.topk((*random_corpus(5, 8, 2))[0].r_l, 50);
  CHECK(hits.size() == 5);
  for (size_t i = 1; i < hits.size(); ++i)
    CHECK(hits[i - 1].score >= hits[i].score);
}

TEST_CASE("query validation names the defect") {
  auto index = idx::VectorIndex::build(random_corpus(4, 8, 1));
  CHECK_THROWS_AS(index.topk(feat::FeatureVec(8, 0.5), 0), ConfigError);
  CHECK_THROWS_AS(index.topk(feat::FeatureVec(7, 0.5), 1), DimensionError);
  CHECK_THROWS_AS(index.topk(feat::FeatureVec(8, 0.0), 1),
                  DegenerateInputError);
  CHECK_THROWS_AS(index.oracle_topk(feat::FeatureVec(8, 0.0), 1),
                  DegenerateInputError);
}

TEST_CASE("build rejects malformed corpora") {
  SUBCASE("null corpus") {
    CHECK_THROWS_AS(idx::VectorIndex::build(nullptr), ConfigError);
  }
  SUBCASE("duplicate ids") {
    auto corpus = share({entry(1, {1, 0}, {1, 0}), entry(1, {0, 1}, {0, 1})});
    CHECK_THROWS_AS(idx::VectorIndex::build(corpus), ValidationError);
  }
  SUBCASE("dim drift between entries") {
    auto corpus = share({entry(1, {1, 0}, {1, 0}), entry(2, {1, 0, 0}, {0, 1, 0})});
    CHECK_THROWS_AS(idx::VectorIndex::build(corpus), DimensionError);
  }
  SUBCASE("zero key row") {
    auto corpus = share({entry(1, {0.0, 0.0}, {1, 0})});
    CHECK_THROWS_AS(idx::VectorIndex::build(corpus, idx::VectorIndex::Key::kText),
                    DegenerateInputError);
    // The same corpus is fine under the image key, whose rows are nonzero.
    CHECK_NOTHROW(idx::VectorIndex::build(corpus, idx::VectorIndex::Key::kImage));
  }
}

TEST_CASE("empty and default-constructed indexes answer nothing") {
  idx::VectorIndex empty;
  CHECK(empty.size() == 0);
  CHECK(empty.topk({1.0, 0.0}, 3).empty());
  CHECK(empty.oracle_topk({1.0, 0.0}, 3).empty());

  auto built = idx::VectorIndex::build(share({}));
  CHECK(built.size() == 0);
  CHECK(built.topk({1.0}, 2).empty());
}

TEST_CASE("memory accounting matches the advertised formula") {
  CHECK(idx::VectorIndex::estimated_bytes(1000, 64) == 1000 * 64 * 4 + 1000 * 8);
  CHECK(idx::VectorIndex::estimated_bytes(0, 64) == 0);
  auto index = idx::VectorIndex::build(random_corpus(100, 16, 8));
  CHECK(index.bytes() == idx::VectorIndex::estimated_bytes(100, 16));
}
