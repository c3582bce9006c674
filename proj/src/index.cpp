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

#include "touchrag/index.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <unordered_set>
#include <utility>

#include "touchrag/core.hpp"
#include "touchrag/kernels.hpp"

namespace touchrag::idx {
namespace {

// Heap ordering for bounded top-k selection: the heap root is the WORST
// retained candidate, i.e. lowest score, ties broken toward the larger id
// (so the smaller id survives eviction, matching the oracle's tie rule).
struct Candidate {
  double score;
  size_t row;
  uint64_t id;
};

struct WorstOnTop {
  bool operator()(const Candidate& a, const Candidate& b) const {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  }
};

}  // namespace

VectorIndex VectorIndex::build(
    std::shared_ptr<const std::vector<feat::ShardRecord>> corpus, Key key) {
  if (!corpus) throw ConfigError("VectorIndex::build: null corpus handle");
  const auto& entries = *corpus;

  VectorIndex out;
  out.key_ = key;
  out.corpus_ = std::move(corpus);
  if (entries.empty()) return out;

  out.dim_ = (key == Key::kText) ? entries[0].r_l.size() : entries[0].r_v.size();
  if (out.dim_ == 0) {
    throw DimensionError("VectorIndex::build: entry 0 has an empty key vector");
  }
  out.rows_.reserve(entries.size() * out.dim_);
  out.ids_.reserve(entries.size());
  out.corpus_pos_.reserve(entries.size());

  std::unordered_set<uint64_t> seen;
  seen.reserve(entries.size() * 2);
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& rec = entries[i];
    const feat::FeatureVec& v = (key == Key::kText) ? rec.r_l : rec.r_v;
    if (v.size() != out.dim_) {
      throw DimensionError("VectorIndex::build: entry " + std::to_string(i) +
                           " (id " + std::to_string(rec.id) + ") has dim " +
                           std::to_string(v.size()) + ", index dim is " +
                           std::to_string(out.dim_));
    }
    if (!seen.insert(rec.id).second) {
      throw ValidationError("VectorIndex::build: duplicate id " +
                            std::to_string(rec.id));
    }
    // Shard rows are already unit-normalized f32, but re-normalizing here
    // costs one pass and makes the cosine guarantee independent of how the
    // records were produced.
    double n = feat::norm(v);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw DegenerateInputError("VectorIndex::build: entry " +
                                 std::to_string(i) + " (id " +
                                 std::to_string(rec.id) +
                                 ") has a zero or non-finite key vector");
    }
    for (double x : v) out.rows_.push_back(float(x / n));
    out.ids_.push_back(rec.id);
    out.corpus_pos_.push_back(i);
  }
  return out;
}

double VectorIndex::score_row(size_t row, const std::vector<float>& q,
                              double q_norm) const {
  const float* r = rows_.data() + row * dim_;
  return double(kern::active().dot_f32(r, q.data(), dim_)) / q_norm;
}

namespace {

// Shared validation + query staging for both retrieval paths.
struct StagedQuery {
  std::vector<float> q;  // f32 copy fed to the dot kernel
  double norm;           // double-precision norm of the original query
};

StagedQuery stage_query(const feat::FeatureVec& query, size_t dim, size_t k) {
  if (k < 1) throw ConfigError("topk: k must be >= 1, got " + std::to_string(k));
  if (query.size() != dim) {
    throw DimensionError("topk: query dim " + std::to_string(query.size()) +
                         " does not match index dim " + std::to_string(dim));
  }
  StagedQuery sq;
  sq.norm = feat::norm(query);
  if (!(sq.norm > 0.0) || !std::isfinite(sq.norm)) {
    throw DegenerateInputError("topk: query has zero or non-finite norm");
  }
  sq.q.reserve(query.size());
  for (double x : query) sq.q.push_back(float(x));
  return sq;
}

}  // namespace

RetrievalResult VectorIndex::topk(const feat::FeatureVec& query,
                                  size_t k) const {
  if (size() == 0) {
    if (k < 1) throw ConfigError("topk: k must be >= 1, got 0");
    return {};
  }
  StagedQuery sq = stage_query(query, dim_, k);

  // Bounded heap of the best k seen so far, worst on top. A candidate
  // displaces the root when it scores strictly higher, or ties the root
  // with a smaller id — exactly the oracle's (-score, id) order.
  std::priority_queue<Candidate, std::vector<Candidate>, WorstOnTop> heap;
  for (size_t row = 0; row < size(); ++row) {
    Candidate c{score_row(row, sq.q, sq.norm), row, ids_[row]};
    if (heap.size() < k) {
      heap.push(c);
    } else {
      const Candidate& worst = heap.top();
      if (c.score > worst.score ||
          (c.score == worst.score && c.id < worst.id)) {
        heap.pop();
        heap.push(c);
      }
    }
  }

  RetrievalResult hits(heap.size());
  for (size_t i = heap.size(); i-- > 0;) {
    const Candidate& c = heap.top();
    const feat::ShardRecord& rec = (*corpus_)[corpus_pos_[c.row]];
    hits[i] = Hit{c.id, c.score, rec.r_v, rec.r_l, rec.class_name,
                  rec.caption};
    heap.pop();
  }
  return hits;
}

RetrievalResult VectorIndex::oracle_topk(const feat::FeatureVec& query,
                                         size_t k) const {
  if (size() == 0) {
    if (k < 1) throw ConfigError("topk: k must be >= 1, got 0");
    return {};
  }
  StagedQuery sq = stage_query(query, dim_, k);

  std::vector<Candidate> all(size());
  for (size_t row = 0; row < size(); ++row) {
    all[row] = Candidate{score_row(row, sq.q, sq.norm), row, ids_[row]};
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Candidate& a, const Candidate& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.id < b.id;
                   });

  size_t take = std::min(k, all.size());
  RetrievalResult hits;
  hits.reserve(take);
  for (size_t i = 0; i < take; ++i) {
    const Candidate& c = all[i];
    const feat::ShardRecord& rec = (*corpus_)[corpus_pos_[c.row]];
    hits.push_back(
        Hit{c.id, c.score, rec.r_v, rec.r_l, rec.class_name, rec.caption});
  }
  return hits;
}

}  // namespace touchrag::idx
