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

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "touchrag/features.hpp"

namespace touchrag::idx {

// One retrieval hit. The feature payloads are copied out of the backing
// corpus for the K returned entries only.
struct Hit {
  uint64_t id = 0;
  double score = 0.0;  // true cosine, in [-1, 1]
  feat::FeatureVec r_v;
  feat::FeatureVec r_l;
  std::string class_name;
  std::string caption;
};

// Hits ordered by score descending, ties by ascending id; ids distinct.
using RetrievalResult = std::vector<Hit>;

// Exact top-K cosine retrieval over one embedding column of a corpus.
//
// Rows are unit-normalized at build time and stored as f32 (the shards'
// native precision), so a query dot product is the cosine numerator and the
// only correction needed is dividing by the query norm. The index never
// copies the corpus: it keeps a shared handle and fetches (r_v, r_l,
// caption) for returned hits only, which is what keeps a 150k x 768 build
// within ~1x of the raw f32 payload.
//
// Immutable after build; concurrent queries need no coordination.
class VectorIndex {
 public:
  // Which stored embedding serves as the retrieval key: the text column
  // r_l (the pipeline default: query-to-text), or the image column r_v
  // (used by the retrieval-method ablations).
  enum class Key { kText, kImage };

  // An empty index: size() == 0, every query returns no hits.
  VectorIndex() = default;

  // Builds over all entries. Duplicate ids are a ValidationError; entries
  // whose dims disagree are a DimensionError; zero-norm key vectors are a
  // DegenerateInputError. An empty corpus builds an empty index.
  static VectorIndex build(std::shared_ptr<const std::vector<feat::ShardRecord>> corpus,
                           Key key = Key::kText);

  // Exact top-k by cosine, selected with a bounded heap (no full sort).
  // k >= 1 (ConfigError); query dim must match (DimensionError); a zero
  // query is a DegenerateInputError. Returns min(k, size()) hits; an empty
  // index returns an empty result.
  RetrievalResult topk(const feat::FeatureVec& query, size_t k) const;

  // Independent reference: scores every row, stable-sorts by
  // (-score, id), takes the first k. Same validation and — critically —
  // the same per-row scoring routine and tie rule as topk, so the two must
  // agree bitwise on ids.
  RetrievalResult oracle_topk(const feat::FeatureVec& query, size_t k) const;

  size_t size() const { return ids_.size(); }
  size_t dim() const { return dim_; }
  Key key() const { return key_; }

  // Bytes held by the index itself (row matrix + id array), excluding the
  // shared corpus. The static form lets capacity checks run as arithmetic.
  static size_t estimated_bytes(size_t entries, size_t dim) {
    return entries * dim * sizeof(float) + entries * sizeof(uint64_t);
  }
  size_t bytes() const { return estimated_bytes(size(), dim_); }

 private:
  // Scoring shared verbatim by topk and oracle_topk: f32 dot against the
  // stored unit row, divided by the query's double-precision norm.
  double score_row(size_t row, const std::vector<float>& q,
                   double q_norm) const;

  size_t dim_ = 0;
  Key key_ = Key::kText;
  std::vector<float> rows_;     // size() x dim_, row-major, unit rows
  std::vector<uint64_t> ids_;   // parallel to rows_
  std::vector<size_t> corpus_pos_;  // row -> index into *corpus_
  std::shared_ptr<const std::vector<feat::ShardRecord>> corpus_;
};

}  // namespace touchrag::idx
