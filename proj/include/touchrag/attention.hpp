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
#include <string>

#include "touchrag/tape.hpp"

namespace touchrag::num {

// Multi-head scaled dot-product attention block over row-major sequences.
//
// forward(q [Sq x D], k [Skv x D], v [Skv x D]) projects with Wq/Wk/Wv,
// splits columns into `heads` slices of D/heads, runs
// softmax(qh kh^T / sqrt(D/heads)) vh per head, concatenates, and applies
// the output projection Wo. No positional encodings and no projection
// biases; the pipeline's inputs are unordered pooled features and retrieved
// sets, so position carries no meaning here.
//
// Initialization: Wq/Wk/Wv are seeded uniform(-1/sqrt(D), +1/sqrt(D)); Wo
// starts at zero so a block contributes exactly nothing through its
// residual connection at step 0.
//
// A single key/value token is the common case in this pipeline (one pooled
// vector per modality). The softmax over that one logit is exactly 1, so
// the block degenerates to value+output projection; the computation is kept
// in full rather than special-cased.
class MultiHeadAttention {
 public:
  // Registers wq/wk/wv/wo under "<prefix>." in the store. model_dim must be
  // divisible by heads (ConfigError otherwise). Per-tensor init streams are
  // derived from (seed, parameter name), so layout changes elsewhere in the
  // model never shift this block's initial weights.
  MultiHeadAttention(std::string prefix, size_t model_dim, size_t heads,
                     ParamStore& store, uint64_t seed);

  // Records the block on the tape. q/k/v column counts must equal
  // model_dim, and k and v must agree on row count.
  Var forward(Tape& tape, ParamStore& store, Var q, Var k, Var v,
              bool trainable) const;

  size_t model_dim() const { return model_dim_; }
  size_t heads() const { return heads_; }
  const std::string& prefix() const { return prefix_; }

  static constexpr size_t kDefaultHeads = 4;

 private:
  std::string prefix_;
  size_t model_dim_;
  size_t heads_;
};

}  // namespace touchrag::num
