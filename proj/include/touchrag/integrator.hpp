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
#include <unordered_map>
#include <vector>

#include "touchrag/attention.hpp"
#include "touchrag/corpus.hpp"
#include "touchrag/features.hpp"
#include "touchrag/index.hpp"
#include "touchrag/optim.hpp"
#include "touchrag/retriever.hpp"
#include "touchrag/tape.hpp"

namespace touchrag::integ {

// Which retrieved stream feeds the fusion: both attention branches summed,
// or a single branch for the ablation runs.
enum class Modality { kBoth, kImageOnly, kTextOnly };

// Fuses retrieved context into a visual prompt.
//
//   p  = (V + T) Wp + bp                       (prompt projection, D -> D')
//   aV = CA(T, R_v, R_v)                       (tactile query over retrieved
//   aL = CA(T, R_l, R_l)                        visual / text features, at D)
//   p' = p + FFN((aV + aL) Wf + bf)            (fuse D -> D', then refine)
//
// where FFN(x) = x + relu(x W1 + b1) W2 + b2 is residual-inside with hidden
// width D' by default. Both attention blocks' Wo and the FFN's W2/b2 (and
// the fuse bias) start at zero, so at initialization aV = aL = 0 and
// FFN(fuse(0)) = 0: the untrained module returns p' == p bitwise, for any
// retrievals — it can only improve on the baseline prompt by learning to.
//
// The K retrieved rows are an unordered set: no positional encoding, so
// integrate() is invariant under any paired permutation of (R_v, R_l) rows.
// K = 0 short-circuits to p, which keeps the no-retrieval baseline in the
// same code path.
class TextureIntegrator {
 public:
  // Registers parameters under "ca_v.", "ca_l.", "fuse.", "ffn.", and
  // "prompt." in the store. dim must be divisible by heads (ConfigError);
  // ffn_hidden = 0 means prompt_dim.
  TextureIntegrator(size_t dim, size_t prompt_dim, size_t heads,
                    num::ParamStore& store, uint64_t seed,
                    size_t ffn_hidden = 0);

  // p = (V + T) Wp + bp. visual/tactile are 1 x dim rows.
  num::Var prompt(num::Tape& tape, num::ParamStore& store, num::Var visual,
                  num::Var tactile, bool trainable) const;

  // p' as above. tactile is 1 x dim; r_v and r_l are K x dim constants with
  // equal K; p is 1 x prompt_dim. K = 0 — spelled as default-constructed
  // empty tensors, since a sized tensor cannot have zero rows — returns p
  // unchanged. The mode drops the unused branch entirely (its parameters
  // then receive no gradient).
  num::Var integrate(num::Tape& tape, num::ParamStore& store, num::Var tactile,
                     const num::Tensor& r_v, const num::Tensor& r_l,
                     num::Var p, Modality mode, bool trainable) const;

  // Plain-value wrappers for inference on a throwaway tape.
  feat::FeatureVec make_visual_prompt(num::ParamStore& store,
                                      const feat::FeatureVec& visual,
                                      const feat::FeatureVec& tactile) const;
  feat::FeatureVec integrate(num::ParamStore& store,
                             const feat::FeatureVec& visual,
                             const feat::FeatureVec& tactile,
                             const idx::RetrievalResult& hits,
                             Modality mode) const;

  size_t dim() const { return dim_; }
  size_t prompt_dim() const { return prompt_dim_; }
  size_t ffn_hidden() const { return ffn_hidden_; }

 private:
  size_t dim_;
  size_t prompt_dim_;
  size_t ffn_hidden_;
  num::MultiHeadAttention ca_v_;
  num::MultiHeadAttention ca_l_;
};

// Ordered adjective vocabulary: unique, lexicographic, so indices are
// stable across runs and checkpoints.
class AdjectiveVocab {
 public:
  // Sorts and dedupes; an empty vocabulary is a ConfigError.
  explicit AdjectiveVocab(std::vector<std::string> adjectives);

  // All adjectives appearing in the entries' captions (each caption must
  // parse as a valid 5-adjective line).
  static AdjectiveVocab harvest(const std::vector<feat::ShardRecord>& entries);

  size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  bool contains(const std::string& word) const;
  // ValidationError when absent.
  size_t index_of(const std::string& word) const;

  // 1 x size() multi-hot row with ones at the caption's adjectives.
  // Adjectives outside the vocabulary are a ValidationError.
  num::Tensor target_row(const corp::TactileCaption& caption) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, size_t> index_;
};

// Per-adjective scorer over prompts: logits = p' Wc + bc, one column per
// vocabulary word. "Generation" is top-5 selection — logit descending,
// ties by vocabulary order.
class CaptionHead {
 public:
  // Registers "caption.w" / "caption.b" in the store.
  CaptionHead(size_t prompt_dim, AdjectiveVocab vocab, num::ParamStore& store,
              uint64_t seed);

  num::Var logits(num::Tape& tape, num::ParamStore& store, num::Var p_prime,
                  bool trainable) const;

  // Top-5 adjectives (all of them when the vocabulary is smaller).
  std::vector<std::string> predict(num::ParamStore& store,
                                   const feat::FeatureVec& p_prime) const;

  const AdjectiveVocab& vocab() const { return vocab_; }
  size_t prompt_dim() const { return prompt_dim_; }

 private:
  size_t prompt_dim_;
  AdjectiveVocab vocab_;
};

// One integrator training sample: the raw modality features plus the
// ground-truth caption. Retrieval context is supplied separately (it is a
// pure function of the frozen retriever, so it is computed once, not per
// epoch).
struct IntegratorSample {
  feat::FeatureVec visual;
  feat::FeatureVec tactile;
  corp::TactileCaption caption;
};

struct IntegratorTrainConfig {
  int epochs = 10;
  size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.02;
  int warmup_epochs = 1;
  uint64_t seed = 1;
  size_t k = 5;  // retrievals per sample when precomputing
  Modality modality = Modality::kBoth;
  double grad_clip = 1e3;
  // Post-warmup decay shape; see ret::TrainConfig::schedule.
  num::LrSchedule schedule = num::LrSchedule::kWarmupCosine;

  void validate() const;
};

struct IntegratorEpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;         // mean per-sample multi-label BCE
  double exact_match = 0.0;  // fraction of samples whose top-5 set == truth
};

// One frozen-retriever lookup per sample (the fused query from each
// sample's own visual+tactile pair). Computed once and reused across all
// integrator epochs; the retriever cannot drift because nothing here ever
// writes to its store.
std::vector<idx::RetrievalResult> precompute_retrievals(
    const std::vector<IntegratorSample>& dataset,
    const ret::QueryNetwork& retriever, num::ParamStore& retriever_store,
    const idx::VectorIndex& index, size_t k);

// AdamW over the integrator + caption-head store: per sample, integrate the
// precomputed hits into the prompt and score the vocabulary against the
// caption's 5-hot target with mean binary cross-entropy. retrievals must be
// parallel to dataset; an empty RetrievalResult means the no-retrieval
// baseline for that sample. Deterministic under a fixed seed.
std::vector<IntegratorEpochMetrics> train_integrator(
    const std::vector<IntegratorSample>& dataset,
    const std::vector<idx::RetrievalResult>& retrievals,
    TextureIntegrator& integrator, CaptionHead& head, num::ParamStore& store,
    const IntegratorTrainConfig& cfg);

}  // namespace touchrag::integ
