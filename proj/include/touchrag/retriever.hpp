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
#include <vector>

#include "touchrag/attention.hpp"
#include "touchrag/features.hpp"
#include "touchrag/index.hpp"
#include "touchrag/optim.hpp"
#include "touchrag/tape.hpp"

namespace touchrag::ret {

// Relative weights of the query-training objective. The alignment term
// pulls queries toward their text targets (and, more weakly, toward the
// tactile input); the stability terms keep the batch from collapsing onto
// one direction once alignment alone would be satisfied by doing exactly
// that.
struct LossWeights {
  double lambda1 = 0.2;   // tactile-cosine share of the alignment loss
  double lambda2 = 10.0;  // squared query-target distance
  double lambda3 = 0.1;   // diversity + contrastive terms, shared weight
  double tau = 0.07;      // contrastive temperature

  // lambda* must be >= 0 and tau strictly positive (ConfigError).
  void validate() const;
};

struct TrainConfig {
  int epochs = 60;
  size_t batch_size = 256;
  double learning_rate = 3e-4;
  double weight_decay = 0.02;
  int warmup_epochs = 10;
  uint64_t seed = 1;
  // Global gradient-norm ceiling. The zero-initialized network starts on
  // the rownormalize singularity, where the very first backward pass can
  // be arbitrarily steep; the clip turns that into a bounded first step.
  double grad_clip = 1e3;
  // Post-warmup decay shape. Constant reproduces recipes that prescribe
  // only a warmup; the cosine arc is the gentler default for open-ended
  // runs.
  num::LrSchedule schedule = num::LrSchedule::kWarmupCosine;
  // AdamW moment decay, exposed for experiments; the defaults are the
  // textbook values and measured best on the aligned-dataset benchmark
  // (shorter second-moment horizons gave up held-out alignment).
  double beta1 = 0.9;
  double beta2 = 0.999;
  LossWeights weights;

  void validate() const;
};

// The query former: two per-modality self-attention blocks with residual
// connections, a cross-attention from the (refined) tactile token into the
// (refined) visual token, and a zero-initialized linear head applied as a
// final residual:
//
//   V' = V + SA_v(V, V, V)
//   T' = T + SA_t(T, T, T)
//   q  = CA(T', V', V')
//   Q  = q + (q Wp + bp)
//
// Every sample is a single pooled token per modality, so each block's
// softmax collapses to 1 and the network is a smooth composition of linear
// maps — but the blocks are evaluated in full, not special-cased.
//
// Each block's Wo and the head bias bp start at zero, so q = 0 gates the
// head matmul and the untrained network emits exactly Q = 0 for every
// input; training has to earn every bit of the query.
class QueryNetwork {
 public:
  // Registers parameters under "sa_v.", "sa_t.", "ca.", and "proj." in the
  // store. dim must be divisible by heads (ConfigError).
  QueryNetwork(size_t dim, size_t heads, num::ParamStore& store,
               uint64_t seed);

  // One sample: visual and tactile are 1 x dim rows on the tape.
  num::Var forward(num::Tape& tape, num::ParamStore& store, num::Var visual,
                   num::Var tactile, bool trainable) const;

  // A batch: V and T are B x dim; rows are independent samples. Runs the
  // single-sample forward per row and stacks the results (samples never
  // attend to each other). Returns the B x dim query matrix.
  num::Var forward_batch(num::Tape& tape, num::ParamStore& store,
                         const num::Tensor& V, const num::Tensor& T,
                         bool trainable) const;

  // Inference: runs one sample on a throwaway tape with frozen weights.
  feat::FeatureVec query(num::ParamStore& store,
                         const feat::FeatureVec& visual,
                         const feat::FeatureVec& tactile) const;

  size_t dim() const { return dim_; }
  size_t heads() const { return sa_v_.heads(); }

 private:
  size_t dim_;
  num::MultiHeadAttention sa_v_;
  num::MultiHeadAttention sa_t_;
  num::MultiHeadAttention ca_;
};

// Scalar nodes of one loss evaluation, kept separate so callers can log the
// raw terms. align is a batch mean; mse/div/nce are batch sums; total is
// the trained objective  align + lambda2 * mse + lambda3 * (div + nce).
struct LossTerms {
  num::Var align;
  num::Var mse;
  num::Var div;
  num::Var nce;
  num::Var total;
};

// Alignment:  mean_i [ (1 - cos(Q_i, L_i)) + lambda1 * (1 - cos(Q_i, T_i)) ].
// Q is the recorded query matrix (B x D); L and T are constant target/input
// matrices of the same shape. Zero rows in L or T are a
// DegenerateInputError (a sample with no target direction is meaningless);
// zero rows in Q are fine — rownormalize is smoothed exactly for the
// zero-initialized first batch.
num::Var loss_align(num::Tape& tape, num::Var Q, const num::Tensor& L,
                    const num::Tensor& T, const LossWeights& w);

// Stability:  lambda2 * sum_i |Q_i - L_i|^2
//           + lambda3 * [ sum_{i != j} cos(Q_i, Q_j)
//                         + sum_i -log softmax_j(cos(Q_i, T_j)/tau)_i ].
// Needs at least two rows (ConfigError): with one sample there are no
// off-diagonal pairs and no contrastive negatives.
num::Var loss_stability(num::Tape& tape, num::Var Q, const num::Tensor& L,
                        const num::Tensor& T, const LossWeights& w);

// Both objectives over one shared graph; see LossTerms.
LossTerms total_loss(num::Tape& tape, num::Var Q, const num::Tensor& L,
                     const num::Tensor& T, const LossWeights& w);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;         // mean of batch totals
  double mean_cos_ql = 0.0;  // mean over samples, zero-norm-safe
  double mean_cos_qt = 0.0;
};

// AdamW training over (visual, tactile, text) triples. Epoch e visits the
// data in a fresh seeded shuffle derived from (cfg.seed, e); a trailing
// batch with fewer than two samples is skipped (the stability loss is
// undefined there). Gradients are clipped to cfg.grad_clip before each
// step. Returns one metrics row per epoch. Deterministic for fixed inputs,
// seed, and kernel selection.
std::vector<EpochMetrics> train_retriever(
    const std::vector<feat::TriModalSample>& data, QueryNetwork& net,
    num::ParamStore& store, const TrainConfig& cfg);

// Forms the query from one (visual, tactile) pair and looks it up. The
// untrained network emits Q = 0, which the index rejects as degenerate —
// retrieval is only meaningful after training.
idx::RetrievalResult retrieve(const feat::FeatureVec& visual,
                              const feat::FeatureVec& tactile,
                              num::ParamStore& store, const QueryNetwork& net,
                              const idx::VectorIndex& index, size_t k);

}  // namespace touchrag::ret
