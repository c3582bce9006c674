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

#include "touchrag/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "touchrag/core.hpp"
#include "touchrag/kernels.hpp"

namespace touchrag::ret {
namespace {

// Targets are constants, so their norms are computed once in plain double
// math here rather than on the tape.
num::Tensor normalize_rows_or_throw(const num::Tensor& m, const char* what) {
  num::Tensor out(m.rows(), m.cols());
  for (size_t r = 0; r < m.rows(); ++r) {
    double n = std::sqrt(
        kern::active().dot_f64(m.row_ptr(r), m.row_ptr(r), m.cols()));
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw DegenerateInputError(std::string(what) + ": row " +
                                 std::to_string(r) +
                                 " has zero or non-finite norm");
    }
    for (size_t c = 0; c < m.cols(); ++c) out.at(r, c) = m.at(r, c) / n;
  }
  return out;
}

void check_loss_shapes(num::Var Q, const num::Tensor& L, const num::Tensor& T,
                       const char* fn) {
  const num::Tensor& q = Q.value();
  if (!q.same_shape(L) || !q.same_shape(T)) {
    throw DimensionError(std::string(fn) + ": Q is " +
                         std::to_string(q.rows()) + "x" +
                         std::to_string(q.cols()) + " but L is " +
                         std::to_string(L.rows()) + "x" +
                         std::to_string(L.cols()) + " and T is " +
                         std::to_string(T.rows()) + "x" +
                         std::to_string(T.cols()));
  }
}

// Zero-norm-safe cosine for metrics only (the differentiable path uses
// rownormalize). A zero query scores 0 against everything.
double metric_cos(const double* a, const double* b, size_t n) {
  const auto& k = kern::active();
  double na = std::sqrt(k.dot_f64(a, a, n));
  double nb = std::sqrt(k.dot_f64(b, b, n));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return k.dot_f64(a, b, n) / (na * nb);
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(lambda3 >= 0.0)) {
    throw ConfigError("LossWeights: lambda1/2/3 must be >= 0");
  }
  if (!(tau > 0.0)) {
    throw ConfigError("LossWeights: tau must be > 0, got " +
                      std::to_string(tau));
  }
}

void TrainConfig::validate() const {
  weights.validate();
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (batch_size < 2) {
    throw ConfigError("TrainConfig: batch_size must be >= 2 (the stability "
                      "loss needs pairs), got " + std::to_string(batch_size));
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("TrainConfig: learning_rate must be > 0");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("TrainConfig: weight_decay must be >= 0");
  }
  if (warmup_epochs < 1 || warmup_epochs > epochs) {
    throw ConfigError("TrainConfig: warmup_epochs must be in [1, epochs]");
  }
  if (!(grad_clip > 0.0)) {
    throw ConfigError("TrainConfig: grad_clip must be > 0");
  }
}

QueryNetwork::QueryNetwork(size_t dim, size_t heads, num::ParamStore& store,
                           uint64_t seed)
    : dim_(dim),
      sa_v_("sa_v", dim, heads, store, seed),
      sa_t_("sa_t", dim, heads, store, seed),
      ca_("ca", dim, heads, store, seed) {
  // The projection weight follows the same fan-in uniform rule as every
  // other non-gating weight; the zero bias plus the attention blocks' zero
  // Wo still pin the whole network's output to exactly zero before the
  // first update, because the cross-attention output q gates the matmul.
  store.add("proj.w",
            num::uniform_init(dim, dim, dim, mix64(seed, fnv1a("proj.w"))));
  store.add("proj.b", num::Tensor(1, dim, 0.0));
}

num::Var QueryNetwork::forward(num::Tape& tape, num::ParamStore& store,
                               num::Var visual, num::Var tactile,
                               bool trainable) const {
  const num::Tensor& v = visual.value();
  const num::Tensor& t = tactile.value();
  if (v.cols() != dim_ || t.cols() != dim_) {
    throw DimensionError("QueryNetwork::forward: inputs must have " +
                         std::to_string(dim_) + " columns, got " +
                         std::to_string(v.cols()) + " and " +
                         std::to_string(t.cols()));
  }
  if (v.rows() != 1 || t.rows() != 1) {
    throw DimensionError(
        "QueryNetwork::forward: one pooled token per modality expected "
        "(1 x dim rows); use forward_batch for batches");
  }

  num::Var vp = num::add(visual,
                         sa_v_.forward(tape, store, visual, visual, visual,
                                       trainable));
  num::Var tp = num::add(tactile,
                         sa_t_.forward(tape, store, tactile, tactile, tactile,
                                       trainable));
  num::Var q = ca_.forward(tape, store, tp, vp, vp, trainable);
  num::Var w = tape.param(store, "proj.w", trainable);
  num::Var b = tape.param(store, "proj.b", trainable);
  return num::add(q, num::add_rowvec(num::matmul(q, w), b));
}

num::Var QueryNetwork::forward_batch(num::Tape& tape, num::ParamStore& store,
                                     const num::Tensor& V,
                                     const num::Tensor& T,
                                     bool trainable) const {
  if (V.rows() != T.rows() || V.cols() != dim_ || T.cols() != dim_) {
    throw DimensionError("QueryNetwork::forward_batch: V is " +
                         std::to_string(V.rows()) + "x" +
                         std::to_string(V.cols()) + ", T is " +
                         std::to_string(T.rows()) + "x" +
                         std::to_string(T.cols()) + ", dim is " +
                         std::to_string(dim_));
  }
  if (V.rows() == 0) {
    throw ConfigError("QueryNetwork::forward_batch: empty batch");
  }
  std::vector<num::Var> rows;
  rows.reserve(V.rows());
  for (size_t r = 0; r < V.rows(); ++r) {
    num::Var vi = tape.input(num::Tensor::from(
        1, dim_, std::span<const double>(V.row_ptr(r), dim_)));
    num::Var ti = tape.input(num::Tensor::from(
        1, dim_, std::span<const double>(T.row_ptr(r), dim_)));
    rows.push_back(forward(tape, store, vi, ti, trainable));
  }
  if (rows.size() == 1) return rows[0];
  return num::concat_rows(rows);
}

feat::FeatureVec QueryNetwork::query(num::ParamStore& store,
                                     const feat::FeatureVec& visual,
                                     const feat::FeatureVec& tactile) const {
  if (visual.size() != dim_ || tactile.size() != dim_) {
    throw DimensionError("QueryNetwork::query: inputs must have dim " +
                         std::to_string(dim_));
  }
  num::Tape tape;
  num::Var v = tape.input(num::Tensor::row(visual));
  num::Var t = tape.input(num::Tensor::row(tactile));
  num::Var q = forward(tape, store, v, t, /*trainable=*/false);
  const num::Tensor& out = q.value();
  return feat::FeatureVec(out.data(), out.data() + out.numel());
}

num::Var loss_align(num::Tape& tape, num::Var Q, const num::Tensor& L,
                    const num::Tensor& T, const LossWeights& w) {
  w.validate();
  check_loss_shapes(Q, L, T, "loss_align");
  num::Var ln = tape.input(normalize_rows_or_throw(L, "loss_align: L"));
  num::Var tn = tape.input(normalize_rows_or_throw(T, "loss_align: T"));
  num::Var qn = num::rownormalize(Q);
  num::Var cos_ql = num::sum_rows(num::mul(qn, ln));  // B x 1
  num::Var cos_qt = num::sum_rows(num::mul(qn, tn));
  return num::add(num::mean_all(num::affine(cos_ql, -1.0, 1.0)),
                  num::scale(num::mean_all(num::affine(cos_qt, -1.0, 1.0)),
                             w.lambda1));
}

namespace {

struct StabilityParts {
  num::Var mse;
  num::Var div;
  num::Var nce;
};

StabilityParts stability_parts(num::Tape& tape, num::Var Q,
                               const num::Tensor& L, const num::Tensor& T,
                               const LossWeights& w, const char* fn) {
  check_loss_shapes(Q, L, T, fn);
  if (Q.value().rows() < 2) {
    throw ConfigError(std::string(fn) +
                      ": needs a batch of at least 2 samples, got " +
                      std::to_string(Q.value().rows()));
  }

  StabilityParts parts;
  num::Var diff = num::sub(Q, tape.input(L));
  parts.mse = num::sum_all(num::mul(diff, diff));

  num::Var qn = num::rownormalize(Q);
  // Pairwise query cosines; the objective charges only the off-diagonal
  // mass, so the diagonal (always ~1) is subtracted back out.
  num::Var c = num::matmul(qn, num::transpose(qn));
  parts.div = num::sub(num::sum_all(c), num::sum_all(num::diag(c)));

  num::Var tn = tape.input(normalize_rows_or_throw(T, fn));
  num::Var logits =
      num::scale(num::matmul(qn, num::transpose(tn)), 1.0 / w.tau);
  // -log softmax along each row, summed over the matched (i, i) entries:
  // sum_i [logsumexp_j(logits_ij) - logits_ii].
  parts.nce = num::sub(num::sum_all(num::logsumexp_rows(logits)),
                       num::sum_all(num::diag(logits)));
  return parts;
}

}  // namespace

num::Var loss_stability(num::Tape& tape, num::Var Q, const num::Tensor& L,
                        const num::Tensor& T, const LossWeights& w) {
  w.validate();
  StabilityParts p = stability_parts(tape, Q, L, T, w, "loss_stability");
  return num::add(num::scale(p.mse, w.lambda2),
                  num::scale(num::add(p.div, p.nce), w.lambda3));
}

LossTerms total_loss(num::Tape& tape, num::Var Q, const num::Tensor& L,
                     const num::Tensor& T, const LossWeights& w) {
  w.validate();
  LossTerms terms;
  terms.align = loss_align(tape, Q, L, T, w);
  StabilityParts p = stability_parts(tape, Q, L, T, w, "total_loss");
  terms.mse = p.mse;
  terms.div = p.div;
  terms.nce = p.nce;
  terms.total =
      num::add(terms.align,
               num::add(num::scale(terms.mse, w.lambda2),
                        num::scale(num::add(terms.div, terms.nce),
                                   w.lambda3)));
  return terms;
}

std::vector<EpochMetrics> train_retriever(
    const std::vector<feat::TriModalSample>& data, QueryNetwork& net,
    num::ParamStore& store, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() < 2) {
    throw ConfigError("train_retriever: need at least 2 samples, got " +
                      std::to_string(data.size()));
  }
  const size_t dim = net.dim();
  for (size_t i = 0; i < data.size(); ++i) {
    if (data[i].visual.size() != dim || data[i].tactile.size() != dim ||
        data[i].text.size() != dim) {
      throw DimensionError("train_retriever: sample " + std::to_string(i) +
                           " does not match network dim " +
                           std::to_string(dim));
    }
  }

  num::OptimConfig oc;
  oc.learning_rate = cfg.learning_rate;
  oc.weight_decay = cfg.weight_decay;
  oc.warmup_epochs = cfg.warmup_epochs;
  oc.total_epochs = cfg.epochs;
  oc.schedule = cfg.schedule;
  oc.beta1 = cfg.beta1;
  oc.beta2 = cfg.beta2;
  oc.validate();
  num::AdamW opt(oc);

  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<EpochMetrics> history;
  history.reserve(size_t(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix64(cfg.seed, uint64_t(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    double cos_ql_sum = 0.0;
    double cos_qt_sum = 0.0;
    size_t batches = 0;
    size_t samples_used = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t b = std::min(cfg.batch_size, order.size() - start);
      if (b < 2) continue;  // stability loss is undefined on a lone sample

      num::Tensor V(b, dim), T(b, dim), L(b, dim);
      for (size_t i = 0; i < b; ++i) {
        const feat::TriModalSample& s = data[order[start + i]];
        std::copy(s.visual.begin(), s.visual.end(), V.row_ptr(i));
        std::copy(s.tactile.begin(), s.tactile.end(), T.row_ptr(i));
        std::copy(s.text.begin(), s.text.end(), L.row_ptr(i));
      }

      num::Tape tape;
      num::Var Q = net.forward_batch(tape, store, V, T, /*trainable=*/true);
      LossTerms lt = total_loss(tape, Q, L, T, cfg.weights);

      store.zero_grad();
      tape.backward(lt.total);
      num::clip_grad_norm(store, cfg.grad_clip);
      opt.step(store, epoch);

      loss_sum += lt.total.value().scalar_value();
      const num::Tensor& q = Q.value();
      for (size_t i = 0; i < b; ++i) {
        cos_ql_sum += metric_cos(q.row_ptr(i), L.row_ptr(i), dim);
        cos_qt_sum += metric_cos(q.row_ptr(i), T.row_ptr(i), dim);
      }
      ++batches;
      samples_used += b;
    }

    if (batches == 0) {
      throw StateError("train_retriever: no usable batches in epoch " +
                       std::to_string(epoch));
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = num::scheduled_lr(oc, epoch);
    m.loss = loss_sum / double(batches);
    m.mean_cos_ql = cos_ql_sum / double(samples_used);
    m.mean_cos_qt = cos_qt_sum / double(samples_used);
    history.push_back(m);
  }
  return history;
}

idx::RetrievalResult retrieve(const feat::FeatureVec& visual,
                              const feat::FeatureVec& tactile,
                              num::ParamStore& store, const QueryNetwork& net,
                              const idx::VectorIndex& index, size_t k) {
  feat::FeatureVec q = net.query(store, visual, tactile);
  return index.topk(q, k);
}

}  // namespace touchrag::ret
