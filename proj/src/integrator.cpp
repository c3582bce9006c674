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

#include "touchrag/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>

#include "touchrag/core.hpp"

namespace touchrag::integ {
namespace {

num::Tensor row_tensor(const feat::FeatureVec& v) {
  return num::Tensor::row(std::span<const double>(v.data(), v.size()));
}

num::Tensor stack_hits(const idx::RetrievalResult& hits, bool visual,
                       size_t dim) {
  // No hits: the 0 x 0 empty tensor is the K = 0 marker integrate() checks
  // for (a sized tensor cannot have zero rows).
  if (hits.empty()) return num::Tensor{};
  num::Tensor out(hits.size(), dim);
  for (size_t i = 0; i < hits.size(); ++i) {
    const feat::FeatureVec& r = visual ? hits[i].r_v : hits[i].r_l;
    if (r.size() != dim) {
      throw DimensionError("integrate: hit " + std::to_string(i) + " has " +
                           (visual ? std::string("r_v") : std::string("r_l")) +
                           " dim " + std::to_string(r.size()) +
                           ", expected " + std::to_string(dim));
    }
    std::copy(r.begin(), r.end(), out.row_ptr(i));
  }
  return out;
}

}  // namespace

TextureIntegrator::TextureIntegrator(size_t dim, size_t prompt_dim,
                                     size_t heads, num::ParamStore& store,
                                     uint64_t seed, size_t ffn_hidden)
    : dim_(dim),
      prompt_dim_(prompt_dim),
      ffn_hidden_(ffn_hidden == 0 ? prompt_dim : ffn_hidden),
      ca_v_("ca_v", dim, heads, store, seed),
      ca_l_("ca_l", dim, heads, store, seed) {
  if (prompt_dim_ == 0) {
    throw ConfigError("TextureIntegrator: prompt_dim must be >= 1");
  }
  // Fusion and FFN output sides start at zero (see class comment); the
  // input-side weights take the shared seeded uniform init so gradients
  // have something to flow through from step one.
  store.add("fuse.w", num::uniform_init(dim_, prompt_dim_, dim_,
                                        mix64(seed, fnv1a("fuse.w"))));
  store.add("fuse.b", num::Tensor(1, prompt_dim_, 0.0));
  store.add("ffn.w1", num::uniform_init(prompt_dim_, ffn_hidden_, prompt_dim_,
                                        mix64(seed, fnv1a("ffn.w1"))));
  store.add("ffn.b1", num::Tensor(1, ffn_hidden_, 0.0));
  store.add("ffn.w2", num::Tensor(ffn_hidden_, prompt_dim_, 0.0));
  store.add("ffn.b2", num::Tensor(1, prompt_dim_, 0.0));
  store.add("prompt.w", num::uniform_init(dim_, prompt_dim_, dim_,
                                          mix64(seed, fnv1a("prompt.w"))));
  store.add("prompt.b", num::Tensor(1, prompt_dim_, 0.0));
}

num::Var TextureIntegrator::prompt(num::Tape& tape, num::ParamStore& store,
                                   num::Var visual, num::Var tactile,
                                   bool trainable) const {
  const num::Tensor& v = visual.value();
  const num::Tensor& t = tactile.value();
  if (v.rows() != 1 || t.rows() != 1 || v.cols() != dim_ ||
      t.cols() != dim_) {
    throw DimensionError("TextureIntegrator::prompt: inputs must be 1 x " +
                         std::to_string(dim_) + ", got " +
                         std::to_string(v.rows()) + "x" +
                         std::to_string(v.cols()) + " and " +
                         std::to_string(t.rows()) + "x" +
                         std::to_string(t.cols()));
  }
  num::Var wp = tape.param(store, "prompt.w", trainable);
  num::Var bp = tape.param(store, "prompt.b", trainable);
  return num::add_rowvec(num::matmul(num::add(visual, tactile), wp), bp);
}

num::Var TextureIntegrator::integrate(num::Tape& tape, num::ParamStore& store,
                                      num::Var tactile,
                                      const num::Tensor& r_v,
                                      const num::Tensor& r_l, num::Var p,
                                      Modality mode, bool trainable) const {
  const num::Tensor& t = tactile.value();
  if (t.rows() != 1 || t.cols() != dim_) {
    throw DimensionError("integrate: tactile must be 1 x " +
                         std::to_string(dim_));
  }
  if (p.value().rows() != 1 || p.value().cols() != prompt_dim_) {
    throw DimensionError("integrate: p must be 1 x " +
                         std::to_string(prompt_dim_));
  }
  if (r_v.rows() != r_l.rows()) {
    throw DimensionError("integrate: r_v has " + std::to_string(r_v.rows()) +
                         " rows but r_l has " + std::to_string(r_l.rows()) +
                         " (retrieved pairs must stay paired)");
  }
  if (r_v.rows() == 0) return p;  // no retrieval: the prompt stands as-is
  if (r_v.cols() != dim_ || r_l.cols() != dim_) {
    throw DimensionError("integrate: retrieved rows must have dim " +
                         std::to_string(dim_));
  }

  num::Var attended{};
  if (mode == Modality::kBoth || mode == Modality::kImageOnly) {
    num::Var rv = tape.input(r_v);
    attended = ca_v_.forward(tape, store, tactile, rv, rv, trainable);
  }
  if (mode == Modality::kBoth || mode == Modality::kTextOnly) {
    num::Var rl = tape.input(r_l);
    num::Var al = ca_l_.forward(tape, store, tactile, rl, rl, trainable);
    attended = attended.valid() ? num::add(attended, al) : al;
  }

  num::Var fw = tape.param(store, "fuse.w", trainable);
  num::Var fb = tape.param(store, "fuse.b", trainable);
  num::Var fused = num::add_rowvec(num::matmul(attended, fw), fb);

  num::Var w1 = tape.param(store, "ffn.w1", trainable);
  num::Var b1 = tape.param(store, "ffn.b1", trainable);
  num::Var w2 = tape.param(store, "ffn.w2", trainable);
  num::Var b2 = tape.param(store, "ffn.b2", trainable);
  num::Var hidden = num::relu(num::add_rowvec(num::matmul(fused, w1), b1));
  num::Var ffn = num::add(
      fused, num::add_rowvec(num::matmul(hidden, w2), b2));

  return num::add(p, ffn);
}

feat::FeatureVec TextureIntegrator::make_visual_prompt(
    num::ParamStore& store, const feat::FeatureVec& visual,
    const feat::FeatureVec& tactile) const {
  num::Tape tape;
  num::Var v = tape.input(row_tensor(visual));
  num::Var t = tape.input(row_tensor(tactile));
  num::Var p = prompt(tape, store, v, t, /*trainable=*/false);
  const num::Tensor& out = p.value();
  return feat::FeatureVec(out.data(), out.data() + out.numel());
}

feat::FeatureVec TextureIntegrator::integrate(
    num::ParamStore& store, const feat::FeatureVec& visual,
    const feat::FeatureVec& tactile, const idx::RetrievalResult& hits,
    Modality mode) const {
  num::Tape tape;
  num::Var v = tape.input(row_tensor(visual));
  num::Var t = tape.input(row_tensor(tactile));
  num::Var p = prompt(tape, store, v, t, /*trainable=*/false);
  num::Tensor r_v = stack_hits(hits, /*visual=*/true, dim_);
  num::Tensor r_l = stack_hits(hits, /*visual=*/false, dim_);
  num::Var pp = integrate(tape, store, t, r_v, r_l, p, mode,
                          /*trainable=*/false);
  const num::Tensor& out = pp.value();
  return feat::FeatureVec(out.data(), out.data() + out.numel());
}

AdjectiveVocab::AdjectiveVocab(std::vector<std::string> adjectives)
    : words_(std::move(adjectives)) {
  std::sort(words_.begin(), words_.end());
  words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
  if (words_.empty()) {
    throw ConfigError("AdjectiveVocab: empty vocabulary");
  }
  index_.reserve(words_.size() * 2);
  for (size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = i;
}

AdjectiveVocab AdjectiveVocab::harvest(
    const std::vector<feat::ShardRecord>& entries) {
  std::vector<std::string> all;
  all.reserve(entries.size() * corp::TactileCaption::kAdjectives);
  for (size_t i = 0; i < entries.size(); ++i) {
    try {
      corp::TactileCaption cap =
          corp::TactileCaption::parse(entries[i].caption);
      for (const auto& adj : cap.adjectives()) all.push_back(adj);
    } catch (const ValidationError& e) {
      throw ValidationError("AdjectiveVocab::harvest: entry " +
                            std::to_string(i) + " (id " +
                            std::to_string(entries[i].id) + "): " + e.what());
    }
  }
  return AdjectiveVocab(std::move(all));
}

bool AdjectiveVocab::contains(const std::string& word) const {
  return index_.find(word) != index_.end();
}

size_t AdjectiveVocab::index_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) {
    throw ValidationError("AdjectiveVocab: '" + word +
                          "' is not in the vocabulary");
  }
  return it->second;
}

num::Tensor AdjectiveVocab::target_row(
    const corp::TactileCaption& caption) const {
  num::Tensor row(1, words_.size(), 0.0);
  for (const auto& adj : caption.adjectives()) row.at(0, index_of(adj)) = 1.0;
  return row;
}

CaptionHead::CaptionHead(size_t prompt_dim, AdjectiveVocab vocab,
                         num::ParamStore& store, uint64_t seed)
    : prompt_dim_(prompt_dim), vocab_(std::move(vocab)) {
  if (prompt_dim_ == 0) {
    throw ConfigError("CaptionHead: prompt_dim must be >= 1");
  }
  store.add("caption.w",
            num::uniform_init(prompt_dim_, vocab_.size(), prompt_dim_,
                              mix64(seed, fnv1a("caption.w"))));
  store.add("caption.b", num::Tensor(1, vocab_.size(), 0.0));
}

num::Var CaptionHead::logits(num::Tape& tape, num::ParamStore& store,
                             num::Var p_prime, bool trainable) const {
  const num::Tensor& p = p_prime.value();
  if (p.rows() != 1 || p.cols() != prompt_dim_) {
    throw DimensionError("CaptionHead::logits: p' must be 1 x " +
                         std::to_string(prompt_dim_) + ", got " +
                         std::to_string(p.rows()) + "x" +
                         std::to_string(p.cols()));
  }
  num::Var w = tape.param(store, "caption.w", trainable);
  num::Var b = tape.param(store, "caption.b", trainable);
  return num::add_rowvec(num::matmul(p_prime, w), b);
}

std::vector<std::string> CaptionHead::predict(
    num::ParamStore& store, const feat::FeatureVec& p_prime) const {
  num::Tape tape;
  num::Var p = tape.input(row_tensor(p_prime));
  num::Var z = logits(tape, store, p, /*trainable=*/false);
  const num::Tensor& scores = z.value();

  std::vector<size_t> order(vocab_.size());
  std::iota(order.begin(), order.end(), size_t{0});
  // Ties resolve toward the earlier vocabulary word; stable_sort preserves
  // the iota order within equal logits.
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return scores.at(0, a) > scores.at(0, b);
  });

  size_t take = std::min<size_t>(corp::TactileCaption::kAdjectives,
                                 order.size());
  std::vector<std::string> out;
  out.reserve(take);
  for (size_t i = 0; i < take; ++i) out.push_back(vocab_.words()[order[i]]);
  return out;
}

void IntegratorTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("IntegratorTrainConfig: epochs >= 1");
  if (batch_size < 1) {
    throw ConfigError("IntegratorTrainConfig: batch_size >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("IntegratorTrainConfig: learning_rate must be > 0");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("IntegratorTrainConfig: weight_decay must be >= 0");
  }
  if (warmup_epochs < 1 || warmup_epochs > epochs) {
    throw ConfigError(
        "IntegratorTrainConfig: warmup_epochs must be in [1, epochs]");
  }
  if (k < 1) throw ConfigError("IntegratorTrainConfig: k must be >= 1");
  if (!(grad_clip > 0.0)) {
    throw ConfigError("IntegratorTrainConfig: grad_clip must be > 0");
  }
}

std::vector<idx::RetrievalResult> precompute_retrievals(
    const std::vector<IntegratorSample>& dataset,
    const ret::QueryNetwork& retriever, num::ParamStore& retriever_store,
    const idx::VectorIndex& index, size_t k) {
  std::vector<idx::RetrievalResult> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset) {
    out.push_back(ret::retrieve(s.visual, s.tactile, retriever_store,
                                retriever, index, k));
  }
  return out;
}

std::vector<IntegratorEpochMetrics> train_integrator(
    const std::vector<IntegratorSample>& dataset,
    const std::vector<idx::RetrievalResult>& retrievals,
    TextureIntegrator& integrator, CaptionHead& head, num::ParamStore& store,
    const IntegratorTrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) {
    throw ConfigError("train_integrator: empty dataset");
  }
  if (retrievals.size() != dataset.size()) {
    throw ConfigError("train_integrator: " + std::to_string(dataset.size()) +
                      " samples but " + std::to_string(retrievals.size()) +
                      " retrieval results; they must be parallel");
  }
  const size_t dim = integrator.dim();
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].visual.size() != dim || dataset[i].tactile.size() != dim) {
      throw DimensionError("train_integrator: sample " + std::to_string(i) +
                           " does not match integrator dim " +
                           std::to_string(dim));
    }
  }

  // Hit payloads as matrices, staged once; epochs only re-shuffle indices.
  std::vector<num::Tensor> rv_stack(dataset.size()), rl_stack(dataset.size());
  std::vector<num::Tensor> targets(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    rv_stack[i] = stack_hits(retrievals[i], /*visual=*/true, dim);
    rl_stack[i] = stack_hits(retrievals[i], /*visual=*/false, dim);
    targets[i] = head.vocab().target_row(dataset[i].caption);
  }

  num::OptimConfig oc;
  oc.learning_rate = cfg.learning_rate;
  oc.weight_decay = cfg.weight_decay;
  oc.warmup_epochs = cfg.warmup_epochs;
  oc.total_epochs = cfg.epochs;
  oc.schedule = cfg.schedule;
  oc.validate();
  num::AdamW opt(oc);

  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<IntegratorEpochMetrics> history;
  history.reserve(size_t(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix64(cfg.seed, uint64_t(epoch)));
    rng.shuffle(order);

    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t b = std::min(cfg.batch_size, order.size() - start);
      store.zero_grad();
      // Per-sample graphs; gradients sum in the store across the batch.
      for (size_t i = 0; i < b; ++i) {
        size_t s = order[start + i];
        num::Tape tape;
        num::Var v = tape.input(row_tensor(dataset[s].visual));
        num::Var t = tape.input(row_tensor(dataset[s].tactile));
        num::Var p = integrator.prompt(tape, store, v, t, /*trainable=*/true);
        num::Var pp = integrator.integrate(tape, store, t, rv_stack[s],
                                           rl_stack[s], p, cfg.modality,
                                           /*trainable=*/true);
        num::Var z = head.logits(tape, store, pp, /*trainable=*/true);
        num::Var loss = num::bce_with_logits(z, targets[s]);
        tape.backward(loss);
        loss_sum += loss.value().scalar_value();
      }
      num::clip_grad_norm(store, cfg.grad_clip);
      opt.step(store, epoch);
    }

    // Exact-match accuracy over the epoch's end-state weights.
    size_t matched = 0;
    for (size_t s = 0; s < dataset.size(); ++s) {
      feat::FeatureVec pp = integrator.integrate(
          store, dataset[s].visual, dataset[s].tactile, retrievals[s],
          cfg.modality);
      std::vector<std::string> pred = head.predict(store, pp);
      std::set<std::string> got(pred.begin(), pred.end());
      std::set<std::string> want(dataset[s].caption.adjectives().begin(),
                                 dataset[s].caption.adjectives().end());
      if (got == want) ++matched;
    }

    IntegratorEpochMetrics m;
    m.epoch = epoch;
    m.lr = num::scheduled_lr(oc, epoch);
    m.loss = loss_sum / double(dataset.size());
    m.exact_match = double(matched) / double(dataset.size());
    history.push_back(m);
  }
  return history;
}

}  // namespace touchrag::integ
