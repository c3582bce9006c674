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

#include "touchrag/optim.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "touchrag/core.hpp"
#include "touchrag/kernels.hpp"

namespace touchrag::num {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (name.empty()) throw ConfigError("parameter name must be non-empty");
  if (slots_.count(name) != 0)
    throw ConfigError("duplicate parameter name: " + name);
  check_finite(init, "parameter init");
  Slot s;
  s.grad = Tensor(init.rows(), init.cols(), 0.0);
  s.value = std::move(init);
  order_.push_back(name);
  return slots_.emplace(name, std::move(s)).first->second.value;
}

bool ParamStore::has(const std::string& name) const {
  return slots_.count(name) != 0;
}

const ParamStore::Slot& ParamStore::slot(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

ParamStore::Slot& ParamStore::slot(const std::string& name) {
  return const_cast<Slot&>(static_cast<const ParamStore*>(this)->slot(name));
}

Tensor& ParamStore::value(const std::string& name) { return slot(name).value; }
const Tensor& ParamStore::value(const std::string& name) const {
  return slot(name).value;
}
Tensor& ParamStore::grad(const std::string& name) { return slot(name).grad; }
const Tensor& ParamStore::grad(const std::string& name) const {
  return slot(name).grad;
}

size_t ParamStore::total_params() const {
  size_t n = 0;
  for (const auto& name : order_) n += slot(name).value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (const auto& name : order_) {
    Tensor& g = slot(name).grad;
    std::fill(g.data(), g.data() + g.numel(), 0.0);
  }
}

void ParamStore::accumulate_grad(const std::string& name, const Tensor& g) {
  Tensor& dst = slot(name).grad;
  if (!dst.same_shape(g)) {
    std::ostringstream msg;
    msg << "gradient shape mismatch for '" << name << "': " << g.rows() << "x"
        << g.cols() << " vs " << dst.rows() << "x" << dst.cols();
    throw DimensionError(msg.str());
  }
  kern::active().axpy_f64(1.0, g.data(), dst.data(), dst.numel());
}

uint64_t ParamStore::value_checksum() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& name : order_) {
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    const Tensor& v = slot(name).value;
    for (size_t i = 0; i < v.numel(); ++i) {
      uint64_t bits;
      static_assert(sizeof bits == sizeof(double));
      std::memcpy(&bits, v.data() + i, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 0x100000001b3ull;
      }
    }
  }
  return h;
}

Tensor uniform_init(size_t rows, size_t cols, size_t fan_in, uint64_t seed) {
  if (fan_in == 0) throw ConfigError("uniform_init: fan_in must be positive");
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Rng rng(seed);
  Tensor t(rows, cols);
  for (size_t i = 0; i < t.numel(); ++i)
    t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

void OptimConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive and finite");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw ConfigError("weight_decay must be non-negative and finite");
  if (!(beta1 >= 0.0 && beta1 < 1.0))
    throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (warmup_epochs > total_epochs)
    throw ConfigError("warmup_epochs must not exceed total_epochs");
}

double scheduled_lr(const OptimConfig& cfg, int epoch) {
  cfg.validate();
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  int e = std::min(epoch, cfg.total_epochs);
  if (e < cfg.warmup_epochs)
    return cfg.learning_rate * static_cast<double>(e + 1) /
           static_cast<double>(cfg.warmup_epochs);
  if (cfg.schedule == LrSchedule::kWarmupConstant) return cfg.learning_rate;
  int tail = cfg.total_epochs - cfg.warmup_epochs;
  double progress =
      tail == 0 ? 1.0
                : static_cast<double>(e - cfg.warmup_epochs) / static_cast<double>(tail);
  return cfg.learning_rate * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * progress));
}

AdamW::AdamW(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void AdamW::step(ParamStore& params, int epoch) {
  double lr = scheduled_lr(cfg_, epoch);
  uint64_t t = params.next_step();
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  for (const auto& name : params.names()) {
    Tensor& p = params.value(name);
    const Tensor& g = params.grad(name);
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      Moments mm;
      mm.m = Tensor(p.rows(), p.cols(), 0.0);
      mm.v = Tensor(p.rows(), p.cols(), 0.0);
      it = moments_.emplace(name, std::move(mm)).first;
    }
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    if (!m.same_shape(p))
      throw DimensionError("optimizer state shape drifted for '" + name + "'");
    for (size_t i = 0; i < p.numel(); ++i) {
      double gi = g.data()[i];
      double mi = cfg_.beta1 * m.data()[i] + (1.0 - cfg_.beta1) * gi;
      double vi = cfg_.beta2 * v.data()[i] + (1.0 - cfg_.beta2) * gi * gi;
      m.data()[i] = mi;
      v.data()[i] = vi;
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      double pi = p.data()[i] * (1.0 - lr * cfg_.weight_decay);
      p.data()[i] = pi - lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    check_finite(p, "adamw step");
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sumsq = 0.0;
  for (const auto& name : params.names()) {
    const Tensor& g = params.grad(name);
    sumsq += kern::active().dot_f64(g.data(), g.data(), g.numel());
  }
  double norm = std::sqrt(sumsq);
  if (max_norm <= 0.0 || norm <= max_norm || norm == 0.0) return norm;
  double s = max_norm / norm;
  for (const auto& name : params.names()) {
    Tensor& g = params.grad(name);
    kern::active().scale_f64(s, g.data(), g.numel());
  }
  return norm;
}

}  // namespace touchrag::num
