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

#include "touchrag/tensor.hpp"

namespace touchrag::num {

// Named parameter tensors plus their accumulated gradients. Iteration is
// always in registration order, which keeps optimizer updates, checkpoints,
// and checksums deterministic.
class ParamStore {
 public:
  // Registers a new parameter; duplicate names are a ConfigError. The
  // gradient starts at zero with the same shape. Returns the stored value.
  Tensor& add(const std::string& name, Tensor init);

  bool has(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  size_t total_params() const;

  void zero_grad();
  // grad[name] += g. Shape mismatch is a DimensionError.
  void accumulate_grad(const std::string& name, const Tensor& g);

  // Monotone optimizer step counter (used for AdamW bias correction).
  uint64_t step_count() const { return step_; }
  uint64_t next_step() { return ++step_; }

  // FNV-1a over the raw bytes of all values in registration order. Used to
  // assert bitwise that frozen weights were not touched.
  uint64_t value_checksum() const;

 private:
  struct Slot {
    Tensor value;
    Tensor grad;
  };
  const Slot& slot(const std::string& name) const;
  Slot& slot(const std::string& name);

  std::vector<std::string> order_;
  std::unordered_map<std::string, Slot> slots_;
  uint64_t step_ = 0;
};

// Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initializer shared by all
// weight matrices that are not deliberately zero-initialized.
Tensor uniform_init(size_t rows, size_t cols, size_t fan_in, uint64_t seed);

enum class LrSchedule {
  kWarmupCosine,    // linear warmup, then cosine decay to zero at total_epochs
  kWarmupConstant,  // linear warmup, then flat at the base rate
};

struct OptimConfig {
  double learning_rate = 3e-4;
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int warmup_epochs = 10;
  int total_epochs = 60;
  LrSchedule schedule = LrSchedule::kWarmupCosine;

  // Throws ConfigError when any field is out of range (lr <= 0, betas
  // outside [0,1), epsilon <= 0, warmup > total, ...).
  void validate() const;
};

// Learning rate for a given zero-based epoch under cfg. During warmup epoch
// e runs at base * (e+1) / warmup_epochs (so epoch 0 of a 10-epoch warmup is
// base/10); afterwards either the cosine arc down to zero at total_epochs or
// a constant plateau, depending on cfg.schedule.
double scheduled_lr(const OptimConfig& cfg, int epoch);

// AdamW with decoupled weight decay:
//   m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
//   p <- p*(1 - lr_t*wd) - lr_t * mhat / (sqrt(vhat) + eps)
// where lr_t = scheduled_lr(cfg, epoch) and mhat/vhat are bias-corrected
// with the store's step counter. Moment buffers live in the optimizer and
// are created lazily per parameter.
class AdamW {
 public:
  explicit AdamW(OptimConfig cfg);

  // One update from the gradients currently accumulated in the store.
  // Does not zero them; callers own that.
  void step(ParamStore& params, int epoch);

  const OptimConfig& config() const { return cfg_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  OptimConfig cfg_;
  std::unordered_map<std::string, Moments> moments_;
};

// Scales all gradients in the store so their global L2 norm is at most
// max_norm; a no-op when already within bounds or max_norm <= 0. Returns
// the pre-clip norm. Keeps the first optimizer steps sane when a loss
// surface has a singular point (the zero-initialized query network starts
// on one; see rownormalize in tape.hpp).
double clip_grad_norm(ParamStore& params, double max_norm);

}  // namespace touchrag::num
