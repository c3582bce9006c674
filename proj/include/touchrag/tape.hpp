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
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "touchrag/tensor.hpp"

namespace touchrag::num {

class ParamStore;
class Tape;

// Handle to a node on a Tape. Cheap to copy; default-constructed handles are
// invalid and rejected by every operation.
struct Var {
  Tape* tape = nullptr;
  uint32_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
};

// Reverse-mode autodiff over Tensor values.
//
// A Tape records one forward computation as a flat list of nodes; backward()
// walks that list in reverse, applying each node's stored pullback. Node
// gradients are reset at the start of every backward() call, but gradients
// of trainable parameters are *accumulated* into their ParamStore at the
// end, so repeated backward passes sum until ParamStore::zero_grad().
//
// Every operation validates shapes up front and checks its output for
// NaN/Inf before recording it; a non-finite value raises NumericError
// immediately instead of surfacing later as a corrupted update.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A constant leaf: participates in the graph, receives a gradient (useful
  // in tests) but is never pushed into any ParamStore.
  Var input(Tensor value);

  // A leaf bound to store[name]. The same (store, name) pair is memoized
  // per tape, so a parameter used by many samples in one batch appears as a
  // single node whose gradient is the sum over all uses. With
  // trainable=false the leaf behaves like input(): gradients flow through
  // it, but the store is left untouched by backward() (frozen weights).
  Var param(ParamStore& store, const std::string& name, bool trainable = true);

  // Runs the reverse sweep from `loss`, which must be a 1x1 tensor recorded
  // on this tape. Throws StateError when no forward pass was recorded (an
  // invalid handle), DimensionError when the loss is not scalar.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() w.r.t. node v. StateError before any
  // backward ran.
  const Tensor& grad(Var v) const;

  size_t size() const { return nodes_.size(); }

  // --- low-level API used by the operation implementations ---------------
  using BackFn = std::function<void(Tape&, uint32_t self)>;
  Var emit(Tensor value, std::vector<uint32_t> parents, BackFn back,
           const char* op);
  Tensor& grad_buffer(uint32_t id) { return nodes_[id].grad; }
  const Tensor& value_at(uint32_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<uint32_t> parents;
    BackFn back;
    ParamStore* store = nullptr;  // non-null for parameter leaves
    std::string param_name;
    bool trainable = false;
  };

  uint32_t check_ours(Var v, const char* op) const;

  std::vector<Node> nodes_;
  std::map<std::pair<const ParamStore*, std::string>, Var> param_cache_;
  bool ran_backward_ = false;
};

// --- differentiable operations ---------------------------------------------
// All of these validate shapes, evaluate eagerly, and register pullbacks.

Var add(Var a, Var b);             // elementwise, same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);             // Hadamard product
Var scale(Var a, double c);        // c * a
Var affine(Var a, double m, double c);  // m * a + c, elementwise
Var add_rowvec(Var m, Var row);    // [S x D] + broadcast [1 x D]
Var matmul(Var a, Var b);
Var transpose(Var a);
Var slice_cols(Var a, size_t c0, size_t c1);   // columns [c0, c1)
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var softmax_rows(Var a);
Var relu(Var a);

// Rows scaled to unit L2 norm. The norm is smoothed as sqrt(|x|^2 + eps^2)
// with eps = 1e-12: invisible for any healthy vector (eps^2 vanishes in
// double next to |x|^2 ~ 1) but it keeps the operation defined, with a
// finite gradient, at the all-zero rows that the zero-initialized query
// network emits on its very first training batch.
Var rownormalize(Var a);

Var logsumexp_rows(Var a);         // [R x C] -> [R x 1], max-shifted
Var sum_rows(Var a);               // [R x C] -> [R x 1]
Var sum_all(Var a);                // -> 1x1
Var mean_all(Var a);               // -> 1x1
Var diag(Var a);                   // [N x N] -> [N x 1] main diagonal

// Mean binary cross-entropy with logits against constant targets in [0,1].
// Computed in the numerically stable max(z,0) - z*t + log1p(exp(-|z|)) form.
Var bce_with_logits(Var logits, const Tensor& targets);

}  // namespace touchrag::num
