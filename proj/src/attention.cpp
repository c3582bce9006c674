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

#include "touchrag/attention.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "touchrag/core.hpp"
#include "touchrag/optim.hpp"

namespace touchrag::num {

MultiHeadAttention::MultiHeadAttention(std::string prefix, size_t model_dim,
                                       size_t heads, ParamStore& store,
                                       uint64_t seed)
    : prefix_(std::move(prefix)), model_dim_(model_dim), heads_(heads) {
  if (model_dim == 0) throw ConfigError("attention model_dim must be positive");
  if (heads == 0) throw ConfigError("attention heads must be positive");
  if (model_dim % heads != 0) {
    std::ostringstream msg;
    msg << "attention model_dim " << model_dim << " not divisible by heads "
        << heads;
    throw ConfigError(msg.str());
  }
  auto init = [&](const char* leaf, bool zero) {
    std::string name = prefix_ + "." + leaf;
    Tensor w = zero ? Tensor(model_dim, model_dim, 0.0)
                    : uniform_init(model_dim, model_dim, model_dim,
                                   mix64(seed, fnv1a(name)));
    store.add(name, std::move(w));
  };
  init("wq", false);
  init("wk", false);
  init("wv", false);
  init("wo", true);  // residual identity at step 0
}

Var MultiHeadAttention::forward(Tape& tape, ParamStore& store, Var q, Var k,
                                Var v, bool trainable) const {
  const Tensor& qv = tape.value(q);
  const Tensor& kv = tape.value(k);
  const Tensor& vv = tape.value(v);
  if (qv.cols() != model_dim_ || kv.cols() != model_dim_ ||
      vv.cols() != model_dim_) {
    std::ostringstream msg;
    msg << "attention '" << prefix_ << "' expects width " << model_dim_
        << ", got q:" << qv.cols() << " k:" << kv.cols() << " v:" << vv.cols();
    throw DimensionError(msg.str());
  }
  if (kv.rows() != vv.rows())
    throw DimensionError("attention keys and values must have equal length");

  Var wq = tape.param(store, prefix_ + ".wq", trainable);
  Var wk = tape.param(store, prefix_ + ".wk", trainable);
  Var wv = tape.param(store, prefix_ + ".wv", trainable);
  Var wo = tape.param(store, prefix_ + ".wo", trainable);

  Var qp = matmul(q, wq);
  Var kp = matmul(k, wk);
  Var vp = matmul(v, wv);

  size_t dh = model_dim_ / heads_;
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> ctx;
  ctx.reserve(heads_);
  for (size_t h = 0; h < heads_; ++h) {
    size_t c0 = h * dh, c1 = (h + 1) * dh;
    Var qh = slice_cols(qp, c0, c1);
    Var kh = slice_cols(kp, c0, c1);
    Var vh = slice_cols(vp, c0, c1);
    Var scores = scale(matmul(qh, transpose(kh)), inv_scale);
    Var weights = softmax_rows(scores);
    ctx.push_back(matmul(weights, vh));
  }
  Var merged = concat_cols(ctx);
  return matmul(merged, wo);
}

}  // namespace touchrag::num
