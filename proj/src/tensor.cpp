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

#include "touchrag/tensor.hpp"

#include <cmath>
#include <sstream>

#include "touchrag/core.hpp"
#include "touchrag/kernels.hpp"

namespace touchrag::num {

Tensor::Tensor(size_t rows, size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0)
    throw DimensionError("Tensor extents must be positive");
}

Tensor Tensor::from(size_t rows, size_t cols, std::span<const double> data) {
  Tensor t(rows, cols);
  if (data.size() != t.numel()) {
    std::ostringstream msg;
    msg << "Tensor::from: " << rows << "x" << cols << " needs " << t.numel()
        << " values, got " << data.size();
    throw DimensionError(msg.str());
  }
  std::copy(data.begin(), data.end(), t.data_.begin());
  return t;
}

Tensor Tensor::from(size_t rows, size_t cols, std::initializer_list<double> data) {
  return from(rows, cols, std::span<const double>(data.begin(), data.size()));
}

Tensor Tensor::scalar(double v) { return from(1, 1, {v}); }

Tensor Tensor::row(std::span<const double> data) {
  return from(1, data.size(), data);
}

Tensor Tensor::row(std::initializer_list<double> data) {
  return from(1, data.size(), std::span<const double>(data.begin(), data.size()));
}

double Tensor::scalar_value() const {
  if (!is_scalar()) {
    std::ostringstream msg;
    msg << "expected 1x1 tensor, have " << rows_ << "x" << cols_;
    throw DimensionError(msg.str());
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    std::ostringstream msg;
    msg << "non-finite value produced by " << op << " on a " << t.rows() << "x"
        << t.cols() << " tensor";
    throw NumericError(msg.str());
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream msg;
    msg << "matmul shape mismatch: " << a.rows() << "x" << a.cols() << " * "
        << b.rows() << "x" << b.cols();
    throw DimensionError(msg.str());
  }
  Tensor c(a.rows(), b.cols(), 0.0);
  const auto& k = kern::active();
  for (size_t i = 0; i < a.rows(); ++i) {
    double* crow = c.row_ptr(i);
    for (size_t kk = 0; kk < a.cols(); ++kk) {
      double s = a.at(i, kk);
      if (s == 0.0) continue;  // skip makes I*A exact and zero-init cheap
      k.axpy_f64(s, b.row_ptr(kk), crow, b.cols());
    }
  }
  return c;
}

Tensor softmax_rows(const Tensor& t) {
  Tensor out(t.rows(), t.cols());
  for (size_t r = 0; r < t.rows(); ++r) {
    const double* in = t.row_ptr(r);
    double* o = out.row_ptr(r);
    double mx = in[0];
    for (size_t c = 1; c < t.cols(); ++c) mx = std::max(mx, in[c]);
    double sum = 0.0;
    for (size_t c = 0; c < t.cols(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    kern::active().scale_f64(1.0 / sum, o, t.cols());
  }
  return out;
}

Tensor transpose(const Tensor& t) {
  Tensor out(t.cols(), t.rows());
  for (size_t r = 0; r < t.rows(); ++r)
    for (size_t c = 0; c < t.cols(); ++c) out.at(c, r) = t.at(r, c);
  return out;
}

}  // namespace touchrag::num
