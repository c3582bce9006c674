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

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace touchrag::num {

// Dense row-major matrix of doubles. All model math runs in double
// precision so finite-difference gradient checks have headroom; persisted
// payloads (checkpoints, shards) are single precision by format.
//
// Rank is fixed at 2. Vectors are represented as 1xN rows and scalars as
// 1x1, which keeps shape handling trivial without losing anything the
// pipeline needs.
class Tensor {
 public:
  Tensor() = default;
  Tensor(size_t rows, size_t cols, double fill = 0.0);

  // Builds from explicit data; data.size() must equal rows*cols.
  static Tensor from(size_t rows, size_t cols, std::span<const double> data);
  static Tensor from(size_t rows, size_t cols, std::initializer_list<double> data);
  static Tensor scalar(double v);
  static Tensor row(std::span<const double> data);
  static Tensor row(std::initializer_list<double> data);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t numel() const { return data_.size(); }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }
  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double& at(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double at(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  double* row_ptr(size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(size_t r) const { return data_.data() + r * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> span() const { return {data_.data(), data_.size()}; }
  std::span<double> span() { return {data_.data(), data_.size()}; }

  // Value of a 1x1 tensor; throws DimensionError otherwise.
  double scalar_value() const;

  bool all_finite() const;

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws NumericError naming `op` if any element of t is NaN or Inf.
// Called after every graph operation: non-finite values are hard errors
// here, never silently propagated into training.
void check_finite(const Tensor& t, const char* op);

// C = A * B. Row-major triple product via axpy over rows of B, which keeps
// the inner loop contiguous. Zero scalars skip their axpy, so multiplying
// by an identity (or any sparse-ish) matrix is exact.
Tensor matmul(const Tensor& a, const Tensor& b);

// Row-wise softmax with max subtraction; each output row sums to 1 within
// 1e-9 and large logits cannot overflow.
Tensor softmax_rows(const Tensor& t);

Tensor transpose(const Tensor& t);

}  // namespace touchrag::num
