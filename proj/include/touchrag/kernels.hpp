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

namespace touchrag::kern {

// Data-parallel inner loops used by the tensor math (double) and the index
// scan (float). Two implementations exist for each entry point:
//
//   * a scalar reference version, the semantic ground truth, always built;
//   * an AVX2+FMA version in its own translation unit, built only when the
//     compiler supports the flags.
//
// Which one runs is decided once per process by cpuid (see active()); the
// TOUCHRAG_KERNELS environment variable ("scalar" or "avx2") overrides the
// automatic pick, which the equivalence tests use to exercise both paths.
// SIMD variants may reassociate additions, so results can differ from the
// scalar path by normal floating-point reordering error; tests compare the
// two within tolerances derived from that, never bitwise.
struct Kernels {
  const char* name;

  double (*dot_f64)(const double* a, const double* b, size_t n);
  void (*axpy_f64)(double a, const double* x, double* y, size_t n);  // y += a*x
  void (*scale_f64)(double a, double* x, size_t n);                  // x *= a

  float (*dot_f32)(const float* a, const float* b, size_t n);
  void (*axpy_f32)(float a, const float* x, float* y, size_t n);
};

// The scalar reference implementation. Always available.
const Kernels& scalar_kernels();

// AVX2+FMA implementation, or nullptr when not compiled in or the CPU
// lacks support.
const Kernels* avx2_kernels();

// True when the running CPU reports AVX2 and FMA via cpuid.
bool cpu_has_avx2_fma();

// The implementation selected for this process (resolved once, thread-safe).
const Kernels& active();

}  // namespace touchrag::kern
