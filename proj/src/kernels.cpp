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

#include "touchrag/kernels.hpp"

#include <cstdlib>
#include <cstring>

#if defined(__x86_64__) || defined(_M_X64)
#include <cpuid.h>
#define TOUCHRAG_X86 1
#endif

namespace touchrag::kern {
namespace {

// --- scalar reference kernels ----------------------------------------------
// Plain loops, one element at a time, in index order. These define the
// semantics the SIMD variants are tested against.

double dot_f64_scalar(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f64_scalar(double a, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_f64_scalar(double a, double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] *= a;
}

float dot_f32_scalar(const float* a, const float* b, size_t n) {
  float acc = 0.0f;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f32_scalar(float a, const float* x, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

const Kernels kScalar = {
    "scalar",         dot_f64_scalar, axpy_f64_scalar,
    scale_f64_scalar, dot_f32_scalar, axpy_f32_scalar,
};

const Kernels* pick_active() {
  const char* forced = std::getenv("TOUCHRAG_KERNELS");
  if (forced != nullptr) {
    if (std::strcmp(forced, "scalar") == 0) return &kScalar;
    if (std::strcmp(forced, "avx2") == 0 && avx2_kernels() != nullptr)
      return avx2_kernels();
    // Unknown or unavailable override: fall through to auto-detection so a
    // typo degrades gracefully instead of crashing the process.
  }
  if (const Kernels* v = avx2_kernels()) return v;
  return &kScalar;
}

}  // namespace

const Kernels& scalar_kernels() { return kScalar; }

bool cpu_has_avx2_fma() {
#ifdef TOUCHRAG_X86
  unsigned eax, ebx, ecx, edx;
  // FMA is leaf 1 ECX bit 12; AVX2 is leaf 7 subleaf 0 EBX bit 5.
  if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
  bool fma = (ecx & (1u << 12)) != 0;
  if (__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx) == 0) return false;
  bool avx2 = (ebx & (1u << 5)) != 0;
  return fma && avx2;
#else
  return false;
#endif
}

#ifndef TOUCHRAG_BUILD_AVX2
// AVX2 translation unit not built on this toolchain/architecture.
const Kernels* avx2_kernels() { return nullptr; }
#endif

const Kernels& active() {
  static const Kernels* chosen = pick_active();
  return *chosen;
}

}  // namespace touchrag::kern
