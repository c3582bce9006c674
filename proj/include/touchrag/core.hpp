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
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace touchrag {

inline constexpr const char* kToolVersion = "touchrag 0.1.0";

// ---------------------------------------------------------------------------
// Error taxonomy.
//
// Everything user-facing funnels into two exit-code families: problems with
// the request itself (bad arguments, bad data, misuse of the API) exit 1,
// problems reaching or decoding bytes on disk exit 2. The CLI maps the
// hierarchy accordingly; library code just throws the most specific type.
// ---------------------------------------------------------------------------

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments: bad hyperparameters, mismatched
// dimensions, unknown enum values.
struct ConfigError : Error {
  using Error::Error;
};

// Shape/dimension mismatch between tensors or feature vectors.
struct DimensionError : ConfigError {
  using ConfigError::ConfigError;
};

// Input data that parses but violates a contract (caption arity, duplicate
// ids, bad manifest rows).
struct ValidationError : Error {
  using Error::Error;
};

// Mathematically unusable input, e.g. normalizing or cosine-scoring a
// zero vector.
struct DegenerateInputError : ValidationError {
  using ValidationError::ValidationError;
};

// API misuse: calling into an object whose prerequisite step never ran.
struct StateError : Error {
  using Error::Error;
};

// A kernel or operation produced NaN/Inf. Always a bug or numeric blowup,
// never silently propagated.
struct NumericError : Error {
  using Error::Error;
};

// File system and byte-level I/O failures. Exit code 2 in the CLI.
struct IoError : Error {
  using Error::Error;
};

// Structurally corrupt file contents: bad magic, truncation, impossible
// lengths. Subtype of IoError so it shares exit code 2.
struct FormatError : IoError {
  using IoError::IoError;
};

// ---------------------------------------------------------------------------
// Deterministic utilities. Everything that introduces randomness in this
// project goes through Rng so identical seeds give identical runs; stdlib
// distributions are avoided because their output is implementation-defined.
// ---------------------------------------------------------------------------

// 64-bit FNV-1a. Used to key materials, parameter init streams, and
// checksums. Stable across platforms by construction.
uint64_t fnv1a(std::string_view s);

// Mix two 64-bit values into one (splitmix64 finalizer over the sum).
// Used to derive independent seed streams from (seed, tag) pairs.
uint64_t mix64(uint64_t a, uint64_t b);

// Seeded PRNG with explicitly-specified derived distributions. mt19937_64's
// output sequence is pinned by the standard, and the uniform/normal/shuffle
// constructions below are written out by hand, so every draw is reproducible
// bit-for-bit on any conforming implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 bits of entropy.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; pairs are generated eagerly and the
  // second value cached, so draw order is still fully deterministic.
  double normal();

  // Unbiased integer in [0, n) by rejection sampling. n must be > 0.
  size_t below(size_t n);

  // Fisher-Yates shuffle driven by below(); deterministic given the seed.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = below(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Little-endian byte encoding helpers shared by the shard and checkpoint
// formats. Encoding is explicit (shift-based) rather than memcpy of host
// integers so the formats stay byte-identical on any endianness.
// ---------------------------------------------------------------------------

void put_u16(std::string& out, uint16_t v);
void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f32(std::string& out, float v);

// Cursor-based reads; each throws FormatError mentioning `what` when fewer
// bytes remain than requested.
struct ByteReader {
  std::string_view buf;
  size_t pos = 0;

  size_t remaining() const { return buf.size() - pos; }
  void need(size_t n, const char* what) const;
  uint16_t u16(const char* what);
  uint32_t u32(const char* what);
  uint64_t u64(const char* what);
  float f32(const char* what);
  std::string bytes(size_t n, const char* what);
};

// Whole-file helpers. read_file throws IoError if the file cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace touchrag
