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
#include <map>
#include <string>
#include <vector>

namespace touchrag::feat {

// One embedding vector. Stored math runs in double; persisted payloads are
// f32, so anything destined for a shard goes through quantize_f32 first and
// then round-trips bit-exactly.
using FeatureVec = std::vector<double>;

inline constexpr size_t kDefaultDim = 768;
inline constexpr size_t kMinDim = 8;

double norm(const FeatureVec& v);
// Unit-scaled copy; a zero vector is a DegenerateInputError.
FeatureVec l2_normalize(const FeatureVec& v);
// True cosine similarity; zero vectors rejected, mismatched dims are a
// DimensionError.
double cosine(const FeatureVec& a, const FeatureVec& b);
// Rounds every component to the nearest f32 (the persisted precision).
FeatureVec quantize_f32(FeatureVec v);

// The three modalities whose frozen encoders this module stands in for.
enum class Kind { kVisual, kTactile, kText };

// Deterministic synthetic embedding with a fixed, documented geometry:
//
//   raw = prototype(material)                      weight 1.0
//       + kind_offset(kind)                        weight 0.5
//       + appearance(instance mod 16)              weight 1.2, visual only
//       + instance noise direction                 weight `noise`
//   result = quantize_f32(l2_normalize(raw))
//
// The prototype ties all modalities of one material together, the kind
// offset separates modality subspaces, and the appearance term gives visual
// vectors a strong component that is *independent of material*: two objects
// in the same appearance group but different materials look more alike
// (cos ~ 0.62 at noise 0.2) than two same-material objects in different
// appearance groups (cos ~ 0.46). That deliberate confound is what the
// retrieval ablations measure against.
//
// Pure function of its arguments: same inputs, same bits.
FeatureVec synth_embed(Kind kind, uint64_t material_id, uint64_t instance_seed,
                       size_t dim, double noise);

namespace detail {
// Building blocks of synth_embed, exposed so tests can recompute an
// embedding from its parts instead of trusting the composed implementation.
FeatureVec unit_direction(uint64_t seed, size_t dim);
FeatureVec prototype(uint64_t material_id, size_t dim);
FeatureVec kind_offset(Kind kind, size_t dim);
FeatureVec appearance(uint64_t group, size_t dim);

inline constexpr double kKindWeight = 0.5;
inline constexpr double kAppearanceWeight = 1.2;
inline constexpr uint64_t kAppearanceGroups = 16;
}  // namespace detail

// One record of the external-knowledge shard format: an id, the class it
// came from, its tactile caption, and the precomputed visual/text embedding
// pair. The corpus module builds these; the index serves them.
struct ShardRecord {
  uint64_t id = 0;
  std::string class_name;
  std::string caption;
  FeatureVec r_v;
  FeatureVec r_l;
};

// Shard container (integers little-endian):
//
//   magic   "IMNT" (4 bytes)
//   version u16 (currently 1)
//   count   u64
//   dim     u32
//   per record:
//     id       u64
//     class    u16 length + UTF-8 bytes
//     caption  u16 length + UTF-8 bytes
//     r_v      dim x f32
//     r_l      dim x f32
//
// write_shard requires every record to match `dim` and quantizes payloads
// to f32; read_shard validates structure and flags truncation with the
// failing record index and byte offset.
void write_shard(const std::string& path, const std::vector<ShardRecord>& records,
                 size_t dim);
std::vector<ShardRecord> read_shard(const std::string& path);

// Feature table view of a shard, for externally precomputed embeddings.
// expected_dim must equal the file's dim (FormatError otherwise). With
// normalize=true (the pipeline default) vectors are re-normalized on entry;
// raw import keeps them exactly as stored.
struct ImportedFeatures {
  FeatureVec r_v;
  FeatureVec r_l;
};
std::map<uint64_t, ImportedFeatures> import_features(const std::string& path,
                                                     size_t expected_dim,
                                                     bool normalize = false);

// One aligned training example: visual, tactile, and text embeddings of the
// same physical sample plus its ground-truth caption (may be empty for
// purely geometric datasets).
struct TriModalSample {
  uint64_t id = 0;
  FeatureVec visual;
  FeatureVec tactile;
  FeatureVec text;
  std::string caption;
};

// Synthetic aligned dataset used by convergence and collapse experiments.
// Per sample: V is a random unit vector, T = normalize(V + 0.7 u) with u a
// fresh random direction, and the text target is the fixed linear mix
// L = normalize(0.85 V + 0.15 T) — captions lean on appearance, with touch
// as the secondary cue. When common_weight > 0, L additionally mixes in
// one shared global direction with that weight before normalizing — every
// target then leans toward a common mean, which is the regime where
// alignment-only training visibly herds queries together and the stability
// terms earn their keep.
//
// L is predictable from V alone with cos ~ 0.99 (see the least-squares
// oracle in the tests), so the pipeline's single-token attention — whose
// query path cannot influence a one-token softmax — retains enough signal
// to pass the convergence bar.
std::vector<TriModalSample> make_aligned_dataset(size_t n, size_t dim,
                                                 uint64_t seed,
                                                 double common_weight = 0.0);

}  // namespace touchrag::feat
