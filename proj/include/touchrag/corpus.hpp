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

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "touchrag/features.hpp"

namespace touchrag::corp {

// One row of the visual source dataset to be recaptioned.
struct ManifestRecord {
  uint64_t id = 0;
  std::string class_name;      // nonempty
  std::string source_caption;  // visual description fed to the captioner
  std::string image_ref;       // opaque; this pipeline never opens it
};

// A validated tactile caption: exactly five lowercase, comma-free,
// whitespace-free adjectives. Serialized as "adj1, adj2, adj3, adj4, adj5".
class TactileCaption {
 public:
  static constexpr size_t kAdjectives = 5;

  // Parses and normalizes free-form captioner output: split on commas, trim
  // surrounding whitespace, lowercase ASCII, strip one trailing '.' / '!'
  // / ';'. Anything that does not reduce to exactly five nonempty tokens is
  // a ValidationError naming the defect (count, or the empty position).
  static TactileCaption parse(const std::string& text);

  const std::array<std::string, kAdjectives>& adjectives() const {
    return adjectives_;
  }
  // Canonical serialized form, adjectives in received order.
  std::string str() const;
  // Order-insensitive key: the sorted adjective multiset joined by commas.
  // Two captions with the same words in different order canonicalize
  // identically.
  std::string canonical() const;

 private:
  TactileCaption() = default;
  std::array<std::string, kAdjectives> adjectives_;
};

// Caption source: takes one fully-rendered prompt line, returns one raw
// caption line. Implementations may be remote and flaky; recaption() owns
// retries and validation.
class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption_line(const std::string& prompt) = 0;
};

// Deterministic offline captioner: hashes the class name out of the prompt
// into a 16-material adjective lexicon and picks five of that material's
// eight adjectives, keyed by the same hash. No I/O, same output forever.
class LexiconCaptioner : public Captioner {
 public:
  std::string caption_line(const std::string& prompt) override;
};

// Captioner speaking the wire protocol to a child process: one prompt line
// out (embedded newlines escaped as "\n"), one caption line back; an empty
// response line means the captioner failed on that input. The child is
// spawned once and fed requests over its stdin/stdout.
class PipeCaptioner : public Captioner {
 public:
  // argv[0] is the executable; spawn failures surface as IoError.
  explicit PipeCaptioner(std::vector<std::string> argv);
  ~PipeCaptioner() override;
  PipeCaptioner(const PipeCaptioner&) = delete;
  PipeCaptioner& operator=(const PipeCaptioner&) = delete;

  std::string caption_line(const std::string& prompt) override;

 private:
  int child_pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

// The 16-material adjective lexicon behind the offline captioner and the
// synthetic corpus. Adjectives are globally unique across materials, so
// caption overlap implies material overlap.
inline constexpr size_t kMaterialCount = 16;
inline constexpr size_t kAdjectivesPerMaterial = 8;
struct MaterialLexicon {
  std::string_view material;
  std::array<std::string_view, kAdjectivesPerMaterial> adjectives;
};
const std::array<MaterialLexicon, kMaterialCount>& lexicon();

// Stable class→material assignment shared by captions and synthetic
// embeddings: the same hash keys both, so a class's caption vocabulary and
// its feature-space prototype always agree.
uint64_t material_of_class(std::string_view class_name);

// Renders the recaptioning prompt for one record.
std::string caption_prompt(const ManifestRecord& record);

// Prompt → captioner → parse, retrying on malformed output or transport
// failure up to max_retries additional attempts. Persistent malformed
// output raises ValidationError carrying the last raw response.
TactileCaption recaption(const ManifestRecord& record, Captioner& client,
                         int max_retries = 2);

// Seeded per-class stratified subset of the manifest. Quota is
// floor(target/classes) per class; the remainder goes one-each to classes
// in seeded shuffled order; classes smaller than their quota contribute
// everything and the shortfall rolls over to classes that still have spare
// members, again in shuffled order. Within a class, picks are a seeded
// shuffle. Output preserves the input's relative order. target_size larger
// than the manifest is a ConfigError.
std::vector<ManifestRecord> stratified_sample(
    const std::vector<ManifestRecord>& manifest, size_t target_size,
    uint64_t seed);

// Writes entries as IMNT shards of at most shard_capacity records each plus
// a tab-separated manifest (id, class_name, caption, shard_path, row_index)
// named corpus.tsv in out_dir. Every caption is re-validated on the way
// out; zero entries produce just an empty manifest.
struct BuildResult {
  std::vector<std::string> shard_paths;
  std::string manifest_path;
  size_t entries = 0;
};
BuildResult build_shards(const std::vector<feat::ShardRecord>& entries,
                         size_t shard_capacity, const std::string& out_dir);

// Reads a corpus.tsv manifest and every shard it references; returns
// entries in manifest order after cross-checking ids and row indices
// against the shard contents.
std::vector<feat::ShardRecord> load_corpus(const std::string& manifest_path);

// Vocabulary statistics over entry captions. Captions are counted by their
// canonical (sorted) form; top_words is ordered by count descending, then
// word ascending.
struct VocabStats {
  size_t unique_words = 0;
  size_t unique_captions = 0;
  std::vector<std::pair<std::string, size_t>> top_words;
};
VocabStats vocab_stats(const std::vector<feat::ShardRecord>& entries,
                       size_t top_k = 10);

// Deterministic synthetic visual manifest: `records` rows spread over
// `classes` class names ("object_c0000", ...). Materials fall out of
// material_of_class, so they are implicit in the names.
std::vector<ManifestRecord> synthetic_manifest(size_t records, size_t classes,
                                               uint64_t seed);

// Recaption + embed one manifest record into a retrieval-ready entry:
// r_v = synth_embed(visual), r_l = synth_embed(text), caption from the
// captioner. instance seed = record id.
feat::ShardRecord make_entry(const ManifestRecord& record, Captioner& client,
                             size_t dim, double noise);

}  // namespace touchrag::corp
