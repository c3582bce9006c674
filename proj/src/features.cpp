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

#include "touchrag/features.hpp"

#include <cmath>
#include <sstream>

#include "touchrag/core.hpp"
#include "touchrag/kernels.hpp"

namespace touchrag::feat {

double norm(const FeatureVec& v) {
  return std::sqrt(kern::active().dot_f64(v.data(), v.data(), v.size()));
}

FeatureVec l2_normalize(const FeatureVec& v) {
  double n = norm(v);
  if (n <= 0.0 || !std::isfinite(n))
    throw DegenerateInputError("l2_normalize: zero or non-finite vector");
  FeatureVec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

double cosine(const FeatureVec& a, const FeatureVec& b) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << "cosine: dim mismatch " << a.size() << " vs " << b.size();
    throw DimensionError(msg.str());
  }
  double na = norm(a), nb = norm(b);
  if (na <= 0.0 || nb <= 0.0)
    throw DegenerateInputError("cosine: zero vector");
  return kern::active().dot_f64(a.data(), b.data(), a.size()) / (na * nb);
}

FeatureVec quantize_f32(FeatureVec v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  return v;
}

namespace detail {

FeatureVec unit_direction(uint64_t seed, size_t dim) {
  Rng rng(seed);
  FeatureVec v(dim);
  for (double& x : v) x = rng.normal();
  return l2_normalize(v);
}

FeatureVec prototype(uint64_t material_id, size_t dim) {
  return unit_direction(mix64(fnv1a("prototype"), material_id), dim);
}

FeatureVec kind_offset(Kind kind, size_t dim) {
  return unit_direction(
      mix64(fnv1a("kind-offset"), static_cast<uint64_t>(kind)), dim);
}

FeatureVec appearance(uint64_t group, size_t dim) {
  return unit_direction(mix64(fnv1a("appearance"), group % kAppearanceGroups),
                        dim);
}

}  // namespace detail

FeatureVec synth_embed(Kind kind, uint64_t material_id, uint64_t instance_seed,
                       size_t dim, double noise) {
  if (dim < kMinDim) {
    std::ostringstream msg;
    msg << "synth_embed: dim " << dim << " below minimum " << kMinDim;
    throw ConfigError(msg.str());
  }
  if (!(noise >= 0.0 && noise < 1.0))
    throw ConfigError("synth_embed: noise must lie in [0, 1)");

  FeatureVec raw = detail::prototype(material_id, dim);
  FeatureVec off = detail::kind_offset(kind, dim);
  for (size_t i = 0; i < dim; ++i) raw[i] += detail::kKindWeight * off[i];
  if (kind == Kind::kVisual) {
    FeatureVec app = detail::appearance(instance_seed, dim);
    for (size_t i = 0; i < dim; ++i)
      raw[i] += detail::kAppearanceWeight * app[i];
  }
  if (noise > 0.0) {
    uint64_t nseed = mix64(
        mix64(mix64(fnv1a("instance-noise"), static_cast<uint64_t>(kind)),
              material_id),
        instance_seed);
    FeatureVec dir = detail::unit_direction(nseed, dim);
    for (size_t i = 0; i < dim; ++i) raw[i] += noise * dir[i];
  }
  return quantize_f32(l2_normalize(raw));
}

// --- shard format -----------------------------------------------------------

namespace {

constexpr char kShardMagic[4] = {'I', 'M', 'N', 'T'};
constexpr uint16_t kShardVersion = 1;

void put_vec(std::string& out, const FeatureVec& v) {
  for (double x : v) put_f32(out, static_cast<float>(x));
}

void put_str(std::string& out, const std::string& s, const char* what) {
  if (s.size() > 0xffff)
    throw ValidationError(std::string(what) + " exceeds 65535 bytes");
  put_u16(out, static_cast<uint16_t>(s.size()));
  out.append(s);
}

struct ParsedShard {
  size_t dim = 0;
  std::vector<ShardRecord> records;
};

ParsedShard parse_shard(std::string_view bytes, const std::string& path) {
  ByteReader r{bytes};
  std::string magic = r.bytes(4, "shard magic");
  if (magic != std::string(kShardMagic, 4))
    throw FormatError(path + ": bad shard magic at offset 0");
  uint16_t version = r.u16("shard version");
  if (version != kShardVersion) {
    std::ostringstream msg;
    msg << path << ": unsupported shard version " << version;
    throw FormatError(msg.str());
  }
  uint64_t count = r.u64("record count");
  uint32_t dim = r.u32("feature dim");
  if (dim == 0) throw FormatError(path + ": feature dim is zero");
  // Cheap structural sanity before the record loop: even empty strings cost
  // 8 + 2 + 2 + 8*dim bytes per record, so a count that cannot possibly fit
  // is corruption, not a gradual truncation.
  uint64_t min_record = 12 + 8ull * dim;
  if (count > 0 && r.remaining() / min_record < count) {
    std::ostringstream msg;
    msg << path << ": record count " << count << " cannot fit in "
        << r.remaining() << " remaining bytes";
    throw FormatError(msg.str());
  }

  ParsedShard out;
  out.dim = dim;
  out.records.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    try {
      ShardRecord rec;
      rec.id = r.u64("record id");
      rec.class_name = r.bytes(r.u16("class length"), "class name");
      rec.caption = r.bytes(r.u16("caption length"), "caption");
      rec.r_v.resize(dim);
      for (uint32_t c = 0; c < dim; ++c)
        rec.r_v[c] = static_cast<double>(r.f32("r_v payload"));
      rec.r_l.resize(dim);
      for (uint32_t c = 0; c < dim; ++c)
        rec.r_l[c] = static_cast<double>(r.f32("r_l payload"));
      out.records.push_back(std::move(rec));
    } catch (const FormatError& e) {
      std::ostringstream msg;
      msg << path << ": record " << i << " of " << count << ": " << e.what();
      throw FormatError(msg.str());
    }
  }
  if (r.remaining() != 0) {
    std::ostringstream msg;
    msg << path << ": " << r.remaining() << " trailing bytes after record "
        << count;
    throw FormatError(msg.str());
  }
  return out;
}

}  // namespace

void write_shard(const std::string& path,
                 const std::vector<ShardRecord>& records, size_t dim) {
  if (dim == 0 || dim > 0xffffffffull)
    throw ConfigError("write_shard: dim out of range");
  std::string out;
  out.append(kShardMagic, 4);
  put_u16(out, kShardVersion);
  put_u64(out, records.size());
  put_u32(out, static_cast<uint32_t>(dim));
  for (const ShardRecord& rec : records) {
    if (rec.r_v.size() != dim || rec.r_l.size() != dim) {
      std::ostringstream msg;
      msg << "write_shard: record " << rec.id << " has dims "
          << rec.r_v.size() << "/" << rec.r_l.size() << ", expected " << dim;
      throw DimensionError(msg.str());
    }
    put_u64(out, rec.id);
    put_str(out, rec.class_name, "class name");
    put_str(out, rec.caption, "caption");
    put_vec(out, rec.r_v);
    put_vec(out, rec.r_l);
  }
  write_file(path, out);
}

std::vector<ShardRecord> read_shard(const std::string& path) {
  return parse_shard(read_file(path), path).records;
}

std::map<uint64_t, ImportedFeatures> import_features(const std::string& path,
                                                     size_t expected_dim,
                                                     bool normalize) {
  ParsedShard parsed = parse_shard(read_file(path), path);
  if (parsed.dim != expected_dim) {
    std::ostringstream msg;
    msg << path << ": feature dim " << parsed.dim << " does not match expected "
        << expected_dim << " (dim field at offset 14)";
    throw FormatError(msg.str());
  }
  std::map<uint64_t, ImportedFeatures> table;
  for (ShardRecord& rec : parsed.records) {
    auto [it, inserted] = table.emplace(
        rec.id, ImportedFeatures{std::move(rec.r_v), std::move(rec.r_l)});
    if (!inserted) {
      std::ostringstream msg;
      msg << path << ": duplicate record id " << rec.id;
      throw ValidationError(msg.str());
    }
    if (normalize) {
      it->second.r_v = l2_normalize(it->second.r_v);
      it->second.r_l = l2_normalize(it->second.r_l);
    }
  }
  return table;
}

std::vector<TriModalSample> make_aligned_dataset(size_t n, size_t dim,
                                                 uint64_t seed,
                                                 double common_weight) {
  if (dim < kMinDim) throw ConfigError("make_aligned_dataset: dim too small");
  if (common_weight < 0.0)
    throw ConfigError("make_aligned_dataset: negative common_weight");
  Rng rng(mix64(seed, fnv1a("aligned-dataset")));
  FeatureVec common(dim, 0.0);
  if (common_weight > 0.0) {
    for (double& x : common) x = rng.normal();
    common = l2_normalize(common);
  }
  std::vector<TriModalSample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    TriModalSample s;
    s.id = i;
    FeatureVec v(dim), u(dim);
    for (double& x : v) x = rng.normal();
    for (double& x : u) x = rng.normal();
    s.visual = l2_normalize(v);
    u = l2_normalize(u);
    FeatureVec t(dim);
    for (size_t c = 0; c < dim; ++c) t[c] = s.visual[c] + 0.7 * u[c];
    s.tactile = l2_normalize(t);
    // Text targets lean visual: captions are written looking at the object,
    // with touch as the secondary cue. The heavier visual share also keeps
    // the target well inside what the one-token attention path (which can
    // only mix the visual stream; see QueryNetwork) can express, so the
    // convergence benchmark measures training, not an expressiveness gap.
    FeatureVec l(dim);
    for (size_t c = 0; c < dim; ++c)
      l[c] = 0.85 * s.visual[c] + 0.15 * s.tactile[c];
    if (common_weight > 0.0) {
      l = l2_normalize(l);
      for (size_t c = 0; c < dim; ++c) l[c] += common_weight * common[c];
    }
    s.text = l2_normalize(l);
    s.visual = quantize_f32(std::move(s.visual));
    s.tactile = quantize_f32(std::move(s.tactile));
    s.text = quantize_f32(std::move(s.text));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace touchrag::feat
