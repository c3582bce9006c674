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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "touchrag/core.hpp"
#include "touchrag/features.hpp"

using namespace touchrag;
using feat::FeatureVec;

namespace {

// Runs fn, which must throw E, and hands back the message for substring
// checks. Error text is part of the contract here: it has to name the thing
// that went wrong, not just the exception type.
template <typename E, typename Fn>
std::string message_of(Fn fn) {
  try {
    fn();
  } catch (const E& e) {
    return e.what();
  }
  FAIL("expected exception was not thrown");
  return {};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

FeatureVec quantized_unit(FeatureVec raw) {
  return feat::quantize_f32(feat::l2_normalize(raw));
}

// Solves A x = b by Gaussian elimination with partial pivoting. Small and
// independent of the library's linear algebra on purpose: it backs the
// least-squares oracle below.
std::vector<double> solve_linear(std::vector<std::vector<double>> a,
                                 std::vector<double> b) {
  const size_t n = b.size();
  for (size_t col = 0; col < n; ++col) {
    size_t pivot = col;
    for (size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    REQUIRE(std::abs(a[col][col]) > 1e-12);
    for (size_t r = col + 1; r < n; ++r) {
      double f = a[r][col] / a[col][col];
      for (size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (size_t r = n; r-- > 0;) {
    double s = b[r];
    for (size_t c = r + 1; c < n; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace

// --- basic vector math -------------------------------------------------------

TEST_CASE("norm and l2_normalize on the 3-4-5 triangle") {
  FeatureVec v = {3.0, 4.0};
  CHECK(feat::norm(v) == 5.0);
  FeatureVec n = feat::l2_normalize(v);
  CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(feat::norm(n) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("l2_normalize rejects zero and non-finite vectors") {
  CHECK_THROWS_AS(feat::l2_normalize({0.0, 0.0, 0.0}), DegenerateInputError);
  CHECK_THROWS_AS(feat::l2_normalize({1.0, std::nan("")}), DegenerateInputError);
  CHECK_THROWS_AS(feat::l2_normalize({}), DegenerateInputError);
}

TEST_CASE("cosine matches hand values and rejects bad input") {
  CHECK(feat::cosine({1, 0}, {0, 1}) == 0.0);
  CHECK(feat::cosine({1, 0}, {1, 0}) == 1.0);
  CHECK(feat::cosine({2, 0}, {-3, 0}) == -1.0);
  // Scale invariance: cosine of scaled copies is identical.
  FeatureVec a = {0.3, -1.2, 2.5};
  FeatureVec b = {1.1, 0.4, -0.7};
  FeatureVec a10 = a, b3 = b;
  for (double& x : a10) x *= 10.0;
  for (double& x : b3) x *= 3.0;
  CHECK(feat::cosine(a, b) == doctest::Approx(feat::cosine(a10, b3)).epsilon(1e-14));

  CHECK_THROWS_AS(feat::cosine({1, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(feat::cosine({0, 0}, {1, 2}), DegenerateInputError);
}

TEST_CASE("quantize_f32 rounds to the f32 grid and is idempotent") {
  FeatureVec v = {0.1, -1.0 / 3.0, 12345.6789, 0.0};
  FeatureVec q = feat::quantize_f32(v);
  for (size_t i = 0; i < v.size(); ++i)
    CHECK(q[i] == static_cast<double>(static_cast<float>(v[i])));
  CHECK(feat::quantize_f32(q) == q);
  CHECK(q[0] != v[0]);  // 0.1 is not representable in f32
}

// --- synthetic embeddings ----------------------------------------------------

TEST_CASE("synth_embed is a pure function of its arguments") {
  FeatureVec a = feat::synth_embed(feat::Kind::kVisual, 3, 17, 32, 0.2);
  FeatureVec b = feat::synth_embed(feat::Kind::kVisual, 3, 17, 32, 0.2);
  CHECK(a == b);  // bitwise
  // Any argument change moves the output.
  CHECK(a != feat::synth_embed(feat::Kind::kTactile, 3, 17, 32, 0.2));
  CHECK(a != feat::synth_embed(feat::Kind::kVisual, 4, 17, 32, 0.2));
  CHECK(a != feat::synth_embed(feat::Kind::kVisual, 3, 18, 32, 0.2));
  CHECK(a != feat::synth_embed(feat::Kind::kVisual, 3, 17, 32, 0.25));
}

TEST_CASE("synth_embed recomposes exactly from its documented parts") {
  // Independent reconstruction from the published building blocks. If the
  // composed implementation drifts from the documented recipe, this is the
  // test that notices.
  const size_t dim = 24;
  const uint64_t material = 7, instance = 41;
  const double noise = 0.3;
  for (feat::Kind kind :
       {feat::Kind::kVisual, feat::Kind::kTactile, feat::Kind::kText}) {
    FeatureVec raw = feat::detail::prototype(material, dim);
    FeatureVec off = feat::detail::kind_offset(kind, dim);
    for (size_t i = 0; i < dim; ++i) raw[i] += feat::detail::kKindWeight * off[i];
    if (kind == feat::Kind::kVisual) {
      FeatureVec app = feat::detail::appearance(instance, dim);
      for (size_t i = 0; i < dim; ++i)
        raw[i] += feat::detail::kAppearanceWeight * app[i];
    }
    uint64_t nseed = mix64(
        mix64(mix64(fnv1a("instance-noise"), static_cast<uint64_t>(kind)),
              material),
        instance);
    FeatureVec dir = feat::detail::unit_direction(nseed, dim);
    for (size_t i = 0; i < dim; ++i) raw[i] += noise * dir[i];

    FeatureVec expected = quantized_unit(raw);
    FeatureVec got = feat::synth_embed(kind, material, instance, dim, noise);
    CHECK(got == expected);  // bitwise
  }
}

TEST_CASE("synth_embed outputs are unit length on the f32 grid") {
  for (uint64_t m : {0ull, 5ull, 15ull}) {
    FeatureVec v = feat::synth_embed(feat::Kind::kText, m, m * 97 + 1, 48, 0.1);
    CHECK(std::abs(feat::norm(v) - 1.0) < 1e-6);
  }
}

TEST_CASE("synth_embed validates dim and noise range") {
  CHECK_THROWS_AS(feat::synth_embed(feat::Kind::kVisual, 0, 0, 7, 0.0),
                  ConfigError);
  CHECK_THROWS_AS(feat::synth_embed(feat::Kind::kVisual, 0, 0, 32, -0.1),
                  ConfigError);
  CHECK_THROWS_AS(feat::synth_embed(feat::Kind::kVisual, 0, 0, 32, 1.0),
                  ConfigError);
  CHECK_NOTHROW(feat::synth_embed(feat::Kind::kVisual, 0, 0, feat::kMinDim, 0.0));
}

TEST_CASE("appearance groups wrap at sixteen instances") {
  // Appearance depends on instance mod 16 only; at zero noise the whole
  // visual embedding therefore repeats with period 16.
  FeatureVec a = feat::synth_embed(feat::Kind::kVisual, 2, 5, 32, 0.0);
  FeatureVec b = feat::synth_embed(feat::Kind::kVisual, 2,
                                   5 + feat::detail::kAppearanceGroups, 32, 0.0);
  CHECK(a == b);
  // With noise the instance seed re-enters through the noise direction.
  FeatureVec c = feat::synth_embed(feat::Kind::kVisual, 2, 5, 32, 0.1);
  FeatureVec d = feat::synth_embed(feat::Kind::kVisual, 2,
                                   5 + feat::detail::kAppearanceGroups, 32, 0.1);
  CHECK(c != d);
}

TEST_CASE("visual confound: appearance outweighs material, text does not") {
  // The deliberate trap in the corpus geometry. Visual pairs that share an
  // appearance group but not a material should look MORE alike than pairs
  // that share a material but not an appearance group; text embeddings,
  // which carry no appearance term, must order the other way around.
  const size_t dim = 64;
  const double noise = 0.2;
  double vis_cross_mat_same_app = 0, vis_same_mat_cross_app = 0;
  double txt_cross_mat = 0, txt_same_mat = 0;
  int pairs = 0;
  for (uint64_t m = 0; m < 8; ++m) {
    for (uint64_t inst = 0; inst < 8; ++inst) {
      uint64_t m2 = (m + 5) % 16;         // different material
      uint64_t app_twin = inst + 16 * 3;  // same appearance group, new noise
      uint64_t app_far = inst + 7;        // different appearance group
      auto vis = [&](uint64_t mat, uint64_t i) {
        return feat::synth_embed(feat::Kind::kVisual, mat, i, dim, noise);
      };
      auto txt = [&](uint64_t mat, uint64_t i) {
        return feat::synth_embed(feat::Kind::kText, mat, i, dim, noise);
      };
      vis_cross_mat_same_app += feat::cosine(vis(m, inst), vis(m2, app_twin));
      vis_same_mat_cross_app += feat::cosine(vis(m, inst), vis(m, app_far));
      txt_cross_mat += feat::cosine(txt(m, inst), txt(m2, app_twin));
      txt_same_mat += feat::cosine(txt(m, inst), txt(m, app_far));
      ++pairs;
    }
  }
  vis_cross_mat_same_app /= pairs;
  vis_same_mat_cross_app /= pairs;
  txt_cross_mat /= pairs;
  txt_same_mat /= pairs;

  // Visual space: the confound wins by a clear margin.
  CHECK(vis_cross_mat_same_app > vis_same_mat_cross_app + 0.08);
  // Text space: material dominates and cross-material pairs are near
  // orthogonal (independent random prototypes).
  CHECK(txt_same_mat > txt_cross_mat + 0.3);
  CHECK(std::abs(txt_cross_mat) < 0.25);
}

// --- shard format ------------------------------------------------------------

namespace {

feat::ShardRecord sample_record(uint64_t id, size_t dim, const char* cls,
                                const char* caption) {
  feat::ShardRecord rec;
  rec.id = id;
  rec.class_name = cls;
  rec.caption = caption;
  Rng rng(mix64(id, fnv1a("shard-fixture")));
  rec.r_v.resize(dim);
  rec.r_l.resize(dim);
  for (double& x : rec.r_v) x = rng.uniform(-2.0, 2.0);
  for (double& x : rec.r_l) x = rng.uniform(-2.0, 2.0);
  return rec;
}

}  // namespace

TEST_CASE("shard round trip preserves strings and quantizes payloads once") {
  testutil::TempDir dir("shard_rt");
  const size_t dim = 12;
  std::vector<feat::ShardRecord> recs = {
      sample_record(3, dim, "object_c0001", "soft, fuzzy, pliable, dense, grainy"),
      sample_record(900100, dim, "naïve-β", "cold, hard, slick, rigid, dense"),
  };
  feat::write_shard(dir.file("a.imnt"), recs, dim);
  std::vector<feat::ShardRecord> back = feat::read_shard(dir.file("a.imnt"));

  REQUIRE(back.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == recs[i].id);
    CHECK(back[i].class_name == recs[i].class_name);
    CHECK(back[i].caption == recs[i].caption);
    for (size_t c = 0; c < dim; ++c) {
      // The payload is f32 on disk: doubles come back rounded exactly once.
      CHECK(back[i].r_v[c] == static_cast<double>(static_cast<float>(recs[i].r_v[c])));
      CHECK(back[i].r_l[c] == static_cast<double>(static_cast<float>(recs[i].r_l[c])));
    }
  }

  // Writing the read-back values again is byte-identical: quantization is
  // a projection, not a drift.
  feat::write_shard(dir.file("b.imnt"), back, dim);
  CHECK(read_file(dir.file("a.imnt")) == read_file(dir.file("b.imnt")));
}

TEST_CASE("empty shard round trips") {
  testutil::TempDir dir("shard_empty");
  feat::write_shard(dir.file("e.imnt"), {}, 8);
  CHECK(feat::read_shard(dir.file("e.imnt")).empty());
}

TEST_CASE("write_shard rejects dim mismatches") {
  testutil::TempDir dir("shard_dim");
  std::vector<feat::ShardRecord> recs = {sample_record(1, 8, "c", "x, y, z, w, v")};
  std::string msg = message_of<DimensionError>(
      [&] { feat::write_shard(dir.file("x.imnt"), recs, 9); });
  CHECK(contains(msg, "record 1"));
  CHECK(contains(msg, "8/8"));
}

TEST_CASE("shard reader names the exact structural defect") {
  testutil::TempDir dir("shard_bad");
  const size_t dim = 8;
  std::vector<feat::ShardRecord> recs = {
      sample_record(0, dim, "cls", "a, b, c, d, e"),
      sample_record(1, dim, "cls", "a, b, c, d, e"),
  };
  const std::string path = dir.file("good.imnt");
  feat::write_shard(path, recs, dim);
  const std::string good = read_file(path);

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    write_file(path, bad);
    CHECK(contains(message_of<FormatError>([&] { feat::read_shard(path); }),
                   "bad shard magic at offset 0"));
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[4] = 9;
    write_file(path, bad);
    CHECK(contains(message_of<FormatError>([&] { feat::read_shard(path); }),
                   "unsupported shard version 9"));
  }
  SUBCASE("truncation mid-record names the record index") {
    std::string bad = good.substr(0, good.size() - 5);
    write_file(path, bad);
    std::string msg = message_of<FormatError>([&] { feat::read_shard(path); });
    CHECK(contains(msg, "record 1 of 2"));
  }
  SUBCASE("impossible record count is caught before the record loop") {
    std::string bad = good.substr(0, good.size() / 2);
    write_file(path, bad);
    std::string msg = message_of<FormatError>([&] { feat::read_shard(path); });
    CHECK(contains(msg, "cannot fit"));
  }
  SUBCASE("trailing bytes are corruption") {
    std::string bad = good + "junk";
    write_file(path, bad);
    CHECK(contains(message_of<FormatError>([&] { feat::read_shard(path); }),
                   "trailing bytes"));
  }
  SUBCASE("untouched file still reads") {
    CHECK(feat::read_shard(path).size() == 2);
  }
}

TEST_CASE("import_features validates dim, flags duplicates, and can normalize") {
  testutil::TempDir dir("import");
  const size_t dim = 8;
  std::vector<feat::ShardRecord> recs = {
      sample_record(10, dim, "c", "a, b, c, d, e"),
      sample_record(11, dim, "c", "a, b, c, d, e"),
  };
  const std::string path = dir.file("f.imnt");
  feat::write_shard(path, recs, dim);

  SUBCASE("raw import returns stored bits keyed by id") {
    auto table = feat::import_features(path, dim);
    REQUIRE(table.size() == 2);
    for (const auto& rec : recs) {
      const feat::ImportedFeatures& f = table.at(rec.id);
      for (size_t c = 0; c < dim; ++c)
        CHECK(f.r_v[c] == static_cast<double>(static_cast<float>(rec.r_v[c])));
    }
  }
  SUBCASE("normalizing import returns unit vectors") {
    auto table = feat::import_features(path, dim, /*normalize=*/true);
    for (const auto& [id, f] : table) {
      CHECK(feat::norm(f.r_v) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(feat::norm(f.r_l) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("dim mismatch points at the dim field") {
    std::string msg = message_of<FormatError>(
        [&] { feat::import_features(path, dim + 1); });
    CHECK(contains(msg, "(dim field at offset 14)"));
  }
  SUBCASE("duplicate ids are rejected") {
    recs[1].id = 10;
    feat::write_shard(path, recs, dim);
    std::string msg = message_of<ValidationError>(
        [&] { feat::import_features(path, dim); });
    CHECK(contains(msg, "duplicate record id 10"));
  }
}

// --- aligned dataset ---------------------------------------------------------

TEST_CASE("make_aligned_dataset is deterministic with sequential ids") {
  auto a = feat::make_aligned_dataset(10, 16, 42);
  auto b = feat::make_aligned_dataset(10, 16, 42);
  auto c = feat::make_aligned_dataset(10, 16, 43);
  REQUIRE(a.size() == 10);
  bool all_equal = true, any_differs_from_c = false;
  for (size_t i = 0; i < 10; ++i) {
    CHECK(a[i].id == i);
    all_equal = all_equal && a[i].visual == b[i].visual &&
                a[i].tactile == b[i].tactile && a[i].text == b[i].text;
    any_differs_from_c = any_differs_from_c || a[i].visual != c[i].visual;
  }
  CHECK(all_equal);
  CHECK(any_differs_from_c);
}

TEST_CASE("aligned dataset geometry matches its construction") {
  const size_t dim = 64;
  auto data = feat::make_aligned_dataset(300, dim, 7);
  double cos_vt = 0.0;
  for (const auto& s : data) {
    CHECK(std::abs(feat::norm(s.visual) - 1.0) < 1e-6);
    CHECK(std::abs(feat::norm(s.tactile) - 1.0) < 1e-6);
    CHECK(std::abs(feat::norm(s.text) - 1.0) < 1e-6);
    // L is the normalized 0.85/0.15 visual/tactile mix, up to f32
    // quantization.
    FeatureVec mix(dim);
    for (size_t c = 0; c < dim; ++c)
      mix[c] = 0.85 * s.visual[c] + 0.15 * s.tactile[c];
    CHECK(feat::cosine(s.text, mix) > 1.0 - 1e-9);
    cos_vt += feat::cosine(s.visual, s.tactile);
  }
  cos_vt /= static_cast<double>(data.size());
  // T = normalize(V + 0.7 u) with u nearly orthogonal to V in high dim, so
  // E[cos(V,T)] ~ 1/sqrt(1.49) ~ 0.8192.
  CHECK(cos_vt == doctest::Approx(1.0 / std::sqrt(1.49)).epsilon(0.03));
}

TEST_CASE("common_weight pulls text targets toward a shared direction") {
  const size_t dim = 32, n = 64;
  auto plain = feat::make_aligned_dataset(n, dim, 11, 0.0);
  auto pulled = feat::make_aligned_dataset(n, dim, 11, 1.0);
  auto mean_pairwise = [&](const std::vector<feat::TriModalSample>& data) {
    double s = 0.0;
    int k = 0;
    for (size_t i = 0; i < data.size(); ++i)
      for (size_t j = i + 1; j < data.size(); ++j) {
        s += feat::cosine(data[i].text, data[j].text);
        ++k;
      }
    return s / k;
  };
  double base = mean_pairwise(plain);
  double herd = mean_pairwise(pulled);
  CHECK(std::abs(base) < 0.1);  // independent directions: near orthogonal
  CHECK(herd > base + 0.2);     // the shared component dominates pairwise cos
}

TEST_CASE("text targets are predictable from visual input alone") {
  // Least-squares oracle for the claim that a query computed from V (plus a
  // tactile stream the attention cannot mix into a one-token softmax) can
  // reach high cosine to L: fit W minimizing sum ||V W - L||^2 in closed
  // form and measure the achieved alignment. This bounds what any affine
  // model can do and shows the bar sits well below it.
  const size_t dim = 32, n = 768;
  auto data = feat::make_aligned_dataset(n, dim, 3);

  // Normal equations A W = B with A = V^T V + ridge, B = V^T L.
  std::vector<std::vector<double>> a(dim, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> bt(dim, std::vector<double>(dim, 0.0));
  for (const auto& s : data)
    for (size_t r = 0; r < dim; ++r) {
      for (size_t c = 0; c < dim; ++c) {
        a[r][c] += s.visual[r] * s.visual[c];
        bt[r][c] += s.visual[r] * s.text[c];
      }
    }
  for (size_t r = 0; r < dim; ++r) a[r][r] += 1e-8;

  // Solve column by column of W (a[.][.] is symmetric positive definite).
  std::vector<std::vector<double>> w(dim, std::vector<double>(dim));
  for (size_t col = 0; col < dim; ++col) {
    std::vector<double> rhs(dim);
    for (size_t r = 0; r < dim; ++r) rhs[r] = bt[r][col];
    std::vector<double> x = solve_linear(a, rhs);
    for (size_t r = 0; r < dim; ++r) w[r][col] = x[r];
  }

  double mean_cos = 0.0;
  for (const auto& s : data) {
    FeatureVec pred(dim, 0.0);
    for (size_t r = 0; r < dim; ++r)
      for (size_t c = 0; c < dim; ++c) pred[c] += s.visual[r] * w[r][c];
    mean_cos += feat::cosine(pred, s.text);
  }
  mean_cos /= static_cast<double>(n);
  CHECK(mean_cos > 0.98);  // construction puts the optimum near 0.993
}

TEST_CASE("make_aligned_dataset validates its arguments") {
  CHECK_THROWS_AS(feat::make_aligned_dataset(4, 4, 1), ConfigError);
  CHECK_THROWS_AS(feat::make_aligned_dataset(4, 16, 1, -0.5), ConfigError);
}
