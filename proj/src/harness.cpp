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

#include "touchrag/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "touchrag/core.hpp"

namespace touchrag::harn {
namespace {

// %.17g: the shortest fixed format that round-trips any double, so report
// bytes are a pure function of the computed values.
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const char* what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("report: bad ") + what + " value '" + s +
                      "'");
  }
}

uint64_t parse_u64(const std::string& s, const char* what) {
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("report: bad ") + what + " value '" + s +
                      "'");
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string predict_serialized(const integ::CaptionHead& head,
                               num::ParamStore& store,
                               const feat::FeatureVec& p_prime) {
  std::vector<std::string> words = head.predict(store, p_prime);
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ", ";
    out += words[i];
  }
  return out;
}

}  // namespace

const char* query_mode_name(QueryMode m) {
  switch (m) {
    case QueryMode::kImage: return "image";
    case QueryMode::kTactile: return "tactile";
    case QueryMode::kFused: return "fused";
  }
  throw ConfigError("query_mode_name: unknown mode");
}

const char* key_mode_name(KeyMode m) {
  switch (m) {
    case KeyMode::kImage: return "image";
    case KeyMode::kText: return "text";
  }
  throw ConfigError("key_mode_name: unknown mode");
}

const char* modality_name(integ::Modality m) {
  switch (m) {
    case integ::Modality::kBoth: return "both";
    case integ::Modality::kImageOnly: return "image";
    case integ::Modality::kTextOnly: return "text";
  }
  throw ConfigError("modality_name: unknown modality");
}

QueryMode parse_query_mode(const std::string& s) {
  if (s == "image") return QueryMode::kImage;
  if (s == "tactile") return QueryMode::kTactile;
  if (s == "fused") return QueryMode::kFused;
  throw ConfigError("unknown query mode '" + s +
                    "' (expected image|tactile|fused)");
}

KeyMode parse_key_mode(const std::string& s) {
  if (s == "image") return KeyMode::kImage;
  if (s == "text") return KeyMode::kText;
  throw ConfigError("unknown key mode '" + s + "' (expected image|text)");
}

integ::Modality parse_modality(const std::string& s) {
  if (s == "both") return integ::Modality::kBoth;
  if (s == "image") return integ::Modality::kImageOnly;
  if (s == "text") return integ::Modality::kTextOnly;
  throw ConfigError("unknown modality '" + s + "' (expected image|text|both)");
}

CaptionEmbedder::CaptionEmbedder(size_t dim) : dim_(dim) {
  if (dim_ < feat::kMinDim) {
    throw ConfigError("CaptionEmbedder: dim must be >= " +
                      std::to_string(feat::kMinDim));
  }
}

feat::FeatureVec CaptionEmbedder::embed(
    const corp::TactileCaption& caption) const {
  // Sort before summing so word order cannot matter; the sum itself is
  // order-independent in exact arithmetic, but not in floating point.
  std::array<std::string, corp::TactileCaption::kAdjectives> words =
      caption.adjectives();
  std::sort(words.begin(), words.end());
  feat::FeatureVec acc(dim_, 0.0);
  for (const auto& w : words) {
    feat::FeatureVec dir =
        feat::detail::unit_direction(mix64(fnv1a("caption-word"), fnv1a(w)),
                                     dim_);
    for (size_t i = 0; i < dim_; ++i) acc[i] += dir[i];
  }
  return feat::l2_normalize(acc);
}

double CaptionEmbedder::score(const corp::TactileCaption& a,
                              const corp::TactileCaption& b) const {
  return feat::cosine(embed(a), embed(b));
}

double score_description(const std::string& predicted,
                         const std::string& ground_truth,
                         const CaptionEmbedder& embedder) {
  corp::TactileCaption p = corp::TactileCaption::parse(predicted);
  corp::TactileCaption g = corp::TactileCaption::parse(ground_truth);
  return embedder.score(p, g);
}

// ---------------------------------------------------------------------------
// Reports

std::string render_report(const EvalReport& report) {
  std::ostringstream out;
  out << "# metric\t" << report.metric << "\n";
  out << "# tool\t" << kToolVersion << "\n";
  for (const auto& [k, v] : report.config) out << "# " << k << "\t" << v << "\n";
  out << "# runtime_ms\t" << fmt_double(report.runtime_ms) << "\n";
  out << "# mean\t" << fmt_double(report.mean) << "\n";
  out << "# stddev\t" << fmt_double(report.stddev) << "\n";
  out << "id\tscore\tpredicted\tground_truth\n";
  for (const auto& r : report.rows) {
    out << r.id << "\t" << fmt_double(r.score) << "\t" << r.predicted << "\t"
        << r.ground_truth << "\n";
  }
  return out.str();
}

void write_report(const EvalReport& report, const std::string& path) {
  write_file(path, render_report(report));
}

EvalReport read_report(const std::string& path) {
  std::string text = read_file(path);
  EvalReport report;
  report.metric.clear();

  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  bool saw_columns = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (!saw_columns && line.rfind("# ", 0) == 0) {
      size_t tab = line.find('\t');
      if (tab == std::string::npos) {
        throw FormatError(path + ": line " + std::to_string(lineno) +
                          ": header entry without a tab");
      }
      std::string key = line.substr(2, tab - 2);
      std::string value = line.substr(tab + 1);
      if (key == "metric") report.metric = value;
      else if (key == "runtime_ms") report.runtime_ms = parse_double(value, "runtime_ms");
      else if (key == "mean") report.mean = parse_double(value, "mean");
      else if (key == "stddev") report.stddev = parse_double(value, "stddev");
      else if (key == "tool") { /* informational */ }
      else report.config.emplace_back(key, value);
      continue;
    }
    if (!saw_columns) {
      if (line != "id\tscore\tpredicted\tground_truth") {
        throw FormatError(path + ": line " + std::to_string(lineno) +
                          ": expected the column header, got '" + line + "'");
      }
      saw_columns = true;
      continue;
    }
    std::vector<std::string> cells = split_tabs(line);
    if (cells.size() != 4) {
      throw FormatError(path + ": line " + std::to_string(lineno) + ": " +
                        std::to_string(cells.size()) +
                        " columns, expected 4");
    }
    EvalRow row;
    row.id = parse_u64(cells[0], "id");
    row.score = parse_double(cells[1], "score");
    row.predicted = cells[2];
    row.ground_truth = cells[3];
    report.rows.push_back(std::move(row));
  }
  if (!saw_columns) {
    throw FormatError(path + ": no column header found (not a report?)");
  }
  return report;
}

bool reports_equivalent(const std::string& text_a, const std::string& text_b) {
  auto strip = [](const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) {
      if (line.rfind("# runtime_ms", 0) == 0) continue;
      out += line;
      out += '\n';
    }
    return out;
  };
  return strip(text_a) == strip(text_b);
}

std::string render_table(const ReportTable& table) {
  std::ostringstream out;
  out << "# metric\t" << table.metric << "\n";
  out << "# tool\t" << kToolVersion << "\n";
  for (const auto& [k, v] : table.config) out << "# " << k << "\t" << v << "\n";
  for (size_t i = 0; i < table.columns.size(); ++i) {
    out << (i ? "\t" : "") << table.columns[i];
  }
  out << "\n";
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) {
      throw ConfigError("render_table: row has " + std::to_string(row.size()) +
                        " cells, table has " +
                        std::to_string(table.columns.size()) + " columns");
    }
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
    out << "\n";
  }
  return out.str();
}

void write_table(const ReportTable& table, const std::string& path) {
  write_file(path, render_table(table));
}

// ---------------------------------------------------------------------------
// Evaluation data

std::vector<QuerySample> make_query_set(const std::vector<std::string>& classes,
                                        size_t count, size_t dim, double noise,
                                        uint64_t seed) {
  if (classes.empty()) {
    throw ConfigError("make_query_set: no classes to probe");
  }
  corp::LexiconCaptioner lex;
  std::vector<QuerySample> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    const std::string& class_name = classes[i % classes.size()];
    uint64_t material = corp::material_of_class(class_name);
    // Fresh instance stream, far from the corpus's record-id seeds.
    uint64_t inst = mix64(mix64(seed, fnv1a("query-set")), uint64_t(i));
    corp::ManifestRecord rec;
    rec.id = i;
    rec.class_name = class_name;
    rec.source_caption = "held-out probe";
    out.push_back(QuerySample{
        i, class_name, material,
        feat::synth_embed(feat::Kind::kVisual, material, inst, dim, noise),
        feat::synth_embed(feat::Kind::kTactile, material, inst, dim, noise),
        corp::recaption(rec, lex)});
  }
  return out;
}

std::vector<std::string> corpus_classes(
    const std::vector<feat::ShardRecord>& entries) {
  std::set<std::string> uniq;
  for (const auto& e : entries) uniq.insert(e.class_name);
  return {uniq.begin(), uniq.end()};
}

std::vector<feat::TriModalSample> tri_modal_from_entries(
    const std::vector<feat::ShardRecord>& entries, double noise) {
  std::vector<feat::TriModalSample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    feat::TriModalSample s;
    s.id = e.id;
    s.visual = e.r_v;
    s.text = e.r_l;
    s.tactile = feat::synth_embed(feat::Kind::kTactile,
                                  corp::material_of_class(e.class_name), e.id,
                                  e.r_v.size(), noise);
    s.caption = e.caption;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<integ::IntegratorSample> integrator_samples_from_entries(
    const std::vector<feat::ShardRecord>& entries, double noise) {
  std::vector<integ::IntegratorSample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    out.push_back(integ::IntegratorSample{
        e.r_v,
        feat::synth_embed(feat::Kind::kTactile,
                          corp::material_of_class(e.class_name), e.id,
                          e.r_v.size(), noise),
        corp::TactileCaption::parse(e.caption)});
  }
  return out;
}

std::vector<integ::IntegratorSample> integrator_samples_from_queries(
    const std::vector<QuerySample>& queries) {
  std::vector<integ::IntegratorSample> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    out.push_back(integ::IntegratorSample{q.visual, q.tactile, q.caption});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment runners

const std::vector<AblationCell>& default_ablation_grid() {
  static const std::vector<AblationCell> grid = {
      {QueryMode::kImage, KeyMode::kImage},
      {QueryMode::kImage, KeyMode::kText},
      {QueryMode::kTactile, KeyMode::kImage},
      {QueryMode::kTactile, KeyMode::kText},
      {QueryMode::kFused, KeyMode::kText},
  };
  return grid;
}

namespace {

// All query modes are normalized identically before retrieval (raw encoder
// rows arrive unit-length from synth_embed anyway; the fused query is
// whatever the network emits). topk normalizes internally via the cosine,
// so no extra step is needed here — this helper only picks the vector.
feat::FeatureVec query_vector(const QuerySample& q, QueryMode mode,
                              const ret::QueryNetwork* retriever,
                              num::ParamStore* retriever_store) {
  switch (mode) {
    case QueryMode::kImage: return q.visual;
    case QueryMode::kTactile: return q.tactile;
    case QueryMode::kFused:
      if (retriever == nullptr || retriever_store == nullptr) {
        throw StateError(
            "fused query mode needs trained retriever params; none were "
            "provided");
      }
      return retriever->query(*retriever_store, q.visual, q.tactile);
  }
  throw ConfigError("query_vector: unknown mode");
}

double precision_for(const idx::VectorIndex& index,
                     const std::vector<QuerySample>& queries, QueryMode mode,
                     const ret::QueryNetwork* retriever,
                     num::ParamStore* retriever_store, size_t k) {
  double sum = 0.0;
  for (const auto& q : queries) {
    idx::RetrievalResult hits = index.topk(
        query_vector(q, mode, retriever, retriever_store), k);
    size_t relevant = 0;
    for (const auto& h : hits) {
      if (corp::material_of_class(h.class_name) == q.material) ++relevant;
    }
    // Precision is charged against the requested k even if the index held
    // fewer entries; a short index cannot inflate the score.
    sum += double(relevant) / double(k);
  }
  return sum / double(queries.size());
}

}  // namespace

std::vector<AblationRow> run_query_ablation(
    const AblationInputs& in, const std::vector<AblationCell>& grid) {
  if (!in.corpus || in.corpus->empty()) {
    throw ConfigError("run_query_ablation: empty corpus");
  }
  if (in.queries.empty()) {
    throw ConfigError("run_query_ablation: no queries");
  }
  if (in.k < 1) throw ConfigError("run_query_ablation: k must be >= 1");

  bool need_image = false, need_text = false;
  for (const auto& cell : grid) {
    (cell.key == KeyMode::kImage ? need_image : need_text) = true;
  }
  // Build each key's index once; cells only read it.
  idx::VectorIndex image_index, text_index;
  if (need_image) {
    image_index = idx::VectorIndex::build(in.corpus,
                                          idx::VectorIndex::Key::kImage);
  }
  if (need_text) {
    text_index = idx::VectorIndex::build(in.corpus,
                                         idx::VectorIndex::Key::kText);
  }

  std::vector<AblationRow> rows;
  rows.reserve(grid.size());
  for (const auto& cell : grid) {
    const idx::VectorIndex& index =
        (cell.key == KeyMode::kImage) ? image_index : text_index;
    AblationRow row;
    row.query_mode = cell.query;
    row.key_mode = cell.key;
    row.query_count = in.queries.size();
    row.precision = precision_for(index, in.queries, cell.query, in.retriever,
                                  in.retriever_store, in.k);
    rows.push_back(row);
  }
  return rows;
}

std::vector<size_t> default_k_values() {
  return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
}

std::vector<KSweepRow> run_k_sweep(const AblationInputs& in,
                                   std::vector<size_t> k_values) {
  if (!in.corpus || in.corpus->empty()) {
    throw ConfigError("run_k_sweep: empty corpus");
  }
  if (in.queries.empty()) throw ConfigError("run_k_sweep: no queries");
  if (k_values.empty()) throw ConfigError("run_k_sweep: no k values");
  for (size_t k : k_values) {
    if (k < 1) throw ConfigError("run_k_sweep: k must be >= 1");
  }
  std::sort(k_values.begin(), k_values.end());
  k_values.erase(std::unique(k_values.begin(), k_values.end()),
                 k_values.end());

  idx::VectorIndex index =
      idx::VectorIndex::build(in.corpus, idx::VectorIndex::Key::kText);
  std::vector<KSweepRow> rows;
  rows.reserve(k_values.size());
  for (size_t k : k_values) {
    KSweepRow row;
    row.k = k;
    row.precision = precision_for(index, in.queries, QueryMode::kFused,
                                  in.retriever, in.retriever_store, k);
    rows.push_back(row);
  }
  return rows;
}

IntegratorEval eval_integrator(
    const std::vector<integ::IntegratorSample>& samples,
    const std::vector<idx::RetrievalResult>& retrievals,
    const integ::TextureIntegrator& integrator, const integ::CaptionHead& head,
    num::ParamStore& store, integ::Modality modality,
    const CaptionEmbedder& embedder) {
  if (samples.empty()) throw ConfigError("eval_integrator: no samples");
  if (retrievals.size() != samples.size()) {
    throw ConfigError("eval_integrator: retrievals not parallel to samples");
  }
  IntegratorEval out;
  for (size_t i = 0; i < samples.size(); ++i) {
    feat::FeatureVec pp = integrator.integrate(
        store, samples[i].visual, samples[i].tactile, retrievals[i], modality);
    std::string predicted = predict_serialized(head, store, pp);
    out.mean_score +=
        score_description(predicted, samples[i].caption.str(), embedder);
    corp::TactileCaption pred_cap = corp::TactileCaption::parse(predicted);
    if (pred_cap.canonical() == samples[i].caption.canonical()) {
      out.exact_match += 1.0;
    }
  }
  out.mean_score /= double(samples.size());
  out.exact_match /= double(samples.size());
  return out;
}

EvalReport make_eval_report(
    const std::vector<integ::IntegratorSample>& samples,
    const std::vector<idx::RetrievalResult>& retrievals,
    const integ::TextureIntegrator& integrator, const integ::CaptionHead& head,
    num::ParamStore& store, integ::Modality modality,
    const CaptionEmbedder& embedder,
    std::vector<std::pair<std::string, std::string>> config_echo) {
  if (samples.empty()) throw ConfigError("make_eval_report: no samples");
  if (retrievals.size() != samples.size()) {
    throw ConfigError("make_eval_report: retrievals not parallel to samples");
  }
  auto t0 = std::chrono::steady_clock::now();

  EvalReport report;
  report.config = std::move(config_echo);
  report.rows.reserve(samples.size());
  double sum = 0.0;
  for (size_t i = 0; i < samples.size(); ++i) {
    feat::FeatureVec pp = integrator.integrate(
        store, samples[i].visual, samples[i].tactile, retrievals[i], modality);
    EvalRow row;
    row.id = i;
    row.predicted = predict_serialized(head, store, pp);
    row.ground_truth = samples[i].caption.str();
    row.score = score_description(row.predicted, row.ground_truth, embedder);
    sum += row.score;
    report.rows.push_back(std::move(row));
  }
  report.mean = sum / double(report.rows.size());
  double var = 0.0;
  for (const auto& r : report.rows) {
    var += (r.score - report.mean) * (r.score - report.mean);
  }
  report.stddev = std::sqrt(var / double(report.rows.size()));
  report.runtime_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
  return report;
}

std::vector<ModalityRow> run_modality_ablation(
    const std::vector<integ::IntegratorSample>& train_set,
    const std::vector<idx::RetrievalResult>& train_retrievals,
    const std::vector<integ::IntegratorSample>& eval_set,
    const std::vector<idx::RetrievalResult>& eval_retrievals, size_t dim,
    const ModalityAblationConfig& cfg, const CaptionEmbedder& embedder) {
  if (train_set.empty()) {
    throw ConfigError("run_modality_ablation: empty training set");
  }
  // One shared vocabulary: every arm scores over the same label space.
  std::vector<std::string> words;
  for (const auto& s : train_set) {
    for (const auto& w : s.caption.adjectives()) words.push_back(w);
  }
  integ::AdjectiveVocab vocab(std::move(words));

  std::vector<ModalityRow> rows;
  for (integ::Modality m : {integ::Modality::kBoth, integ::Modality::kImageOnly,
                            integ::Modality::kTextOnly}) {
    num::ParamStore store;
    integ::TextureIntegrator integrator(dim, cfg.prompt_dim, cfg.heads, store,
                                        cfg.seed);
    integ::CaptionHead head(cfg.prompt_dim, vocab, store, cfg.seed);
    integ::IntegratorTrainConfig tc = cfg.train;
    tc.modality = m;
    integ::train_integrator(train_set, train_retrievals, integrator, head,
                            store, tc);
    IntegratorEval ev = eval_integrator(eval_set, eval_retrievals, integrator,
                                        head, store, m, embedder);
    rows.push_back(ModalityRow{m, ev.mean_score, ev.exact_match});
  }
  return rows;
}

std::vector<SubsetSweepRow> run_subset_sweep(
    const std::vector<corp::ManifestRecord>& manifest,
    std::vector<size_t> sizes, const SweepConfig& cfg) {
  if (manifest.empty()) throw ConfigError("run_subset_sweep: empty manifest");
  if (sizes.empty()) throw ConfigError("run_subset_sweep: no sizes");
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  if (sizes.back() > manifest.size()) {
    throw ConfigError("run_subset_sweep: size " + std::to_string(sizes.back()) +
                      " exceeds the manifest (" +
                      std::to_string(manifest.size()) + " records)");
  }

  corp::LexiconCaptioner lex;
  std::vector<SubsetSweepRow> rows;
  rows.reserve(sizes.size());
  for (size_t size : sizes) {
    std::vector<corp::ManifestRecord> subset =
        corp::stratified_sample(manifest, size, cfg.seed);
    auto entries = std::make_shared<std::vector<feat::ShardRecord>>();
    entries->reserve(subset.size());
    for (const auto& rec : subset) {
      entries->push_back(corp::make_entry(rec, lex, cfg.dim, cfg.noise));
    }

    num::ParamStore store;
    ret::QueryNetwork net(cfg.dim, num::MultiHeadAttention::kDefaultHeads,
                          store, cfg.seed);
    ret::train_retriever(tri_modal_from_entries(*entries, cfg.noise), net,
                         store, cfg.retriever_train);

    AblationInputs in;
    in.corpus = entries;
    in.queries = make_query_set(corpus_classes(*entries), cfg.eval_queries,
                                cfg.dim, cfg.noise, mix64(cfg.seed, size));
    in.retriever = &net;
    in.retriever_store = &store;
    in.k = cfg.k;
    idx::VectorIndex index =
        idx::VectorIndex::build(in.corpus, idx::VectorIndex::Key::kText);

    SubsetSweepRow row;
    row.size = size;
    row.precision = precision_for(index, in.queries, QueryMode::kFused,
                                  in.retriever, in.retriever_store, cfg.k);
    row.vocab = corp::vocab_stats(*entries);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace touchrag::harn
