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

#include "touchrag/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "touchrag/checkpoint.hpp"
#include "touchrag/core.hpp"
#include "touchrag/corpus.hpp"
#include "touchrag/features.hpp"
#include "touchrag/harness.hpp"
#include "touchrag/index.hpp"
#include "touchrag/integrator.hpp"
#include "touchrag/retriever.hpp"

namespace touchrag {
namespace {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create output directory '" + dir +
                  "': " + ec.message());
  }
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::shared_ptr<const std::vector<feat::ShardRecord>> load_corpus_shared(
    const std::string& manifest) {
  auto entries = std::make_shared<std::vector<feat::ShardRecord>>(
      corp::load_corpus(manifest));
  if (entries->empty()) {
    throw ValidationError("corpus at '" + manifest + "' has no entries");
  }
  return entries;
}

size_t corpus_dim(const std::vector<feat::ShardRecord>& entries) {
  return entries.front().r_v.size();
}

num::LrSchedule parse_schedule(const std::string& s) {
  if (s == "cosine") return num::LrSchedule::kWarmupCosine;
  if (s == "constant") return num::LrSchedule::kWarmupConstant;
  throw ConfigError("unknown --lr-schedule '" + s +
                    "' (expected cosine or constant)");
}

// Whitespace-split an external captioner command line. Deliberately simple:
// arguments with embedded spaces need a wrapper script.
std::vector<std::string> split_command(const std::string& cmd) {
  std::vector<std::string> argv;
  std::istringstream in(cmd);
  std::string tok;
  while (in >> tok) argv.push_back(tok);
  if (argv.empty()) {
    throw ConfigError("--captioner-cmd is empty");
  }
  return argv;
}

// ---------------------------------------------------------------------------
// Shared option bundles

struct CorpusSynthOpts {
  size_t records = 1000;
  size_t classes = 64;
  double noise = 0.2;
};

struct RetrieverOpts {
  std::string checkpoint;
  size_t heads = num::MultiHeadAttention::kDefaultHeads;
};

// Rebuild the query network against a fresh store and load its weights.
struct LoadedRetriever {
  num::ParamStore store;
  std::unique_ptr<ret::QueryNetwork> net;
};

std::unique_ptr<LoadedRetriever> load_retriever(const RetrieverOpts& opts,
                                                size_t dim, uint64_t seed) {
  auto out = std::make_unique<LoadedRetriever>();
  out->net = std::make_unique<ret::QueryNetwork>(dim, opts.heads, out->store,
                                                 seed);
  num::load_checkpoint(out->store, opts.checkpoint);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each receives fully-resolved options and throws on any
// failure; exit-code mapping happens once in cli_main.

void cmd_build_corpus(uint64_t seed, size_t dim, const std::string& out_dir,
                      const CorpusSynthOpts& synth, size_t subset,
                      size_t shard_capacity, const std::string& captioner_cmd) {
  ensure_dir(out_dir);
  std::vector<corp::ManifestRecord> manifest =
      corp::synthetic_manifest(synth.records, synth.classes, seed);
  if (subset > 0) {
    manifest = corp::stratified_sample(manifest, subset, seed);
  }

  corp::LexiconCaptioner lexicon;
  std::unique_ptr<corp::PipeCaptioner> pipe;
  corp::Captioner* captioner = &lexicon;
  if (!captioner_cmd.empty()) {
    pipe = std::make_unique<corp::PipeCaptioner>(split_command(captioner_cmd));
    captioner = pipe.get();
  }

  std::vector<feat::ShardRecord> entries;
  entries.reserve(manifest.size());
  for (const auto& rec : manifest) {
    entries.push_back(corp::make_entry(rec, *captioner, dim, synth.noise));
  }
  corp::BuildResult built = corp::build_shards(entries, shard_capacity,
                                               out_dir);
  corp::VocabStats stats = corp::vocab_stats(entries);

  std::cout << "manifest\t" << built.manifest_path << "\n"
            << "entries\t" << built.entries << "\n"
            << "shards\t" << built.shard_paths.size() << "\n"
            << "dim\t" << dim << "\n"
            << "unique_words\t" << stats.unique_words << "\n"
            << "unique_captions\t" << stats.unique_captions << "\n";
}

void cmd_build_index(uint64_t seed, const std::string& manifest,
                     const std::string& key_mode, size_t check_queries) {
  auto corpus = load_corpus_shared(manifest);
  idx::VectorIndex::Key key = harn::parse_key_mode(key_mode) ==
                                      harn::KeyMode::kImage
                                  ? idx::VectorIndex::Key::kImage
                                  : idx::VectorIndex::Key::kText;
  idx::VectorIndex index = idx::VectorIndex::build(corpus, key);

  // The index is an in-memory structure rebuilt on demand; this command
  // reports its stats and proves the fast path against the brute-force
  // oracle on seeded probes.
  size_t k = std::min<size_t>(5, index.size());
  for (size_t i = 0; i < check_queries; ++i) {
    feat::FeatureVec q =
        feat::detail::unit_direction(mix64(seed, uint64_t(i)), index.dim());
    idx::RetrievalResult fast = index.topk(q, k);
    idx::RetrievalResult slow = index.oracle_topk(q, k);
    if (fast.size() != slow.size()) {
      throw StateError("index self-check: result sizes diverged");
    }
    for (size_t j = 0; j < fast.size(); ++j) {
      if (fast[j].id != slow[j].id) {
        throw StateError("index self-check: query " + std::to_string(i) +
                         " rank " + std::to_string(j) + ": topk id " +
                         std::to_string(fast[j].id) + " != oracle id " +
                         std::to_string(slow[j].id));
      }
    }
  }

  std::cout << "entries\t" << index.size() << "\n"
            << "dim\t" << index.dim() << "\n"
            << "key\t" << key_mode << "\n"
            << "bytes\t" << index.bytes() << "\n"
            << "self_check\tok (" << check_queries << " queries)\n";
}

void cmd_train_retriever(uint64_t seed, const std::string& out_dir,
                         const std::string& manifest, double noise,
                         size_t heads, const ret::TrainConfig& cfg_in) {
  ensure_dir(out_dir);
  auto corpus = load_corpus_shared(manifest);
  size_t dim = corpus_dim(*corpus);

  ret::TrainConfig cfg = cfg_in;
  cfg.seed = seed;

  num::ParamStore store;
  ret::QueryNetwork net(dim, heads, store, seed);
  std::vector<feat::TriModalSample> data =
      harn::tri_modal_from_entries(*corpus, noise);
  std::vector<ret::EpochMetrics> history =
      ret::train_retriever(data, net, store, cfg);

  std::string ckpt = join_path(out_dir, "retriever.rtck");
  num::save_checkpoint(store, ckpt);

  std::ostringstream log;
  log << "epoch\tlr\tloss\tmean_cos_QL\tmean_cos_QT\n";
  for (const auto& m : history) {
    log << m.epoch << "\t" << fmt_double(m.lr) << "\t" << fmt_double(m.loss)
        << "\t" << fmt_double(m.mean_cos_ql) << "\t"
        << fmt_double(m.mean_cos_qt) << "\n";
  }
  std::string metrics_path = join_path(out_dir, "retriever_metrics.tsv");
  write_file(metrics_path, log.str());

  const ret::EpochMetrics& last = history.back();
  std::cout << "checkpoint\t" << ckpt << "\n"
            << "metrics\t" << metrics_path << "\n"
            << "epochs\t" << history.size() << "\n"
            << "final_loss\t" << fmt_double(last.loss) << "\n"
            << "final_mean_cos_QL\t" << fmt_double(last.mean_cos_ql) << "\n";
}

void cmd_train_integrator(uint64_t seed, const std::string& out_dir,
                          const std::string& manifest,
                          const RetrieverOpts& retriever_opts, double noise,
                          size_t prompt_dim, size_t heads,
                          const std::string& modality,
                          const integ::IntegratorTrainConfig& cfg_in) {
  ensure_dir(out_dir);
  auto corpus = load_corpus_shared(manifest);
  size_t dim = corpus_dim(*corpus);

  auto retriever = load_retriever(retriever_opts, dim, seed);
  idx::VectorIndex index =
      idx::VectorIndex::build(corpus, idx::VectorIndex::Key::kText);

  std::vector<integ::IntegratorSample> samples =
      harn::integrator_samples_from_entries(*corpus, noise);

  integ::IntegratorTrainConfig cfg = cfg_in;
  cfg.seed = seed;
  cfg.modality = harn::parse_modality(modality);

  std::vector<idx::RetrievalResult> retrievals = integ::precompute_retrievals(
      samples, *retriever->net, retriever->store, index, cfg.k);

  num::ParamStore store;
  integ::TextureIntegrator integrator(dim, prompt_dim, heads, store, seed);
  integ::CaptionHead head(prompt_dim, integ::AdjectiveVocab::harvest(*corpus),
                          store, seed);
  std::vector<integ::IntegratorEpochMetrics> history =
      integ::train_integrator(samples, retrievals, integrator, head, store,
                              cfg);

  std::string ckpt = join_path(out_dir, "integrator.rtck");
  num::save_checkpoint(store, ckpt);

  std::ostringstream log;
  log << "epoch\tlr\tloss\texact_match\n";
  for (const auto& m : history) {
    log << m.epoch << "\t" << fmt_double(m.lr) << "\t" << fmt_double(m.loss)
        << "\t" << fmt_double(m.exact_match) << "\n";
  }
  std::string metrics_path = join_path(out_dir, "integrator_metrics.tsv");
  write_file(metrics_path, log.str());

  const integ::IntegratorEpochMetrics& last = history.back();
  std::cout << "checkpoint\t" << ckpt << "\n"
            << "metrics\t" << metrics_path << "\n"
            << "vocab_size\t" << head.vocab().size() << "\n"
            << "final_loss\t" << fmt_double(last.loss) << "\n"
            << "final_exact_match\t" << fmt_double(last.exact_match) << "\n";
}

void cmd_retrieve(uint64_t seed, const std::string& manifest,
                  const std::string& class_name, uint64_t instance,
                  size_t k, const std::string& query_mode,
                  const std::string& key_mode, double noise,
                  const RetrieverOpts& retriever_opts) {
  auto corpus = load_corpus_shared(manifest);
  size_t dim = corpus_dim(*corpus);
  idx::VectorIndex::Key key = harn::parse_key_mode(key_mode) ==
                                      harn::KeyMode::kImage
                                  ? idx::VectorIndex::Key::kImage
                                  : idx::VectorIndex::Key::kText;
  idx::VectorIndex index = idx::VectorIndex::build(corpus, key);

  uint64_t material = corp::material_of_class(class_name);
  feat::FeatureVec visual =
      feat::synth_embed(feat::Kind::kVisual, material, instance, dim, noise);
  feat::FeatureVec tactile =
      feat::synth_embed(feat::Kind::kTactile, material, instance, dim, noise);

  feat::FeatureVec query;
  switch (harn::parse_query_mode(query_mode)) {
    case harn::QueryMode::kImage:
      query = visual;
      break;
    case harn::QueryMode::kTactile:
      query = tactile;
      break;
    case harn::QueryMode::kFused: {
      if (retriever_opts.checkpoint.empty()) {
        throw StateError(
            "fused query mode needs --retriever (trained checkpoint)");
      }
      auto retriever = load_retriever(retriever_opts, dim, seed);
      query = retriever->net->query(retriever->store, visual, tactile);
      break;
    }
  }

  for (const auto& hit : index.topk(query, k)) {
    std::cout << hit.id << "\t" << fmt_double(hit.score) << "\t" << hit.caption
              << "\n";
  }
}

void cmd_eval(uint64_t seed, const std::string& out_dir,
              const std::string& manifest, const RetrieverOpts& retriever_opts,
              const std::string& integrator_ckpt, size_t prompt_dim,
              size_t heads, const std::string& modality, size_t queries,
              size_t k, double noise) {
  ensure_dir(out_dir);
  auto corpus = load_corpus_shared(manifest);
  size_t dim = corpus_dim(*corpus);

  auto retriever = load_retriever(retriever_opts, dim, seed);

  num::ParamStore store;
  integ::TextureIntegrator integrator(dim, prompt_dim, heads, store, seed);
  integ::CaptionHead head(prompt_dim, integ::AdjectiveVocab::harvest(*corpus),
                          store, seed);
  num::load_checkpoint(store, integrator_ckpt);

  idx::VectorIndex index =
      idx::VectorIndex::build(corpus, idx::VectorIndex::Key::kText);
  std::vector<harn::QuerySample> probes = harn::make_query_set(
      harn::corpus_classes(*corpus), queries, dim, noise, seed);
  std::vector<integ::IntegratorSample> samples =
      harn::integrator_samples_from_queries(probes);
  std::vector<idx::RetrievalResult> retrievals = integ::precompute_retrievals(
      samples, *retriever->net, retriever->store, index, k);

  harn::CaptionEmbedder embedder;
  harn::EvalReport report = harn::make_eval_report(
      samples, retrievals, integrator, head, store,
      harn::parse_modality(modality), embedder,
      {{"seed", std::to_string(seed)},
       {"manifest", manifest},
       {"dim", std::to_string(dim)},
       {"prompt_dim", std::to_string(prompt_dim)},
       {"heads", std::to_string(heads)},
       {"k", std::to_string(k)},
       {"modality", modality},
       {"queries", std::to_string(queries)},
       {"noise", fmt_double(noise)},
       {"query_normalization",
        "all query modes normalized uniformly (cosine retrieval)"}});

  std::string path = join_path(out_dir, "eval_report.tsv");
  harn::write_report(report, path);
  std::cout << "report\t" << path << "\n"
            << "mean\t" << fmt_double(report.mean) << "\n"
            << "stddev\t" << fmt_double(report.stddev) << "\n";
}

void cmd_ablate(uint64_t seed, const std::string& out_dir,
                const std::string& manifest,
                const RetrieverOpts& retriever_opts, size_t queries, size_t k,
                double noise) {
  ensure_dir(out_dir);
  harn::AblationInputs in;
  in.corpus = load_corpus_shared(manifest);
  size_t dim = corpus_dim(*in.corpus);
  in.k = k;
  in.queries = harn::make_query_set(harn::corpus_classes(*in.corpus), queries,
                                    dim, noise, seed);

  std::unique_ptr<LoadedRetriever> retriever;
  if (!retriever_opts.checkpoint.empty()) {
    retriever = load_retriever(retriever_opts, dim, seed);
    in.retriever = retriever->net.get();
    in.retriever_store = &retriever->store;
  }

  std::vector<harn::AblationRow> rows = harn::run_query_ablation(in);

  harn::ReportTable table;
  table.metric = "precision@" + std::to_string(k) +
                 " (relevance = material match; all query modes normalized "
                 "uniformly)";
  table.config = {{"seed", std::to_string(seed)},
                  {"manifest", manifest},
                  {"queries", std::to_string(queries)},
                  {"k", std::to_string(k)},
                  {"noise", fmt_double(noise)}};
  table.columns = {"query", "key", "precision", "queries"};
  for (const auto& r : rows) {
    table.rows.push_back({harn::query_mode_name(r.query_mode),
                          harn::key_mode_name(r.key_mode),
                          fmt_double(r.precision),
                          std::to_string(r.query_count)});
  }
  std::string path = join_path(out_dir, "ablation.tsv");
  harn::write_table(table, path);
  std::cout << harn::render_table(table);
  std::cout << "table\t" << path << "\n";
}

void cmd_sweep_k(uint64_t seed, const std::string& out_dir,
                 const std::string& manifest,
                 const RetrieverOpts& retriever_opts, size_t queries,
                 std::vector<size_t> k_values, double noise) {
  ensure_dir(out_dir);
  harn::AblationInputs in;
  in.corpus = load_corpus_shared(manifest);
  size_t dim = corpus_dim(*in.corpus);
  in.queries = harn::make_query_set(harn::corpus_classes(*in.corpus), queries,
                                    dim, noise, seed);
  if (retriever_opts.checkpoint.empty()) {
    throw StateError("sweep-k needs --retriever (trained checkpoint)");
  }
  auto retriever = load_retriever(retriever_opts, dim, seed);
  in.retriever = retriever->net.get();
  in.retriever_store = &retriever->store;
  if (k_values.empty()) k_values = harn::default_k_values();

  std::vector<harn::KSweepRow> rows = harn::run_k_sweep(in, k_values);

  harn::ReportTable table;
  table.metric = "fused/text precision@K vs K (relevance = material match)";
  table.config = {{"seed", std::to_string(seed)},
                  {"manifest", manifest},
                  {"queries", std::to_string(queries)},
                  {"noise", fmt_double(noise)}};
  table.columns = {"k", "precision"};
  for (const auto& r : rows) {
    table.rows.push_back({std::to_string(r.k), fmt_double(r.precision)});
  }
  std::string path = join_path(out_dir, "k_sweep.tsv");
  harn::write_table(table, path);
  std::cout << harn::render_table(table);
  std::cout << "table\t" << path << "\n";
}

void cmd_sweep_subset(uint64_t seed, size_t dim, const std::string& out_dir,
                      const CorpusSynthOpts& synth, std::vector<size_t> sizes,
                      const ret::TrainConfig& train, size_t k,
                      size_t eval_queries) {
  ensure_dir(out_dir);
  std::vector<corp::ManifestRecord> manifest =
      corp::synthetic_manifest(synth.records, synth.classes, seed);

  harn::SweepConfig cfg;
  cfg.dim = dim;
  cfg.noise = synth.noise;
  cfg.seed = seed;
  cfg.retriever_train = train;
  cfg.retriever_train.seed = seed;
  cfg.k = k;
  cfg.eval_queries = eval_queries;
  if (sizes.empty()) sizes = {256, 512, 1024};

  std::vector<harn::SubsetSweepRow> rows =
      harn::run_subset_sweep(manifest, sizes, cfg);

  harn::ReportTable table;
  table.metric = "fused/text precision@" + std::to_string(k) +
                 " vs corpus subset size";
  table.config = {{"seed", std::to_string(seed)},
                  {"records", std::to_string(synth.records)},
                  {"classes", std::to_string(synth.classes)},
                  {"dim", std::to_string(dim)},
                  {"noise", fmt_double(synth.noise)},
                  {"epochs", std::to_string(train.epochs)},
                  {"eval_queries", std::to_string(eval_queries)}};
  table.columns = {"size", "precision", "unique_words", "unique_captions",
                   "top_word"};
  for (const auto& r : rows) {
    std::string top = r.vocab.top_words.empty()
                          ? std::string("-")
                          : r.vocab.top_words.front().first;
    table.rows.push_back({std::to_string(r.size), fmt_double(r.precision),
                          std::to_string(r.vocab.unique_words),
                          std::to_string(r.vocab.unique_captions), top});
  }
  std::string path = join_path(out_dir, "subset_sweep.tsv");
  harn::write_table(table, path);
  std::cout << harn::render_table(table);
  std::cout << "table\t" << path << "\n";
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{
      "touchrag: desk-scale retrieval-augmented visuo-tactile pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "line-oriented key=value configuration file");

  uint64_t seed = 1;
  size_t dim = feat::kDefaultDim;
  std::string out_dir = ".";
  app.add_option("--seed", seed, "global random seed")
      ->capture_default_str();
  app.add_option("--dim", dim, "embedding dimension for synthesis commands")
      ->capture_default_str();
  app.add_option("--out", out_dir, "output directory")
      ->capture_default_str();

  // --- build-corpus ---------------------------------------------------------
  auto* bc = app.add_subcommand(
      "build-corpus", "synthesize, recaption, and shard a corpus");
  CorpusSynthOpts bc_synth;
  size_t bc_subset = 0;
  size_t bc_shard_capacity = 512;
  std::string bc_captioner_cmd;
  bc->add_option("--records", bc_synth.records, "manifest records to create")
      ->capture_default_str();
  bc->add_option("--classes", bc_synth.classes, "distinct class names")
      ->capture_default_str();
  bc->add_option("--noise", bc_synth.noise, "instance noise in [0,1)")
      ->capture_default_str();
  bc->add_option("--subset", bc_subset,
                 "stratified subset size (0 = use everything)")
      ->capture_default_str();
  bc->add_option("--shard-capacity", bc_shard_capacity,
                 "max records per shard file")
      ->capture_default_str();
  bc->add_option("--captioner-cmd", bc_captioner_cmd,
                 "external captioner command (line protocol on stdin/stdout); "
                 "default: built-in lexicon captioner");
  bc->callback([&] {
    cmd_build_corpus(seed, dim, out_dir, bc_synth, bc_subset,
                     bc_shard_capacity, bc_captioner_cmd);
  });

  // --- build-index ----------------------------------------------------------
  auto* bi = app.add_subcommand(
      "build-index", "load a corpus, build the in-memory index, self-check");
  std::string bi_manifest;
  std::string bi_key = "text";
  size_t bi_check = 8;
  bi->add_option("--manifest", bi_manifest, "corpus.tsv path")->required();
  bi->add_option("--key", bi_key, "index key column: text|image")
      ->capture_default_str();
  bi->add_option("--check-queries", bi_check,
                 "seeded probes compared against the brute-force oracle")
      ->capture_default_str();
  bi->callback([&] { cmd_build_index(seed, bi_manifest, bi_key, bi_check); });

  // --- train-retriever ------------------------------------------------------
  auto* tr = app.add_subcommand("train-retriever",
                                "train the query network on a corpus");
  std::string tr_manifest;
  double tr_noise = 0.2;
  size_t tr_heads = num::MultiHeadAttention::kDefaultHeads;
  ret::TrainConfig tr_cfg;
  tr->add_option("--manifest", tr_manifest, "corpus.tsv path")->required();
  tr->add_option("--epochs", tr_cfg.epochs, "training epochs")
      ->capture_default_str();
  tr->add_option("--batch", tr_cfg.batch_size, "batch size")
      ->capture_default_str();
  tr->add_option("--lr", tr_cfg.learning_rate, "base learning rate")
      ->capture_default_str();
  tr->add_option("--wd", tr_cfg.weight_decay, "weight decay")
      ->capture_default_str();
  tr->add_option("--warmup", tr_cfg.warmup_epochs, "warmup epochs")
      ->capture_default_str();
  tr->add_option("--grad-clip", tr_cfg.grad_clip, "gradient-norm ceiling")
      ->capture_default_str();
  tr->add_option("--lambda1", tr_cfg.weights.lambda1,
                 "tactile-cosine alignment weight")
      ->capture_default_str();
  tr->add_option("--lambda2", tr_cfg.weights.lambda2, "mse stability weight")
      ->capture_default_str();
  tr->add_option("--lambda3", tr_cfg.weights.lambda3,
                 "diversity+contrastive stability weight")
      ->capture_default_str();
  tr->add_option("--tau", tr_cfg.weights.tau, "contrastive temperature")
      ->capture_default_str();
  tr->add_option("--noise", tr_noise, "tactile synthesis noise")
      ->capture_default_str();
  tr->add_option("--heads", tr_heads, "attention heads")
      ->capture_default_str();
  std::string tr_schedule = "cosine";
  tr->add_option("--lr-schedule", tr_schedule,
                 "post-warmup decay: cosine|constant")
      ->capture_default_str();
  tr->callback([&] {
    tr_cfg.schedule = parse_schedule(tr_schedule);
    cmd_train_retriever(seed, out_dir, tr_manifest, tr_noise, tr_heads,
                        tr_cfg);
  });

  // --- train-integrator -----------------------------------------------------
  auto* ti = app.add_subcommand(
      "train-integrator",
      "train the fusion module + caption head against a frozen retriever");
  std::string ti_manifest;
  RetrieverOpts ti_retriever;
  double ti_noise = 0.2;
  size_t ti_prompt_dim = 4096;
  size_t ti_heads = num::MultiHeadAttention::kDefaultHeads;
  std::string ti_modality = "both";
  integ::IntegratorTrainConfig ti_cfg;
  ti->add_option("--manifest", ti_manifest, "corpus.tsv path")->required();
  ti->add_option("--retriever", ti_retriever.checkpoint,
                 "trained retriever checkpoint (.rtck)")
      ->required();
  ti->add_option("--epochs", ti_cfg.epochs, "training epochs")
      ->capture_default_str();
  ti->add_option("--batch", ti_cfg.batch_size, "batch size")
      ->capture_default_str();
  ti->add_option("--lr", ti_cfg.learning_rate, "base learning rate")
      ->capture_default_str();
  ti->add_option("--wd", ti_cfg.weight_decay, "weight decay")
      ->capture_default_str();
  ti->add_option("--warmup", ti_cfg.warmup_epochs, "warmup epochs")
      ->capture_default_str();
  ti->add_option("--k", ti_cfg.k, "retrievals per sample")
      ->capture_default_str();
  ti->add_option("--modality", ti_modality,
                 "retrieved streams to fuse: both|image|text")
      ->capture_default_str();
  ti->add_option("--prompt-dim", ti_prompt_dim, "prompt dimension D'")
      ->capture_default_str();
  ti->add_option("--heads", ti_heads, "attention heads")
      ->capture_default_str();
  ti->add_option("--noise", ti_noise, "tactile synthesis noise")
      ->capture_default_str();
  std::string ti_schedule = "cosine";
  ti->add_option("--lr-schedule", ti_schedule,
                 "post-warmup decay: cosine|constant")
      ->capture_default_str();
  ti->callback([&] {
    ti_cfg.schedule = parse_schedule(ti_schedule);
    cmd_train_integrator(seed, out_dir, ti_manifest, ti_retriever, ti_noise,
                         ti_prompt_dim, ti_heads, ti_modality, ti_cfg);
  });

  // --- retrieve ---------------------------------------------------------
  auto* rt = app.add_subcommand(
      "retrieve", "look up top-k corpus entries for a synthesized query");
  std::string rt_manifest, rt_class;
  uint64_t rt_instance = 0;
  size_t rt_k = 5;
  std::string rt_query_mode = "fused";
  std::string rt_key = "text";
  double rt_noise = 0.2;
  RetrieverOpts rt_retriever;
  rt->add_option("--manifest", rt_manifest, "corpus.tsv path")->required();
  rt->add_option("--class", rt_class, "query object class name")->required();
  rt->add_option("--instance", rt_instance, "query instance seed")
      ->capture_default_str();
  rt->add_option("--k", rt_k, "hits to print")->capture_default_str();
  rt->add_option("--query-mode", rt_query_mode,
                 "query source: fused|image|tactile")
      ->capture_default_str();
  rt->add_option("--key", rt_key, "index key column: text|image")
      ->capture_default_str();
  rt->add_option("--noise", rt_noise, "query synthesis noise")
      ->capture_default_str();
  rt->add_option("--retriever", rt_retriever.checkpoint,
                 "trained retriever checkpoint (required for fused mode)");
  rt->add_option("--heads", rt_retriever.heads, "attention heads")
      ->capture_default_str();
  rt->callback([&] {
    cmd_retrieve(seed, rt_manifest, rt_class, rt_instance, rt_k,
                 rt_query_mode, rt_key, rt_noise, rt_retriever);
  });

  // --- eval -------------------------------------------------------------
  auto* ev = app.add_subcommand(
      "eval", "caption held-out probes through the full pipeline");
  std::string ev_manifest, ev_integrator;
  RetrieverOpts ev_retriever;
  size_t ev_prompt_dim = 4096;
  size_t ev_heads = num::MultiHeadAttention::kDefaultHeads;
  std::string ev_modality = "both";
  size_t ev_queries = 64;
  size_t ev_k = 5;
  double ev_noise = 0.2;
  ev->add_option("--manifest", ev_manifest, "corpus.tsv path")->required();
  ev->add_option("--retriever", ev_retriever.checkpoint,
                 "trained retriever checkpoint")
      ->required();
  ev->add_option("--integrator", ev_integrator,
                 "trained integrator checkpoint")
      ->required();
  ev->add_option("--prompt-dim", ev_prompt_dim,
                 "prompt dimension (must match the checkpoint)")
      ->capture_default_str();
  ev->add_option("--heads", ev_heads, "attention heads")
      ->capture_default_str();
  ev->add_option("--modality", ev_modality, "fusion mask: both|image|text")
      ->capture_default_str();
  ev->add_option("--queries", ev_queries, "held-out probes to evaluate")
      ->capture_default_str();
  ev->add_option("--k", ev_k, "retrievals per probe")->capture_default_str();
  ev->add_option("--noise", ev_noise, "probe synthesis noise")
      ->capture_default_str();
  ev->callback([&] {
    RetrieverOpts r = ev_retriever;
    r.heads = ev_heads;
    cmd_eval(seed, out_dir, ev_manifest, r, ev_integrator, ev_prompt_dim,
             ev_heads, ev_modality, ev_queries, ev_k, ev_noise);
  });

  // --- ablate -----------------------------------------------------------
  auto* ab = app.add_subcommand(
      "ablate", "retrieval-method grid: query mode x key mode precision");
  std::string ab_manifest;
  RetrieverOpts ab_retriever;
  size_t ab_queries = 64;
  size_t ab_k = 5;
  double ab_noise = 0.2;
  ab->add_option("--manifest", ab_manifest, "corpus.tsv path")->required();
  ab->add_option("--retriever", ab_retriever.checkpoint,
                 "trained retriever checkpoint (for the fused row)");
  ab->add_option("--heads", ab_retriever.heads, "attention heads")
      ->capture_default_str();
  ab->add_option("--queries", ab_queries, "held-out probes")
      ->capture_default_str();
  ab->add_option("--k", ab_k, "precision cutoff")->capture_default_str();
  ab->add_option("--noise", ab_noise, "probe synthesis noise")
      ->capture_default_str();
  ab->callback([&] {
    cmd_ablate(seed, out_dir, ab_manifest, ab_retriever, ab_queries, ab_k,
               ab_noise);
  });

  // --- sweep-k ----------------------------------------------------------
  auto* sk = app.add_subcommand("sweep-k", "precision@K across K values");
  std::string sk_manifest;
  RetrieverOpts sk_retriever;
  size_t sk_queries = 64;
  std::vector<size_t> sk_values;
  double sk_noise = 0.2;
  sk->add_option("--manifest", sk_manifest, "corpus.tsv path")->required();
  sk->add_option("--retriever", sk_retriever.checkpoint,
                 "trained retriever checkpoint")
      ->required();
  sk->add_option("--heads", sk_retriever.heads, "attention heads")
      ->capture_default_str();
  sk->add_option("--queries", sk_queries, "held-out probes")
      ->capture_default_str();
  sk->add_option("--k-values", sk_values, "K values (default 1..10)")
      ->delimiter(',');
  sk->add_option("--noise", sk_noise, "probe synthesis noise")
      ->capture_default_str();
  sk->callback([&] {
    cmd_sweep_k(seed, out_dir, sk_manifest, sk_retriever, sk_queries,
                sk_values, sk_noise);
  });

  // --- sweep-subset -------------------------------------------------------
  auto* ss = app.add_subcommand(
      "sweep-subset", "train/eval across stratified corpus subset sizes");
  CorpusSynthOpts ss_synth;
  ss_synth.records = 2048;
  std::vector<size_t> ss_sizes;
  ret::TrainConfig ss_train;
  ss_train.epochs = 5;
  ss_train.warmup_epochs = 1;
  ss_train.batch_size = 64;
  size_t ss_k = 5;
  size_t ss_eval_queries = 64;
  ss->add_option("--records", ss_synth.records, "full manifest size")
      ->capture_default_str();
  ss->add_option("--classes", ss_synth.classes, "distinct class names")
      ->capture_default_str();
  ss->add_option("--sizes", ss_sizes,
                 "subset sizes (default 256,512,1024)")
      ->delimiter(',');
  ss->add_option("--epochs", ss_train.epochs, "retriever epochs per size")
      ->capture_default_str();
  ss->add_option("--batch", ss_train.batch_size, "retriever batch size")
      ->capture_default_str();
  ss->add_option("--warmup", ss_train.warmup_epochs, "warmup epochs")
      ->capture_default_str();
  ss->add_option("--k", ss_k, "precision cutoff")->capture_default_str();
  ss->add_option("--eval-queries", ss_eval_queries, "probes per size")
      ->capture_default_str();
  ss->add_option("--noise", ss_synth.noise, "synthesis noise")
      ->capture_default_str();
  ss->callback([&] {
    cmd_sweep_subset(seed, dim, out_dir, ss_synth, ss_sizes, ss_train, ss_k,
                     ss_eval_queries);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, returns 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    // Config file problems are I/O errors; CLI11's message names the path.
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace touchrag
