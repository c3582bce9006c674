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

#include "touchrag/corpus.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "touchrag/core.hpp"

namespace touchrag::corp {

// --- tactile captions -------------------------------------------------------

TactileCaption TactileCaption::parse(const std::string& text) {
  std::vector<std::string> tokens;
  size_t start = 0;
  while (true) {
    size_t comma = text.find(',', start);
    std::string tok = text.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    // Trim surrounding whitespace.
    size_t b = tok.find_first_not_of(" \t\r\n");
    size_t e = tok.find_last_not_of(" \t\r\n");
    tok = (b == std::string::npos) ? std::string() : tok.substr(b, e - b + 1);
    // Strip one trailing punctuation mark (captioners love final periods),
    // then whatever whitespace it was hiding.
    if (!tok.empty() &&
        (tok.back() == '.' || tok.back() == '!' || tok.back() == ';'))
      tok.pop_back();
    while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.back())))
      tok.pop_back();
    for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    tokens.push_back(std::move(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }

  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) {
      std::ostringstream msg;
      msg << "caption has an empty adjective at position " << (i + 1) << ": \""
          << text << "\"";
      throw ValidationError(msg.str());
    }
    for (char c : tokens[i]) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        std::ostringstream msg;
        msg << "caption adjective " << (i + 1) << " contains whitespace: \""
            << tokens[i] << "\"";
        throw ValidationError(msg.str());
      }
    }
  }
  if (tokens.size() != kAdjectives) {
    std::ostringstream msg;
    msg << "caption has " << tokens.size() << " adjectives, expected "
        << kAdjectives << ": \"" << text << "\"";
    throw ValidationError(msg.str());
  }
  TactileCaption cap;
  std::copy_n(tokens.begin(), kAdjectives, cap.adjectives_.begin());
  return cap;
}

std::string TactileCaption::str() const {
  std::string out;
  for (size_t i = 0; i < kAdjectives; ++i) {
    if (i) out += ", ";
    out += adjectives_[i];
  }
  return out;
}

std::string TactileCaption::canonical() const {
  std::array<std::string, kAdjectives> sorted = adjectives_;
  std::sort(sorted.begin(), sorted.end());
  std::string out;
  for (size_t i = 0; i < kAdjectives; ++i) {
    if (i) out += ",";
    out += sorted[i];
  }
  return out;
}

// --- lexicon ----------------------------------------------------------------

const std::array<MaterialLexicon, kMaterialCount>& lexicon() {
  static const std::array<MaterialLexicon, kMaterialCount> kTable = {{
      {"rubber", {"elastic", "springy", "grippy", "taut", "pliable", "snappy", "stretchy", "bouncy"}},
      {"wood", {"grainy", "knotted", "fibrous", "splintery", "carved", "ridged", "woody", "rough"}},
      {"metal", {"cold", "hard", "slick", "rigid", "metallic", "polished", "unyielding", "dense"}},
      {"glass", {"smooth", "glassy", "brittle", "sleek", "flat", "crisp", "glazed", "frigid"}},
      {"fabric", {"soft", "woven", "breathable", "light", "threaded", "supple", "flowing", "airy"}},
      {"leather", {"tough", "leathery", "worn", "creased", "oiled", "weathered", "thick", "broken"}},
      {"foam", {"squishy", "spongy", "compressible", "cushioned", "yielding", "puffy", "plush", "padded"}},
      {"stone", {"rocky", "coarse", "heavy", "gritty", "solid", "jagged", "chalky", "unpolished"}},
      {"plastic", {"slippery", "molded", "glossy", "synthetic", "lightweight", "seamless", "shiny", "hollow"}},
      {"ceramic", {"earthen", "fired", "dusty", "matte", "curved", "delicate", "fine", "hardened"}},
      {"paper", {"papery", "thin", "dry", "crinkly", "foldable", "fragile", "feathery", "flimsy"}},
      {"sponge", {"porous", "absorbent", "damp", "soggy", "squeezable", "moist", "holey", "wet"}},
      {"silk", {"silky", "lustrous", "fluid", "satiny", "gossamer", "slinky", "gliding", "luxurious"}},
      {"concrete", {"abrasive", "stiff", "pitted", "rugged", "cracked", "blocky", "unforgiving", "grating"}},
      {"wool", {"wooly", "fuzzy", "warm", "fluffy", "itchy", "knitted", "felted", "cozy"}},
      {"cork", {"corky", "buoyant", "crumbly", "pocked", "muted", "nubby", "stubbly", "bumpy"}},
  }};
  return kTable;
}

uint64_t material_of_class(std::string_view class_name) {
  return fnv1a(class_name) % kMaterialCount;
}

// --- prompt + captioners ----------------------------------------------------

std::string caption_prompt(const ManifestRecord& record) {
  if (record.class_name.empty())
    throw ValidationError("manifest record has an empty class name");
  std::string prompt =
      "Create a tactile caption for an object. Object: " + record.class_name +
      ". Visual description: " + record.source_caption +
      ". Describe only how the object feels to the touch, never how it looks."
      " Respond with ONLY 5 adjectives separated by commas.";
  return prompt;
}

namespace {

// Pulls the class name back out of a rendered prompt. The offline captioner
// has no model to ask, so it keys its lexicon on the same field the prompt
// carries to a real one.
std::string class_from_prompt(const std::string& prompt) {
  const std::string kField = "Object: ";
  size_t at = prompt.find(kField);
  if (at == std::string::npos)
    throw ValidationError("captioner prompt lacks an 'Object:' field");
  size_t begin = at + kField.size();
  size_t end = prompt.find('.', begin);
  if (end == std::string::npos || end == begin)
    throw ValidationError("captioner prompt has a malformed 'Object:' field");
  return prompt.substr(begin, end - begin);
}

std::string escape_line(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\n')
      out += "\\n";
    else if (c == '\\')
      out += "\\\\";
    else
      out += c;
  }
  return out;
}

}  // namespace

std::string LexiconCaptioner::caption_line(const std::string& prompt) {
  const std::string cls = class_from_prompt(prompt);
  uint64_t h = fnv1a(cls);
  const MaterialLexicon& mat = lexicon()[h % kMaterialCount];

  // Five distinct picks out of the material's eight adjectives, keyed by
  // successive nibbles of the class hash: deterministic, and different
  // classes of one material usually get different five-word subsets, which
  // keeps the corpus vocabulary statistics non-trivial.
  std::vector<std::string_view> pool(mat.adjectives.begin(),
                                     mat.adjectives.end());
  std::string out;
  for (size_t k = 0; k < TactileCaption::kAdjectives; ++k) {
    size_t idx = static_cast<size_t>((h >> (4 * k)) % pool.size());
    if (k) out += ", ";
    out += std::string(pool[idx]);
    pool.erase(pool.begin() + static_cast<ptrdiff_t>(idx));
  }
  return out;
}

PipeCaptioner::PipeCaptioner(std::vector<std::string> argv) {
  if (argv.empty()) throw ConfigError("PipeCaptioner: empty command");
  int to_child[2], from_child[2];
  if (pipe(to_child) != 0 || pipe(from_child) != 0)
    throw IoError("PipeCaptioner: pipe() failed");
  pid_t pid = fork();
  if (pid < 0) throw IoError("PipeCaptioner: fork() failed");
  if (pid == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    close(to_child[0]);
    close(to_child[1]);
    close(from_child[0]);
    close(from_child[1]);
    std::vector<char*> args;
    args.reserve(argv.size() + 1);
    for (std::string& a : argv) args.push_back(a.data());
    args.push_back(nullptr);
    execvp(args[0], args.data());
    _exit(127);  // exec failed; parent sees EOF and reports
  }
  child_pid_ = pid;
  to_child_ = to_child[1];
  from_child_ = from_child[0];
  close(to_child[0]);
  close(from_child[1]);
}

PipeCaptioner::~PipeCaptioner() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (child_pid_ > 0) {
    int status = 0;
    waitpid(child_pid_, &status, 0);
  }
}

std::string PipeCaptioner::caption_line(const std::string& prompt) {
  std::string line = escape_line(prompt);
  line += '\n';
  size_t off = 0;
  while (off < line.size()) {
    ssize_t n = write(to_child_, line.data() + off, line.size() - off);
    if (n <= 0) throw IoError("PipeCaptioner: write to captioner failed");
    off += static_cast<size_t>(n);
  }
  // Read until the next newline; the child may answer in arbitrary chunks.
  while (true) {
    size_t nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string response = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!response.empty() && response.back() == '\r') response.pop_back();
      if (response.empty())
        throw IoError("PipeCaptioner: captioner signalled an error (empty line)");
      return response;
    }
    char chunk[4096];
    ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0) throw IoError("PipeCaptioner: read from captioner failed");
    if (n == 0) throw IoError("PipeCaptioner: captioner closed its pipe");
    buffer_.append(chunk, static_cast<size_t>(n));
  }
}

TactileCaption recaption(const ManifestRecord& record, Captioner& client,
                         int max_retries) {
  const std::string prompt = caption_prompt(record);
  std::string last_response;
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    try {
      last_response = client.caption_line(prompt);
      return TactileCaption::parse(last_response);
    } catch (const ValidationError& e) {
      last_error = e.what();
    } catch (const IoError& e) {
      last_error = e.what();
      if (attempt == max_retries) throw;
    }
  }
  std::ostringstream msg;
  msg << "recaption of id " << record.id << " (class '" << record.class_name
      << "') failed after " << (max_retries + 1)
      << " attempts; last response: \"" << last_response
      << "\"; last error: " << last_error;
  throw ValidationError(msg.str());
}

// --- stratified sampling ----------------------------------------------------

std::vector<ManifestRecord> stratified_sample(
    const std::vector<ManifestRecord>& manifest, size_t target_size,
    uint64_t seed) {
  if (target_size > manifest.size()) {
    std::ostringstream msg;
    msg << "stratified_sample: target " << target_size << " exceeds manifest size "
        << manifest.size();
    throw ConfigError(msg.str());
  }
  if (target_size == 0) return {};

  // Classes in lexicographic order, members in manifest order.
  std::map<std::string, std::vector<size_t>> by_class;
  for (size_t i = 0; i < manifest.size(); ++i)
    by_class[manifest[i].class_name].push_back(i);

  std::vector<std::string> classes;
  classes.reserve(by_class.size());
  for (const auto& [name, members] : by_class) classes.push_back(name);

  // Shuffled class order decides who receives the remainder and, later,
  // rollover units. One shuffle is shared by both so the allocation is one
  // coherent priority list.
  std::vector<size_t> order(classes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng class_rng(mix64(seed, fnv1a("strata-order")));
  class_rng.shuffle(order);

  const size_t quota = target_size / classes.size();
  const size_t remainder = target_size % classes.size();
  std::vector<size_t> want(classes.size(), quota);
  for (size_t r = 0; r < remainder; ++r) want[order[r]] += 1;

  // First pass: everyone contributes min(want, size); short classes hand
  // their missing units back.
  std::vector<size_t> take(classes.size());
  size_t shortfall = 0;
  for (size_t c = 0; c < classes.size(); ++c) {
    size_t avail = by_class[classes[c]].size();
    take[c] = std::min(want[c], avail);
    shortfall += want[c] - take[c];
  }
  // Rollover rounds: walk the shuffled order handing one extra unit to any
  // class with spare members until the budget is spent. Terminates because
  // total availability >= target_size (checked above).
  while (shortfall > 0) {
    bool progressed = false;
    for (size_t r = 0; r < order.size() && shortfall > 0; ++r) {
      size_t c = order[r];
      if (take[c] < by_class[classes[c]].size()) {
        ++take[c];
        --shortfall;
        progressed = true;
      }
    }
    if (!progressed)
      throw StateError("stratified_sample: rollover failed to place units");
  }

  // Within-class picks: seeded shuffle of the member list, take a prefix.
  std::vector<size_t> chosen;
  chosen.reserve(target_size);
  for (size_t c = 0; c < classes.size(); ++c) {
    std::vector<size_t> members = by_class[classes[c]];
    Rng member_rng(mix64(seed, fnv1a(classes[c])));
    member_rng.shuffle(members);
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<ptrdiff_t>(take[c]));
  }
  std::sort(chosen.begin(), chosen.end());  // preserve manifest order

  std::vector<ManifestRecord> out;
  out.reserve(chosen.size());
  for (size_t i : chosen) out.push_back(manifest[i]);
  return out;
}

// --- shard building + manifest ----------------------------------------------

namespace {

std::string shard_name(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard_%04zu.imnt", index);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  size_t start = 0;
  while (true) {
    size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return cols;
}

}  // namespace

BuildResult build_shards(const std::vector<feat::ShardRecord>& entries,
                         size_t shard_capacity, const std::string& out_dir) {
  if (shard_capacity == 0) throw ConfigError("build_shards: zero capacity");
  size_t dim = entries.empty() ? 0 : entries.front().r_v.size();
  for (const feat::ShardRecord& e : entries) {
    TactileCaption::parse(e.caption);  // invariant: shards hold valid captions
    if (e.r_v.size() != dim || e.r_l.size() != dim) {
      std::ostringstream msg;
      msg << "build_shards: entry " << e.id << " dim " << e.r_v.size() << "/"
          << e.r_l.size() << " differs from first entry dim " << dim;
      throw DimensionError(msg.str());
    }
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("build_shards: cannot create " + out_dir + ": " + ec.message());

  BuildResult result;
  result.entries = entries.size();
  std::string manifest;
  for (size_t base = 0; base < entries.size(); base += shard_capacity) {
    size_t count = std::min(shard_capacity, entries.size() - base);
    std::vector<feat::ShardRecord> chunk(entries.begin() + static_cast<ptrdiff_t>(base),
                                         entries.begin() + static_cast<ptrdiff_t>(base + count));
    std::string name = shard_name(result.shard_paths.size());
    std::string path = (std::filesystem::path(out_dir) / name).string();
    feat::write_shard(path, chunk, dim);
    for (size_t row = 0; row < chunk.size(); ++row) {
      const feat::ShardRecord& e = chunk[row];
      manifest += std::to_string(e.id);
      manifest += '\t';
      manifest += e.class_name;
      manifest += '\t';
      manifest += e.caption;
      manifest += '\t';
      manifest += name;
      manifest += '\t';
      manifest += std::to_string(row);
      manifest += '\n';
    }
    result.shard_paths.push_back(path);
  }
  result.manifest_path =
      (std::filesystem::path(out_dir) / "corpus.tsv").string();
  write_file(result.manifest_path, manifest);
  return result;
}

std::vector<feat::ShardRecord> load_corpus(const std::string& manifest_path) {
  const std::string text = read_file(manifest_path);
  const std::filesystem::path dir =
      std::filesystem::path(manifest_path).parent_path();

  struct Row {
    uint64_t id;
    std::string class_name;
    std::string caption;
    std::string shard;
    size_t row_index;
  };
  std::vector<Row> rows;
  size_t line_no = 0;
  size_t start = 0;
  while (start < text.size()) {
    size_t nl = text.find('\n', start);
    std::string line =
        text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    start = (nl == std::string::npos) ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != 5) {
      std::ostringstream msg;
      msg << manifest_path << ":" << line_no << ": expected 5 tab-separated columns, got "
          << cols.size();
      throw FormatError(msg.str());
    }
    Row r;
    try {
      r.id = std::stoull(cols[0]);
      r.row_index = std::stoul(cols[4]);
    } catch (const std::exception&) {
      std::ostringstream msg;
      msg << manifest_path << ":" << line_no << ": non-numeric id or row index";
      throw FormatError(msg.str());
    }
    r.class_name = cols[1];
    r.caption = cols[2];
    r.shard = cols[3];
    rows.push_back(std::move(r));
  }

  // Load each referenced shard once.
  std::map<std::string, std::vector<feat::ShardRecord>> shards;
  for (const Row& r : rows)
    if (!shards.count(r.shard))
      shards[r.shard] = feat::read_shard((dir / r.shard).string());

  std::vector<feat::ShardRecord> out;
  out.reserve(rows.size());
  size_t dim = 0;
  for (const Row& r : rows) {
    const std::vector<feat::ShardRecord>& shard = shards[r.shard];
    if (r.row_index >= shard.size()) {
      std::ostringstream msg;
      msg << manifest_path << ": id " << r.id << " points at row " << r.row_index
          << " of " << r.shard << ", which has only " << shard.size() << " rows";
      throw FormatError(msg.str());
    }
    const feat::ShardRecord& rec = shard[r.row_index];
    if (rec.id != r.id || rec.class_name != r.class_name ||
        rec.caption != r.caption) {
      std::ostringstream msg;
      msg << manifest_path << ": manifest row for id " << r.id
          << " disagrees with shard " << r.shard << " row " << r.row_index;
      throw FormatError(msg.str());
    }
    if (dim == 0) dim = rec.r_v.size();
    if (rec.r_v.size() != dim) {
      std::ostringstream msg;
      msg << manifest_path << ": shard " << r.shard << " dim " << rec.r_v.size()
          << " differs from corpus dim " << dim;
      throw FormatError(msg.str());
    }
    out.push_back(rec);
  }
  return out;
}

VocabStats vocab_stats(const std::vector<feat::ShardRecord>& entries,
                       size_t top_k) {
  std::map<std::string, size_t> word_counts;
  std::set<std::string> captions;
  for (const feat::ShardRecord& e : entries) {
    TactileCaption cap = TactileCaption::parse(e.caption);
    captions.insert(cap.canonical());
    for (const std::string& adj : cap.adjectives()) ++word_counts[adj];
  }
  VocabStats stats;
  stats.unique_words = word_counts.size();
  stats.unique_captions = captions.size();
  std::vector<std::pair<std::string, size_t>> ranked(word_counts.begin(),
                                                     word_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if (ranked.size() > top_k) ranked.resize(top_k);
  stats.top_words = std::move(ranked);
  return stats;
}

// --- synthetic corpus -------------------------------------------------------

std::vector<ManifestRecord> synthetic_manifest(size_t records, size_t classes,
                                               uint64_t seed) {
  if (classes == 0 || records == 0)
    throw ConfigError("synthetic_manifest: need at least one record and class");
  std::vector<ManifestRecord> manifest;
  manifest.reserve(records);
  // Deterministic round-robin over classes; the seed only shifts which
  // class the first record lands on so different corpora are not clones.
  Rng rng(mix64(seed, fnv1a("synthetic-manifest")));
  size_t phase = rng.below(classes);
  for (size_t i = 0; i < records; ++i) {
    ManifestRecord rec;
    rec.id = i;
    size_t cls = (i + phase) % classes;
    char buf[32];
    std::snprintf(buf, sizeof buf, "object_c%04zu", cls);
    rec.class_name = buf;
    rec.source_caption =
        "a studio photo of " + rec.class_name + " on a plain background";
    rec.image_ref = "img/" + rec.class_name + "/" + std::to_string(i) + ".png";
    manifest.push_back(std::move(rec));
  }
  return manifest;
}

feat::ShardRecord make_entry(const ManifestRecord& record, Captioner& client,
                             size_t dim, double noise) {
  feat::ShardRecord entry;
  entry.id = record.id;
  entry.class_name = record.class_name;
  entry.caption = recaption(record, client).str();
  uint64_t material = material_of_class(record.class_name);
  entry.r_v = feat::synth_embed(feat::Kind::kVisual, material, record.id, dim, noise);
  entry.r_l = feat::synth_embed(feat::Kind::kText, material, record.id, dim, noise);
  return entry;
}

}  // namespace touchrag::corp
