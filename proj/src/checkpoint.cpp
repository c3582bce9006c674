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

#include "touchrag/checkpoint.hpp"

#include <limits>
#include <sstream>

#include "touchrag/core.hpp"

namespace touchrag::num {
namespace {

constexpr char kMagic[4] = {'R', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

std::vector<std::pair<std::string, Tensor>> parse(const std::string& bytes,
                                                  const std::string& path) {
  ByteReader r{bytes};
  std::string magic = r.bytes(4, "magic");
  if (magic != std::string(kMagic, 4))
    throw FormatError("bad checkpoint magic in " + path);
  uint32_t version = r.u32("version");
  if (version != kVersion) {
    std::ostringstream msg;
    msg << "unsupported checkpoint version " << version << " in " << path;
    throw FormatError(msg.str());
  }
  uint32_t count = r.u32("tensor count");
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = r.u16("name length");
    std::string name = r.bytes(name_len, "tensor name");
    uint32_t rank = r.u32("rank");
    if (rank != 1 && rank != 2) {
      std::ostringstream msg;
      msg << "tensor '" << name << "' has unsupported rank " << rank << " in "
          << path;
      throw FormatError(msg.str());
    }
    uint64_t rows = rank == 2 ? r.u64("rows extent") : 1;
    uint64_t cols = r.u64("cols extent");
    if (rows == 0 || cols == 0 || rows * cols > (1ull << 32)) {
      std::ostringstream msg;
      msg << "tensor '" << name << "' has implausible extents " << rows << "x"
          << cols << " in " << path;
      throw FormatError(msg.str());
    }
    Tensor t(static_cast<size_t>(rows), static_cast<size_t>(cols));
    for (size_t j = 0; j < t.numel(); ++j)
      t.data()[j] = static_cast<double>(r.f32("tensor payload"));
    out.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) {
    std::ostringstream msg;
    msg << r.remaining() << " trailing bytes after last tensor in " << path;
    throw FormatError(msg.str());
  }
  return out;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
  if (params.names().size() > std::numeric_limits<uint32_t>::max())
    throw ConfigError("too many tensors for checkpoint format");
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(params.names().size()));
  for (const auto& name : params.names()) {
    if (name.size() > std::numeric_limits<uint16_t>::max())
      throw ConfigError("tensor name too long for checkpoint format: " + name);
    const Tensor& t = params.value(name);
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    put_u32(out, 2);
    put_u64(out, t.rows());
    put_u64(out, t.cols());
    for (size_t i = 0; i < t.numel(); ++i)
      put_f32(out, static_cast<float>(t.data()[i]));
  }
  write_file(path, out);
}

void load_checkpoint(ParamStore& params, const std::string& path) {
  auto tensors = parse(read_file(path), path);
  if (tensors.size() != params.names().size()) {
    std::ostringstream msg;
    msg << "checkpoint " << path << " holds " << tensors.size()
        << " tensors but the model registers " << params.names().size();
    throw ValidationError(msg.str());
  }
  for (auto& [name, t] : tensors) {
    if (!params.has(name))
      throw ValidationError("checkpoint tensor '" + name +
                            "' is not a model parameter (" + path + ")");
    Tensor& dst = params.value(name);
    if (!dst.same_shape(t)) {
      std::ostringstream msg;
      msg << "checkpoint tensor '" << name << "' is " << t.rows() << "x"
          << t.cols() << " but the model expects " << dst.rows() << "x"
          << dst.cols() << " (" << path << ")";
      throw ValidationError(msg.str());
    }
    dst = std::move(t);
  }
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(
    const std::string& path) {
  return parse(read_file(path), path);
}

}  // namespace touchrag::num
