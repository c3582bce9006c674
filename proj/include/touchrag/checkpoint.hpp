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

#include <string>
#include <utility>
#include <vector>

#include "touchrag/optim.hpp"

namespace touchrag::num {

// Checkpoint container, all integers little-endian:
//
//   magic   "RTCK" (4 bytes)
//   version u32 (currently 1)
//   count   u32, number of named tensors
//   per tensor:
//     name_len u16, then UTF-8 name bytes
//     rank     u32 (always 2 when written by us; rank-1 reads as 1 x n)
//     extents  rank x u64
//     payload  row-major f32
//
// Values are persisted in single precision; in-memory math stays double, so
// a save/load round trip quantizes to f32 exactly once.

void save_checkpoint(const ParamStore& params, const std::string& path);

// Loads into a store whose parameters are already registered (i.e. the model
// was constructed first). Names and shapes must match the file exactly;
// disagreement is a ValidationError, structural corruption a FormatError.
void load_checkpoint(ParamStore& params, const std::string& path);

// Raw listing of a checkpoint's tensors, for tools and tests.
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::string& path);

}  // namespace touchrag::num
