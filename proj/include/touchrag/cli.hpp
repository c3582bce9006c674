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

namespace touchrag {

// The `touchrag` command-line tool. Subcommands: build-corpus, build-index,
// train-retriever, train-integrator, retrieve, eval, ablate, sweep-k,
// sweep-subset. Returns the process exit code: 0 on success, 1 on
// validation/configuration/state errors (and unknown subcommands, after
// printing usage), 2 on I/O and file-format errors.
int cli_main(int argc, char** argv);

}  // namespace touchrag
