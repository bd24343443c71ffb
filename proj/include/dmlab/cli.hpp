// Copyright 2026 The dmlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dmlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Process entry point: parses argv, runs one command, returns the exit code.
int dispatch(int argc, char** argv);

/// Same as dispatch with explicit arguments (argv[0] excluded) and streams.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Top-level usage text, including the full command list.
std::string usage();

/// Every runnable command path, e.g. "calc bdp", "serve", "sweep run".
std::vector<std::string> command_paths();

}  // namespace dmlab::cli
