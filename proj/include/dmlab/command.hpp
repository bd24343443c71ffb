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

// The one place that runs external system commands (tc, ethtool).

#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmlab {

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandResult {
  int exit_code = 0;
  std::string out;
  std::string err;
  bool ok() const { return exit_code == 0; }
};

/// Shell-style rendering used for dry-run listings and diagnostics.
std::string render_command(const std::vector<std::string>& argv);

/// Looks `name` up on PATH.
bool command_available(const std::string& name);

class CommandRunner {
 public:
  using Executor = std::function<CommandResult(const std::vector<std::string>&)>;

  /// Real execution via fork/exec, no shell involved.
  CommandRunner();
  /// Records and prints commands to `out` instead of running them.
  static CommandRunner dry_run(std::ostream& out);
  /// Injected executor, for tests.
  explicit CommandRunner(Executor exec);

  CommandResult run(const std::vector<std::string>& argv);
  /// run() that throws CommandError carrying stderr on a nonzero exit.
  CommandResult check(const std::vector<std::string>& argv);

  bool is_dry_run() const { return dry_out_ != nullptr; }
  const std::vector<std::vector<std::string>>& history() const { return history_; }

 private:
  Executor exec_;
  std::ostream* dry_out_ = nullptr;
  std::vector<std::vector<std::string>> history_;
};

CommandResult execute(const std::vector<std::string>& argv);

}  // namespace dmlab
