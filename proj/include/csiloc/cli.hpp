// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CSILOC_CLI_HPP
#define CSILOC_CLI_HPP

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace csiloc {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitDivergence = 4,
  kExitTampered = 5,
  kExitInterrupted = 130,
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Records the hash of every listed file (paths relative to `dir`) in
/// dir/manifest.json, merging with entries already present.
void update_manifest(const std::filesystem::path& dir, const std::vector<std::filesystem::path>& files);

/// One message per manifest entry whose file is missing or whose hash changed.
std::vector<std::string> verify_manifest(const std::filesystem::path& dir);

/// Set by the SIGINT handler; training checkpoints and stops when it flips.
std::atomic<bool>& interrupt_flag();

/// Entry point shared by the executable and tests. Normal output goes to
/// `out`, structured log lines and the JSON error record to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace csiloc

#endif  // CSILOC_CLI_HPP
