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

#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "csiloc/cli.hpp"

namespace {

// First Ctrl-C asks training to checkpoint and stop; a second one kills.
extern "C" void on_sigint(int) {
  if (csiloc::interrupt_flag().exchange(true)) std::_Exit(csiloc::kExitInterrupted);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::signal(SIGINT, on_sigint);
  return csiloc::run_cli(args, std::cout, std::cerr);
}
