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

#ifndef CSILOC_RUN_CONFIG_HPP
#define CSILOC_RUN_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "csiloc/inner_model.hpp"
#include "csiloc/meta_engine.hpp"
#include "csiloc/scenario_sim.hpp"

namespace csiloc {

/// Configuration rejected by validation; carries every offending field.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> fields);
  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  std::vector<std::string> fields_;
};

struct EvaluationConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::size_t> k_values{5, 10, 15, 20};
};

/// Everything one CLI invocation needs, loaded from a single JSON file.
struct RunConfig {
  std::optional<ScenarioConfig> scenario;
  std::optional<std::filesystem::path> dataset;
  ModelSpec model = ModelSpec::reference();
  Precision precision = Precision::f32;
  MetaConfig meta;
  TaskKey target{3, 4};
  double support_fraction = 0.8;
  std::uint64_t split_seed = 1;  // fixes the support/query RP pools of every area
  EvaluationConfig evaluation;
  std::filesystem::path output = "runs/default";

  /// Reference experiment: simulated scenario, defaults everywhere else.
  static RunConfig defaults();

  /// Every problem found, one "section.field: reason" message each.
  std::vector<std::string> validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);

/// Parses and validates; throws ConfigError listing all offending fields.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace csiloc

#endif  // CSILOC_RUN_CONFIG_HPP
