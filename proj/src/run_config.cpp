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

#include "csiloc/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace csiloc {

namespace {

std::string join(const std::vector<std::string>& fields) {
  std::string s = "invalid configuration:";
  for (const auto& f : fields) s += "\n  " + f;
  return s;
}

const std::set<std::string> kTopLevel = {"scenario", "dataset",    "model",      "precision",
                                         "meta",     "target",     "support_fraction", "split_seed",
                                         "evaluation", "output"};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> fields)
    : std::invalid_argument(join(fields)), fields_(std::move(fields)) {}

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.scenario = reference_scenario();
  return c;
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> e;
  if (scenario.has_value() == dataset.has_value())
    e.push_back("scenario/dataset: exactly one of \"scenario\" and \"dataset\" is required");
  if (scenario) {
    for (const auto& f : scenario->validate()) e.push_back("scenario." + f);
  }
  for (const auto& f : model.validate()) e.push_back(f);
  for (const auto& f : meta.validate()) e.push_back(f);
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) e.push_back("support_fraction: must be in (0, 1)");
  if (target.area < 1) e.push_back("target.area: must be >= 1");
  if (target.posture < 0) e.push_back("target.posture: must be >= 0");
  if (scenario && target.area > scenario->num_subareas())
    e.push_back("target.area: scenario has only " + std::to_string(scenario->num_subareas()) + " subareas");
  if (scenario && std::find(scenario->postures.begin(), scenario->postures.end(), target.posture) == scenario->postures.end())
    e.push_back("target.posture: not among the scenario postures");
  if (evaluation.seeds.empty()) e.push_back("evaluation.seeds: at least one seed required");
  if (evaluation.k_values.empty()) e.push_back("evaluation.k_values: at least one K required");
  for (const auto k : evaluation.k_values) {
    if (k < 1) e.push_back("evaluation.k_values: every K must be >= 1");
  }
  if (output.empty()) e.push_back("output: must not be empty");
  return e;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json::object();
  if (c.scenario) j["scenario"] = *c.scenario;
  if (c.dataset) j["dataset"] = c.dataset->string();
  j["model"] = c.model;
  j["precision"] = c.precision == Precision::f32 ? "f32" : "f64";
  j["meta"] = c.meta;
  j["target"] = {{"area", c.target.area}, {"posture", c.target.posture}};
  j["support_fraction"] = c.support_fraction;
  j["split_seed"] = c.split_seed;
  j["evaluation"] = {{"seeds", c.evaluation.seeds}, {"k_values", c.evaluation.k_values}};
  j["output"] = c.output.string();
}

RunConfig parse_run_config(const nlohmann::json& j) {
  std::vector<std::string> errors;
  if (!j.is_object()) throw ConfigError({"<root>: expected a JSON object"});
  for (const auto& [key, value] : j.items()) {
    if (!kTopLevel.count(key)) errors.push_back(key + ": unknown field");
  }
  RunConfig c;
  // Each section parses independently so one bad section does not hide the others.
  const auto section = [&](const char* name, auto&& parse) {
    if (!j.contains(name)) return;
    try {
      parse(j.at(name));
    } catch (const std::exception& ex) {
      errors.push_back(std::string(name) + ": " + ex.what());
    }
  };
  section("scenario", [&](const nlohmann::json& s) { c.scenario = s.get<ScenarioConfig>(); });
  section("dataset", [&](const nlohmann::json& s) { c.dataset = s.get<std::string>(); });
  section("model", [&](const nlohmann::json& s) { c.model = s.get<ModelSpec>(); });
  section("precision", [&](const nlohmann::json& s) {
    const auto p = s.get<std::string>();
    if (p == "f32") c.precision = Precision::f32;
    else if (p == "f64") c.precision = Precision::f64;
    else throw std::invalid_argument("expected \"f32\" or \"f64\"");
  });
  section("meta", [&](const nlohmann::json& s) { c.meta = s.get<MetaConfig>(); });
  section("target", [&](const nlohmann::json& s) {
    c.target.area = s.at("area").get<int>();
    c.target.posture = s.at("posture").get<int>();
  });
  section("support_fraction", [&](const nlohmann::json& s) { c.support_fraction = s.get<double>(); });
  section("evaluation", [&](const nlohmann::json& s) {
    c.evaluation.seeds = s.value("seeds", c.evaluation.seeds);
    c.evaluation.k_values = s.value("k_values", c.evaluation.k_values);
  });
  section("split_seed", [&](const nlohmann::json& s) { c.split_seed = s.get<std::uint64_t>(); });
  section("output", [&](const nlohmann::json& s) { c.output = s.get<std::string>(); });
  if (!j.contains("scenario") && !j.contains("dataset")) c.scenario = reference_scenario();
  // A section that failed to parse was reported above; keep presence checks accurate.
  if (j.contains("scenario") && !c.scenario) c.scenario = reference_scenario();
  if (j.contains("dataset") && !c.dataset) c.dataset = std::filesystem::path("<invalid>");
  for (auto& f : c.validate()) {
    if (std::find(errors.begin(), errors.end(), f) == errors.end()) errors.push_back(std::move(f));
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"--config: cannot open " + path.string()});
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({"--config: " + std::string(e.what())});
  }
  return parse_run_config(j);
}

}  // namespace csiloc
