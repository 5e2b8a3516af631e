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


#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "csiloc/cli.hpp"
#include "csiloc/run_config.hpp"
#include "fixtures.hpp"

using namespace csiloc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig tiny_run(const fs::path& out) {
  RunConfig c;
  c.scenario = testing::tiny_scenario(1);
  c.model = testing::tiny_spec();
  c.precision = Precision::f64;
  c.target = {1, 4};
  c.support_fraction = 0.5;
  c.meta.alpha = 0.05;
  c.meta.beta = 0.01;
  c.meta.epochs = 1;
  c.meta.batch_size = 2;
  c.meta.inner_steps = 1;
  c.meta.finetune_steps = 2;
  c.meta.k_support = 2;
  c.meta.k_query = 2;
  c.evaluation.seeds = {1, 2};
  c.evaluation.k_values = {1, 2};
  c.output = out;
  return c;
}

fs::path write_config(const RunConfig& c, const std::string& name) {
  const fs::path p = fs::temp_directory_path() / (name + ".json");
  std::ofstream(p) << nlohmann::json(c).dump(2);
  return p;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sha256 of a known string") {
  const std::string abc = "abc";
  const std::vector<std::uint8_t> bytes(abc.begin(), abc.end());
  CHECK(sha256_hex(bytes) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("run config defaults and round trip") {
  const RunConfig d = RunConfig::defaults();
  CHECK(d.scenario.has_value());
  CHECK(d.meta.alpha == 0.01);
  CHECK(d.support_fraction == 0.8);
  CHECK(d.validate().empty());
  const nlohmann::json j = tiny_run("x");
  CHECK(nlohmann::json(parse_run_config(j)) == j);
  CHECK(parse_run_config(nlohmann::json::object()).scenario.has_value());
}

TEST_CASE("config validation lists every offending field") {
  nlohmann::json j = tiny_run("x");
  j["meta"]["alpha"] = -1.0;
  j["meta"]["batch_size"] = 0;
  j["support_fraction"] = 1.5;
  j["bogus"] = 1;
  j["dataset"] = "/somewhere";
  try {
    parse_run_config(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const auto& f = e.fields();
    const auto has = [&](const std::string& prefix) {
      return std::any_of(f.begin(), f.end(), [&](const std::string& s) { return s.rfind(prefix, 0) == 0; });
    };
    CHECK(has("meta.alpha"));
    CHECK(has("meta.batch_size"));
    CHECK(has("support_fraction"));
    CHECK(has("bogus"));
    CHECK(has("scenario/dataset"));
    CHECK(f.size() == 5);
  }
}

TEST_CASE("cli rejects bad configs and unknown commands with a json record") {
  const auto bad = cli({"fly"});
  CHECK(bad.code == kExitConfig);
  CHECK(nlohmann::json::parse(bad.err)["status"] == "error");

  nlohmann::json j = tiny_run("x");
  j["meta"]["epochs"] = -2;
  j["target"] = {{"area", 9}, {"posture", 0}};
  const fs::path p = fs::temp_directory_path() / "csiloc_bad.json";
  std::ofstream(p) << j.dump();
  const auto r = cli({"train", "--config", p.string()});
  CHECK(r.code == kExitConfig);
  const auto rec = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  CHECK(rec["type"] == "config");
  CHECK(rec["fields"].size() == 2);
}

TEST_CASE("simulate, train, evaluate, sweep, report") {
  const fs::path dir = fresh_dir("csiloc_cli_run");
  const fs::path cfg = write_config(tiny_run(dir), "csiloc_cli_run");

  REQUIRE(cli({"simulate", "--config", cfg.string()}).code == kExitOk);
  CHECK(fs::exists(dir / "dataset" / "manifest.json"));

  const auto missing = cli({"evaluate", "--config", cfg.string()});
  CHECK(missing.code == kExitData);

  const auto train = cli({"train", "--config", cfg.string(), "--deterministic"});
  REQUIRE(train.code == kExitOk);
  CHECK(train.err.find("\"event\":\"meta_batch\"") != std::string::npos);
  for (const char* f : {"config.json", "weights.json", "trace.csv", "theta.csip", "manifest.json"})
    CHECK(fs::exists(dir / f));
  const std::string trace = slurp(dir / "trace.csv");
  REQUIRE(cli({"train", "--config", cfg.string(), "--deterministic"}).code == kExitOk);
  CHECK(slurp(dir / "trace.csv") == trace);

  const auto eval = cli({"evaluate", "--config", cfg.string()});
  REQUIRE(eval.code == kExitOk);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report["meta"]["med_m"].get<double>() >= 0.0);
  CHECK(report["meta"]["k"] == 2);
  CHECK(slurp(dir / "cdf_meta.csv").rfind("error_m,fraction", 0) == 0);

  REQUIRE(cli({"sweep", "--config", cfg.string()}).code == kExitOk);
  CHECK(slurp(dir / "sweep.csv").rfind("k,med_mean,med_std\n1,", 0) == 0);
  CHECK(fs::exists(dir / "seeds" / "2" / "theta.csip"));

  const auto rep = cli({"report", "--config", cfg.string()});
  CHECK(rep.code == kExitOk);
  CHECK(rep.out.find("Mean") != std::string::npos);

  std::ofstream(dir / "trace.csv", std::ios::app) << "9,9,0\n";
  const auto tampered = cli({"report", "--config", cfg.string()});
  CHECK(tampered.code == kExitTampered);
  CHECK(tampered.err.find("trace.csv") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("train reads a simulated dataset from disk") {
  const fs::path dir = fresh_dir("csiloc_cli_disk");
  RunConfig c = tiny_run(dir);
  REQUIRE(cli({"simulate", "--config", write_config(c, "csiloc_cli_disk").string()}).code == kExitOk);
  c.scenario.reset();
  c.dataset = dir / "dataset";
  c.output = dir / "run";
  const auto r = cli({"train", "--config", write_config(c, "csiloc_cli_disk2").string(), "--seed", "4"});
  CHECK(r.code == kExitOk);
  CHECK(nlohmann::json::parse(slurp(dir / "run" / "config.json"))["meta"]["seed"] == 4);
  fs::remove_all(dir);
}

TEST_CASE("weights in nw mode are uniform") {
  const fs::path dir = fresh_dir("csiloc_cli_weights");
  const fs::path cfg = write_config(tiny_run(dir), "csiloc_cli_weights");
  REQUIRE(cli({"weights", "--config", cfg.string(), "--mode", "nw"}).code == kExitOk);
  const auto w = nlohmann::json::parse(slurp(dir / "weights.json"));
  CHECK(w["mode"] == "nw");
  REQUIRE(w["tasks"].size() == 4);
  for (const auto& [name, e] : w["tasks"].items()) CHECK(e["raw_weight"].get<double>() == doctest::Approx(0.25));

  REQUIRE(cli({"weights", "--config", cfg.string()}).code == kExitOk);
  const auto wd = nlohmann::json::parse(slurp(dir / "weights.json"));
  double sum = 0.0;
  for (const auto& [name, e] : wd["tasks"].items()) sum += e["raw_weight"].get<double>();
  CHECK(sum == doctest::Approx(1.0));
  fs::remove_all(dir);
}

TEST_CASE("manifest verification") {
  const fs::path dir = fresh_dir("csiloc_manifest");
  fs::create_directories(dir);
  std::ofstream(dir / "a.txt") << "alpha";
  std::ofstream(dir / "b.txt") << "beta";
  update_manifest(dir, {"a.txt"});
  update_manifest(dir, {"b.txt"});
  CHECK(verify_manifest(dir).empty());
  fs::remove(dir / "b.txt");
  std::ofstream(dir / "a.txt") << "gamma";
  CHECK(verify_manifest(dir).size() == 2);
  fs::remove_all(dir);
}
