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

#include "csiloc/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "csiloc/errors.hpp"
#include "csiloc/evaluation.hpp"
#include "csiloc/run_config.hpp"

namespace csiloc {

namespace fs = std::filesystem;

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace

void update_manifest(const fs::path& dir, const std::vector<fs::path>& files) {
  const fs::path path = dir / "manifest.json";
  nlohmann::json m = fs::exists(path) ? read_json(path) : nlohmann::json{{"version", 1}, {"files", nlohmann::json::object()}};
  for (const auto& f : files) m["files"][f.generic_string()] = sha256_file(dir / f);
  write_json(path, m);
}

std::vector<std::string> verify_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) return {"manifest.json: missing"};
  const nlohmann::json m = read_json(path);
  std::vector<std::string> problems;
  for (const auto& [name, hash] : m.at("files").items()) {
    const fs::path f = dir / name;
    if (!fs::exists(f)) {
      problems.push_back(name + ": missing");
    } else if (sha256_file(f) != hash.get<std::string>()) {
      problems.push_back(name + ": content hash mismatch");
    }
  }
  return problems;
}

std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

namespace {

struct Context {
  std::string command;
  RunConfig config;
  bool deterministic = false;
  std::ostream& out;
  std::ostream& err;
};

std::shared_ptr<const Dataset> load_dataset(const RunConfig& c) {
  if (c.dataset) return std::make_shared<const Dataset>(read_dataset(*c.dataset));
  return std::make_shared<const Dataset>(generate_scenario(*c.scenario));
}

struct Setup {
  std::shared_ptr<const Dataset> dataset;
  std::unique_ptr<TaskSet> tasks;
  std::unique_ptr<ConvRegressor> model;
  ChannelStats stats;
};

Setup prepare(const RunConfig& c) {
  Setup s;
  s.dataset = load_dataset(c);
  if (std::none_of(s.dataset->tasks.begin(), s.dataset->tasks.end(),
                   [&](const TaskData& t) { return t.key == c.target; }))
    throw ConfigError({"target: task " + task_name(c.target) + " is not in the dataset"});
  s.tasks = std::make_unique<TaskSet>(make_task_set(s.dataset, c.target, c.support_fraction, c.split_seed));
  const auto& mf = s.dataset->manifest;
  const int h = 2 * mf.num_subcarriers, w = mf.n_packets, ch = mf.num_rx_antennas;
  if (c.model.in_channels != ch || c.model.in_height != h || c.model.in_width != w) {
    throw ConfigError({"model.input: expected [" + std::to_string(ch) + ", " + std::to_string(h) + ", " +
                       std::to_string(w) + "] to match the dataset"});
  }
  std::vector<FingerprintRecord> records;
  for (const auto& t : s.tasks->training()) {
    const auto r = s.dataset->records(t.key);
    records.insert(records.end(), r.begin(), r.end());
  }
  s.stats = ChannelStats::fit(records);
  s.model = std::make_unique<ConvRegressor>(c.model, c.precision, s.stats);
  return s;
}

nlohmann::json stats_json(const ChannelStats& s) { return {{"mean", s.mean}, {"stddev", s.stddev}}; }

void log_line(std::ostream& err, const nlohmann::json& j) { err << j.dump() << '\n' << std::flush; }

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "epoch,batch,outer_loss\n" << std::setprecision(17);
  for (const auto& r : trace) os << r.epoch << ',' << r.batch << ',' << r.outer_loss << '\n';
  return os.str();
}

int cmd_simulate(Context& ctx) {
  if (!ctx.config.scenario) throw ConfigError({"scenario: simulate needs a scenario configuration"});
  const fs::path dir = ctx.config.output;
  fs::create_directories(dir);
  const Dataset ds = generate_scenario(*ctx.config.scenario);
  write_dataset(ds, dir / "dataset");
  write_json(dir / "scenario.json", *ctx.config.scenario);
  std::vector<fs::path> files{"scenario.json"};
  for (const auto& e : fs::recursive_directory_iterator(dir / "dataset")) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  update_manifest(dir, files);
  ctx.out << "simulated " << ds.tasks.size() << " tasks into " << (dir / "dataset").string() << '\n';
  return kExitOk;
}

MetaState train_one(Context& ctx, Setup& s, const MetaConfig& meta, const fs::path& dir, bool& interrupted) {
  fs::create_directories(dir);
  MetaTrainOptions opt;
  opt.interrupt = &interrupt_flag();
  opt.abort_checkpoint = dir / "theta.last_finite.csip";
  opt.on_batch = [&](const TraceRow& r) {
    std::vector<std::string> names;
    for (const auto& k : r.tasks) names.push_back(task_name(k));
    log_line(ctx.err, {{"event", "meta_batch"}, {"epoch", r.epoch}, {"batch", r.batch}, {"tasks", names},
                       {"weights", r.weights}, {"outer_loss", r.outer_loss}});
  };
  const ParamSet init = s.model->init_params(meta.seed);
  MetaState st = meta_train(*s.tasks, *s.model, init, meta, opt);
  interrupted = st.interrupted;
  return st;
}

void write_training(const fs::path& dir, const RunConfig& cfg, const Setup& s, const MetaState& st) {
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg);
  write_json(dir / "weights.json", st.weights);
  write_text(dir / "trace.csv", trace_csv(st.trace));
  write_json(dir / "normalization.json", stats_json(s.stats));
  save_checkpoint(st.theta, dir / "theta.csip");
  write_json(dir / "state.json", {{"epochs_completed", st.epoch},
                                  {"epoch_loss", st.epoch_loss},
                                  {"interrupted", st.interrupted}});
  update_manifest(dir, {"config.json", "weights.json", "trace.csv", "normalization.json", "theta.csip", "state.json"});
}

int cmd_train(Context& ctx) {
  Setup s = prepare(ctx.config);
  const fs::path dir = ctx.config.output;
  fs::create_directories(dir);
  bool interrupted = false;
  const MetaState st = train_one(ctx, s, ctx.config.meta, dir, interrupted);
  write_training(dir, ctx.config, s, st);
  if (interrupted) {
    log_line(ctx.err, {{"event", "interrupted"}, {"epochs_completed", st.epoch}, {"checkpoint", (dir / "theta.csip").string()}});
    return kExitInterrupted;
  }
  ctx.out << "trained " << st.trace.size() << " meta-batches; checkpoint " << (dir / "theta.csip").string() << '\n';
  return kExitOk;
}

ParamSet load_trained(const fs::path& dir) {
  const fs::path ckpt = dir / "theta.csip";
  if (!fs::exists(ckpt)) throw DataError("no checkpoint at " + ckpt.string() + "; run `train` first");
  if (fs::exists(dir / "state.json") && read_json(dir / "state.json").value("interrupted", false))
    throw DataError("checkpoint at " + ckpt.string() + " is from an interrupted run; rerun `train`");
  return load_checkpoint(ckpt);
}

int cmd_evaluate(Context& ctx) {
  Setup s = prepare(ctx.config);
  const fs::path dir = ctx.config.output;
  const ParamSet theta = load_trained(dir);
  const MetaConfig& m = ctx.config.meta;
  const Task target = s.tasks->sample_target(m.k_support, m.k_query, target_sample_seed(m.seed));
  const std::string method = "meta/" + to_string(m.weighting);
  const auto meta_rep = evaluate_adapted(target, *s.model, theta, m.alpha, m.finetune_steps, method, m.seed);
  const auto scratch = scratch_baseline(target, *s.model, m.alpha, m.finetune_steps, m.seed);
  const double gain = (scratch.med - meta_rep.med) / scratch.med;
  write_json(dir / "report.json", {{"meta", meta_rep}, {"scratch", scratch}, {"gain_vs_scratch", gain}});
  write_text(dir / "cdf_meta.csv", cdf_csv(meta_rep.cdf));
  write_text(dir / "cdf_scratch.csv", cdf_csv(scratch.cdf));
  const std::string area = "a" + std::to_string(ctx.config.target.area);
  const ComparisonTable table({{{area, method}, meta_rep.med}, {{area, "scratch"}, scratch.med}},
                              {area}, {method, "scratch"});
  write_text(dir / "table.csv", table.to_csv());
  write_text(dir / "table.txt", table.to_text());
  update_manifest(dir, {"report.json", "cdf_meta.csv", "cdf_scratch.csv", "table.csv", "table.txt"});
  ctx.out << table.to_text();
  return kExitOk;
}

int cmd_sweep(Context& ctx) {
  Setup s = prepare(ctx.config);
  const fs::path dir = ctx.config.output;
  fs::create_directories(dir);
  std::vector<SeedInit> inits;
  std::vector<fs::path> files;
  for (const auto seed : ctx.config.evaluation.seeds) {
    MetaConfig meta = ctx.config.meta;
    meta.seed = seed;
    const fs::path sub = fs::path("seeds") / std::to_string(seed);
    bool interrupted = false;
    const MetaState st = train_one(ctx, s, meta, dir / sub, interrupted);
    RunConfig cfg = ctx.config;
    cfg.meta = meta;
    write_training(dir / sub, cfg, s, st);
    if (interrupted) return kExitInterrupted;
    inits.push_back({seed, st.theta});
  }
  const auto rows = k_sweep(*s.tasks, *s.model, inits, ctx.config.meta, ctx.config.evaluation.k_values);
  write_text(dir / "sweep.csv", sweep_csv(rows));
  write_json(dir / "sweep.json", rows);
  update_manifest(dir, {"sweep.csv", "sweep.json"});
  ctx.out << sweep_csv(rows);
  return kExitOk;
}

int cmd_weights(Context& ctx) {
  Setup s = prepare(ctx.config);
  const fs::path dir = ctx.config.output;
  fs::create_directories(dir);
  const ParamSet init = s.model->init_params(ctx.config.meta.seed);
  const WeightReport r = task_weights(*s.tasks, *s.model, init, ctx.config.meta);
  write_json(dir / "weights.json", r);
  update_manifest(dir, {"weights.json"});
  ctx.out << nlohmann::json(r).dump(2) << '\n';
  return kExitOk;
}

int cmd_report(Context& ctx) {
  const fs::path dir = ctx.config.output;
  const auto problems = verify_manifest(dir);
  if (!problems.empty()) {
    log_line(ctx.err, {{"status", "error"}, {"command", "report"}, {"type", "tampered"}, {"problems", problems}});
    return kExitTampered;
  }
  bool any = false;
  if (fs::exists(dir / "table.txt")) {
    std::ifstream in(dir / "table.txt");
    ctx.out << in.rdbuf();
    any = true;
  }
  if (fs::exists(dir / "sweep.csv")) {
    std::ifstream in(dir / "sweep.csv");
    ctx.out << in.rdbuf();
    any = true;
  }
  if (!any) ctx.out << "manifest verified; no report or sweep yet\n";
  return kExitOk;
}

void apply_threads(bool deterministic) {
#ifdef _OPENMP
  if (deterministic) {
    omp_set_num_threads(1);
  } else if (const char* env = std::getenv("CSI_METALOC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#else
  (void)deterministic;
#endif
}

void error_record(std::ostream& err, const std::string& command, const std::string& type, const std::string& message,
                  const std::vector<std::string>& fields = {}) {
  nlohmann::json j{{"status", "error"}, {"command", command}, {"type", type}, {"message", message}};
  if (!fields.empty()) j["fields"] = fields;
  log_line(err, j);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CSI fingerprint localization with task-weighted meta-learning", "csiloc"};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string mode;
  bool deterministic = false;
  app.add_option("command", command, "simulate | train | evaluate | sweep | weights | report")
      ->required()
      ->check(CLI::IsMember({"simulate", "train", "evaluate", "sweep", "weights", "report"}));
  app.add_option("--config", config_path, "run configuration (JSON)");
  app.add_option("--seed", seed, "overrides meta.seed and the sweep seed list");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--mode", mode, "weighting mode")->check(CLI::IsMember({"w_dis", "coral", "mk_mmd", "nw"}));
  app.add_flag("--deterministic", deterministic, "single worker, fixed reduction order");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    error_record(err, command.empty() ? "<none>" : command, "usage", e.what());
    return kExitConfig;
  }

  interrupt_flag() = false;
  try {
    RunConfig cfg = config_path.empty() ? RunConfig::defaults() : load_run_config(config_path);
    if (seed) {
      cfg.meta.seed = *seed;
      cfg.evaluation.seeds = {*seed};
    }
    if (!out_dir.empty()) cfg.output = out_dir;
    if (!mode.empty()) cfg.meta.weighting = parse_weighting_mode(mode);
    if (const auto problems = cfg.validate(); !problems.empty()) throw ConfigError(problems);
    apply_threads(deterministic);
    Context ctx{command, cfg, deterministic, out, err};
    log_line(err, {{"event", "start"}, {"command", command}, {"seed", cfg.meta.seed},
                   {"weighting", to_string(cfg.meta.weighting)}, {"features", to_string(cfg.meta.features)},
                   {"meta_gradient", to_string(cfg.meta.meta_gradient)}, {"deterministic", deterministic}});
    if (command == "simulate") return cmd_simulate(ctx);
    if (command == "train") return cmd_train(ctx);
    if (command == "evaluate") return cmd_evaluate(ctx);
    if (command == "sweep") return cmd_sweep(ctx);
    if (command == "weights") return cmd_weights(ctx);
    return cmd_report(ctx);
  } catch (const ConfigError& e) {
    error_record(err, command, "config", "invalid configuration", e.fields());
    return kExitConfig;
  } catch (const DivergenceError& e) {
    error_record(err, command, "divergence", e.what());
    return kExitDivergence;
  } catch (const DataError& e) {
    error_record(err, command, "data", e.what());
    return kExitData;
  } catch (const FormatError& e) {
    error_record(err, command, "format", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    error_record(err, command, "internal", e.what());
    return kExitFailure;
  }
}

}  // namespace csiloc
