#pragma once

// Experiment harness behind the command-line tool: YAML experiment specs,
// (strategy, seed) cells run on worker threads, and the CSV/JSON artifacts
// of the run, synthetic and efficiency commands.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "cssl/csv.hpp"
#include "cssl/data_synth.hpp"
#include "cssl/labeling.hpp"
#include "cssl/metrics.hpp"
#include "cssl/trainer.hpp"

namespace cssl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kSpecVersion = 1;
inline constexpr const char* kOutRootEnv = "CSSL_OUT_ROOT";

/// Invalid experiment spec. `field` is the dotted path of the offending key,
/// `line` its 1-based line in the file (0 when unknown).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, int line, const std::string& message)
      : std::runtime_error(describe(field, line, message)), field_(std::move(field)), line_(line) {}

  const std::string& field() const noexcept { return field_; }
  int line() const noexcept { return line_; }

 private:
  static std::string describe(const std::string& field, int line, const std::string& message) {
    std::string s = "config error";
    if (line > 0) s += " at line " + std::to_string(line);
    if (!field.empty()) s += " in field '" + field + "'";
    return s + ": " + message;
  }

  std::string field_;
  int line_;
};

// ---------------------------------------------------------------------------
// Spec

struct TaskSpec {
  TaskKind kind = TaskKind::GaussBlobs;
  std::size_t classes = 3;
  std::size_t dim = 2;
  double separation = 2.0;
  double steepness = 10.0;
  double midpoint = 0.5;
  std::size_t n_labeled = 12;
  std::size_t n_unlabeled = 1000;
  std::size_t n_test = 2000;
  std::optional<std::uint64_t> data_seed;  // defaults to the run seed
};

struct NamedStrategy {
  std::string name;
  StrategyConfig config;
};

struct ExperimentSpec {
  int spec_version = kSpecVersion;
  TaskSpec task;
  TrainConfig train;
  std::vector<std::uint64_t> seeds;
  std::string output;
  std::vector<NamedStrategy> strategies;
};

inline std::string to_string(TaskKind k) { return k == TaskKind::Sigmoid1D ? "sigmoid" : "blobs"; }

inline std::optional<StrategyKind> strategy_kind_from_string(const std::string& s) {
  if (s == "cssl") return StrategyKind::Cssl;
  if (s == "lsmatch") return StrategyKind::LsMatch;
  if (s == "fixmatch") return StrategyKind::FixMatchHard;
  if (s == "upsmatch") return StrategyKind::UpsMatch;
  return std::nullopt;
}

inline SyntheticTask make_task(const TaskSpec& t, std::uint64_t run_seed) {
  const std::uint64_t seed = t.data_seed.value_or(run_seed);
  if (t.kind == TaskKind::Sigmoid1D) {
    return gen_sigmoid_task(t.n_labeled, t.n_unlabeled, t.steepness, t.midpoint, seed, t.n_test);
  }
  return gen_blobs_task(t.classes, t.dim, t.separation, t.n_labeled, t.n_unlabeled, seed, t.n_test);
}

namespace detail {

inline int line_of(const YAML::Node& n) {
  const auto m = n.Mark();
  return m.is_null() ? 0 : m.line + 1;
}

inline std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

inline void check_keys(const YAML::Node& node, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw ConfigError(path, line_of(node), "expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(join_path(path, key), line_of(kv.first), "unknown field");
    }
  }
}

template <class T>
T convert(const YAML::Node& n, const std::string& path, const char* expected) {
  try {
    return n.as<T>();
  } catch (const YAML::BadConversion&) {
    throw ConfigError(path, line_of(n), std::string("expected ") + expected);
  }
}

template <class T>
struct TypeName;
template <>
struct TypeName<double> {
  static constexpr const char* value = "a number";
};
template <>
struct TypeName<bool> {
  static constexpr const char* value = "true or false";
};
template <>
struct TypeName<std::string> {
  static constexpr const char* value = "a string";
};
template <>
struct TypeName<long long> {
  static constexpr const char* value = "an integer";
};

template <class T>
std::optional<T> optional_field(const YAML::Node& parent, const std::string& parent_path, const char* key) {
  const YAML::Node n = parent[key];
  if (!n) return std::nullopt;
  return convert<T>(n, join_path(parent_path, key), TypeName<T>::value);
}

template <class T>
T required_field(const YAML::Node& parent, const std::string& parent_path, const char* key) {
  const YAML::Node n = parent[key];
  if (!n) throw ConfigError(join_path(parent_path, key), line_of(parent), "missing required field");
  return convert<T>(n, join_path(parent_path, key), TypeName<T>::value);
}

inline std::size_t to_count(long long v, const std::string& path, const YAML::Node& at, long long min = 0) {
  if (v < min) throw ConfigError(path, line_of(at), "must be >= " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

template <class T>
void assign(T& target, const YAML::Node& parent, const std::string& path, const char* key) {
  if (auto v = optional_field<T>(parent, path, key)) target = *v;
}

inline void assign_count(std::size_t& target, const YAML::Node& parent, const std::string& path, const char* key,
                         long long min = 0) {
  if (auto v = optional_field<long long>(parent, path, key)) {
    target = to_count(*v, join_path(path, key), parent[key], min);
  }
}

inline std::vector<std::size_t> parse_hidden(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence()) throw ConfigError(path, line_of(n), "expected a list of layer widths");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    out.push_back(to_count(convert<long long>(n[i], p, "an integer"), p, n[i], 1));
  }
  return out;
}

inline TaskSpec parse_task(const YAML::Node& n) {
  const std::string path = "task";
  check_keys(n, path,
             {"kind", "classes", "dim", "separation", "steepness", "midpoint", "labeled", "unlabeled", "test",
              "data_seed"});
  TaskSpec t;
  const auto kind = required_field<std::string>(n, path, "kind");
  if (kind == "blobs") {
    t.kind = TaskKind::GaussBlobs;
  } else if (kind == "sigmoid") {
    t.kind = TaskKind::Sigmoid1D;
    t.classes = 2;
    t.dim = 1;
    t.n_labeled = 25;
    t.n_unlabeled = 500;
    t.n_test = 0;
  } else {
    throw ConfigError("task.kind", line_of(n["kind"]), "expected 'blobs' or 'sigmoid', got '" + kind + "'");
  }
  assign_count(t.classes, n, path, "classes", 2);
  assign_count(t.dim, n, path, "dim", 1);
  assign(t.separation, n, path, "separation");
  assign(t.steepness, n, path, "steepness");
  assign(t.midpoint, n, path, "midpoint");
  assign_count(t.n_labeled, n, path, "labeled", 1);
  assign_count(t.n_unlabeled, n, path, "unlabeled", 1);
  assign_count(t.n_test, n, path, "test");
  if (auto s = optional_field<long long>(n, path, "data_seed")) {
    t.data_seed = static_cast<std::uint64_t>(to_count(*s, "task.data_seed", n["data_seed"]));
  }
  if (t.kind == TaskKind::Sigmoid1D && (t.classes != 2 || t.dim != 1)) {
    throw ConfigError("task", line_of(n), "the sigmoid task has 2 classes and 1 feature");
  }
  return t;
}

inline TrainConfig parse_train(const YAML::Node& n, const TaskSpec& task) {
  const std::string path = "train";
  check_keys(n, path,
             {"batch_size", "mu", "lambda_u", "eta", "momentum", "nesterov", "weight_decay", "total_steps",
              "ema_decay", "sigma_w", "sigma_s", "mask_prob", "eval_every", "detach_projection", "hidden",
              "activation", "dropout_rate", "ece_bins"});
  TrainConfig c;
  if (task.kind == TaskKind::Sigmoid1D) {
    c.sigma_w = 0.0;
    c.sigma_s = 0.0;
    c.mask_prob = 0.0;
  }
  c.total_steps = required_field<long long>(n, path, "total_steps");
  assign_count(c.batch_size, n, path, "batch_size", 1);
  assign_count(c.mu, n, path, "mu", 1);
  assign(c.lambda_u, n, path, "lambda_u");
  assign(c.eta, n, path, "eta");
  assign(c.momentum, n, path, "momentum");
  assign(c.nesterov, n, path, "nesterov");
  assign(c.weight_decay, n, path, "weight_decay");
  assign(c.ema_decay, n, path, "ema_decay");
  assign(c.sigma_w, n, path, "sigma_w");
  assign(c.sigma_s, n, path, "sigma_s");
  assign(c.mask_prob, n, path, "mask_prob");
  if (auto v = optional_field<long long>(n, path, "eval_every")) c.eval_every = *v;
  assign(c.detach_projection, n, path, "detach_projection");
  if (n["hidden"]) c.hidden = parse_hidden(n["hidden"], "train.hidden");
  if (auto a = optional_field<std::string>(n, path, "activation")) {
    try {
      c.activation = activation_from_string(*a);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("train.activation", line_of(n["activation"]), e.what());
    }
  }
  assign(c.dropout_rate, n, path, "dropout_rate");
  if (auto b = optional_field<long long>(n, path, "ece_bins")) c.ece_bins = static_cast<int>(*b);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train", line_of(n), e.what());
  }
  return c;
}

inline NamedStrategy parse_strategy(const YAML::Node& n, const std::string& path) {
  check_keys(n, path,
             {"name", "kind", "tau", "kappa", "min_alpha", "alignment", "alignment_decay", "mc_samples",
              "dropout_rate"});
  NamedStrategy s;
  const auto kind = required_field<std::string>(n, path, "kind");
  const auto k = strategy_kind_from_string(kind);
  if (!k) {
    throw ConfigError(path + ".kind", line_of(n["kind"]),
                      "expected one of cssl, lsmatch, fixmatch, upsmatch; got '" + kind + "'");
  }
  s.config.kind = *k;
  s.name = optional_field<std::string>(n, path, "name").value_or(kind);
  if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError(path + ".name", line_of(n), "name must be non-empty and contain no path separators");
  }
  assign(s.config.tau, n, path, "tau");
  assign(s.config.kappa, n, path, "kappa");
  assign(s.config.min_alpha, n, path, "min_alpha");
  assign(s.config.use_alignment, n, path, "alignment");
  assign(s.config.alignment_decay, n, path, "alignment_decay");
  if (auto m = optional_field<long long>(n, path, "mc_samples")) s.config.mc_samples = static_cast<int>(*m);
  assign(s.config.dropout_rate, n, path, "dropout_rate");
  try {
    s.config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, line_of(n), e.what());
  }
  return s;
}

}  // namespace detail

/// Parses an experiment spec from a YAML document. Required fields:
/// spec_version, task.kind, train.total_steps, seeds and (for the run
/// command) a non-empty strategies list whose entries name a kind.
inline ExperimentSpec parse_spec(const YAML::Node& root, bool require_strategies = true) {
  using detail::line_of;
  if (!root || root.IsNull()) throw ConfigError("", 0, "empty spec");
  detail::check_keys(root, "", {"spec_version", "task", "train", "seeds", "output", "strategies"});
  ExperimentSpec spec;
  spec.spec_version = static_cast<int>(detail::required_field<long long>(root, "", "spec_version"));
  if (spec.spec_version != kSpecVersion) {
    throw ConfigError("spec_version", line_of(root["spec_version"]),
                      "unsupported version " + std::to_string(spec.spec_version) + " (expected " +
                          std::to_string(kSpecVersion) + ")");
  }
  if (!root["task"]) throw ConfigError("task", line_of(root), "missing required field");
  spec.task = detail::parse_task(root["task"]);
  if (!root["train"]) throw ConfigError("train", line_of(root), "missing required field");
  spec.train = detail::parse_train(root["train"], spec.task);

  const YAML::Node seeds = root["seeds"];
  if (!seeds) throw ConfigError("seeds", line_of(root), "missing required field");
  if (!seeds.IsSequence() || seeds.size() == 0) {
    throw ConfigError("seeds", line_of(seeds), "expected a non-empty list of seeds");
  }
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const std::string p = "seeds[" + std::to_string(i) + "]";
    spec.seeds.push_back(detail::to_count(detail::convert<long long>(seeds[i], p, "an integer"), p, seeds[i]));
  }
  spec.output = detail::optional_field<std::string>(root, "", "output").value_or("");

  const YAML::Node strategies = root["strategies"];
  if (!strategies) {
    if (require_strategies) throw ConfigError("strategies", line_of(root), "missing required field");
    return spec;
  }
  if (!strategies.IsSequence() || strategies.size() == 0) {
    throw ConfigError("strategies", line_of(strategies), "expected a non-empty list");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    auto s = detail::parse_strategy(strategies[i], "strategies[" + std::to_string(i) + "]");
    if (!names.insert(s.name).second) {
      throw ConfigError("strategies[" + std::to_string(i) + "].name", line_of(strategies[i]),
                        "duplicate strategy name '" + s.name + "'");
    }
    spec.strategies.push_back(std::move(s));
  }
  return spec;
}

inline ExperimentSpec parse_spec_text(const std::string& text, bool require_strategies = true) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("", e.mark.is_null() ? 0 : e.mark.line + 1, e.msg);
  }
  return parse_spec(root, require_strategies);
}

inline ExperimentSpec load_spec(const fs::path& path, bool require_strategies = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", 0, "cannot open spec file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_spec_text(buf.str(), require_strategies);
}

/// "0,1,5" or ranges such as "0-4" (inclusive), mixed freely.
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  const auto number = [&](const std::string& s) -> std::uint64_t {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-') throw ConfigError("--seeds", 0, "bad seed '" + s + "'");
    return v;
  };
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(number(item));
      continue;
    }
    const auto lo = number(item.substr(0, dash));
    const auto hi = number(item.substr(dash + 1));
    if (hi < lo) throw ConfigError("--seeds", 0, "empty range '" + item + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw ConfigError("--seeds", 0, "no seeds given");
  return out;
}

/// Output directory: an explicit path wins; otherwise the spec's `output`
/// (relative paths resolve under the root); otherwise `<root>/<fallback>`.
/// The root is $CSSL_OUT_ROOT when set, else "cssl_out".
inline fs::path resolve_output(const std::optional<fs::path>& explicit_out, const std::string& spec_output,
                               const std::string& fallback) {
  if (explicit_out) return *explicit_out;
  const char* env = std::getenv(kOutRootEnv);
  const fs::path root = (env && *env) ? fs::path(env) : fs::path("cssl_out");
  if (!spec_output.empty()) {
    const fs::path p(spec_output);
    return p.is_absolute() ? p : root / p;
  }
  return root / fallback;
}

// ---------------------------------------------------------------------------
// JSON echo of configurations (manifest)

inline json to_json(const TaskSpec& t) {
  json j{{"kind", to_string(t.kind)},
         {"classes", t.classes},
         {"dim", t.dim},
         {"labeled", t.n_labeled},
         {"unlabeled", t.n_unlabeled},
         {"test", t.n_test}};
  if (t.kind == TaskKind::Sigmoid1D) {
    j["steepness"] = t.steepness;
    j["midpoint"] = t.midpoint;
  } else {
    j["separation"] = t.separation;
  }
  if (t.data_seed) j["data_seed"] = *t.data_seed;
  return j;
}

inline json to_json(const StrategyConfig& s) {
  json j{{"kind", to_string(s.kind)},         {"tau", s.tau},
         {"min_alpha", s.min_alpha},          {"alignment", s.use_alignment},
         {"alignment_decay", s.alignment_decay}, {"mc_samples", s.mc_samples},
         {"dropout_rate", s.dropout_rate}};
  // JSON has no infinity; an absent kappa means no uncertainty gate.
  if (std::isfinite(s.kappa)) j["kappa"] = s.kappa;
  return j;
}

inline json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"mu", c.mu},
          {"lambda_u", c.lambda_u},
          {"eta", c.eta},
          {"momentum", c.momentum},
          {"nesterov", c.nesterov},
          {"weight_decay", c.weight_decay},
          {"total_steps", c.total_steps},
          {"ema_decay", c.ema_decay},
          {"sigma_w", c.sigma_w},
          {"sigma_s", c.sigma_s},
          {"mask_prob", c.mask_prob},
          {"eval_every", c.eval_every},
          {"detach_projection", c.detach_projection},
          {"hidden", c.hidden},
          {"activation", to_string(c.activation)},
          {"dropout_rate", c.dropout_rate},
          {"ece_bins", c.ece_bins}};
}

// ---------------------------------------------------------------------------
// Cells

struct Cell {
  std::string name;
  StrategyConfig strategy;
  std::uint64_t seed = 0;
  fs::path csv;  // relative to the output directory
};

struct CellOutcome {
  RunRecord record;
  bool aborted = false;
  std::string error;
  double seconds = 0.0;
};

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::vector<double> values;
};

inline Stats stats_of(std::vector<double> values) {
  Stats s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  for (double v : s.values) s.mean += v;
  s.mean /= static_cast<double>(s.values.size());
  if (s.values.size() > 1) {
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.values.size() - 1));
  }
  return s;
}

inline json to_json(const Stats& s) { return {{"mean", s.mean}, {"std", s.std}, {"values", s.values}}; }

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline void write_record(const fs::path& path, const RunRecord& record) {
  std::ostringstream s;
  write_run_csv(s, record);
  write_text(path, s.str());
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Each index runs
/// exactly once; the first exception is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Trains every cell and writes its run CSV (partial on abort).
inline std::vector<CellOutcome> run_cells(const std::vector<Cell>& cells, const TaskSpec& task, const TrainConfig& base,
                                          const fs::path& out, int jobs, std::ostream* log) {
  std::vector<CellOutcome> outcomes(cells.size());
  std::mutex log_mutex;
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const Cell& cell = cells[i];
    TrainConfig cfg = base;
    cfg.seed = cell.seed;
    cfg.strategy = cell.strategy;
    const SyntheticTask data = make_task(task, cell.seed);
    const auto start = std::chrono::steady_clock::now();
    CellOutcome& o = outcomes[i];
    try {
      o.record = train(cfg, data).record;
    } catch (const TrainingAborted& e) {
      o.record = e.partial();
      o.aborted = true;
      o.error = e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_record(out / cell.csv, o.record);
    if (log) {
      const std::lock_guard lock(log_mutex);
      *log << "[" << cell.name << " seed " << cell.seed << "] ";
      if (o.aborted) {
        *log << "aborted: " << o.error << "\n";
      } else {
        char buf[96];
        std::snprintf(buf, sizeof buf, "test error %.4f, ece %.4f (%.1fs)", o.record.last().test_error,
                      o.record.last().test_ece, o.seconds);
        *log << buf << "\n";
      }
    }
  });
  return outcomes;
}

inline json manifest_cell(const Cell& cell, const TaskSpec& task, const CellOutcome& o) {
  return {{"strategy", cell.name},
          {"seed", cell.seed},
          {"data_seed", task.data_seed.value_or(cell.seed)},
          {"strategy_config", to_json(cell.strategy)},
          {"csv", cell.csv.generic_string()},
          {"status", o.aborted ? "aborted" : "ok"}};
}

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  std::optional<fs::path> out;
  std::optional<std::vector<std::uint64_t>> seeds;  // overrides the spec
  std::optional<std::string> strategy;              // run only cells with this name
  int jobs = 1;
  std::ostream* log = nullptr;
};

/// Trains each (strategy, seed) pair; writes <out>/<strategy>/seed_<s>.csv,
/// <out>/<strategy>/summary.json and <out>/manifest.json.
inline int cmd_run(const ExperimentSpec& spec, const CommandOptions& opt, std::ostream& err) {
  const fs::path out = resolve_output(opt.out, spec.output, "run");
  const auto seeds = opt.seeds.value_or(spec.seeds);
  std::vector<Cell> cells;
  for (const auto& s : spec.strategies) {
    if (opt.strategy && *opt.strategy != s.name) continue;
    for (auto seed : seeds) {
      cells.push_back({s.name, s.config, seed, fs::path(s.name) / ("seed_" + std::to_string(seed) + ".csv")});
    }
  }
  if (cells.empty()) {
    err << "no strategy named '" << opt.strategy.value_or("") << "' in the spec\n";
    return kExitConfig;
  }
  const auto outcomes = run_cells(cells, spec.task, spec.train, out, opt.jobs, opt.log);

  bool aborted = false;
  json manifest_cells = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    manifest_cells.push_back(manifest_cell(cells[i], spec.task, outcomes[i]));
    if (outcomes[i].aborted) {
      aborted = true;
      err << "run " << cells[i].name << " seed " << cells[i].seed << " aborted: " << outcomes[i].error << "\n";
    }
  }
  for (const auto& s : spec.strategies) {
    if (opt.strategy && *opt.strategy != s.name) continue;
    std::vector<double> final_err, final_ece, tail_err, raw_err, raw_ece;
    std::vector<std::uint64_t> used;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].name != s.name || outcomes[i].aborted || outcomes[i].record.rows.empty()) continue;
      const auto& r = outcomes[i].record;
      used.push_back(cells[i].seed);
      final_err.push_back(r.last().test_error);
      final_ece.push_back(r.last().test_ece);
      tail_err.push_back(r.tail_mean_error());
      raw_err.push_back(r.last().raw_test_error);
      raw_ece.push_back(r.last().raw_test_ece);
    }
    write_json(out / s.name / "summary.json", {{"strategy", s.name},
                                               {"config", to_json(s.config)},
                                               {"seeds", used},
                                               {"final_test_error", to_json(stats_of(final_err))},
                                               {"final_test_ece", to_json(stats_of(final_ece))},
                                               {"tail_mean_test_error", to_json(stats_of(tail_err))},
                                               {"tail_fraction", 0.05},
                                               {"final_raw_test_error", to_json(stats_of(raw_err))},
                                               {"final_raw_test_ece", to_json(stats_of(raw_ece))}});
  }
  write_json(out / "manifest.json", {{"command", "run"},
                                     {"spec_version", spec.spec_version},
                                     {"task", to_json(spec.task)},
                                     {"train", to_json(spec.train)},
                                     {"seeds", seeds},
                                     {"cells", manifest_cells}});
  return aborted ? kExitRuntime : kExitOk;
}

// Synthetic study ------------------------------------------------------------

struct SyntheticOptions {
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::uint64_t data_seed = 0;  // every model trains on the same data
  std::size_t n_labeled = 25;
  std::size_t n_unlabeled = 500;
  double steepness = 10.0;
  double midpoint = 0.5;
  std::size_t grid_points = 1001;
  SelfTrainConfig train;  // seed is overwritten per run
};

struct SyntheticMethodResult {
  SelfTrainLabel method;
  std::vector<double> mse;                  // one per seed
  std::vector<std::vector<double>> curves;  // p(positive | grid x), one per seed
};

struct SyntheticResult {
  SyntheticTask task;
  std::vector<double> grid;
  std::vector<SyntheticMethodResult> methods;  // hard, soft, credal
};

inline SyntheticResult run_synthetic(const SyntheticOptions& opt, int jobs = 1) {
  SyntheticResult r{gen_sigmoid_task(opt.n_labeled, opt.n_unlabeled, opt.steepness, opt.midpoint, opt.data_seed),
                    linspace(0.0, 1.0, opt.grid_points),
                    {}};
  const SelfTrainLabel methods[] = {SelfTrainLabel::Hard, SelfTrainLabel::Soft, SelfTrainLabel::Credal};
  for (const auto m : methods) {
    r.methods.push_back({m, std::vector<double>(opt.seeds.size()), std::vector<std::vector<double>>(opt.seeds.size())});
  }
  const std::size_t n_seeds = opt.seeds.size();
  parallel_for(3 * n_seeds, jobs, [&](std::size_t cell) {
    auto& method = r.methods[cell / n_seeds];
    const std::size_t s = cell % n_seeds;
    SelfTrainConfig cfg = opt.train;
    cfg.seed = opt.seeds[s];
    const MlpModel model = self_train_simple(cfg, r.task, method.method);
    method.mse[s] = fn_mse_to_truth(model, r.task.truth, r.grid);
    auto& curve = method.curves[s];
    curve.reserve(r.grid.size());
    for (double x : r.grid) {
      const double xs[1] = {x};
      curve.push_back(predict(model, xs)[1]);
    }
  });
  return r;
}

/// Writes <out>/truth.csv, <out>/labeled.csv, <out>/unlabeled.csv,
/// <out>/curves/<method>_seed_<s>.csv (columns x,p_hat) and
/// <out>/summary.json with methods ordered by mean MSE ascending.
inline int cmd_synthetic(const SyntheticOptions& opt, const fs::path& out, int jobs, std::ostream* log) {
  const SyntheticResult r = run_synthetic(opt, jobs);
  {
    std::ostringstream s;
    s << "x,p_true\n";
    for (double x : r.grid) {
      const double xs[1] = {x};
      s << format_double(x) << ',' << format_double(r.task.truth(xs)[1]) << '\n';
    }
    write_text(out / "truth.csv", s.str());
  }
  {
    std::ostringstream l, u;
    write_dataset_csv(l, std::span<const LabeledExample>(r.task.labeled));
    write_dataset_csv(u, std::span<const UnlabeledExample>(r.task.unlabeled));
    write_text(out / "labeled.csv", l.str());
    write_text(out / "unlabeled.csv", u.str());
  }
  json methods = json::array();
  std::vector<std::pair<double, json>> ranked;
  for (const auto& m : r.methods) {
    for (std::size_t s = 0; s < opt.seeds.size(); ++s) {
      std::ostringstream c;
      c << "x,p_hat\n";
      for (std::size_t i = 0; i < r.grid.size(); ++i) {
        c << format_double(r.grid[i]) << ',' << format_double(m.curves[s][i]) << '\n';
      }
      write_text(out / "curves" / (to_string(m.method) + "_seed_" + std::to_string(opt.seeds[s]) + ".csv"), c.str());
    }
    const Stats st = stats_of(m.mse);
    ranked.emplace_back(st.mean, json{{"method", to_string(m.method)},
                                      {"mean_mse", st.mean},
                                      {"std_mse", st.std},
                                      {"per_seed_mse", st.values}});
    if (log) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%-6s mean fn mse %.6f (std %.6f)", to_string(m.method).c_str(), st.mean,
                    st.std);
      *log << buf << "\n";
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [_, j] : ranked) methods.push_back(std::move(j));
  write_json(out / "summary.json",
             {{"task",
               {{"kind", "sigmoid"},
                {"labeled", opt.n_labeled},
                {"unlabeled", opt.n_unlabeled},
                {"steepness", opt.steepness},
                {"midpoint", opt.midpoint},
                {"data_seed", opt.data_seed}}},
              {"train",
               {{"hidden", opt.train.hidden},
                {"activation", to_string(opt.train.activation)},
                {"lr", opt.train.lr},
                {"iterations", opt.train.iterations},
                {"batch_size", opt.train.batch_size},
                {"lambda_u", opt.train.lambda_u}}},
              {"seeds", opt.seeds},
              {"grid_points", opt.grid_points},
              {"methods", methods}});
  return kExitOk;
}

// Efficiency study -----------------------------------------------------------

struct EfficiencyEntry {
  std::string name;
  StrategyConfig strategy;
};

/// CSSL, LSMatch and FixMatch at each threshold in {0, 0.8, 0.95}.
inline std::vector<EfficiencyEntry> efficiency_comparison() {
  std::vector<EfficiencyEntry> out;
  StrategyConfig s;
  s.kind = StrategyKind::Cssl;
  out.push_back({"cssl", s});
  s.kind = StrategyKind::LsMatch;
  out.push_back({"lsmatch", s});
  for (const auto& [tag, tau] : {std::pair{"0", 0.0}, std::pair{"0.8", 0.8}, std::pair{"0.95", 0.95}}) {
    s.kind = StrategyKind::FixMatchHard;
    s.tau = tau;
    out.push_back({std::string("fixmatch_tau") + tag, s});
  }
  return out;
}

inline long long efficiency_budget(long long total_steps) { return std::max(1LL, total_steps / 8); }

struct EfficiencyResult {
  std::vector<EfficiencyEntry> entries;
  std::vector<Cell> cells;
  std::vector<CellOutcome> outcomes;
};

inline EfficiencyResult run_efficiency(const ExperimentSpec& spec, const CommandOptions& opt, const fs::path& out) {
  EfficiencyResult r;
  r.entries = efficiency_comparison();
  const auto seeds = opt.seeds.value_or(spec.seeds);
  for (const auto& e : r.entries) {
    if (opt.strategy && *opt.strategy != e.name) continue;
    for (auto seed : seeds) {
      r.cells.push_back({e.name, e.strategy, seed, fs::path(e.name) / ("seed_" + std::to_string(seed) + ".csv")});
    }
  }
  TrainConfig base = spec.train;
  base.total_steps = efficiency_budget(spec.train.total_steps);
  base.eval_every = std::min(base.eval_every, base.total_steps);
  r.outcomes = run_cells(r.cells, spec.task, base, out, opt.jobs, opt.log);
  return r;
}

/// Reduced-budget comparison: learning curves per (strategy, seed) and
/// <out>/final_errors.csv with one row per strategy/threshold combination.
inline int cmd_efficiency(const ExperimentSpec& spec, const CommandOptions& opt, std::ostream& err) {
  const fs::path out = resolve_output(opt.out, spec.output, "efficiency");
  if (opt.strategy) {
    const auto entries = efficiency_comparison();
    if (std::none_of(entries.begin(), entries.end(), [&](const auto& e) { return e.name == *opt.strategy; })) {
      err << "no efficiency strategy named '" << *opt.strategy << "'\n";
      return kExitConfig;
    }
  }
  const EfficiencyResult r = run_efficiency(spec, opt, out);

  bool aborted = false;
  std::ostringstream table;
  table << "strategy,tau,mean_test_error,std_test_error,mean_test_ece,std_test_ece,mean_mask_rate\n";
  for (const auto& e : r.entries) {
    std::vector<double> errs, eces, masks;
    bool present = false;
    for (std::size_t i = 0; i < r.cells.size(); ++i) {
      if (r.cells[i].name != e.name) continue;
      present = true;
      const auto& o = r.outcomes[i];
      if (o.aborted) {
        aborted = true;
        err << "run " << e.name << " seed " << r.cells[i].seed << " aborted: " << o.error << "\n";
        continue;
      }
      errs.push_back(o.record.last().test_error);
      eces.push_back(o.record.last().test_ece);
      masks.push_back(o.record.last().mask_rate);
    }
    if (!present || errs.empty()) continue;
    const bool thresholded = is_thresholded(e.strategy.kind);
    const Stats es = stats_of(errs), cs = stats_of(eces), ms = stats_of(masks);
    table << to_string(e.strategy.kind) << ',' << (thresholded ? format_double(e.strategy.tau) : "") << ','
          << format_double(es.mean) << ',' << format_double(es.std) << ',' << format_double(cs.mean) << ','
          << format_double(cs.std) << ',' << (thresholded ? format_double(ms.mean) : "") << '\n';
  }
  write_text(out / "final_errors.csv", table.str());

  json cells = json::array();
  for (std::size_t i = 0; i < r.cells.size(); ++i) cells.push_back(manifest_cell(r.cells[i], spec.task, r.outcomes[i]));
  TrainConfig budget = spec.train;
  budget.total_steps = efficiency_budget(spec.train.total_steps);
  budget.eval_every = std::min(budget.eval_every, budget.total_steps);
  write_json(out / "manifest.json", {{"command", "efficiency"},
                                     {"spec_version", spec.spec_version},
                                     {"task", to_json(spec.task)},
                                     {"train", to_json(budget)},
                                     {"full_total_steps", spec.train.total_steps},
                                     {"seeds", opt.seeds.value_or(spec.seeds)},
                                     {"cells", cells}});
  return aborted ? kExitRuntime : kExitOk;
}

}  // namespace cssl::cli
