#include "mfdelay/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "mfdelay/checkpoint.hpp"
#include "mfdelay/objective.hpp"

namespace mfd {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- names

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::direct_lstm: return "direct_lstm";
    case Algorithm::direct_ffn: return "direct_ffn";
    case Algorithm::fabsde_three_lstm: return "fabsde_three_lstm";
    case Algorithm::fabsde_shared: return "fabsde_shared";
  }
  return "direct_lstm";
}

Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : {Algorithm::direct_lstm, Algorithm::direct_ffn,
                      Algorithm::fabsde_three_lstm, Algorithm::fabsde_shared}) {
    if (name == to_string(a)) return a;
  }
  throw ConfigValueError("algorithm", "unknown algorithm '" + std::string(name) + "'");
}

bool is_direct(Algorithm a) noexcept {
  return a == Algorithm::direct_lstm || a == Algorithm::direct_ffn;
}

std::size_t default_epochs(Algorithm a) noexcept { return is_direct(a) ? 500 : 1000; }

TimeGrid ExperimentConfig::grid() const { return make_grid(horizon, delay, dt); }

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.grid = grid();
  t.model = model;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.optimizer = optimizer;
  t.seed = seed;
  t.sizes = sizes;
  t.inputs = inputs;
  t.fixed_batch = fixed_batch;
  t.grad_tol = grad_tol;
  t.l1_tol = l1_tol;
  t.plateau_window = plateau_window;
  t.plateau_rtol = plateau_rtol;
  return t;
}

// ---------------------------------------------------------------- config parsing

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "algorithm",    "x0",         "sigma",          "c_f",           "c_t",
      "T",            "tau",        "dt",             "M",             "epochs",
      "seed",         "eval_seed",  "eval_paths",     "lstm_hidden",   "ffn_hidden",
      "optimizer",    "learning_rate", "adam_beta1",  "adam_beta2",    "adam_epsilon",
      "scale_time",   "append_time", "fixed_batch",   "grad_tol",      "l1_tol",
      "plateau_window", "plateau_rtol", "output_dir", "dump_paths",    "log_every"};
  return keys;
}

double get_number(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigValueError(key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigValueError(key, "must be finite");
  return d;
}

std::uint64_t get_count(const json& j, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                 v.get<std::int64_t>() < 0)) {
    throw ConfigValueError(key, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool get_bool(const json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ConfigValueError(key, "expected true or false");
  return j.at(key).get<bool>();
}

std::string get_string(const json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigValueError(key, "expected a string");
  return j.at(key).get<std::string>();
}

void require_positive(double v, const char* key) {
  if (!(v > 0.0)) throw ConfigValueError(key, "must be positive");
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigSyntaxError("config must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known_keys().contains(item.key())) throw UnknownKeyError(item.key());
  }
  ExperimentConfig c;
  c.algorithm = parse_algorithm(get_string(j, "algorithm", to_string(c.algorithm)));
  c.model.x0 = get_number(j, "x0", c.model.x0);
  c.model.sigma = get_number(j, "sigma", c.model.sigma);
  c.model.c_f = get_number(j, "c_f", c.model.c_f);
  c.model.c_t = get_number(j, "c_t", c.model.c_t);
  c.horizon = get_number(j, "T", c.horizon);
  c.delay = get_number(j, "tau", c.delay);
  c.dt = get_number(j, "dt", c.dt);
  c.batch_size = get_count(j, "M", c.batch_size);
  c.epochs = get_count(j, "epochs", default_epochs(c.algorithm));
  c.seed = get_count(j, "seed", c.seed);
  c.eval_seed = get_count(j, "eval_seed", c.eval_seed);
  c.eval_paths = get_count(j, "eval_paths", c.batch_size);
  c.sizes.lstm_hidden = get_count(j, "lstm_hidden", c.sizes.lstm_hidden);
  if (j.contains("ffn_hidden")) {
    const auto& v = j.at("ffn_hidden");
    if (!v.is_array()) throw ConfigValueError("ffn_hidden", "expected an array of sizes");
    c.sizes.ffn_hidden.clear();
    for (const auto& e : v) {
      if (!e.is_number_unsigned() || e.get<std::uint64_t>() == 0) {
        throw ConfigValueError("ffn_hidden", "sizes must be positive integers");
      }
      c.sizes.ffn_hidden.push_back(e.get<std::size_t>());
    }
  }
  try {
    c.optimizer.kind = parse_optimizer(get_string(j, "optimizer", to_string(c.optimizer.kind)));
  } catch (const UsageError& e) {
    throw ConfigValueError("optimizer", e.what());
  }
  c.optimizer.learning_rate = get_number(j, "learning_rate", c.optimizer.learning_rate);
  c.optimizer.beta1 = get_number(j, "adam_beta1", c.optimizer.beta1);
  c.optimizer.beta2 = get_number(j, "adam_beta2", c.optimizer.beta2);
  c.optimizer.epsilon = get_number(j, "adam_epsilon", c.optimizer.epsilon);
  c.inputs.scale_time = get_bool(j, "scale_time", c.inputs.scale_time);
  c.inputs.append_time = get_bool(j, "append_time", c.inputs.append_time);
  c.fixed_batch = get_bool(j, "fixed_batch", c.fixed_batch);
  c.grad_tol = get_number(j, "grad_tol", c.grad_tol);
  c.l1_tol = get_number(j, "l1_tol", c.l1_tol);
  c.plateau_window = get_count(j, "plateau_window", c.plateau_window);
  c.plateau_rtol = get_number(j, "plateau_rtol", c.plateau_rtol);
  c.output_dir = get_string(j, "output_dir", "runs/" + to_string(c.algorithm));
  c.dump_paths = get_count(j, "dump_paths", c.dump_paths);
  c.log_every = get_count(j, "log_every", c.log_every);

  // Invariants.
  require_positive(c.model.sigma, "sigma");
  require_positive(c.model.c_f, "c_f");
  require_positive(c.model.c_t, "c_t");
  require_positive(c.horizon, "T");
  if (!(c.delay >= 0.0)) throw ConfigValueError("tau", "must be non-negative");
  require_positive(c.dt, "dt");
  try {
    make_grid(c.horizon, 0.0, c.dt);
  } catch (const ConfigError& e) {
    throw ConfigValueError("dt", e.what());
  }
  try {
    make_grid(c.horizon, c.delay, c.dt);
  } catch (const ConfigError& e) {
    throw ConfigValueError("tau", e.what());
  }
  if (c.batch_size < 2) throw ConfigValueError("M", "needs at least 2 paths");
  if (c.eval_paths < 2) throw ConfigValueError("eval_paths", "needs at least 2 paths");
  if (c.sizes.lstm_hidden == 0) throw ConfigValueError("lstm_hidden", "must be positive");
  require_positive(c.optimizer.learning_rate, "learning_rate");
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0)) {
    throw ConfigValueError("adam_beta1", "must lie in [0, 1)");
  }
  if (!(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) {
    throw ConfigValueError("adam_beta2", "must lie in [0, 1)");
  }
  require_positive(c.optimizer.epsilon, "adam_epsilon");
  if (!(c.grad_tol >= 0.0)) throw ConfigValueError("grad_tol", "must be non-negative");
  if (!(c.l1_tol >= 0.0)) throw ConfigValueError("l1_tol", "must be non-negative");
  if (c.plateau_window == 0) throw ConfigValueError("plateau_window", "must be positive");
  if (!(c.plateau_rtol >= 0.0)) throw ConfigValueError("plateau_rtol", "must be non-negative");
  if (c.output_dir.empty()) throw ConfigValueError("output_dir", "must not be empty");
  return c;
}

ExperimentConfig parse_config_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigSyntaxError(std::string("malformed config: ") + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigFileError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

json to_json(const ExperimentConfig& c) {
  return json{{"algorithm", to_string(c.algorithm)},
              {"x0", c.model.x0},
              {"sigma", c.model.sigma},
              {"c_f", c.model.c_f},
              {"c_t", c.model.c_t},
              {"T", c.horizon},
              {"tau", c.delay},
              {"dt", c.dt},
              {"M", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"eval_seed", c.eval_seed},
              {"eval_paths", c.eval_paths},
              {"lstm_hidden", c.sizes.lstm_hidden},
              {"ffn_hidden", c.sizes.ffn_hidden},
              {"optimizer", to_string(c.optimizer.kind)},
              {"learning_rate", c.optimizer.learning_rate},
              {"adam_beta1", c.optimizer.beta1},
              {"adam_beta2", c.optimizer.beta2},
              {"adam_epsilon", c.optimizer.epsilon},
              {"scale_time", c.inputs.scale_time},
              {"append_time", c.inputs.append_time},
              {"fixed_batch", c.fixed_batch},
              {"grad_tol", c.grad_tol},
              {"l1_tol", c.l1_tol},
              {"plateau_window", c.plateau_window},
              {"plateau_rtol", c.plateau_rtol},
              {"output_dir", c.output_dir},
              {"dump_paths", c.dump_paths},
              {"log_every", c.log_every}};
}

namespace {

json estimate_json(const Estimate& e) { return json{{"value", e.value}, {"stderr", e.stderr_}}; }

}  // namespace

json to_json(const ValidationReport& rep) {
  json j{{"slope", estimate_json(rep.slope)},
         {"intercept", estimate_json(rep.intercept)},
         {"z_mean_abs_err", nullptr},
         {"value_gap", estimate_json(rep.value_gap)},
         {"learned_J", rep.learned_objective},
         {"analytic_J", rep.analytic_objective},
         {"z_mean", rep.z_mean},
         {"z_std", rep.z_std}};
  if (rep.z_mean_abs_err) j["z_mean_abs_err"] = estimate_json(*rep.z_mean_abs_err);
  return j;
}

// ---------------------------------------------------------------- running

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + p.string());
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Model {
  Algorithm algorithm;
  DirectPolicy policy;
  AdjointNets nets;

  ParameterList parameters() const {
    return is_direct(algorithm) ? policy.parameters() : nets.parameters();
  }
};

Model make_model(const ExperimentConfig& cfg, const TimeGrid& grid) {
  Model m{cfg.algorithm, {}, {}};
  switch (cfg.algorithm) {
    case Algorithm::direct_lstm:
      m.policy = make_direct_policy(DirectKind::lstm_on_noise, cfg.sizes, cfg.inputs, grid,
                                    cfg.seed);
      break;
    case Algorithm::direct_ffn:
      m.policy = make_direct_policy(DirectKind::ffn_on_state_history, cfg.sizes, cfg.inputs,
                                    grid, cfg.seed);
      break;
    case Algorithm::fabsde_three_lstm:
      m.nets = make_adjoint_nets(AdjointKind::three_lstm, cfg.sizes, cfg.inputs, cfg.seed);
      break;
    case Algorithm::fabsde_shared:
      m.nets = make_adjoint_nets(AdjointKind::shared_lstm_heads, cfg.sizes, cfg.inputs, cfg.seed);
      break;
  }
  return m;
}

BrownianBatch evaluation_noise(const ExperimentConfig& cfg, const TimeGrid& grid) {
  return sample_increments(cfg.eval_paths, grid, cfg.eval_seed, 0);
}

BatchState evaluate(const Model& model, const BrownianBatch& noise, const ModelParams& params,
                    const TimeGrid& grid) {
  ad::NoGradGuard no_grad;
  if (is_direct(model.algorithm)) {
    return policy_rollout(model.policy, noise, params, grid).snapshot(grid.delay_steps);
  }
  return coupled_rollout(model.nets, noise, params, grid).trajectory.snapshot(grid.delay_steps);
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  TimeGrid grid;
  TrainConfig tc;
  try {
    grid = cfg.grid();
    tc = cfg.train_config();
    tc.validate();
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  const fs::path dir(cfg.output_dir);
  try {
    fs::create_directories(dir);
    write_json(dir / "resolved-config.json", to_json(cfg));
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitIo;
  }

  Model model = make_model(cfg, grid);
  const bool direct = is_direct(cfg.algorithm);
  std::ostringstream history;
  history << (direct ? "epoch,J,grad_norm\n" : "epoch,L1,L2,J\n");
  const EpochCallback record = [&](const EpochRecord& r) {
    history << r.epoch;
    if (direct) {
      history << ',' << fmt17(r.objective) << ',' << fmt17(r.grad_norm) << '\n';
    } else {
      history << ',' << fmt17(r.l1) << ',' << fmt17(r.l2) << ',' << fmt17(r.objective) << '\n';
    }
    if (cfg.log_every > 0 && r.epoch % cfg.log_every == 0) {
      log << to_string(cfg.algorithm) << " epoch " << r.epoch << " J " << r.objective;
      if (!direct) log << " L1 " << r.l1 << " L2 " << r.l2;
      log << '\n';
    }
  };

  TrainHistory hist;
  try {
    hist = direct ? train_direct(model.policy, tc, record) : train_fabsde(model.nets, tc, record);
  } catch (const DivergenceError& e) {
    log << "diverged: " << e.what() << '\n';
    try {
      auto out = open_out(dir / "history.csv");
      out << history.str();
      write_json(dir / "failure.json", json{{"status", "diverged"},
                                            {"epoch", e.epoch()},
                                            {"message", e.what()},
                                            {"algorithm", to_string(cfg.algorithm)}});
    } catch (const std::exception& io) {
      log << "error: " << io.what() << '\n';
      return kExitIo;
    }
    return kExitDivergence;
  }

  try {
    {
      auto out = open_out(dir / "history.csv");
      out << history.str();
      if (!out) throw IoError("failed writing history.csv");
    }
    {
      auto out = open_out(dir / "checkpoint.txt");
      save_checkpoint(out, model.parameters());
    }
    const BrownianBatch noise = evaluation_noise(cfg, grid);
    const BatchState state = evaluate(model, noise, cfg.model, grid);
    {
      auto out = open_out(dir / "trajectories.csv");
      write_trajectories_csv(out, state, grid, cfg.dump_paths);
    }
    const double final_j = objective_value(state, cfg.model, grid);
    json summary{{"algorithm", to_string(cfg.algorithm)},
                 {"final_J", final_j},
                 {"train_final_J", hist.records.empty() ? final_j : hist.records.back().objective},
                 {"epochs_run", hist.records.size()},
                 {"stop_reason", hist.stop_reason}};
    if (!direct && !hist.records.empty()) {
      summary["final_L1"] = hist.records.back().l1;
      summary["final_L2"] = hist.records.back().l2;
    }
    write_json(dir / "summary.json", summary);
    if (!grid.delayed()) {
      const RiccatiSolution ric = solve_riccati(cfg.model, grid);
      const ValidationReport rep = validate_nodelay(state, ric, noise, cfg.model, grid);
      write_json(dir / "validation.json", to_json(rep));
    }
    log << to_string(cfg.algorithm) << ": " << hist.records.size() << " epochs ("
        << hist.stop_reason << "), evaluation J = " << final_j << '\n';
  } catch (const IoError& e) {
    log << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}

namespace {

ExperimentConfig load_resolved(const fs::path& dir) {
  try {
    return parse_config(dir / "resolved-config.json");
  } catch (const ConfigFileError& e) {
    throw IoError(e.what());
  }
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("malformed " + p.string() + ": " + e.what());
  }
}

}  // namespace

ValidationReport validate_run(const fs::path& run_dir) {
  const ExperimentConfig cfg = load_resolved(run_dir);
  const TimeGrid grid = cfg.grid();
  if (grid.delayed()) throw UsageError("validate applies to no-delay runs (tau = 0) only");
  Model model = make_model(cfg, grid);
  {
    std::ifstream in(run_dir / "checkpoint.txt");
    if (!in) throw IoError("cannot open " + (run_dir / "checkpoint.txt").string());
    ParameterList params = model.parameters();
    load_checkpoint(in, params);
  }
  const BrownianBatch noise = evaluation_noise(cfg, grid);
  const BatchState state = evaluate(model, noise, cfg.model, grid);
  const ValidationReport rep =
      validate_nodelay(state, solve_riccati(cfg.model, grid), noise, cfg.model, grid);
  write_json(run_dir / "validation.json", to_json(rep));
  return rep;
}

// ---------------------------------------------------------------- comparison

std::size_t epochs_to_plateau(const std::vector<double>& objective, std::size_t window,
                              double rtol) {
  const std::size_t n = objective.size();
  if (n == 0) return 0;
  window = std::max<std::size_t>(1, std::min(window, n));
  const auto trailing = [&](std::size_t end) {  // mean of [end - window + 1, end]
    double s = 0.0;
    for (std::size_t k = end + 1 - window; k <= end; ++k) s += objective[k];
    return s / static_cast<double>(window);
  };
  const double final_mean = trailing(n - 1);
  for (std::size_t e = window - 1; e < n; ++e) {
    bool stays = true;
    for (std::size_t k = e; k < n && stays; ++k) {
      stays = std::abs(trailing(k) - final_mean) <= rtol * std::abs(final_mean);
    }
    if (stays) return e + 1;
  }
  return n;
}

Comparison compare_runs(const std::vector<fs::path>& dirs) {
  if (dirs.size() < 2) throw UsageError("compare needs at least two run directories");
  Comparison cmp;
  std::vector<ExperimentConfig> cfgs;
  for (const auto& dir : dirs) {
    const ExperimentConfig cfg = load_resolved(dir);
    if (!cfgs.empty()) {
      const auto& ref = cfgs.front();
      if (!(cfg.model == ref.model) || cfg.horizon != ref.horizon || cfg.delay != ref.delay ||
          cfg.dt != ref.dt || cfg.batch_size != ref.batch_size) {
        throw UsageError("run " + dir.string() + " has a different model, grid or batch size than " +
                         dirs.front().string());
      }
    }
    cfgs.push_back(cfg);
    const CsvTable hist = read_csv(dir / "history.csv");
    const std::size_t jcol = hist.column("J");
    std::vector<double> js;
    for (const auto& row : hist.rows) js.push_back(row[jcol]);
    RunSummary s;
    s.dir = dir;
    s.algorithm = cfg.algorithm;
    s.epochs_run = js.size();
    s.epochs_to_plateau = epochs_to_plateau(js);
    const json summary = load_json(dir / "summary.json");
    s.final_objective = summary.at("final_J").get<double>();
    cmp.runs.push_back(s);
  }
  const std::size_t n = cmp.runs.size();
  cmp.relative_gap.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double ja = cmp.runs[a].final_objective, jb = cmp.runs[b].final_objective;
      const double mean = 0.5 * (ja + jb);
      cmp.relative_gap[a][b] = mean != 0.0 ? std::abs(ja - jb) / std::abs(mean) : 0.0;
      if (cmp.relative_gap[a][b] > cmp.tolerance) cmp.any_flagged = true;
    }
  }
  return cmp;
}

void print_comparison(std::ostream& out, const Comparison& cmp) {
  out << "run,algorithm,final_J,epochs,epochs_to_plateau\n";
  for (const auto& r : cmp.runs) {
    out << r.dir.string() << ',' << to_string(r.algorithm) << ',' << fmt17(r.final_objective)
        << ',' << r.epochs_run << ',' << r.epochs_to_plateau << '\n';
  }
  out << "\npairwise relative gaps (flag > " << cmp.tolerance * 100.0 << "%)\n";
  for (std::size_t a = 0; a < cmp.runs.size(); ++a) {
    for (std::size_t b = a + 1; b < cmp.runs.size(); ++b) {
      const double g = cmp.relative_gap[a][b];
      out << to_string(cmp.runs[a].algorithm) << " vs " << to_string(cmp.runs[b].algorithm)
          << ": " << g * 100.0 << "%" << (g > cmp.tolerance ? "  FLAG" : "") << '\n';
    }
  }
}

// ---------------------------------------------------------------- CSV

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == name) return k;
  }
  throw IoError("CSV has no column '" + std::string(name) + "'");
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + " is empty");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != t.header.size()) throw IoError("ragged row in " + path.string());
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace mfd
