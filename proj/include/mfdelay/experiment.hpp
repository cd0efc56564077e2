#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mfdelay/direct_control.hpp"
#include "mfdelay/errors.hpp"
#include "mfdelay/fabsde.hpp"
#include "mfdelay/riccati.hpp"

namespace mfd {

// Config errors, one class per failure mode.
class ConfigFileError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class ConfigSyntaxError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};
class UnknownKeyError : public ConfigError {
 public:
  UnknownKeyError(const std::string& key)
      : ConfigError("unknown config key '" + key + "'"), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};
class ConfigValueError : public ConfigError {
 public:
  ConfigValueError(const std::string& key, const std::string& what)
      : ConfigError("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

enum ExitStatus : int { kExitOk = 0, kExitUsage = 1, kExitDivergence = 2, kExitIo = 3 };

enum class Algorithm { direct_lstm, direct_ffn, fabsde_three_lstm, fabsde_shared };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view name);
bool is_direct(Algorithm a) noexcept;

/// Everything that determines a run. Serialized as one flat JSON object.
struct ExperimentConfig {
  Algorithm algorithm = Algorithm::direct_lstm;
  ModelParams model;
  double horizon = 10.0;  // "T"
  double delay = 4.0;     // "tau"
  double dt = 0.1;
  std::size_t batch_size = 4000;  // "M"
  std::size_t epochs = 500;
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 20240;
  std::size_t eval_paths = 4000;
  NetworkSizes sizes;
  OptimizerSettings optimizer;
  InputOptions inputs;
  bool fixed_batch = false;
  double grad_tol = 1e-4;
  double l1_tol = 1e-3;
  std::size_t plateau_window = 50;
  double plateau_rtol = 1e-3;
  std::string output_dir = "run";
  std::size_t dump_paths = 0;  // 0 = every evaluation path
  std::size_t log_every = 0;   // progress lines on stderr; 0 = silent

  TimeGrid grid() const;
  TrainConfig train_config() const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Epoch budget used when the config does not set one.
std::size_t default_epochs(Algorithm a) noexcept;

ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

nlohmann::json to_json(const ValidationReport& rep);

/// Trains, evaluates and writes history.csv, trajectories.csv, checkpoint.txt,
/// resolved-config.json, summary.json and (no-delay runs) validation.json
/// into cfg.output_dir. Returns an ExitStatus.
int run_experiment(const ExperimentConfig& cfg, std::ostream& log);

/// Reloads a finished run, re-simulates it on its evaluation noise and
/// rewrites validation.json. No-delay runs only.
ValidationReport validate_run(const std::filesystem::path& run_dir);

struct RunSummary {
  std::filesystem::path dir;
  Algorithm algorithm = Algorithm::direct_lstm;
  double final_objective = 0.0;
  std::size_t epochs_run = 0;
  std::size_t epochs_to_plateau = 0;
};

struct Comparison {
  std::vector<RunSummary> runs;
  std::vector<std::vector<double>> relative_gap;  // |J_a - J_b| / mean(J_a, J_b)
  double tolerance = 0.05;
  bool any_flagged = false;
};

/// First epoch count after which the 20-epoch trailing mean of J stays
/// within 2% of the final 20-epoch mean.
std::size_t epochs_to_plateau(const std::vector<double>& objective, std::size_t window = 20,
                              double rtol = 0.02);

/// Throws UsageError unless all runs share model, grid and M.
Comparison compare_runs(const std::vector<std::filesystem::path>& dirs);
void print_comparison(std::ostream& out, const Comparison& cmp);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace mfd
