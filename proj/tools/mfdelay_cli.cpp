#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "mfdelay/experiment.hpp"

namespace {

int cmd_run(const std::string& path, const std::optional<std::string>& out,
            const std::optional<std::uint64_t>& seed, const std::optional<std::size_t>& epochs) {
  mfd::ExperimentConfig cfg;
  try {
    cfg = mfd::parse_config(path);
    nlohmann::json j = mfd::to_json(cfg);
    if (out) j["output_dir"] = *out;
    if (seed) j["seed"] = *seed;
    if (epochs) j["epochs"] = *epochs;
    cfg = mfd::config_from_json(j);
  } catch (const mfd::ConfigFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mfd::kExitIo;
  } catch (const mfd::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mfd::kExitUsage;
  }
  return mfd::run_experiment(cfg, std::cerr);
}

int cmd_validate(const std::string& dir) {
  try {
    const auto rep = mfd::validate_run(dir);
    std::cout << mfd::to_json(rep).dump(2) << '\n';
  } catch (const mfd::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mfd::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mfd::kExitUsage;
  }
  return mfd::kExitOk;
}

int cmd_compare(const std::vector<std::string>& dirs) {
  try {
    const auto cmp = mfd::compare_runs({dirs.begin(), dirs.end()});
    mfd::print_comparison(std::cout, cmp);
  } catch (const mfd::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mfd::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mfd::kExitUsage;
  }
  return mfd::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep-learning solvers for linear-quadratic mean-field control with delay"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train one approach from a JSON config");
  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  run->add_option("config", config_path, "config file")->required();
  run->add_option("--out", out, "output directory");
  run->add_option("--seed", seed, "training seed");
  run->add_option("--epochs", epochs, "epoch budget");

  auto* validate = app.add_subcommand("validate", "compare a no-delay run against the Riccati solution");
  std::string run_dir;
  validate->add_option("run-dir", run_dir)->required();

  auto* compare = app.add_subcommand("compare", "tabulate final objective values of several runs");
  std::vector<std::string> dirs;
  compare->add_option("run-dirs", dirs)->required()->expected(2, -1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mfd::kExitOk : mfd::kExitUsage;
  }
  if (*run) return cmd_run(config_path, out, seed, epochs);
  if (*validate) return cmd_validate(run_dir);
  return cmd_compare(dirs);
}
