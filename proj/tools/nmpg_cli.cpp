// Command-line front end; talks to the library only through the C interface.

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nmpg/nmpg.h"

namespace {

void print_line(const char* line, size_t length, void*) {
  std::fwrite(line, 1, length, stdout);
  std::fputc('\n', stdout);
}

int report(nmpg_status status) {
  std::fflush(stdout);
  if (status != NMPG_OK) std::fprintf(stderr, "nmpg: %s\n", nmpg_last_error());
  return static_cast<int>(status);
}

struct ConfigHandle {
  nmpg_config* ptr = nullptr;
  ~ConfigHandle() { nmpg_config_free(ptr); }
};

// Loads the config (or defaults) and applies command-line overrides.
nmpg_status load(const std::string& path, std::optional<std::uint64_t> seed, ConfigHandle& out) {
  nmpg_status s = path.empty() ? nmpg_config_new(&out.ptr) : nmpg_config_load(path.c_str(), &out.ptr);
  if (s != NMPG_OK) return s;
  if (seed) s = nmpg_config_set(out.ptr, "seed", std::to_string(*seed).c_str());
  return s;
}

bool parse_pattern(const std::string& text, int& n, int& m) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) return false;
  try {
    std::size_t used = 0;
    n = std::stoi(text.substr(0, colon), &used);
    if (used != colon) return false;
    m = std::stoi(text.substr(colon + 1), &used);
    return used == text.size() - colon - 1;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn N:M sparsity masks with policy-gradient estimators"};
  app.require_subcommand(1);

  std::string config_path, out_dir, scope = "all", pattern = "2:4", c_values = "0,2,4,6,8,10";
  std::optional<std::uint64_t> seed;
  std::uint64_t dim = 0;

  auto* train = app.add_subcommand("train", "Run the training loop");
  train->add_option("--config", config_path, "Config file")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out_dir, "Output directory (default: config output_dir)");

  auto* verify = app.add_subcommand("verify", "Run the oracle property suites");
  verify->add_option("--scope", scope, "algebra|probability|gradients|unbiasedness|all")
      ->capture_default_str();
  verify->add_option("--seed", seed, "Seed for randomized checks (default 0)");

  auto* variance = app.add_subcommand("variance-report", "Estimator variance and bias report");
  variance->add_option("--config", config_path, "Config file")->required();
  variance->add_option("--seed", seed, "Override the config seed");
  variance->add_option("--out", out_dir, "Output directory");

  auto* memory = app.add_subcommand("memory-report", "Logit count comparison");
  memory->add_option("--pattern", pattern, "N:M")->capture_default_str();
  memory->add_option("--dim", dim, "Number of weights d")->required();

  auto* sweep = app.add_subcommand("c-sweep", "Sampling behaviour across logits magnitudes");
  sweep->add_option("--config", config_path, "Config file")->required();
  sweep->add_option("--seed", seed, "Override the config seed");
  sweep->add_option("--out", out_dir, "Output directory");
  sweep->add_option("--c-values", c_values, "Comma-separated C values")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : NMPG_CONFIG_ERROR;
  }

  const char* out = out_dir.empty() ? nullptr : out_dir.c_str();

  if (*memory) {
    int n = 0, m = 0;
    if (!parse_pattern(pattern, n, m)) {
      std::fprintf(stderr, "nmpg: --pattern must look like N:M, got '%s'\n", pattern.c_str());
      return NMPG_CONFIG_ERROR;
    }
    return report(nmpg_run_memory_report(n, m, dim, print_line, nullptr));
  }
  if (*verify) {
    return report(nmpg_run_verify(scope.c_str(), seed.value_or(0), print_line, nullptr));
  }

  ConfigHandle config;
  if (nmpg_status s = load(config_path, seed, config); s != NMPG_OK) return report(s);

  if (*train) return report(nmpg_run_train(config.ptr, out, print_line, nullptr));
  if (*variance) return report(nmpg_run_variance_report(config.ptr, out, print_line, nullptr));

  std::vector<double> cs;
  for (const auto& item : CLI::detail::split(c_values, ',')) {
    try {
      std::size_t used = 0;
      cs.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      std::fprintf(stderr, "nmpg: --c-values: '%s' is not a number\n", item.c_str());
      return NMPG_CONFIG_ERROR;
    }
  }
  return report(nmpg_run_c_sweep(config.ptr, cs.data(), cs.size(), out, print_line, nullptr));
}
