// Command-line surface: synthesize cause-effect data, infer causal
// direction on a dataset, run manifest benchmarks, and replay recorded
// runs.  All numeric work lives in the headers; this file only parses
// flags into the cli::*Args structs and forwards to the run_* functions.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lsir/commands.hpp"
#include "lsir/data.hpp"
#include "lsir/errors.hpp"
#include "lsir/version.hpp"

namespace {

// Shared engine flags for the direction and benchmark subcommands.
struct EngineFlags {
  std::string engine = "lsir";
  double delta = 0.05;
  int permutations = 1000;
  bool literal_permutations = false;
  int threads = lsir::default_thread_count();
  int restarts = 5;
  int max_iterations = 200;
  std::vector<double> tau_grid;
  std::vector<double> gamma_grid;
  std::vector<double> sigma_grid;
  std::vector<double> lambda_grid;
  std::vector<double> xi_grid;
};

void add_engine_flags(CLI::App& cmd, EngineFlags& flags) {
  cmd.add_option("--engine", flags.engine, "Inference engine: lsir or hsicr")
      ->check(CLI::IsMember({"lsir", "hsicr"}));
  cmd.add_option("--delta", flags.delta,
                 "Significance level for the four-outcome decision");
  cmd.add_option("--permutations", flags.permutations,
                 "Permutations per orientation (0 skips the tests)");
  cmd.add_flag("--literal-permutations", flags.literal_permutations,
               "Re-run full model selection per permutation (slow)");
  cmd.add_option("--threads", flags.threads,
                 "Worker threads (default: LSIR_THREADS or hardware)");
  cmd.add_option("--restarts", flags.restarts,
                 "Regression basis redraws per orientation");
  cmd.add_option("--max-iterations", flags.max_iterations,
                 "Descent iteration cap per fit");
  cmd.add_option("--tau-grid", flags.tau_grid,
                 "Absolute regression kernel widths (overrides multipliers)")
      ->delimiter(',');
  cmd.add_option("--gamma-grid", flags.gamma_grid,
                 "Ridge weights for the regression fit")
      ->delimiter(',');
  cmd.add_option("--sigma-grid", flags.sigma_grid,
                 "Absolute ratio-model kernel widths (overrides multipliers)")
      ->delimiter(',');
  cmd.add_option("--lambda-grid", flags.lambda_grid,
                 "Ridge weights for the ratio model")
      ->delimiter(',');
  cmd.add_option("--xi-grid", flags.xi_grid,
                 "Regularization grid for the kernel-independence engine")
      ->delimiter(',');
}

lsir::DirectionConfig build_config(const EngineFlags& flags) {
  lsir::DirectionConfig config;
  config.engine = lsir::parse_engine(flags.engine);
  config.delta = flags.delta;
  config.permutations = flags.permutations;
  config.literal_permutations = flags.literal_permutations;
  config.threads = flags.threads;
  config.lsir.restarts = flags.restarts;
  config.lsir.max_iterations = flags.max_iterations;
  if (!flags.tau_grid.empty()) config.lsir.tau_grid = flags.tau_grid;
  if (!flags.gamma_grid.empty()) config.lsir.gamma_grid = flags.gamma_grid;
  if (!flags.sigma_grid.empty()) config.lsir.lsmi.sigma_grid = flags.sigma_grid;
  if (!flags.lambda_grid.empty()) {
    config.lsir.lsmi.lambda_grid = flags.lambda_grid;
  }
  if (!flags.xi_grid.empty()) config.hsicr.xi_grid = flags.xi_grid;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal direction inference for additive-noise pairs"};
  app.set_version_flag("--version", lsir::kVersion);
  app.require_subcommand(1);

  // synth ----------------------------------------------------------------
  lsir::cli::SynthArgs synth;
  std::string family = "cubic-exp";
  long long synth_n = 300;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "Write a synthetic cause-effect CSV");
  synth_cmd->add_option("--family", family,
                        "cubic-exp, linear-gauss, or custom")
      ->required();
  synth_cmd->add_option("--n", synth_n, "Sample count");
  synth_cmd->add_option("--seed", synth.spec.seed, "Generator seed");
  synth_cmd->add_option("--noise-scale", synth.spec.noise_scale,
                        "Noise amplitude multiplier");
  synth_cmd
      ->add_option("--coeff", synth.spec.coefficients,
                   "Polynomial coefficients c0,c1,... for the custom family")
      ->delimiter(',');
  synth_cmd->add_option("--out", synth.out_path, "Output CSV path")->required();
  synth_cmd->add_flag("--header", synth.header, "Write a label header row");
  synth_cmd->add_option("--record", synth.record_path,
                        "Also write the run record here");

  // direction ------------------------------------------------------------
  lsir::cli::DirectionArgs direction;
  EngineFlags direction_flags;
  std::string direction_output = "text";
  CLI::App* direction_cmd = app.add_subcommand(
      "direction", "Infer the causal direction of one two-column CSV");
  direction_cmd->add_option("--input", direction.source.path, "Input CSV path")
      ->required();
  direction_cmd->add_option("--x-col", direction.source.x_column,
                            "0-based cause-candidate column");
  direction_cmd->add_option("--y-col", direction.source.y_column,
                            "0-based effect-candidate column");
  direction_cmd->add_flag("--header", direction.source.header,
                          "First CSV row holds labels");
  direction_cmd->add_option("--seed", direction.seed, "Engine seed");
  direction_cmd->add_option("--output", direction_output, "text or json")
      ->check(CLI::IsMember({"text", "json"}));
  direction_cmd->add_option("--record", direction.record_path,
                            "Also write the run record here");
  add_engine_flags(*direction_cmd, direction_flags);

  // benchmark ------------------------------------------------------------
  lsir::cli::BenchmarkArgs benchmark;
  EngineFlags benchmark_flags;
  CLI::App* benchmark_cmd = app.add_subcommand(
      "benchmark", "Run direction inference over a manifest of CSVs");
  benchmark_cmd
      ->add_option("--manifest", benchmark.manifest_path,
                   "Manifest file: one 'csv-path,truth[,label]' per line")
      ->required();
  benchmark_cmd->add_option("--out", benchmark.out_path, "Result table path")
      ->required();
  benchmark_cmd->add_option("--seed", benchmark.seed,
                            "Root seed (dataset k uses child k)");
  benchmark_cmd->add_option("--record", benchmark.record_path,
                            "Also write the run record here");
  add_engine_flags(*benchmark_cmd, benchmark_flags);

  // rerun ----------------------------------------------------------------
  lsir::cli::RerunArgs rerun;
  std::string rerun_output = "text";
  CLI::App* rerun_cmd =
      app.add_subcommand("rerun", "Replay a recorded run bit-identically");
  rerun_cmd->add_option("--record", rerun.record_path, "Run record to replay")
      ->required();
  rerun_cmd->add_option("--output", rerun_output,
                        "text or json (direction records)")
      ->check(CLI::IsMember({"text", "json"}));
  rerun_cmd->add_option("--out", rerun.out_override,
                        "Override the recorded output path");
  rerun_cmd->add_option("--record-out", rerun.record_out_path,
                        "Write a fresh record of the replay here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << lsir::kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& failure) {
    std::cerr << "error: " << failure.what() << '\n';
    std::cerr << app.help();
    return 2;
  }

  try {
    if (synth_cmd->parsed()) {
      synth.spec.family = lsir::parse_family(family);
      if (synth_n < 2) throw lsir::InvalidConfig("need at least two samples");
      synth.spec.n = static_cast<lsir::Index>(synth_n);
      return lsir::cli::run_synth(synth, std::cout, std::cerr);
    }
    if (direction_cmd->parsed()) {
      direction.source.kind = lsir::DataSource::Kind::csv;
      direction.config = build_config(direction_flags);
      direction.output = lsir::cli::parse_output_mode(direction_output);
      return lsir::cli::run_direction(direction, std::cout, std::cerr);
    }
    if (benchmark_cmd->parsed()) {
      benchmark.config = build_config(benchmark_flags);
      return lsir::cli::run_benchmark(benchmark, std::cout, std::cerr);
    }
    rerun.output = lsir::cli::parse_output_mode(rerun_output);
    return lsir::cli::run_rerun(rerun, std::cout, std::cerr);
  } catch (const lsir::Error& failure) {
    std::cerr << "error: " << failure.what() << '\n';
    return 2;
  }
}
