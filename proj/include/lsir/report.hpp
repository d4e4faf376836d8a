#pragma once

// Run records: a JSON snapshot of one command invocation -- the command
// name, the full engine configuration, the data source, the seed and every
// reported number -- sufficient to re-run the command and reproduce those
// numbers bit-identically.  Keys are emitted in sorted order and doubles
// round-trip exactly, so two identical runs serialize to identical bytes;
// only the "timings" object varies between reruns and comparisons must
// ignore it.

#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lsir/causal.hpp"
#include "lsir/data.hpp"
#include "lsir/errors.hpp"
#include "lsir/hsicr.hpp"
#include "lsir/lsir.hpp"
#include "lsir/lsmi.hpp"
#include "lsir/numerics.hpp"
#include "lsir/version.hpp"

namespace lsir {

using Json = nlohmann::json;

// Where a command's sample pairs came from; either kind resolves
// deterministically (a seeded generator or a fixed file).
struct DataSource {
  enum class Kind { synth, csv };
  Kind kind = Kind::synth;
  SynthSpec synth;
  std::string path;
  Index x_column = 0;
  Index y_column = 1;
  bool header = false;
};

inline SamplePairs resolve(const DataSource& source) {
  if (source.kind == DataSource::Kind::synth) return generate(source.synth);
  return load_csv(source.path, source.x_column, source.y_column, source.header);
}

namespace record {

inline Json to_json(const ArmijoParams& armijo) {
  return Json{{"initial_step", armijo.initial_step},
              {"shrink", armijo.shrink},
              {"sufficient_decrease", armijo.sufficient_decrease},
              {"min_step", armijo.min_step}};
}

inline ArmijoParams armijo_from_json(const Json& j) {
  ArmijoParams armijo;
  armijo.initial_step = j.at("initial_step").get<double>();
  armijo.shrink = j.at("shrink").get<double>();
  armijo.sufficient_decrease = j.at("sufficient_decrease").get<double>();
  armijo.min_step = j.at("min_step").get<double>();
  return armijo;
}

inline Json to_json(const LsmiConfig& config) {
  return Json{{"basis_cap", config.basis_cap},
              {"sigma_grid", config.sigma_grid},
              {"sigma_multipliers", config.sigma_multipliers},
              {"lambda_grid", config.lambda_grid},
              {"folds", config.folds},
              {"standardize", config.standardize}};
}

inline LsmiConfig lsmi_config_from_json(const Json& j) {
  LsmiConfig config;
  config.basis_cap = j.at("basis_cap").get<Index>();
  config.sigma_grid = j.at("sigma_grid").get<std::vector<double>>();
  config.sigma_multipliers = j.at("sigma_multipliers").get<std::vector<double>>();
  config.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
  config.folds = j.at("folds").get<int>();
  config.standardize = j.at("standardize").get<bool>();
  return config;
}

inline Json to_json(const LsirConfig& config) {
  return Json{{"basis_cap", config.basis_cap},
              {"tau_grid", config.tau_grid},
              {"tau_multipliers", config.tau_multipliers},
              {"gamma_grid", config.gamma_grid},
              {"folds", config.folds},
              {"restarts", config.restarts},
              {"max_iterations", config.max_iterations},
              {"tolerance", config.tolerance},
              {"patience", config.patience},
              {"patience_tolerance", config.patience_tolerance},
              {"reselect_every", config.reselect_every},
              {"armijo", to_json(config.armijo)},
              {"literal_gradient", config.literal_gradient},
              {"standardize", config.standardize},
              {"lsmi", to_json(config.lsmi)}};
}

inline LsirConfig lsir_config_from_json(const Json& j) {
  LsirConfig config;
  config.basis_cap = j.at("basis_cap").get<Index>();
  config.tau_grid = j.at("tau_grid").get<std::vector<double>>();
  config.tau_multipliers = j.at("tau_multipliers").get<std::vector<double>>();
  config.gamma_grid = j.at("gamma_grid").get<std::vector<double>>();
  config.folds = j.at("folds").get<int>();
  config.restarts = j.at("restarts").get<int>();
  config.max_iterations = j.at("max_iterations").get<int>();
  config.tolerance = j.at("tolerance").get<double>();
  config.patience = j.at("patience").get<int>();
  config.patience_tolerance = j.at("patience_tolerance").get<double>();
  config.reselect_every = j.at("reselect_every").get<int>();
  config.armijo = armijo_from_json(j.at("armijo"));
  config.literal_gradient = j.at("literal_gradient").get<bool>();
  config.standardize = j.at("standardize").get<bool>();
  config.lsmi = lsmi_config_from_json(j.at("lsmi"));
  return config;
}

inline Json to_json(const HsicrConfig& config) {
  return Json{{"xi_grid", config.xi_grid},
              {"folds", config.folds},
              {"max_iterations", config.max_iterations},
              {"gradient_tolerance", config.gradient_tolerance},
              {"armijo", to_json(config.armijo)}};
}

inline HsicrConfig hsicr_config_from_json(const Json& j) {
  HsicrConfig config;
  config.xi_grid = j.at("xi_grid").get<std::vector<double>>();
  config.folds = j.at("folds").get<int>();
  config.max_iterations = j.at("max_iterations").get<int>();
  config.gradient_tolerance = j.at("gradient_tolerance").get<double>();
  config.armijo = armijo_from_json(j.at("armijo"));
  return config;
}

inline Json to_json(const DirectionConfig& config) {
  return Json{{"engine", to_string(config.engine)},
              {"delta", config.delta},
              {"permutations", config.permutations},
              {"literal_permutations", config.literal_permutations},
              {"threads", config.threads},
              {"lsir", to_json(config.lsir)},
              {"hsicr", to_json(config.hsicr)}};
}

inline DirectionConfig direction_config_from_json(const Json& j) {
  DirectionConfig config;
  config.engine = parse_engine(j.at("engine").get<std::string>());
  config.delta = j.at("delta").get<double>();
  config.permutations = j.at("permutations").get<int>();
  config.literal_permutations = j.at("literal_permutations").get<bool>();
  config.threads = j.at("threads").get<int>();
  config.lsir = lsir_config_from_json(j.at("lsir"));
  config.hsicr = hsicr_config_from_json(j.at("hsicr"));
  return config;
}

inline Json to_json(const SynthSpec& spec) {
  return Json{{"family", to_string(spec.family)},
              {"n", spec.n},
              {"seed", spec.seed},
              {"coefficients", spec.coefficients},
              {"noise_scale", spec.noise_scale}};
}

inline SynthSpec synth_spec_from_json(const Json& j) {
  SynthSpec spec;
  spec.family = parse_family(j.at("family").get<std::string>());
  spec.n = j.at("n").get<Index>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.coefficients = j.at("coefficients").get<std::vector<double>>();
  spec.noise_scale = j.at("noise_scale").get<double>();
  return spec;
}

inline Json to_json(const DataSource& source) {
  if (source.kind == DataSource::Kind::synth) {
    return Json{{"kind", "synth"}, {"synth", to_json(source.synth)}};
  }
  return Json{{"kind", "csv"},
              {"path", source.path},
              {"x_column", source.x_column},
              {"y_column", source.y_column},
              {"header", source.header}};
}

inline DataSource source_from_json(const Json& j) {
  DataSource source;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "synth") {
    source.kind = DataSource::Kind::synth;
    source.synth = synth_spec_from_json(j.at("synth"));
  } else if (kind == "csv") {
    source.kind = DataSource::Kind::csv;
    source.path = j.at("path").get<std::string>();
    source.x_column = j.at("x_column").get<Index>();
    source.y_column = j.at("y_column").get<Index>();
    source.header = j.at("header").get<bool>();
  } else {
    throw InvalidConfig("unknown data-source kind: " + kind);
  }
  return source;
}

inline Json to_json(const PermutationTestResult& test) {
  return Json{{"observed", test.observed},
              {"permutations", test.permutations},
              {"permuted", test.permuted}};
}

// p-values are NaN when no permutations were run; JSON has no NaN, so
// those keys are simply absent and read back as NaN.
inline Json to_json(const DirectionReport& report) {
  Json j{{"engine", to_string(report.engine)},
         {"delta", report.delta},
         {"permutations", report.permutations},
         {"score_forward", report.score_forward},
         {"score_backward", report.score_backward},
         {"decision", to_string(report.decision)},
         {"table_decision", to_string(report.table_decision)},
         {"simplified_decision", to_string(report.simplified_decision)},
         {"score_decision", to_string(report.score_decision)}};
  if (report.permutations >= 1) {
    j["p_forward"] = report.p_forward;
    j["p_backward"] = report.p_backward;
    j["test_forward"] = to_json(report.test_forward);
    j["test_backward"] = to_json(report.test_backward);
  }
  return j;
}

inline Json envelope(const std::string& command) {
  return Json{{"schema_version", kRecordSchemaVersion},
              {"artifact_version", kVersion},
              {"command", command}};
}

}  // namespace record

inline void write_record(const std::string& path, const Json& document) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << document.dump(2) << '\n';
  if (!out) throw Error("write to '" + path + "' failed");
}

inline Json read_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  Json document;
  try {
    in >> document;
  } catch (const Json::parse_error& failure) {
    throw Error("'" + path + "' is not valid JSON: " + failure.what());
  }
  if (!document.is_object() || !document.contains("command")) {
    throw InvalidConfig("'" + path + "' is not a run record (no command key)");
  }
  const int schema = document.value("schema_version", -1);
  if (schema != kRecordSchemaVersion) {
    throw InvalidConfig("unsupported record schema version " +
                        std::to_string(schema));
  }
  return document;
}

}  // namespace lsir
