#pragma once

// In-process implementations of the command-line verbs.  Each run_*
// function does everything except flag parsing: it validates its
// arguments, executes, writes any output files, prints to the given
// streams, and returns the process exit code (0 success, 2 bad
// configuration or unreadable/unparsable input, 3 engine failure).
// Putting the logic here keeps the binary's main() a thin flag parser and
// lets tests drive commands without spawning processes.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lsir/causal.hpp"
#include "lsir/data.hpp"
#include "lsir/errors.hpp"
#include "lsir/parallel.hpp"
#include "lsir/report.hpp"
#include "lsir/rng.hpp"

namespace lsir::cli {

enum class OutputMode { text, json };

inline OutputMode parse_output_mode(std::string_view name) {
  if (name == "text") return OutputMode::text;
  if (name == "json") return OutputMode::json;
  throw InvalidConfig("unknown output mode: " + std::string(name) +
                      " (expected text or json)");
}

namespace detail {

inline std::string format_number(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.12g", value);
  return buffer;
}

// Tables print p-values below the reporting floor as "<1e-3"; JSON output
// always keeps the exact value.
inline std::string format_p(double p) {
  if (p < 1e-3) return "<1e-3";
  return format_number(p);
}

inline double elapsed_seconds(
    const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace detail

// ---------------------------------------------------------------- synth --

struct SynthArgs {
  SynthSpec spec;
  std::string out_path;
  bool header = false;
  std::string record_path;  // empty: no record written
};

inline Json make_record(const SynthArgs& args) {
  Json document = record::envelope("synth");
  document["synth"] = record::to_json(args.spec);
  document["out"] = args.out_path;
  document["header"] = args.header;
  return document;
}

inline int run_synth(const SynthArgs& args, std::ostream& out,
                     std::ostream& err) {
  SamplePairs samples;
  try {
    samples = generate(args.spec);
  } catch (const Error& failure) {
    err << "error: " << failure.what() << '\n';
    return 2;
  }
  try {
    save_csv(args.out_path, samples, args.header);
    if (!args.record_path.empty()) {
      write_record(args.record_path, make_record(args));
    }
  } catch (const Error& failure) {
    err << "error: " << failure.what() << '\n';
    return 3;
  }
  out << "wrote " << samples.n() << " pairs to " << args.out_path << '\n';
  return 0;
}

// ------------------------------------------------------------ direction --

struct DirectionArgs {
  DataSource source;
  DirectionConfig config;
  std::uint64_t seed = 0;
  OutputMode output = OutputMode::text;
  std::string record_path;  // empty: no record written
};

inline Json make_record(const DirectionArgs& args,
                        const DirectionReport& report, double seconds) {
  Json document = record::envelope("direction");
  document["source"] = record::to_json(args.source);
  document["config"] = record::to_json(args.config);
  document["seed"] = args.seed;
  document["report"] = record::to_json(report);
  document["timings"] = Json{{"seconds", seconds}};
  return document;
}

inline void print_report(const DirectionReport& report, std::ostream& out) {
  out << "engine: " << to_string(report.engine) << '\n';
  out << "permutations: " << report.permutations << '\n';
  if (report.permutations >= 1) {
    out << "delta: " << detail::format_number(report.delta) << '\n';
    out << "p_forward: " << detail::format_p(report.p_forward) << '\n';
    out << "p_backward: " << detail::format_p(report.p_backward) << '\n';
  }
  out << "score_forward: " << detail::format_number(report.score_forward)
      << '\n';
  out << "score_backward: " << detail::format_number(report.score_backward)
      << '\n';
  if (report.permutations >= 1) {
    out << "decision: " << to_string(report.decision) << '\n';
    out << "table_decision: " << to_string(report.table_decision) << '\n';
  }
  out << "simplified_decision: " << to_string(report.simplified_decision)
      << '\n';
  out << "score_decision: " << to_string(report.score_decision) << '\n';
}

inline int run_direction(const DirectionArgs& args, std::ostream& out,
                         std::ostream& err) {
  SamplePairs samples;
  try {
    validate(args.config);
    samples = resolve(args.source);
  } catch (const Error& failure) {
    err << "error: " << failure.what() << '\n';
    return 2;
  }

  DirectionReport report;
  double seconds = 0.0;
  try {
    const auto start = std::chrono::steady_clock::now();
    report = infer_direction(samples, args.config, RngStream(args.seed));
    seconds = detail::elapsed_seconds(start);
  } catch (const std::exception& failure) {
    err << "engine error: " << failure.what() << '\n';
    return 3;
  }

  try {
    const Json document = make_record(args, report, seconds);
    if (args.output == OutputMode::json) {
      out << document.dump(2) << '\n';
    } else {
      print_report(report, out);
    }
    if (!args.record_path.empty()) write_record(args.record_path, document);
  } catch (const Error& failure) {
    err << "error: " << failure.what() << '\n';
    return 3;
  }
  return 0;
}

// ------------------------------------------------------------ benchmark --

// One manifest line: a CSV path (relative paths resolve against the
// manifest's directory), the ground-truth direction, and an optional
// label (defaults to the file stem).
struct ManifestEntry {
  std::string path;
  Direction truth = Direction::forward;
  std::string label;
};

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  const std::filesystem::path base =
      std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  long line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string_view view = lsir::detail::trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto fields = lsir::detail::split_fields(view);
    if (fields.size() < 2) {
      throw ParseError(line_number, "manifest",
                       "expected 'csv-path,truth[,label]'");
    }
    ManifestEntry entry;
    entry.path = (base / std::string(fields[0])).string();
    const std::string_view truth = fields[1];
    if (truth == "forward") {
      entry.truth = Direction::forward;
    } else if (truth == "backward") {
      entry.truth = Direction::backward;
    } else {
      throw ParseError(line_number, "manifest",
                       "truth must be forward or backward, got '" +
                           std::string(truth) + "'");
    }
    entry.label = fields.size() >= 3 && !fields[2].empty()
                      ? std::string(fields[2])
                      : std::filesystem::path(std::string(fields[0]))
                            .stem()
                            .string();
    entries.push_back(std::move(entry));
  }
  if (entries.empty()) {
    throw InvalidConfig("manifest '" + path + "' lists no datasets");
  }
  return entries;
}

struct BenchmarkArgs {
  std::string manifest_path;
  std::string out_path;
  DirectionConfig config;
  std::uint64_t seed = 0;
  std::string record_path;  // empty: no record written
};

namespace detail {

struct BenchmarkRow {
  ManifestEntry entry;
  bool failed = false;
  std::string error;
  DirectionReport report;
  bool table_correct = false;
  bool simplified_correct = false;
};

inline Json to_json(const BenchmarkRow& row) {
  Json j{{"label", row.entry.label},
         {"path", row.entry.path},
         {"truth", to_string(row.entry.truth)}};
  if (row.failed) {
    j["error"] = row.error;
  } else {
    j["report"] = record::to_json(row.report);
    j["table_correct"] = row.table_correct;
    j["simplified_correct"] = row.simplified_correct;
  }
  return j;
}

inline std::string sanitize_cell(std::string text) {
  for (char& c : text) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return text;
}

}  // namespace detail

// Runs every manifest dataset through infer_direction (dataset k seeded
// with RngStream(seed).child(k)), writes the result table, and prints the
// per-variant summaries.  A failing dataset is recorded in its row and
// counted as incorrect; the run continues.
inline int run_benchmark(const BenchmarkArgs& args, std::ostream& out,
                         std::ostream& err) {
  std::vector<ManifestEntry> entries;
  try {
    validate(args.config);
    entries = load_manifest(args.manifest_path);
  } catch (const Error& failure) {
    err << "error: " << failure.what() << '\n';
    return 2;
  }

  const auto start = std::chrono::steady_clock::now();
  const Index count = static_cast<Index>(entries.size());
  std::vector<detail::BenchmarkRow> rows(entries.size());
  // Datasets fan out across workers; each inner run stays single-threaded
  // so the worker split never exceeds the configured thread budget.
  DirectionConfig per_dataset = args.config;
  const int dataset_threads = count > 1 ? args.config.threads : 1;
  if (dataset_threads > 1) per_dataset.threads = 1;
  const RngStream root(args.seed);
  parallel_for(0, count, dataset_threads, [&](Index k) {
    detail::BenchmarkRow& row = rows[static_cast<std::size_t>(k)];
    row.entry = entries[static_cast<std::size_t>(k)];
    try {
      const SamplePairs samples = load_csv(row.entry.path);
      row.report = infer_direction(samples, per_dataset,
                                   root.child(static_cast<std::uint64_t>(k)));
      const Direction truth = row.entry.truth;
      const CausalDecision wanted = truth == Direction::forward
                                        ? CausalDecision::forward
                                        : CausalDecision::backward;
      row.table_correct = row.report.table_decision == wanted;
      row.simplified_correct = row.report.simplified_decision == truth;
    } catch (const std::exception& failure) {
      row.failed = true;
      row.error = failure.what();
    }
  });
  const double seconds = detail::elapsed_seconds(start);

  int table_correct = 0;
  int simplified_correct = 0;
  for (const auto& row : rows) {
    table_correct += row.table_correct;
    simplified_correct += row.simplified_correct;
  }
  const int total = static_cast<int>(rows.size());

  try {
    std::ofstream table(args.out_path);
    if (!table) throw Error("cannot write '" + args.out_path + "'");
    table << "# engine=" << to_string(args.config.engine)
          << " permutations=" << args.config.permutations
          << " delta=" << detail::format_number(args.config.delta)
          << " seed=" << args.seed << '\n';
    table << "label,truth,p_forward,p_backward,score_forward,score_backward,"
             "table_decision,simplified_decision,table_correct,"
             "simplified_correct,error\n";
    for (const auto& row : rows) {
      table << detail::sanitize_cell(row.entry.label) << ','
            << to_string(row.entry.truth) << ',';
      if (row.failed) {
        table << ",,,,,,0,0," << detail::sanitize_cell(row.error) << '\n';
        continue;
      }
      const bool tested = row.report.permutations >= 1;
      table << (tested ? detail::format_p(row.report.p_forward) : "") << ','
            << (tested ? detail::format_p(row.report.p_backward) : "") << ','
            << detail::format_number(row.report.score_forward) << ','
            << detail::format_number(row.report.score_backward) << ','
            << to_string(row.report.table_decision) << ','
            << to_string(row.report.simplified_decision) << ','
            << row.table_correct << ',' << row.simplified_correct << ",\n";
    }
    table << "# table_decision correct " << table_correct << " / " << total
          << '\n';
    table << "# simplified_decision correct " << simplified_correct << " / "
          << total << '\n';
    if (!table) throw Error("write to '" + args.out_path + "' failed");

    if (!args.record_path.empty()) {
      Json document = record::envelope("benchmark");
      document["manifest"] = args.manifest_path;
      document["out"] = args.out_path;
      document["config"] = record::to_json(args.config);
      document["seed"] = args.seed;
      Json row_array = Json::array();
      for (const auto& row : rows) row_array.push_back(detail::to_json(row));
      document["rows"] = std::move(row_array);
      document["summary"] = Json{{"total", total},
                                 {"table_correct", table_correct},
                                 {"simplified_correct", simplified_correct}};
      document["timings"] = Json{{"seconds", seconds}};
      write_record(args.record_path, document);
    }
  } catch (const Error& failure) {
    err << "error: " << failure.what() << '\n';
    return 3;
  }

  out << "benchmarked " << total << " datasets -> " << args.out_path << '\n';
  out << "table_decision correct " << table_correct << " / " << total << '\n';
  out << "simplified_decision correct " << simplified_correct << " / " << total
      << '\n';
  return 0;
}

// ---------------------------------------------------------------- rerun --

struct RerunArgs {
  std::string record_path;
  OutputMode output = OutputMode::text;
  std::string out_override;     // synth/benchmark output target
  std::string record_out_path;  // fresh record; empty: none
};

// Reconstructs the original command's arguments from its record and runs
// it again; with unchanged inputs every reported number reproduces
// bit-identically (timings excepted).
inline int run_rerun(const RerunArgs& args, std::ostream& out,
                     std::ostream& err) {
  Json document;
  std::string command;
  try {
    document = read_record(args.record_path);
    command = document.at("command").get<std::string>();
    if (command == "synth") {
      SynthArgs synth;
      synth.spec = record::synth_spec_from_json(document.at("synth"));
      synth.out_path = args.out_override.empty()
                           ? document.at("out").get<std::string>()
                           : args.out_override;
      synth.header = document.at("header").get<bool>();
      synth.record_path = args.record_out_path;
      return run_synth(synth, out, err);
    }
    if (command == "direction") {
      DirectionArgs direction;
      direction.source = record::source_from_json(document.at("source"));
      direction.config =
          record::direction_config_from_json(document.at("config"));
      direction.seed = document.at("seed").get<std::uint64_t>();
      direction.output = args.output;
      direction.record_path = args.record_out_path;
      return run_direction(direction, out, err);
    }
    if (command == "benchmark") {
      BenchmarkArgs benchmark;
      benchmark.manifest_path = document.at("manifest").get<std::string>();
      benchmark.out_path = args.out_override.empty()
                               ? document.at("out").get<std::string>()
                               : args.out_override;
      benchmark.config =
          record::direction_config_from_json(document.at("config"));
      benchmark.seed = document.at("seed").get<std::uint64_t>();
      benchmark.record_path = args.record_out_path;
      return run_benchmark(benchmark, out, err);
    }
  } catch (const Json::exception& failure) {
    err << "error: malformed record: " << failure.what() << '\n';
    return 2;
  } catch (const Error& failure) {
    err << "error: " << failure.what() << '\n';
    return 2;
  }
  err << "error: record has unknown command '" << command << "'\n";
  return 2;
}

}  // namespace lsir::cli
