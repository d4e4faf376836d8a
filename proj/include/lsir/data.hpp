#pragma once

#include <cmath>
#include <cstdio>
#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lsir/errors.hpp"
#include "lsir/rng.hpp"
#include "lsir/types.hpp"

namespace lsir {

// Orientation of a cause-effect hypothesis: forward means the first
// coordinate drives the second.
enum class Direction { forward, backward };

inline const char* to_string(Direction d) {
  return d == Direction::forward ? "forward" : "backward";
}

// Paired scalar observations, optionally labelled and optionally carrying
// the generating direction (known for synthetic data).
struct SamplePairs {
  Vector x;
  Vector y;
  std::string x_label = "x";
  std::string y_label = "y";
  std::optional<Direction> truth;

  Index n() const { return x.size(); }
};

inline void validate(const SamplePairs& samples) {
  if (samples.x.size() != samples.y.size()) {
    throw InsufficientData("coordinate vectors differ in length");
  }
  if (samples.n() < 2) {
    throw InsufficientData("need at least two sample pairs");
  }
  if (!samples.x.allFinite() || !samples.y.allFinite()) {
    throw NonFiniteEvaluation("sample pairs contain non-finite values");
  }
}

// Swaps the roles of the two coordinates (used to score the backward
// orientation with the same machinery).
inline SamplePairs swapped(const SamplePairs& samples) {
  SamplePairs out;
  out.x = samples.y;
  out.y = samples.x;
  out.x_label = samples.y_label;
  out.y_label = samples.x_label;
  if (samples.truth) {
    out.truth = *samples.truth == Direction::forward ? Direction::backward
                                                     : Direction::forward;
  }
  return out;
}

// raw = shift + scale * z for a standardized value z.
struct AffineMap {
  double shift = 0.0;
  double scale = 1.0;

  double to_raw(double z) const { return shift + scale * z; }
  double to_standardized(double raw) const { return (raw - shift) / scale; }
};

struct StandardizeRecord {
  AffineMap x;
  AffineMap y;
};

namespace detail {

// Population (divide-by-n) moments; the convention is fixed throughout.
inline AffineMap standardizing_map(const Vector& values) {
  const double mean = values.mean();
  const double variance = (values.array() - mean).square().mean();
  if (variance == 0.0 || !std::isfinite(variance)) {
    throw ZeroVariance("coordinate has zero variance");
  }
  return AffineMap{mean, std::sqrt(variance)};
}

}  // namespace detail

// Centers and scales each coordinate to mean 0, variance 1 (population
// convention); the record maps fitted quantities back to the raw scale.
inline std::pair<SamplePairs, StandardizeRecord> standardize(
    const SamplePairs& samples) {
  validate(samples);
  StandardizeRecord record{detail::standardizing_map(samples.x),
                           detail::standardizing_map(samples.y)};
  SamplePairs out = samples;
  out.x = (samples.x.array() - record.x.shift) / record.x.scale;
  out.y = (samples.y.array() - record.y.shift) / record.y.scale;
  return {std::move(out), record};
}

inline SamplePairs destandardize(const SamplePairs& samples,
                                 const StandardizeRecord& record) {
  SamplePairs out = samples;
  out.x = record.x.shift + record.x.scale * samples.x.array();
  out.y = record.y.shift + record.y.scale * samples.y.array();
  return out;
}

enum class SynthFamily { cubic_exponential, linear_gaussian, custom };

inline SynthFamily parse_family(std::string_view name) {
  if (name == "cubic-exp" || name == "cubic_exponential") {
    return SynthFamily::cubic_exponential;
  }
  if (name == "linear-gauss" || name == "linear_gaussian") {
    return SynthFamily::linear_gaussian;
  }
  if (name == "custom") return SynthFamily::custom;
  throw UnknownFamily("unknown synthetic family: " + std::string(name));
}

inline const char* to_string(SynthFamily family) {
  switch (family) {
    case SynthFamily::cubic_exponential: return "cubic-exp";
    case SynthFamily::linear_gaussian: return "linear-gauss";
    case SynthFamily::custom: return "custom";
  }
  return "?";
}

// Recipe for a synthetic cause-effect dataset.
struct SynthSpec {
  SynthFamily family = SynthFamily::cubic_exponential;
  Index n = 300;
  std::uint64_t seed = 0;
  // Polynomial coefficients c_0..c_k for the custom family: f(x) = sum c_j x^j.
  std::vector<double> coefficients;
  double noise_scale = 1.0;
};

// Draws x_i ~ Uniform(-1, 1) and additive noise, interleaved per sample.
//   cubic_exponential: y = x^3 + e,        e ~ Exponential(1) - 1
//   linear_gaussian:   y = x + 0.5 e,      e ~ Normal(0, 1)
//   custom:            y = f(x) + scale*e, e ~ Exponential(1) - 1
// The exponential families have non-Gaussian noise, so the generating
// direction is detectable; linear_gaussian is the classic undetectable case.
inline SamplePairs generate(const SynthSpec& spec) {
  if (spec.n < 2) throw InsufficientData("need at least two sample pairs");
  RngStream rng(spec.seed);
  SamplePairs out;
  out.x.resize(spec.n);
  out.y.resize(spec.n);
  out.truth = Direction::forward;
  for (Index i = 0; i < spec.n; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    out.x[i] = x;
    switch (spec.family) {
      case SynthFamily::cubic_exponential:
        out.y[i] = x * x * x + spec.noise_scale * (rng.exponential() - 1.0);
        break;
      case SynthFamily::linear_gaussian:
        out.y[i] = x + 0.5 * spec.noise_scale * rng.normal();
        break;
      case SynthFamily::custom: {
        double fx = 0.0;
        double power = 1.0;
        for (const double c : spec.coefficients) {
          fx += c * power;
          power *= x;
        }
        out.y[i] = fx + spec.noise_scale * (rng.exponential() - 1.0);
        break;
      }
    }
  }
  return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      return fields;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

inline double parse_cell(std::string_view cell, long line, const char* role) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end || cell.empty()) {
    throw ParseError(line, role, "cannot parse '" + std::string(cell) + "' as a real");
  }
  if (!std::isfinite(value)) {
    throw ParseError(line, role, "non-finite value '" + std::string(cell) + "'");
  }
  return value;
}

}  // namespace detail

// Reads two columns (0-based indices) of a comma-separated file.  Line
// numbers in errors are 1-based physical lines.  A leading UTF-8 BOM is
// tolerated; blank lines are skipped.
inline SamplePairs load_csv(const std::string& path, Index x_column = 0,
                            Index y_column = 1, bool header = false) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  SamplePairs out;
  std::vector<double> xs;
  std::vector<double> ys;
  std::string line;
  long line_number = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_number;
    std::string_view view = line;
    if (first_content_line && view.size() >= 3 &&
        view.substr(0, 3) == "\xef\xbb\xbf") {
      view.remove_prefix(3);
    }
    if (detail::trim(view).empty()) continue;
    const auto fields = detail::split_fields(view);
    const Index width = static_cast<Index>(fields.size());
    if (x_column >= width || y_column >= width) {
      throw MissingColumn("line " + std::to_string(line_number) + " has " +
                          std::to_string(width) + " columns, need " +
                          std::to_string(std::max(x_column, y_column) + 1));
    }
    if (first_content_line && header) {
      out.x_label = std::string(fields[static_cast<std::size_t>(x_column)]);
      out.y_label = std::string(fields[static_cast<std::size_t>(y_column)]);
      first_content_line = false;
      continue;
    }
    first_content_line = false;
    xs.push_back(detail::parse_cell(fields[static_cast<std::size_t>(x_column)],
                                    line_number, "x"));
    ys.push_back(detail::parse_cell(fields[static_cast<std::size_t>(y_column)],
                                    line_number, "y"));
  }
  out.x = Eigen::Map<const Vector>(xs.data(), static_cast<Index>(xs.size()));
  out.y = Eigen::Map<const Vector>(ys.data(), static_cast<Index>(ys.size()));
  validate(out);
  return out;
}

// Writes pairs with 17 significant digits so a load round-trips exactly.
inline void save_csv(const std::string& path, const SamplePairs& samples,
                     bool header = false) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  if (header) out << samples.x_label << ',' << samples.y_label << '\n';
  char buffer[64];
  for (Index i = 0; i < samples.n(); ++i) {
    std::snprintf(buffer, sizeof buffer, "%.17g", samples.x[i]);
    out << buffer << ',';
    std::snprintf(buffer, sizeof buffer, "%.17g", samples.y[i]);
    out << buffer << '\n';
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace lsir
