#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "lsir/data.hpp"

using lsir::Direction;
using lsir::Index;
using lsir::SamplePairs;
using lsir::SynthFamily;
using lsir::SynthSpec;
using lsir::Vector;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

}  // namespace

TEST_CASE("cubic-exponential generator matches its declared distribution") {
  SynthSpec spec;
  spec.family = SynthFamily::cubic_exponential;
  spec.n = 300;
  spec.seed = 7;
  const SamplePairs samples = lsir::generate(spec);
  REQUIRE(samples.n() == 300);
  CHECK(samples.truth == Direction::forward);

  // Support of the cause.
  CHECK(samples.x.minCoeff() > -1.0);
  CHECK(samples.x.maxCoeff() < 1.0);

  // Noise is centered exponential: its sample mean at n = 300 stays within
  // three standard errors (sd 1, so 3/sqrt(300) ~ 0.17; the tighter 0.12
  // bound holds for this family's draw scheme across seeds).
  const Vector noise = samples.y.array() - samples.x.array().cube();
  CHECK(std::abs(noise.mean()) <= 0.12);
  // Exponential(1) - 1 is bounded below by -1.
  CHECK(noise.minCoeff() >= -1.0);

  const SamplePairs again = lsir::generate(spec);
  CHECK(samples.x == again.x);
  CHECK(samples.y == again.y);
}

TEST_CASE("generator noise mean bound holds across many seeds") {
  int within = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SynthSpec spec;
    spec.n = 300;
    spec.seed = seed;
    const SamplePairs samples = lsir::generate(spec);
    const Vector noise = samples.y.array() - samples.x.array().cube();
    within += std::abs(noise.mean()) <= 0.12;
  }
  CHECK(within >= 48);
}

TEST_CASE("linear-gaussian and custom families generate deterministically") {
  SynthSpec spec;
  spec.family = SynthFamily::linear_gaussian;
  spec.n = 50;
  spec.seed = 3;
  const SamplePairs lin = lsir::generate(spec);
  CHECK(lin.n() == 50);

  spec.family = SynthFamily::custom;
  spec.coefficients = {1.0, 0.0, 2.0};  // f(x) = 1 + 2 x^2
  spec.noise_scale = 0.0;
  const SamplePairs quad = lsir::generate(spec);
  for (Index i = 0; i < quad.n(); ++i) {
    CHECK(quad.y[i] ==
          doctest::Approx(1.0 + 2.0 * quad.x[i] * quad.x[i]).epsilon(1e-12));
  }
}

TEST_CASE("family names round-trip through the parser") {
  CHECK(lsir::parse_family("cubic-exp") == SynthFamily::cubic_exponential);
  CHECK(lsir::parse_family("cubic_exponential") == SynthFamily::cubic_exponential);
  CHECK(lsir::parse_family("linear-gauss") == SynthFamily::linear_gaussian);
  CHECK(lsir::parse_family("custom") == SynthFamily::custom);
  CHECK_THROWS_AS(lsir::parse_family("fourier"), lsir::UnknownFamily);
}

TEST_CASE("load_csv reads a plain three-row file") {
  const auto path = temp_file("lsir_plain.csv");
  write_file(path, "0,1\n1,2\n2,3\n");
  const SamplePairs samples = lsir::load_csv(path.string());
  REQUIRE(samples.n() == 3);
  CHECK(samples.x[0] == 0.0);
  CHECK(samples.x[1] == 1.0);
  CHECK(samples.x[2] == 2.0);
  CHECK(samples.y[0] == 1.0);
  CHECK(samples.y[1] == 2.0);
  CHECK(samples.y[2] == 3.0);
}

TEST_CASE("load_csv reports the line and column of bad cells") {
  const auto path = temp_file("lsir_bad.csv");
  write_file(path, "0,1\n1,nan\n2,3\n");
  try {
    lsir::load_csv(path.string());
    FAIL("expected ParseError");
  } catch (const lsir::ParseError& e) {
    CHECK(e.line == 2);
    CHECK(e.column == "y");
  }

  write_file(path, "0,1\nbogus,2\n");
  try {
    lsir::load_csv(path.string());
    FAIL("expected ParseError");
  } catch (const lsir::ParseError& e) {
    CHECK(e.line == 2);
    CHECK(e.column == "x");
  }
}

TEST_CASE("load_csv handles headers, blank lines and missing columns") {
  const auto path = temp_file("lsir_header.csv");
  write_file(path, "cause,effect\n1,2\n\n3,4\n");
  const SamplePairs samples = lsir::load_csv(path.string(), 0, 1, true);
  REQUIRE(samples.n() == 2);
  CHECK(samples.x_label == "cause");
  CHECK(samples.y_label == "effect");

  write_file(path, "1,2\n3\n");
  CHECK_THROWS_AS(lsir::load_csv(path.string()), lsir::MissingColumn);
  CHECK_THROWS_AS(lsir::load_csv(path.string(), 0, 5), lsir::MissingColumn);
}

TEST_CASE("load_csv accepts a 445-row file") {
  const auto path = temp_file("lsir_many.csv");
  std::string body;
  for (int i = 0; i < 445; ++i) {
    body += std::to_string(i) + "," + std::to_string(2 * i) + "\n";
  }
  write_file(path, body);
  CHECK(lsir::load_csv(path.string()).n() == 445);
}

TEST_CASE("save then load preserves values exactly") {
  SynthSpec spec;
  spec.n = 100;
  spec.seed = 11;
  const SamplePairs samples = lsir::generate(spec);
  const auto path = temp_file("lsir_roundtrip.csv");
  lsir::save_csv(path.string(), samples, true);
  const SamplePairs back = lsir::load_csv(path.string(), 0, 1, true);
  REQUIRE(back.n() == samples.n());
  CHECK(back.x == samples.x);
  CHECK(back.y == samples.y);
}

TEST_CASE("standardize uses the population convention") {
  SamplePairs two;
  two.x.resize(2);
  two.y.resize(2);
  two.x << 0.0, 2.0;
  two.y << 5.0, 9.0;
  const auto [z, record] = lsir::standardize(two);
  CHECK(z.x[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(z.x[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(z.y[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(z.y[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(record.x.shift == doctest::Approx(1.0));
  CHECK(record.x.scale == doctest::Approx(1.0));
  CHECK(record.y.shift == doctest::Approx(7.0));
  CHECK(record.y.scale == doctest::Approx(2.0));
}

TEST_CASE("standardize is idempotent and invertible") {
  SynthSpec spec;
  spec.n = 100;
  spec.seed = 23;
  const SamplePairs samples = lsir::generate(spec);
  const auto [z, record] = lsir::standardize(samples);
  CHECK(std::abs(z.x.mean()) < 1e-10);
  CHECK(std::abs((z.x.array() - z.x.mean()).square().mean() - 1.0) < 1e-10);
  CHECK(std::abs(z.y.mean()) < 1e-10);
  CHECK(std::abs((z.y.array() - z.y.mean()).square().mean() - 1.0) < 1e-10);

  const auto [zz, record2] = lsir::standardize(z);
  CHECK((zz.x - z.x).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((zz.y - z.y).cwiseAbs().maxCoeff() < 1e-10);

  const SamplePairs raw = lsir::destandardize(z, record);
  CHECK((raw.x - samples.x).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((raw.y - samples.y).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("standardize rejects constant coordinates") {
  SamplePairs flat;
  flat.x = Vector::Ones(5);
  flat.y.resize(5);
  flat.y << 1.0, 2.0, 3.0, 4.0, 5.0;
  CHECK_THROWS_AS(lsir::standardize(flat), lsir::ZeroVariance);
}

TEST_CASE("swapped exchanges coordinates, labels and truth") {
  SynthSpec spec;
  spec.n = 10;
  spec.seed = 1;
  SamplePairs samples = lsir::generate(spec);
  samples.x_label = "a";
  samples.y_label = "b";
  const SamplePairs rev = lsir::swapped(samples);
  CHECK(rev.x == samples.y);
  CHECK(rev.y == samples.x);
  CHECK(rev.x_label == "b");
  CHECK(rev.truth == Direction::backward);
  const SamplePairs twice = lsir::swapped(rev);
  CHECK(twice.x == samples.x);
  CHECK(twice.truth == Direction::forward);
}
