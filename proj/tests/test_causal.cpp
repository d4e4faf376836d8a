#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstddef>
#include <vector>

#include "doctest.h"
#include "lsir/causal.hpp"
#include "lsir/data.hpp"
#include "lsir/rng.hpp"

using lsir::CausalDecision;
using lsir::Direction;
using lsir::DirectionConfig;
using lsir::DirectionReport;
using lsir::EngineKind;
using lsir::Index;
using lsir::PermutationTestResult;
using lsir::RngStream;
using lsir::SamplePairs;
using lsir::Vector;

namespace {

Vector random_vector(RngStream& rng, Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

SamplePairs cubic_toy(std::uint64_t seed, Index n) {
  lsir::SynthSpec spec;
  spec.family = lsir::SynthFamily::cubic_exponential;
  spec.n = n;
  spec.seed = seed;
  return lsir::generate(spec);
}

// Replays a fixed list of statistic values: first call is the observed
// evaluation, the rest follow in permutation order (single-threaded).
struct ScriptedStatistic {
  std::vector<double> values;
  mutable std::size_t next = 0;

  double operator()(const Vector&, const Vector&, const RngStream&) const {
    return values.at(next++);
  }
};

CausalDecision flipped(CausalDecision decision) {
  if (decision == CausalDecision::forward) return CausalDecision::backward;
  if (decision == CausalDecision::backward) return CausalDecision::forward;
  return decision;
}

Direction flipped(Direction direction) {
  return direction == Direction::forward ? Direction::backward
                                         : Direction::forward;
}

}  // namespace

TEST_CASE("add-one rank rule reproduces hand-counted p-values") {
  const Vector x = Vector::Zero(4);
  const Vector e = Vector::Zero(4);

  // Two of {0.1, 0.2, 0.3} are >= the observed 0.15, so p = (1+2)/(1+3).
  const ScriptedStatistic middle{{0.15, 0.1, 0.2, 0.3}};
  const PermutationTestResult mid =
      lsir::permutation_test(x, e, middle, 3, RngStream(0), 1);
  CHECK(mid.observed == 0.15);
  CHECK(mid.p_value == 0.75);
  REQUIRE(mid.permuted.size() == 3);
  CHECK(mid.permuted[0] == 0.1);
  CHECK(mid.permuted[1] == 0.2);
  CHECK(mid.permuted[2] == 0.3);

  const ScriptedStatistic top{{1.0, 0.0, 0.0, 0.0}};
  CHECK(lsir::permutation_test(x, e, top, 3, RngStream(0), 1).p_value == 0.25);

  const ScriptedStatistic bottom{{-1.0, 0.0, 0.0, 0.0}};
  CHECK(lsir::permutation_test(x, e, bottom, 3, RngStream(0), 1).p_value == 1.0);

  CHECK_THROWS_AS(lsir::permutation_test(x, e, top, 0, RngStream(0), 1),
                  lsir::InvalidConfig);
}

TEST_CASE("frozen statistics reproduce their measured values bit-for-bit") {
  RngStream rng(17);
  const Index n = 60;
  const Vector x = random_vector(rng, n);
  const Vector e = (x.array().square() + 0.4 * random_vector(rng, n).array());

  const lsir::LsmiFit fit = lsir::fit_lsmi(x, e, lsir::LsmiConfig{}, rng.child(5));
  const lsir::FrozenSmiStatistic frozen_smi(x, e, fit);
  CHECK(frozen_smi(e) == fit.smi.value);

  const lsir::HsicWidths widths = lsir::median_widths(x, e);
  const lsir::FrozenHsicStatistic frozen_hsic(x, widths);
  CHECK(frozen_hsic(e) == lsir::hsic_estimate(x, e, widths));
}

TEST_CASE("permutation results are identical across thread counts") {
  RngStream rng(23);
  const Index n = 50;
  const Vector x = random_vector(rng, n);
  const Vector e = 0.7 * x + 0.5 * random_vector(rng, n);
  const lsir::FrozenHsicStatistic frozen(x, lsir::median_widths(x, e));
  const auto statistic = [&frozen](const Vector&, const Vector& permuted,
                                   const RngStream&) { return frozen(permuted); };

  const PermutationTestResult serial =
      lsir::permutation_test(x, e, statistic, 32, RngStream(9), 1);
  const PermutationTestResult threaded =
      lsir::permutation_test(x, e, statistic, 32, RngStream(9), 4);
  CHECK(serial.p_value == threaded.p_value);
  REQUIRE(serial.permuted.size() == threaded.permuted.size());
  for (std::size_t i = 0; i < serial.permuted.size(); ++i) {
    CHECK(serial.permuted[i] == threaded.permuted[i]);
  }
}

TEST_CASE("strong dependence earns the smallest reportable p-value") {
  RngStream rng(31);
  const Index n = 120;
  const Vector x = random_vector(rng, n);
  const Vector e = x.array().cube() + 0.1 * random_vector(rng, n).array();

  const lsir::LsmiFit fit = lsir::fit_lsmi(x, e, lsir::LsmiConfig{}, rng.child(2));
  const lsir::FrozenSmiStatistic frozen(x, e, fit);
  const auto statistic = [&frozen](const Vector&, const Vector& permuted,
                                   const RngStream&) { return frozen(permuted); };
  const PermutationTestResult result =
      lsir::permutation_test(x, e, statistic, 99, RngStream(4), 1);
  CHECK(result.p_value == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("significance rule covers all four outcomes") {
  const double delta = 0.05;
  CHECK(lsir::delta_decision(0.30, 0.01, delta) == CausalDecision::forward);
  CHECK(lsir::delta_decision(0.01, 0.30, delta) == CausalDecision::backward);
  CHECK(lsir::delta_decision(0.03, 0.05, delta) ==
        CausalDecision::no_causal_relation);
  CHECK(lsir::delta_decision(0.20, 0.30, delta) ==
        CausalDecision::model_mismatch);
  // A p-value exactly at delta does not clear it.
  CHECK(lsir::delta_decision(0.06, 0.05, delta) == CausalDecision::forward);
}

TEST_CASE("table rule floors tiny p-values and otherwise takes the larger") {
  CHECK(lsir::table_decision(0.031, 1e-4) == CausalDecision::forward);
  CHECK(lsir::table_decision(5e-4, 4e-4) == CausalDecision::undetermined);
  CHECK(lsir::table_decision(0.102, 0.173) == CausalDecision::backward);
  CHECK(lsir::table_decision(0.2, 0.2) == CausalDecision::backward);

  CHECK(lsir::direction_by_p(0.102, 0.173) == Direction::backward);
  CHECK(lsir::direction_by_p(0.173, 0.102) == Direction::forward);
  CHECK(lsir::direction_by_score(0.0075, 0.0051) == Direction::backward);
  CHECK(lsir::direction_by_score(0.0051, 0.0075) == Direction::forward);
}

TEST_CASE("engine names parse and unknown ones are rejected") {
  CHECK(lsir::parse_engine("lsir") == EngineKind::lsir);
  CHECK(lsir::parse_engine("hsicr") == EngineKind::hsicr);
  CHECK_THROWS_AS(lsir::parse_engine("gp"), lsir::UnknownFamily);
}

TEST_CASE("orientation swap mirrors the report exactly") {
  const SamplePairs samples = cubic_toy(3, 80);
  DirectionConfig config;
  config.permutations = 24;
  config.lsir.restarts = 1;
  config.lsir.max_iterations = 20;

  const DirectionReport ab = lsir::infer_direction(samples, config, RngStream(7));
  const DirectionReport ba =
      lsir::infer_direction(lsir::swapped(samples), config, RngStream(7));

  CHECK(ab.p_forward == ba.p_backward);
  CHECK(ab.p_backward == ba.p_forward);
  CHECK(ab.score_forward == ba.score_backward);
  CHECK(ab.score_backward == ba.score_forward);
  CHECK(ba.decision == flipped(ab.decision));
  CHECK(ba.table_decision == flipped(ab.table_decision));
  CHECK(ba.simplified_decision == flipped(ab.simplified_decision));
  CHECK(ba.score_decision == flipped(ab.score_decision));
}

TEST_CASE("cubic toy data orients forward under both comparison rules") {
  const SamplePairs samples = cubic_toy(1, 200);
  DirectionConfig config;
  config.permutations = 99;

  const DirectionReport report =
      lsir::infer_direction(samples, config, RngStream(11));
  CHECK(report.p_forward > report.p_backward);
  CHECK(report.score_forward < report.score_backward);
  CHECK(report.simplified_decision == Direction::forward);
  CHECK(report.score_decision == Direction::forward);
  CHECK(report.p_forward >= 0.01);
  CHECK(report.p_backward <= 0.5);
}

TEST_CASE("skipping permutations leaves scores and the score comparison") {
  const SamplePairs samples = cubic_toy(5, 80);
  DirectionConfig config;
  config.engine = EngineKind::hsicr;
  config.permutations = 0;
  config.hsicr.xi_grid = {1e-3};

  const DirectionReport report =
      lsir::infer_direction(samples, config, RngStream(2));
  CHECK(std::isnan(report.p_forward));
  CHECK(std::isnan(report.p_backward));
  CHECK(report.decision == CausalDecision::undetermined);
  CHECK(report.table_decision == CausalDecision::undetermined);
  CHECK(report.simplified_decision == report.score_decision);
  CHECK(report.score_forward != report.score_backward);
}

TEST_CASE("kernel-independence engine emits a complete report") {
  const SamplePairs samples = cubic_toy(8, 100);
  DirectionConfig config;
  config.engine = EngineKind::hsicr;
  config.permutations = 49;
  config.hsicr.xi_grid = {1e-3};

  const DirectionReport report =
      lsir::infer_direction(samples, config, RngStream(6));
  CHECK(report.p_forward >= 0.02);
  CHECK(report.p_forward <= 1.0);
  CHECK(report.p_backward >= 0.02);
  CHECK(report.p_backward <= 1.0);
  CHECK(report.engine == EngineKind::hsicr);
}

TEST_CASE("literal permutations rerun model selection and stay valid") {
  RngStream rng(19);
  const Index n = 60;
  const Vector x = random_vector(rng, n);
  const Vector e = x.array().square() + 0.5 * random_vector(rng, n).array();

  const auto literal = [](const Vector& xs, const Vector& es,
                          const RngStream& stream) {
    return lsir::fit_lsmi(xs, es, lsir::LsmiConfig{}, stream).smi.value;
  };
  const PermutationTestResult result =
      lsir::permutation_test(x, e, literal, 5, RngStream(3), 1);
  CHECK(result.p_value >= 1.0 / 6.0);
  CHECK(result.p_value <= 1.0);
  for (const double value : result.permuted) CHECK(std::isfinite(value));
}
