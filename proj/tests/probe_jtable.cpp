// Scratch probe: the (tau, gamma) CV score tables one fit_lsir run sees,
// under both aggregations (self-read and pooled max).
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <vector>

#include "lsir/data.hpp"
#include "lsir/lsir.hpp"

using namespace lsir;

int main(int argc, char** argv) {
  const int s = argc > 1 ? std::atoi(argv[1]) : 0;
  const Index n = argc > 2 ? std::atoi(argv[2]) : 300;
  const bool forward = argc > 3 && std::strcmp(argv[3], "fwd") == 0;

  SynthSpec spec;
  spec.n = n;
  spec.seed = static_cast<std::uint64_t>(s);
  SamplePairs pairs = generate(spec);
  if (!forward) pairs = swapped(pairs);

  const LsirConfig config;
  auto [standardized, record] = standardize(pairs);
  (void)record;
  const Vector& xs = standardized.x;
  const Vector& ys = standardized.y;

  const RngStream rng = RngStream(1000 + s).child(0);
  const std::vector<double> tau_grid = resolve_tau_grid(config, xs);
  const std::vector<Index> order = rng.child(0).permutation(n);
  std::vector<std::vector<Index>> folds(static_cast<std::size_t>(config.folds));
  for (int k = 0; k < config.folds; ++k) {
    const Index begin = n * k / config.folds;
    const Index end = n * (k + 1) / config.folds;
    folds[static_cast<std::size_t>(k)].assign(order.begin() + begin,
                                              order.begin() + end);
  }
  const RngStream fold_rng = rng.child(1);

  const std::size_t candidates = tau_grid.size() * config.gamma_grid.size();
  std::vector<double> self(candidates, 0.0);
  std::vector<double> pooled(candidates, 0.0);
  for (const auto& held : folds) {
    std::vector<Index> train;
    for (const auto& other : folds) {
      if (&other == &held) continue;
      train.insert(train.end(), other.begin(), other.end());
    }
    const Vector x_train = detail::gather(xs, train);
    const Vector y_train = detail::gather(ys, train);
    const Vector x_held = detail::gather(xs, held);
    const Vector y_held = detail::gather(ys, held);

    RegressionBasis basis;
    const Index fold_m =
        std::min(config.basis_cap, static_cast<Index>(train.size()));
    basis.centers = detail::gather(
        x_train, fold_rng.child(0).sample_without_replacement(
                     static_cast<Index>(train.size()), fold_m));

    std::vector<Vector> residuals;
    std::vector<LsmiFit> instruments;
    for (const double tau : tau_grid) {
      basis.tau = tau;
      for (const double gamma : config.gamma_grid) {
        const auto [beta, fold_trace] =
            fit_beta(x_train, y_train, basis, gamma, config.lsmi,
                     descent_options(config), fold_rng.child(1));
        (void)fold_trace;
        residuals.push_back(
            y_held - gaussian_design<double>(x_held, basis.centers, tau) * beta);
        instruments.push_back(fit_lsmi(x_held, residuals.back(), config.lsmi,
                                       fold_rng.child(2)));
      }
    }
    for (std::size_t c = 0; c < candidates; ++c) {
      double loudest = -std::numeric_limits<double>::infinity();
      for (const LsmiFit& instrument : instruments) {
        const FrozenSmiStatistic frozen(x_held, residuals[c], instrument);
        loudest = std::max(loudest, frozen(residuals[c]));
      }
      self[c] += instruments[c].smi.value;
      pooled[c] += loudest;
    }
  }

  const double F = static_cast<double>(folds.size());
  for (int table = 0; table < 2; ++table) {
    const std::vector<double>& values = table == 0 ? self : pooled;
    std::printf("seed %d %s %s\n        ", s, forward ? "fwd" : "bwd",
                table == 0 ? "self" : "pooled");
    for (const double gamma : config.gamma_grid) std::printf(" g=%-8g", gamma);
    std::printf("\n");
    std::size_t c = 0;
    for (const double tau : tau_grid) {
      std::printf("tau %.3f", tau);
      for (std::size_t gi = 0; gi < config.gamma_grid.size(); ++gi) {
        std::printf(" %8.4f ", values[c++] / F);
      }
      std::printf("\n");
    }
  }
  std::fflush(stdout);
  return 0;
}
