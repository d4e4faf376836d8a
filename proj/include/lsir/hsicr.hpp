#pragma once

// Kernel-independence baseline (HSIC regression).
//
// The dependence between paired scalars is scored by the empirical
// Hilbert-Schmidt independence criterion
//
//   HSIC = (1/n^2) tr(K Gamma L Gamma),   Gamma = I - 11'/n,
//
// with Gaussian Gram matrices K (inputs) and L (residuals) whose widths
// come from the median-distance heuristic.  The regressor f(x) =
// theta'phi(x) puts one Gaussian bump on every training input and is
// fitted by gradient descent on  HSIC(x, y - f(x)) + (xi/2) theta'theta,
// with the residual kernel width frozen at its theta = 0 estimate.  There
// is no width selection inside the descent; only xi can be grid-selected,
// by held-out HSIC over a fold partition.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "lsir/data.hpp"
#include "lsir/errors.hpp"
#include "lsir/lsmi.hpp"
#include "lsir/numerics.hpp"
#include "lsir/rng.hpp"
#include "lsir/types.hpp"

namespace lsir {

// The three kernel widths of one HSIC regression: sigma_x for the input
// Gram, sigma_e for the residual Gram, rho for the regression basis.
struct HsicWidths {
  double sigma_x = 1.0;
  double sigma_e = 1.0;
  double rho = 1.0;
};

inline void validate(const HsicWidths& widths) {
  const auto bad = [](double w) { return !(w > 0.0) || !std::isfinite(w); };
  if (bad(widths.sigma_x) || bad(widths.sigma_e) || bad(widths.rho)) {
    throw DegenerateWidth("kernel widths must be positive and finite");
  }
}

// Median-heuristic widths: 2^(-1/2) times the median pairwise distance
// over all n^2 ordered pairs (the zero self-distances included), computed
// separately for the inputs and for the residuals; the regression width
// rho reuses the input width.  At theta = 0 the residuals are just y, which
// is the rough estimate the residual width stays frozen at.
inline HsicWidths median_widths(const Vector& inputs, const Vector& residuals) {
  const double root_half = std::numbers::sqrt2 / 2.0;
  HsicWidths widths;
  widths.sigma_x =
      root_half * median_pairwise_distance(inputs, DiagonalPolicy::include);
  widths.sigma_e =
      root_half * median_pairwise_distance(residuals, DiagonalPolicy::include);
  widths.rho = widths.sigma_x;
  validate(widths);
  return widths;
}

namespace detail {

// Gamma G Gamma for the centering matrix Gamma = I - 11'/n: subtract row
// and column means, add back the grand mean.
inline Matrix doubly_centered(const Matrix& gram) {
  const Vector row_means = gram.rowwise().mean();
  const Vector col_means = gram.colwise().mean().transpose();
  const double grand = gram.mean();
  Matrix centered = gram;
  centered.colwise() -= row_means;
  centered.rowwise() -= col_means.transpose();
  centered.array() += grand;
  return centered;
}

}  // namespace detail

// Empirical HSIC (1/n^2) tr(K Gamma L Gamma), evaluated as the elementwise
// sum of the doubly centered input Gram against the residual Gram.  Zero
// exactly when either side carries no variation a centered Gaussian kernel
// can see (n = 1, or a constant vector).
inline double hsic_estimate(const Vector& x, const Vector& e, double sigma_x,
                            double sigma_e) {
  const Index n = x.size();
  if (e.size() != n) throw InsufficientData("coordinate vectors differ in length");
  if (n < 1) throw InsufficientData("need at least one sample pair");
  const Matrix k = gaussian_design<double>(x, x, sigma_x);
  const Matrix l = gaussian_design<double>(e, e, sigma_e);
  const double n_d = static_cast<double>(n);
  return (detail::doubly_centered(k).array() * l.array()).sum() / (n_d * n_d);
}

inline double hsic_estimate(const Vector& x, const Vector& e,
                            const HsicWidths& widths) {
  return hsic_estimate(x, e, widths.sigma_x, widths.sigma_e);
}

// One Gaussian bump per training input (basis count equals the sample
// count), coefficients theta, plus a mean-residual intercept.
struct HsicrModel {
  Vector theta;
  Vector centers;
  double rho = 1.0;
  double intercept = 0.0;

  double predict(double x) const {
    const double inv = -1.0 / (2.0 * rho * rho);
    double f = intercept;
    for (Index l = 0; l < centers.size(); ++l) {
      const double d = x - centers[l];
      f += theta[l] * std::exp(d * d * inv);
    }
    return f;
  }

  Vector predict(const Vector& x) const {
    Vector out(x.size());
    for (Index i = 0; i < x.size(); ++i) out[i] = predict(x[i]);
    return out;
  }
};

// Residuals y_i - theta'phi(x_i); the intercept is deliberately excluded
// (it is applied once, after fitting, and a shift changes no dependence).
inline Vector residuals(const HsicrModel& model, const Vector& x,
                        const Vector& y) {
  return y - gaussian_design<double>(x, model.centers, model.rho) * model.theta;
}

inline Vector residuals(const HsicrModel& model, const SamplePairs& samples) {
  return residuals(model, samples.x, samples.y);
}

struct HsicrConfig {
  // Held-out selection grid; a single value skips cross-validation and
  // reproduces a fixed-regularization run.
  std::vector<double> xi_grid = {1e-4, 1e-3, 1e-2, 1e-1};
  int folds = 2;
  int max_iterations = 500;
  // The descent stops once the gradient norm falls below this.
  double gradient_tolerance = 1e-5;
  ArmijoParams armijo;
};

inline void validate(const HsicrConfig& config) {
  if (config.xi_grid.empty()) throw InvalidConfig("xi grid is empty");
  for (const double xi : config.xi_grid) {
    if (!(xi >= 0.0) || !std::isfinite(xi)) {
      throw InvalidConfig("xi must be nonnegative and finite");
    }
  }
  if (config.folds < 2) throw InvalidConfig("need at least two folds");
  if (config.max_iterations < 0) throw InvalidConfig("negative iteration cap");
  if (!(config.gradient_tolerance > 0.0)) {
    throw InvalidConfig("gradient tolerance must be positive");
  }
}

struct HsicrTrace {
  // Objective after each accepted step, preceded by the theta = 0 value;
  // non-increasing by construction (fixed widths, Armijo acceptance).
  std::vector<double> objectives;
  int iterations = 0;
  // The gradient norm fell below the tolerance (rather than the loop
  // hitting the iteration cap or a failed line search).
  bool converged = false;
  bool no_descent = false;
  double xi = 0.0;
};

namespace detail {

// Iteration-invariant pieces of one descent: the targets, the regression
// design on the training inputs, the doubly centered input Gram, and the
// frozen residual width.
struct HsicrWorkspace {
  Vector y;
  Matrix phi;
  Matrix kx_centered;
  double sigma_e = 1.0;
  double xi = 0.0;
};

inline HsicrWorkspace make_hsicr_workspace(const Vector& x, const Vector& y,
                                           const HsicWidths& widths, double xi) {
  validate(widths);
  HsicrWorkspace ws;
  ws.y = y;
  ws.phi = gaussian_design<double>(x, x, widths.rho);
  ws.kx_centered = doubly_centered(gaussian_design<double>(x, x, widths.sigma_x));
  ws.sigma_e = widths.sigma_e;
  ws.xi = xi;
  return ws;
}

// Everything the line search and the gradient need at one theta; the
// residual Gram is kept so an accepted candidate's gradient costs no
// second kernel build.
struct HsicrState {
  Vector theta;
  Vector e;
  Matrix l;
  double hsic = 0.0;
  double objective = 0.0;
};

inline HsicrState evaluate(const HsicrWorkspace& ws, Vector theta) {
  HsicrState state;
  state.theta = std::move(theta);
  state.e = ws.y - ws.phi * state.theta;
  state.l = gaussian_design<double>(state.e, state.e, ws.sigma_e);
  const double n_d = static_cast<double>(state.e.size());
  state.hsic =
      (ws.kx_centered.array() * state.l.array()).sum() / (n_d * n_d);
  state.objective = state.hsic + 0.5 * ws.xi * state.theta.squaredNorm();
  if (!std::isfinite(state.objective)) {
    throw NonFiniteEvaluation("HSIC objective is not finite");
  }
  return state;
}

// Exact objective gradient in theta.  With W = (Gamma K Gamma) .* L, a
// moving residual scales each kernel entry by -(e_j - e_j')/sigma_e^2, so
//   dHSIC/de_j = -(2/(n^2 sigma_e^2)) (e_j (W 1)_j - (W e)_j),
// and de/dtheta = -phi turns that into the design-weighted sum below.
inline Vector state_gradient(const HsicrWorkspace& ws, const HsicrState& state) {
  const double n_d = static_cast<double>(state.e.size());
  const Matrix w = ws.kx_centered.array() * state.l.array();
  const Vector pull =
      (state.e.array() * w.rowwise().sum().array()).matrix() - w * state.e;
  const double constant = 2.0 / (n_d * n_d * ws.sigma_e * ws.sigma_e);
  return ws.phi.transpose() * (constant * pull) + ws.xi * state.theta;
}

// Gradient descent from theta = 0 with Armijo backtracking.  Each
// iteration warm-starts the line search at twice the previously accepted
// step, so the search adapts to the objective's scale without giving up
// monotone decrease.
inline std::pair<HsicrState, HsicrTrace> minimize_hsicr(
    const HsicrWorkspace& ws, const HsicrConfig& config) {
  HsicrTrace trace;
  HsicrState state = evaluate(ws, Vector::Zero(ws.phi.cols()));
  trace.objectives.push_back(state.objective);

  double step_seed = config.armijo.initial_step;
  for (int iteration = 0; iteration < config.max_iterations; ++iteration) {
    const Vector gradient = state_gradient(ws, state);
    const double gradient_sq = gradient.squaredNorm();
    if (!std::isfinite(gradient_sq)) {
      throw NonFiniteEvaluation("HSIC gradient is not finite");
    }
    if (std::sqrt(gradient_sq) <= config.gradient_tolerance) {
      trace.converged = true;
      break;
    }

    double step = step_seed;
    bool accepted = false;
    HsicrState candidate;
    while (step >= config.armijo.min_step) {
      candidate = evaluate(ws, state.theta - step * gradient);
      if (candidate.objective <=
          state.objective -
              config.armijo.sufficient_decrease * step * gradient_sq) {
        accepted = true;
        break;
      }
      step *= config.armijo.shrink;
    }

    ++trace.iterations;
    if (!accepted) {
      trace.no_descent = true;
      break;
    }
    state = std::move(candidate);
    trace.objectives.push_back(state.objective);
    step_seed = std::min(2.0 * step, 1e12);
  }
  return {std::move(state), trace};
}

}  // namespace detail

// Objective of the dependence-minimizing fit at the given coefficients:
// HSIC between the inputs and the residuals y - theta'phi(x) plus the
// ridge term (xi/2) theta'theta, with one basis bump per input.
inline double hsicr_objective(const Vector& x, const Vector& y,
                              const Vector& theta, const HsicWidths& widths,
                              double xi) {
  const detail::HsicrWorkspace ws =
      detail::make_hsicr_workspace(x, y, widths, xi);
  return detail::evaluate(ws, theta).objective;
}

// Exact gradient of hsicr_objective in theta.  The kernel widths are held
// fixed, so the only flow is through the residuals.
inline Vector hsicr_gradient(const Vector& x, const Vector& y,
                             const Vector& theta, const HsicWidths& widths,
                             double xi) {
  const detail::HsicrWorkspace ws =
      detail::make_hsicr_workspace(x, y, widths, xi);
  return detail::state_gradient(ws, detail::evaluate(ws, theta));
}

// T-fold score of one regularization value with an explicit partition: per
// fold theta is fitted on the complement (widths re-derived from the
// training subset) and the held-out residuals are scored by hsic_estimate
// under fresh median-heuristic widths, an independent measurement of the
// remaining input-residual dependence (lower is better).
inline double hsicr_cv_score(const Vector& x, const Vector& y,
                             const std::vector<std::vector<Index>>& folds,
                             double xi, const HsicrConfig& config) {
  const Index n = x.size();
  double total = 0.0;
  for (const auto& held : folds) {
    std::vector<Index> train;
    train.reserve(static_cast<std::size_t>(n));
    for (const auto& other : folds) {
      if (&other == &held) continue;
      train.insert(train.end(), other.begin(), other.end());
    }
    if (train.empty() || held.empty()) {
      throw InsufficientData("empty cross-validation fold");
    }
    const Vector x_train = detail::gather(x, train);
    const Vector y_train = detail::gather(y, train);
    const HsicWidths widths = median_widths(x_train, y_train);
    const detail::HsicrWorkspace ws =
        detail::make_hsicr_workspace(x_train, y_train, widths, xi);
    const auto [state, fit_trace] = detail::minimize_hsicr(ws, config);
    (void)fit_trace;

    const Vector x_held = detail::gather(x, held);
    const Vector y_held = detail::gather(y, held);
    const Vector e_held =
        y_held -
        gaussian_design<double>(x_held, x_train, widths.rho) * state.theta;
    const HsicWidths held_widths = median_widths(x_held, e_held);
    total += hsic_estimate(x_held, e_held, held_widths);
  }
  return total / static_cast<double>(folds.size());
}

struct HsicrFit {
  HsicrModel model;
  HsicWidths widths;
  HsicrTrace trace;
  // HSIC between the inputs and the final residuals under the fit's
  // widths; strictly below the raw-data value whenever any step was taken.
  double hsic = 0.0;
  // Centered residuals y - f(x) (mean zero).
  Vector residuals;
};

// Full baseline fit: median-heuristic widths (the residual width frozen at
// its theta = 0 estimate), optional held-out selection of xi, gradient
// descent, mean-residual intercept.  With a single-value xi grid the fit
// is fully deterministic and rng is never consumed; otherwise rng.child(0)
// draws the fold partition (shuffle, near-equal contiguous chunks).
inline HsicrFit fit_hsicr(const SamplePairs& samples, const HsicrConfig& config,
                          const RngStream& rng) {
  validate(config);
  validate(samples);
  const Index n = samples.n();

  double best_xi = config.xi_grid.front();
  if (config.xi_grid.size() > 1) {
    if (n < 2 * config.folds) {
      throw InsufficientData("need at least two samples per fold");
    }
    const std::vector<Index> order = rng.child(0).permutation(n);
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(config.folds));
    for (int k = 0; k < config.folds; ++k) {
      const Index begin = n * k / config.folds;
      const Index end = n * (k + 1) / config.folds;
      folds[static_cast<std::size_t>(k)].assign(order.begin() + begin,
                                                order.begin() + end);
    }
    bool have_best = false;
    double best_score = 0.0;
    for (const double xi : config.xi_grid) {
      const double score = hsicr_cv_score(samples.x, samples.y, folds, xi, config);
      if (!std::isfinite(score)) {
        throw NonFiniteEvaluation("cross-validation score is not finite");
      }
      if (!have_best || score < best_score ||
          (score == best_score && xi < best_xi)) {
        best_xi = xi;
        best_score = score;
        have_best = true;
      }
    }
  }

  const HsicWidths widths = median_widths(samples.x, samples.y);
  const detail::HsicrWorkspace ws =
      detail::make_hsicr_workspace(samples.x, samples.y, widths, best_xi);
  auto [state, trace] = detail::minimize_hsicr(ws, config);

  HsicrFit fit;
  fit.widths = widths;
  fit.trace = std::move(trace);
  fit.trace.xi = best_xi;
  fit.hsic = state.hsic;
  fit.model.theta = std::move(state.theta);
  fit.model.centers = samples.x;
  fit.model.rho = widths.rho;
  fit.model.intercept = state.e.mean();
  fit.residuals = state.e.array() - fit.model.intercept;
  return fit;
}

// Fixed-regularization fit; no randomness is consumed.
inline HsicrFit fit_hsicr(const SamplePairs& samples, double xi,
                          const RngStream& rng) {
  HsicrConfig config;
  config.xi_grid = {xi};
  return fit_hsicr(samples, config, rng);
}

}  // namespace lsir
