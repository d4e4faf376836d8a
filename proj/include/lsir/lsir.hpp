#pragma once

// Least-squares independence regression (LSIR).
//
// An additive-noise regressor f(x) = beta' psi(x) is fitted not by matching
// y, but by making the residuals e = y - f(x) statistically independent of
// x: gradient descent on  SMI(x, e) + (gamma/2) beta'beta,  where SMI is
// the LSMI estimate from lsmi.hpp applied to the standardized residuals.
// Each iteration refits the density-ratio model on the current residuals
// and then freezes it (alpha, e-side centers, standardization maps) for
// that iteration's Armijo line search, so the model-frozen smi_gradient is
// the exact gradient of the number the line search descends.  Deliberately
// NOT differentiated: the ridge refit of alpha and the re-gathering of
// centers between iterations.  A direction that sees those can drive the
// *estimate* to its noise floor on data whose true dependence is not
// removable -- it launders dependence instead of fitting -- which destroys
// the fitted-vs-reverse asymmetry this regressor exists to expose.
// (tau, gamma) come from T-fold cross-validation scored by the hold-out
// SMI, and the whole fit is repeated over several basis redraws, keeping
// the restart with the smallest measured SMI.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "lsir/data.hpp"
#include "lsir/errors.hpp"
#include "lsir/lsmi.hpp"
#include "lsir/numerics.hpp"
#include "lsir/rng.hpp"
#include "lsir/types.hpp"

namespace lsir {

// One-dimensional Gaussian basis for the regressor; centers are drawn from
// the x sample without replacement.
struct RegressionBasis {
  Vector centers;
  double tau = 1.0;

  Index size() const { return centers.size(); }
};

struct RegressionModel {
  RegressionBasis basis;
  Vector beta;
  double intercept = 0.0;
  // Identity unless the pipeline standardized its inputs; predict() maps
  // raw x into the fitting scale and the fitted value back out.
  AffineMap x_map;
  AffineMap y_map;

  double predict(double raw_x) const {
    const double z = x_map.to_standardized(raw_x);
    const double inv = -1.0 / (2.0 * basis.tau * basis.tau);
    double f = intercept;
    for (Index l = 0; l < basis.size(); ++l) {
      const double d = z - basis.centers[l];
      f += beta[l] * std::exp(d * d * inv);
    }
    return y_map.to_raw(f);
  }

  Vector predict(const Vector& raw_x) const {
    Vector out(raw_x.size());
    for (Index i = 0; i < raw_x.size(); ++i) out[i] = predict(raw_x[i]);
    return out;
  }
};

// Fitting-scale residuals e_i = y_i - beta'psi(x_i); the intercept is
// deliberately excluded (it is applied once, after fitting).  Inputs are
// mapped through the model's scale maps first, so on an unstandardized
// model this is the plain formula.
inline Vector residuals(const RegressionModel& model, const Vector& x,
                        const Vector& y) {
  const Vector xs = (x.array() - model.x_map.shift) / model.x_map.scale;
  const Vector ys = (y.array() - model.y_map.shift) / model.y_map.scale;
  return ys - gaussian_design<double>(xs, model.basis.centers, model.basis.tau) *
                  model.beta;
}

inline Vector residuals(const RegressionModel& model, const SamplePairs& samples) {
  return residuals(model, samples.x, samples.y);
}

struct LsirConfig {
  // Regression basis size is min(basis_cap, n).
  Index basis_cap = 200;
  // Absolute widths; when empty, tau_multipliers scale the median pairwise
  // x-distance (zero diagonal excluded).
  std::vector<double> tau_grid;
  std::vector<double> tau_multipliers = {0.3, 0.5, 0.8, 1.0, 1.5, 2.0};
  std::vector<double> gamma_grid = {1e-4, 1e-3, 1e-2, 1e-1};
  int folds = 2;
  int restarts = 5;
  int max_iterations = 200;
  // Stop once an accepted step improves the objective by less than this.
  double tolerance = 1e-6;
  // Early stopping: quit when the freshly measured objective has not
  // improved by at least patience_tolerance in this many iterations.
  // Improvements smaller than the permutation-null spread are not evidence
  // of a better fit, and descent continued past that point optimizes
  // against the estimator's blind spots rather than the dependence.
  int patience = 10;
  double patience_tolerance = 3e-3;
  // The inner LSMI (sigma, lambda) selection is refreshed every this many
  // iterations; 1 reruns CV at every step (the literal, expensive reading).
  int reselect_every = 10;
  ArmijoParams armijo;
  // Use the as-printed derivative constant -1/(2 sigma^2) for the basis
  // kernels instead of the chain-rule value 1/sigma^2.  Kept for
  // comparison; this variant fails finite-difference validation.
  bool literal_gradient = false;
  bool standardize = true;
  LsmiConfig lsmi;
};

inline void validate(const LsirConfig& config) {
  if (config.basis_cap < 1) throw InvalidConfig("basis_cap must be positive");
  if (config.folds < 2) throw InvalidConfig("need at least two folds");
  if (config.restarts < 1) throw InvalidConfig("need at least one restart");
  if (config.max_iterations < 0) throw InvalidConfig("negative iteration cap");
  if (config.patience < 1) throw InvalidConfig("patience must be positive");
  if (!(config.patience_tolerance >= 0.0)) {
    throw InvalidConfig("patience tolerance must be nonnegative");
  }
  if (config.reselect_every < 1) throw InvalidConfig("reselect cadence must be positive");
  if (config.tau_grid.empty() && config.tau_multipliers.empty()) {
    throw InvalidConfig("tau grid is empty");
  }
  if (config.gamma_grid.empty()) throw InvalidConfig("gamma grid is empty");
  validate(config.lsmi);
}

struct FitTrace {
  // Per iteration: the fresh measurement of the current residuals (a ratio
  // model refit on them), followed by the accepted step's value under that
  // frozen instrument.  Non-increasing within an epoch; fresh values from
  // different epochs come from different instruments and may tick up when
  // the refit takes a sharper look.
  std::vector<double> objectives;
  // Indices into `objectives` where an epoch (one fresh measurement and
  // the line search it anchors) begins.
  std::vector<std::size_t> epoch_starts;
  // Iterations at which the inner (sigma, lambda) selection was redone.
  std::vector<int> reselect_iterations;
  int iterations = 0;
  bool no_descent = false;
  double final_smi = std::numeric_limits<double>::quiet_NaN();
  double tau = 0.0;
  double gamma = 0.0;
  // Last inner-LSMI selection used by the descent.
  double sigma = 0.0;
  double lambda = 0.0;
  int restart_index = -1;
  // Final SMI estimate of every restart -- the largest value any pooled
  // measurement instrument reports on its residuals (the winner is their
  // minimum).
  std::vector<double> restart_smis;
};

namespace detail {

// Per-sample weight vector t of the SMI derivative: with residuals moving
// as de/dbeta = -psi, the gradient of  SMI = h'alpha - alpha'H alpha / 2
// (alpha, basis and width held fixed) is psi' t.  The kernels factor as
// phi_l(x_i, e_j) = gx(i,l) ge(j,l), which reduces both moment derivatives
// to row operations:
//
//   t = (1/sigma^2) [ (1/n)  ( e .* (Phi a) - Phi(a .* v) )
//                   - (1/n^2)( e .* rs(M .* U) - rs(M .* V) ) ]
//
// where Phi is the paired design, U = ge diag(a), V = ge diag(a .* v),
// M = U (gx'gx) and rs() sums rows.  The literal variant swaps the kernel
// derivative constant 1/sigma^2 for the printed -1/(2 sigma^2), i.e.
// multiplies everything by -1/2.
inline Vector smi_row_weights(const Vector& e, const Matrix& gx,
                              const Matrix& ge, const Matrix& gram_x,
                              const Vector& alpha, const Vector& centers_e,
                              double sigma, bool literal_constant) {
  const Index n = e.size();
  const double n_d = static_cast<double>(n);

  const Matrix paired = gx.array() * ge.array();
  const Vector paired_alpha = paired * alpha;
  const Vector paired_alpha_v = paired * (alpha.array() * centers_e.array()).matrix();
  const Vector joint_part =
      (e.array() * paired_alpha.array() - paired_alpha_v.array()).matrix() / n_d;

  const Matrix u = ge * alpha.asDiagonal();
  const Matrix v = ge * (alpha.array() * centers_e.array()).matrix().asDiagonal();
  const Matrix m = u * gram_x;
  const Vector ss = (m.array() * u.array()).rowwise().sum();
  const Vector sq = (m.array() * v.array()).rowwise().sum();
  const Vector product_part =
      (e.array() * ss.array() - sq.array()).matrix() / (n_d * n_d);

  const double constant = (literal_constant ? -0.5 : 1.0) / (sigma * sigma);
  return constant * (joint_part - product_part);
}

}  // namespace detail

// d SMI / d beta with the ratio model (basis, width, alpha) frozen; the
// regression model supplies psi and the current beta.
inline Vector smi_gradient(const Vector& x, const Vector& y,
                           const RegressionModel& model, const RatioModel& ratio,
                           bool literal_constant = false) {
  const Matrix psi =
      gaussian_design<double>(x, model.basis.centers, model.basis.tau);
  const Vector e = y - psi * model.beta;
  const Matrix gx =
      gaussian_design<double>(x, ratio.basis.centers_x, ratio.basis.sigma);
  const Matrix ge =
      gaussian_design<double>(e, ratio.basis.centers_e, ratio.basis.sigma);
  Matrix gram_x = Matrix::Zero(gx.cols(), gx.cols());
  gram_x.selfadjointView<Eigen::Lower>().rankUpdate(gx.transpose());
  gram_x.triangularView<Eigen::StrictlyUpper>() = gram_x.transpose();
  const Vector weights = detail::smi_row_weights(
      e, gx, ge, gram_x, ratio.alpha, ratio.basis.centers_e,
      ratio.basis.sigma, literal_constant);
  return psi.transpose() * weights;
}

inline Vector smi_gradient(const SamplePairs& samples, const RegressionModel& model,
                           const RatioModel& ratio, bool literal_constant = false) {
  return smi_gradient(samples.x, samples.y, model, ratio, literal_constant);
}

namespace detail {

// The measurement instrument used during one descent epoch: ratio-basis
// center indices (fixed for the whole fit), the selected (sigma, lambda),
// and the x-side design and Gram (constant while the epoch lasts, since
// only the residuals move).
struct RatioApparatus {
  std::vector<Index> center_indices;
  CvPlan plan;
  double sigma = 0.0;
  double lambda = 0.0;
  Vector centers_x;
  Matrix gx;
  Matrix gram_x;
};

// Residuals standardized the same way the dependence estimator standardizes
// its inputs; keeps the descent objective invariant to translating or
// rescaling the residual vector (directions that change no dependence).
inline Vector standardized_residuals(const Vector& e, double& mean_out,
                                     double& scale_out) {
  mean_out = e.mean();
  const double var = (e.array() - mean_out).square().mean();
  if (!(var > 0.0) || !std::isfinite(var)) {
    throw ZeroVariance("residuals have zero variance");
  }
  scale_out = std::sqrt(var);
  return ((e.array() - mean_out) / scale_out).matrix();
}

// One iteration's measurement instrument: a ratio model freshly fitted to
// the current residuals (alpha via the ridge system at the apparatus
// (sigma, lambda)), together with the standardization maps and gathered
// e-centers it was built with.  Everything here stays frozen during the
// iteration's line search.
struct Instrument {
  double mean = 0.0;   // of the raw residuals
  double scale = 1.0;  // population sd of the raw residuals
  Vector e_z;          // standardized residuals the ratio model was fit on
  Vector vhat;         // e-side centers gathered from e_z
  Matrix ge;
  Vector alpha;
  double smi = 0.0;
  double objective = 0.0;
};

inline Instrument make_instrument(const RatioApparatus& app, const Vector& e,
                                  double gamma, const Vector& beta) {
  const Index n = e.size();
  Instrument out;
  out.e_z = standardized_residuals(e, out.mean, out.scale);
  out.vhat = gather(out.e_z, app.center_indices);
  out.ge = gaussian_design<double>(out.e_z, out.vhat, app.sigma);
  Matrix gram_e = Matrix::Zero(out.ge.cols(), out.ge.cols());
  gram_e.selfadjointView<Eigen::Lower>().rankUpdate(out.ge.transpose());
  gram_e.triangularView<Eigen::StrictlyUpper>() = gram_e.transpose();
  // Written to match compute_H_h bit-for-bit (only the x-side Gram is
  // reused), so a frozen statistic rebuilt from this instrument reproduces
  // its SMI exactly.
  const double n_d = static_cast<double>(n);
  const double scale = 1.0 / (n_d * n_d);
  const Matrix H = (app.gram_x.array() * gram_e.array()).matrix() * scale;
  const Vector h =
      (app.gx.array() * out.ge.array()).matrix().colwise().sum().transpose() / n_d;
  const FactorizedSystem<double> system(H, app.lambda);
  out.alpha = system.solve(h);
  out.smi = estimate_smi(H, h, out.alpha);
  out.objective = out.smi + 0.5 * gamma * beta.squaredNorm();
  if (!std::isfinite(out.objective)) {
    throw NonFiniteEvaluation("descent objective is not finite");
  }
  return out;
}

// The line-search objective: candidate residuals mapped through the
// instrument's frozen standardization, scored by its frozen ratio model
// (alpha, centers, width all fixed; only the e-side kernels move).  The
// model-frozen gradient below is the exact derivative of this number.
inline double frozen_objective(const RatioApparatus& app,
                               const Instrument& instr, const Vector& e,
                               double gamma, const Vector& beta) {
  const Index n = e.size();
  const double n_d = static_cast<double>(n);
  const Vector z = ((e.array() - instr.mean) / instr.scale).matrix();
  const Matrix ge = gaussian_design<double>(z, instr.vhat, app.sigma);
  Matrix gram_e = Matrix::Zero(ge.cols(), ge.cols());
  gram_e.selfadjointView<Eigen::Lower>().rankUpdate(ge.transpose());
  gram_e.triangularView<Eigen::StrictlyUpper>() = gram_e.transpose();
  const Vector h =
      (app.gx.array() * ge.array()).matrix().colwise().sum().transpose() / n_d;
  const Vector h_alpha =
      ((app.gram_x.array() * gram_e.array()).matrix() * instr.alpha) /
      (n_d * n_d);
  const double smi =
      h.dot(instr.alpha) - 0.5 * instr.alpha.dot(h_alpha) - 0.5;
  return smi + 0.5 * gamma * beta.squaredNorm();
}

// Gradient of frozen_objective at the instrument's own residuals: the
// model-frozen SMI derivative chained through the frozen standardization
// (d e_z / d beta = -psi / scale), plus the ridge penalty term.
inline Vector descent_gradient(const RatioApparatus& app,
                               const Instrument& instr, const Matrix& psi,
                               double gamma, const Vector& beta,
                               bool literal_constant) {
  const Vector weights =
      smi_row_weights(instr.e_z, app.gx, instr.ge, app.gram_x, instr.alpha,
                      instr.vhat, app.sigma, literal_constant);
  return (psi.transpose() * weights) / instr.scale + gamma * beta;
}

// (Re)selects (sigma, lambda) for the current standardized residuals and
// rebuilds the cached x-side design at the winning width.
inline void refresh_apparatus(RatioApparatus& app, const Vector& x,
                              const Vector& e_z, const LsmiConfig& lsmi_config) {
  const std::vector<double> sigma_grid = resolve_sigma_grid(lsmi_config, x, e_z);
  const GridSelection pick =
      select_ratio_model(x, e_z, app.plan, sigma_grid, lsmi_config.lambda_grid);
  app.sigma = pick.sigma;
  app.lambda = pick.lambda;
  app.gx = gaussian_design<double>(x, app.centers_x, app.sigma);
  app.gram_x = Matrix::Zero(app.gx.cols(), app.gx.cols());
  app.gram_x.selfadjointView<Eigen::Lower>().rankUpdate(app.gx.transpose());
  app.gram_x.triangularView<Eigen::StrictlyUpper>() = app.gram_x.transpose();
}

}  // namespace detail

// Options for the inner descent (a slice of LsirConfig so fit_beta can be
// driven standalone).
struct DescentOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;
  int patience = 10;
  double patience_tolerance = 3e-3;
  int reselect_every = 10;
  ArmijoParams armijo;
  bool literal_gradient = false;
};

inline DescentOptions descent_options(const LsirConfig& config) {
  return DescentOptions{config.max_iterations,      config.tolerance,
                        config.patience,            config.patience_tolerance,
                        config.reselect_every,      config.armijo,
                        config.literal_gradient};
}

// Boosted ridge least-squares steps of `leftover` onto the basis behind
// `svd`: per round, the ridge is picked by the closed-form leave-one-out
// error of the ridge smoother (residuals inflated by 1/(1 - leverage),
// leverages from the thin SVD), "leave the residuals alone" competes as a
// candidate, and ties break toward the heavier ridge.  Rounds repeat on
// the remaining leftover until no ridge in the ladder predicts held-out
// better than stopping, so real mean structure is projected out to
// completion while a step that would only chase noise (and thereby
// imprint input structure) is refused from the start.  Returns the
// accumulated coefficient step; `leftover` is reduced in place.
namespace detail {
inline Vector loo_boosted_projection(const Eigen::BDCSVD<Matrix>& svd,
                                     Vector& leftover) {
  const Index n = leftover.size();
  const Vector squares = svd.singularValues().array().square();
  const Matrix basis_sq = svd.matrixU().array().square();
  constexpr std::array<double, 5> ladder = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  Vector delta = Vector::Zero(svd.matrixV().rows());
  for (int round = 0; round < 32; ++round) {
    const Vector projected = svd.matrixU().transpose() * leftover;
    double best_error = leftover.squaredNorm();  // the stop-here option
    double best_ridge = 0.0;
    for (auto ridge = ladder.rbegin(); ridge != ladder.rend(); ++ridge) {
      const Vector shrink =
          squares.array() / (squares.array() + static_cast<double>(n) * *ridge);
      const Vector smoothed = svd.matrixU() * (shrink.cwiseProduct(projected));
      const Vector leverage = basis_sq * shrink;
      double held_out = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double slack = 1.0 - leverage[i];
        if (slack < 1e-8) {
          held_out = std::numeric_limits<double>::infinity();
          break;
        }
        const double loo = (leftover[i] - smoothed[i]) / slack;
        held_out += loo * loo;
      }
      if (held_out < best_error) {
        best_error = held_out;
        best_ridge = *ridge;
      }
    }
    if (best_ridge == 0.0) break;
    const Vector gain =
        svd.singularValues().array() /
        (squares.array() + static_cast<double>(n) * best_ridge);
    delta += svd.matrixV() * (gain.cwiseProduct(projected));
    leftover -= svd.matrixU() * ((gain.cwiseProduct(svd.singularValues()))
                                     .cwiseProduct(projected));
  }
  return delta;
}
}  // namespace detail

// Gradient descent on  SMI(x, y - psi beta) + (gamma/2) beta'beta  with
// Armijo backtracking.  beta starts at the leave-one-out-guarded boosted
// projection of y onto the basis (the same routine that polishes the
// final residuals): the descent's job is refining a conditional-mean fit
// toward independence, and starting it at raw data instead makes it
// traverse the whole dependence surface under a myopic per-epoch
// instrument, which on a fraction of samples strands it in co-adapted
// local optima with real structure left in the residuals.  On
// independence-null data the guard refuses the projection and the start
// stays at zero.  The ratio-basis centers and CV fold pattern are drawn
// once from rng; (sigma, lambda) are selected at iteration 0 and
// re-selected every options.reselect_every iterations.  Every iteration
// refits alpha on the current residuals and freezes the resulting
// instrument for its line search.  Stops on max_iterations, on a
// sub-tolerance decrease, or after three consecutive failed line searches
// (no_descent; a warning flag, not an error).  Returns the beta whose
// fresh measurement was smallest, after a final guarded projection of any
// remaining residual mean structure.
inline std::pair<Vector, FitTrace> fit_beta(
    const Vector& x, const Vector& y, const RegressionBasis& basis,
    double gamma, const LsmiConfig& lsmi_config, const DescentOptions& options,
    const RngStream& rng) {
  validate(lsmi_config);
  const Index n = x.size();
  if (y.size() != n) throw InsufficientData("coordinate vectors differ in length");
  if (n < 2 * lsmi_config.folds) {
    throw InsufficientData("need at least two samples per fold");
  }

  FitTrace trace;
  Vector beta = Vector::Zero(basis.size());
  if (options.max_iterations == 0) return {beta, trace};

  const Matrix psi = gaussian_design<double>(x, basis.centers, basis.tau);
  const Eigen::BDCSVD<Matrix> svd(psi,
                                  Eigen::ComputeThinU | Eigen::ComputeThinV);
  {
    Vector warm_leftover = y;
    beta = detail::loo_boosted_projection(svd, warm_leftover);
  }

  detail::RatioApparatus app;
  const Index b = std::min(lsmi_config.basis_cap, n);
  app.plan = make_cv_plan(n, b, lsmi_config.folds, rng);
  app.center_indices = app.plan.center_indices;
  app.centers_x = detail::gather(x, app.center_indices);

  Vector e = y;
  Vector best_beta = beta;
  double best_objective = std::numeric_limits<double>::infinity();
  int consecutive_failures = 0;
  bool last_step_unmeasured = false;

  // Trust radius for the frozen surrogate, in kernel widths of RMS
  // standardized residual displacement.  Shrunk when the next fresh
  // measurement fails to realize the surrogate's promised decrease, grown
  // when it delivers; at the floor the surrogate's promises are pure
  // extrapolation noise and the descent has converged.
  constexpr double trust_start = 0.5;
  constexpr double trust_floor = 0.01;
  constexpr double realized_poor = 0.25;
  constexpr double realized_good = 0.75;
  double trust = trust_start;
  double previous_fresh = std::numeric_limits<double>::quiet_NaN();
  double previous_accepted = std::numeric_limits<double>::quiet_NaN();
  bool ratio_comparable = false;
  double patience_reference = std::numeric_limits<double>::infinity();
  int stale_iterations = 0;

  for (int iteration = 0; iteration < options.max_iterations; ++iteration) {
    e = y - psi * beta;
    last_step_unmeasured = false;
    if (iteration % options.reselect_every == 0) {
      double mu = 0.0, sd = 1.0;
      detail::refresh_apparatus(app, x, detail::standardized_residuals(e, mu, sd),
                                lsmi_config);
      trace.reselect_iterations.push_back(iteration);
      // Fresh values from different (sigma, lambda) selections are not
      // comparable; skip one trust update.
      ratio_comparable = false;
    }
    const detail::Instrument instr = detail::make_instrument(app, e, gamma, beta);
    trace.epoch_starts.push_back(trace.objectives.size());
    trace.objectives.push_back(instr.objective);
    // Fresh measurements are the comparable ones; the best beta is judged
    // by what a ratio model fit on its own residuals reports.
    if (instr.objective < best_objective) {
      best_objective = instr.objective;
      best_beta = beta;
    }

    // Early stopping: sub-threshold gains are indistinguishable from
    // measurement noise, so a run of them means the fit is done.
    if (instr.objective < patience_reference - options.patience_tolerance) {
      patience_reference = instr.objective;
      stale_iterations = 0;
    } else if (++stale_iterations >= options.patience) {
      break;
    }

    if (ratio_comparable) {
      const double predicted = previous_fresh - previous_accepted;
      const double realized = previous_fresh - instr.objective;
      if (predicted > 0.0) {
        if (realized < realized_poor * predicted) {
          trust *= 0.5;
        } else if (realized > realized_good * predicted) {
          trust = std::min(2.0 * trust, trust_start);
        }
      }
      if (trust < trust_floor) break;  // promises no longer realized: done
    }
    ratio_comparable = false;

    const Vector gradient = detail::descent_gradient(
        app, instr, psi, gamma, beta, options.literal_gradient);
    const double gradient_sq = gradient.squaredNorm();
    if (!std::isfinite(gradient_sq)) {
      throw NonFiniteEvaluation("descent gradient is not finite");
    }

    // The frozen instrument is only meaningful near the residuals it was
    // fit on: push them far past the kernel width and every e-kernel dies,
    // which the surrogate misreads as perfect independence (its value floor
    // of -1/2).  Seed the line search so the candidate's RMS standardized
    // residual displacement stays within the trust radius.
    const Vector psig = psi * gradient;
    const double rms_displacement =
        psig.norm() / (instr.scale * std::sqrt(static_cast<double>(n)));
    double step = options.armijo.initial_step;
    if (rms_displacement > 0.0) {
      step = std::min(step, trust * app.sigma / rms_displacement);
    }

    bool accepted = false;
    double candidate_objective = instr.objective;
    Vector beta_candidate;
    while (step >= options.armijo.min_step) {
      beta_candidate = beta - step * gradient;
      candidate_objective = detail::frozen_objective(
          app, instr, e + step * psig, gamma, beta_candidate);
      if (!std::isfinite(candidate_objective)) {
        throw NonFiniteEvaluation("descent objective is not finite");
      }
      if (candidate_objective <=
          instr.objective -
              options.armijo.sufficient_decrease * step * gradient_sq) {
        accepted = true;
        break;
      }
      step *= options.armijo.shrink;
    }

    ++trace.iterations;
    if (!accepted) {
      trust = std::max(0.5 * trust, trust_floor);
      if (++consecutive_failures >= 3) {
        trace.no_descent = true;
        break;
      }
      continue;
    }
    consecutive_failures = 0;

    const double decrease = instr.objective - candidate_objective;
    beta = std::move(beta_candidate);
    trace.objectives.push_back(candidate_objective);
    last_step_unmeasured = true;
    previous_fresh = instr.objective;
    previous_accepted = candidate_objective;
    ratio_comparable = true;
    if (decrease < options.tolerance) break;
  }

  // A loop that ended right after an accepted step leaves that beta without
  // a fresh measurement; give it one so the returned beta really is the one
  // with the smallest freshly measured objective.
  if (last_step_unmeasured) {
    const detail::Instrument final_instr =
        detail::make_instrument(app, y - psi * beta, gamma, beta);
    trace.epoch_starts.push_back(trace.objectives.size());
    trace.objectives.push_back(final_instr.objective);
    if (final_instr.objective < best_objective) {
      best_objective = final_instr.objective;
      best_beta = beta;
    }
  }

  // The dependence objective is blind to whatever mean structure its
  // instruments cannot resolve, yet any leftover E[e|x] is dependence all
  // the same.  Project it out with the same guarded boosting that seeded
  // the descent.
  {
    Vector leftover = y - psi * best_beta;
    best_beta += detail::loo_boosted_projection(svd, leftover);
  }

  trace.sigma = app.sigma;
  trace.lambda = app.lambda;
  return {best_beta, trace};
}

inline std::pair<Vector, FitTrace> fit_beta(const SamplePairs& samples,
                                            const RegressionBasis& basis,
                                            double gamma,
                                            const LsmiConfig& lsmi_config,
                                            const RngStream& rng) {
  return fit_beta(samples.x, samples.y, basis, gamma, lsmi_config,
                  DescentOptions{}, rng);
}

// T-fold CV score of one (tau, gamma) grid point with an explicit
// partition: per fold, beta is fitted on the complement and the held-out
// residuals are scored by a fresh LSMI fit (its SMI is the score; lower
// means more independent).  Every fold reuses the same child streams, so
// mirror-image folds with identical content give identical scores.
inline double lsir_cv_score(const Vector& x, const Vector& y,
                            const std::vector<std::vector<Index>>& folds,
                            double tau, double gamma, const LsirConfig& config,
                            const RngStream& fold_rng) {
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

    RegressionBasis basis;
    basis.tau = tau;
    const Index m = std::min(config.basis_cap, static_cast<Index>(train.size()));
    basis.centers = detail::gather(
        x_train, fold_rng.child(0).sample_without_replacement(
                     static_cast<Index>(train.size()), m));
    const auto [beta, fit_trace] =
        fit_beta(x_train, y_train, basis, gamma, config.lsmi,
                 descent_options(config), fold_rng.child(1));
    (void)fit_trace;

    const Vector x_held = detail::gather(x, held);
    const Vector y_held = detail::gather(y, held);
    const Vector e_held =
        y_held - gaussian_design<double>(x_held, basis.centers, tau) * beta;
    const LsmiFit held_fit =
        fit_lsmi(x_held, e_held, config.lsmi, fold_rng.child(2));
    total += held_fit.smi.value;
  }
  return total / static_cast<double>(folds.size());
}

// Convenience overload drawing the partition from rng.child(0) (shuffle,
// near-equal contiguous chunks) and the shared fold stream from
// rng.child(1).
inline double lsir_cv_score(const Vector& x, const Vector& y, double tau,
                            double gamma, const LsirConfig& config,
                            const RngStream& rng) {
  const Index n = x.size();
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
  return lsir_cv_score(x, y, folds, tau, gamma, config, rng.child(1));
}

inline std::vector<double> resolve_tau_grid(const LsirConfig& config,
                                            const Vector& x) {
  if (!config.tau_grid.empty()) return config.tau_grid;
  const double scale = median_pairwise_distance(x, DiagonalPolicy::exclude);
  std::vector<double> grid;
  grid.reserve(config.tau_multipliers.size());
  for (const double m : config.tau_multipliers) grid.push_back(m * scale);
  return grid;
}

struct LsirFit {
  RegressionModel model;
  FitTrace trace;
  // The fit's reported estimate: the pool instrument (see
  // restart_measurements) that reported the largest SMI on the winner's
  // residuals, with smi.value overridden to that report.  Its SMI is the
  // fit's independence score.
  LsmiFit measurement;
  // Every restart's independently selected measurement instrument, in
  // restart order.  A restart's final SMI estimate is the largest value
  // any pool member reports on its residuals -- a descent can co-adapt
  // its residuals against one instrument's blind spots, but dependence
  // that any independently selected instrument still sees is real -- and
  // the winner minimizes that worst-case reading.  The entry at
  // trace.restart_index is the winner's own instrument (the selection a
  // fresh measurement of its residuals would make); permutation tests
  // freeze that one.
  std::vector<LsmiFit> restart_measurements;
  // Centered residuals y - f(x) on the fitting scale (mean zero).
  Vector residuals;
  // Identity maps when standardization is off.
  StandardizeRecord scaling;

  const SmiEstimate& smi() const { return measurement.smi; }
};

// Full LSIR pipeline.  Child-stream layout (the reproducibility contract):
// child(0) draws the CV partition, child(1) is the shared fold stream,
// child(2 + r) drives restart r (its child(0) the basis draw, child(1) the
// descent, child(2) the restart's measurement-instrument selection).
inline LsirFit fit_lsir(const SamplePairs& samples, const LsirConfig& config,
                        const RngStream& rng) {
  validate(config);
  validate(samples);
  const Index n = samples.n();
  if (n < 2 * config.folds) {
    throw InsufficientData("need at least two samples per fold");
  }

  LsirFit fit;
  Vector xs = samples.x;
  Vector ys = samples.y;
  if (config.standardize) {
    auto [standardized, record] = standardize(samples);
    xs = std::move(standardized.x);
    ys = std::move(standardized.y);
    fit.scaling = record;
  }

  // (tau, gamma) by cross-validated hold-out SMI.  Every candidate's fold
  // fits, held-out residuals and fresh LSMI instruments are exactly what
  // lsir_cv_score computes (same shared child streams); only the
  // aggregation differs: a candidate's fold score is the largest reading
  // any candidate's held-out instrument gives its residuals, not its own
  // instrument's reading alone.  Minimizing self-reported scores hunts
  // the grid for measurement blind spots -- a fresh selection on one
  // candidate's residuals can land on a width that rates real leftover
  // structure as independence, and the grid minimum lands exactly on such
  // entries -- while a residual vector every independently selected
  // instrument agrees is clean is trustworthy.  Same honesty mechanism as
  // the restart pool below.  Ties break toward the smaller tau then
  // smaller gamma, so grid order never matters.
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
  const std::size_t candidates =
      tau_grid.size() * config.gamma_grid.size();
  std::vector<double> pooled_scores(candidates, 0.0);
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
    residuals.reserve(candidates);
    instruments.reserve(candidates);
    for (const double tau : tau_grid) {
      basis.tau = tau;
      for (const double gamma : config.gamma_grid) {
        const auto [beta, fold_trace] =
            fit_beta(x_train, y_train, basis, gamma, config.lsmi,
                     descent_options(config), fold_rng.child(1));
        (void)fold_trace;
        residuals.push_back(
            y_held -
            gaussian_design<double>(x_held, basis.centers, tau) * beta);
        instruments.push_back(fit_lsmi(x_held, residuals.back(), config.lsmi,
                                       fold_rng.child(2)));
      }
    }
    for (std::size_t c = 0; c < candidates; ++c) {
      double loudest = -std::numeric_limits<double>::infinity();
      for (const LsmiFit& instrument : instruments) {
        const FrozenSmiStatistic frozen(x_held, residuals[c], instrument);
        const double value = frozen(residuals[c]);
        if (!std::isfinite(value)) {
          throw NonFiniteEvaluation("SMI estimate is not finite");
        }
        loudest = std::max(loudest, value);
      }
      pooled_scores[c] += loudest;
    }
  }
  bool have_best = false;
  double best_tau = 0.0;
  double best_gamma = 0.0;
  double best_score = 0.0;
  std::size_t candidate = 0;
  for (const double tau : tau_grid) {
    for (const double gamma : config.gamma_grid) {
      const double score =
          pooled_scores[candidate++] / static_cast<double>(folds.size());
      if (!std::isfinite(score)) {
        throw NonFiniteEvaluation("cross-validation score is not finite");
      }
      const bool better =
          !have_best || score < best_score ||
          (score == best_score &&
           (tau < best_tau || (tau == best_tau && gamma < best_gamma)));
      if (better) {
        best_tau = tau;
        best_gamma = gamma;
        best_score = score;
        have_best = true;
      }
    }
  }

  // Restarts: independent basis draws, full fit each.  Every restart also
  // runs an independent cross-validated LSMI selection on its own final
  // residuals, and the resulting ratio instruments form a pool.  A
  // restart's final SMI estimate is then the largest value any pool
  // member reports on its residuals, and the fit keeps the restart with
  // the smallest estimate (ties toward the earlier restart).  Judging
  // every restart by the whole pool keeps the estimates comparable and
  // keeps them honest: a dependence-minimizing descent co-adapts its
  // residuals against the instruments it selected, and a single fresh
  // selection on such residuals sometimes prefers a smooth,
  // structure-blind width that rates real leftover dependence as
  // independence -- while another restart's sharper instrument still
  // sees it.
  const Index m = std::min(config.basis_cap, n);
  struct Restart {
    RegressionBasis basis;
    Vector beta;
    FitTrace trace;
    double intercept = 0.0;
    Vector residuals;
  };
  std::vector<Restart> runs;
  runs.reserve(static_cast<std::size_t>(config.restarts));
  fit.restart_measurements.reserve(static_cast<std::size_t>(config.restarts));
  for (int r = 0; r < config.restarts; ++r) {
    const RngStream restart_rng = rng.child(2 + static_cast<std::uint64_t>(r));
    Restart run;
    run.basis.tau = best_tau;
    run.basis.centers =
        detail::gather(xs, restart_rng.child(0).sample_without_replacement(n, m));
    std::tie(run.beta, run.trace) =
        fit_beta(xs, ys, run.basis, best_gamma, config.lsmi,
                 descent_options(config), restart_rng.child(1));

    const Vector raw_residuals =
        ys - gaussian_design<double>(xs, run.basis.centers, run.basis.tau) *
                 run.beta;
    run.intercept = raw_residuals.mean();
    run.residuals = raw_residuals.array() - run.intercept;
    fit.restart_measurements.push_back(
        fit_lsmi(xs, run.residuals, config.lsmi, restart_rng.child(2)));
    runs.push_back(std::move(run));
  }

  std::vector<double> restart_smis;
  restart_smis.reserve(runs.size());
  int winner = 0;
  int winner_instrument = 0;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    double estimate = -std::numeric_limits<double>::infinity();
    int loudest = 0;
    for (std::size_t s = 0; s < fit.restart_measurements.size(); ++s) {
      const FrozenSmiStatistic frozen(xs, runs[r].residuals,
                                      fit.restart_measurements[s]);
      const double value = frozen(runs[r].residuals);
      if (!std::isfinite(value)) {
        throw NonFiniteEvaluation("SMI estimate is not finite");
      }
      if (value > estimate) {
        estimate = value;
        loudest = static_cast<int>(s);
      }
    }
    restart_smis.push_back(estimate);
    if (estimate < restart_smis[static_cast<std::size_t>(winner)]) {
      winner = static_cast<int>(r);
      winner_instrument = loudest;
    }
  }

  Restart& best = runs[static_cast<std::size_t>(winner)];
  fit.model.basis = std::move(best.basis);
  fit.model.beta = std::move(best.beta);
  fit.model.intercept = best.intercept;
  fit.measurement =
      fit.restart_measurements[static_cast<std::size_t>(winner_instrument)];
  fit.measurement.smi.value = restart_smis[static_cast<std::size_t>(winner)];
  fit.residuals = std::move(best.residuals);
  fit.trace = std::move(best.trace);
  fit.trace.restart_index = winner;
  fit.trace.tau = best_tau;
  fit.trace.gamma = best_gamma;
  fit.trace.final_smi = fit.measurement.smi.value;
  fit.trace.restart_smis = std::move(restart_smis);
  if (config.standardize) {
    fit.model.x_map = fit.scaling.x;
    fit.model.y_map = fit.scaling.y;
  }
  return fit;
}

}  // namespace lsir
