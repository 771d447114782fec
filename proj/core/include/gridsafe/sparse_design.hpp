#pragma once

// Sparsity-promoting H2 state feedback.
//
// For u = -K x the H2 cost is J(K) = tr(B1^T P(K) B1), where P(K) is the
// closed-loop observability Gramian
//   (A - B2 K)^T P + P (A - B2 K) = -(Q + K^T R K).
// The sparse design minimizes J(K) + gamma * sum_ij W_ij |K_ij| with
// W_ij = 1 / (|K_ij| + eps) refreshed between passes (reweighted l1), using
// ADMM on the split K - G = 0, then polishes the optimal gain on the
// identified sparsity pattern.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridsafe/kernels.hpp"
#include "gridsafe/netmodel.hpp"

namespace gridsafe::sparse {

using Pattern = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct SparsityOptions {
  double gamma = 0.0;
  double epsilon = 1e-3;  // reweighting constant
  double rho = 100.0;     // initial ADMM penalty
  /// Residual balancing: rho is multiplied (divided) by rho_scale whenever
  /// the primal residual exceeds rho_balance times the dual one (or vice
  /// versa). The cost is nearly flat along some gain directions, and a
  /// fixed rho then crawls along them.
  bool adaptive_rho = true;
  double rho_balance = 10.0;
  double rho_scale = 2.0;
  int max_admm_iters = 1000;
  int max_reweight_iters = 5;
  /// ADMM stops when ||K - G|| <= sqrt(nm) primal_tol + relative_tol max(||K||, ||G||)
  /// and rho ||G - G_prev|| <= sqrt(nm) dual_tol + relative_tol ||Lambda||.
  double primal_tol = 1e-4;
  double dual_tol = 1e-4;
  double relative_tol = 1e-2;
  /// Pattern extraction after ADMM: |G_ij| > relative_zero_tol * max|G|.
  double relative_zero_tol = 1e-6;
  /// Support of the polished gain: |K_ij| > zero_tol.
  double zero_tol = 1e-6;

  // Inner solvers.
  int max_kstep_iters = 200;
  double kstep_tol = 1e-6;
  int max_polish_iters = 5000;
  double polish_tol = 1e-9;
  bool polish = true;

  /// Throws kInvalidParameter on a violated option invariant.
  void validate() const;
};

struct IterationCounts {
  int admm = 0;      // total ADMM iterations over all reweighting passes
  int reweight = 0;  // reweighting passes performed
  int polish = 0;
};

struct GainResult {
  Eigen::MatrixXd K;  // n x 2n
  Pattern pattern;
  double gamma = 0.0;
  double cost = 0.0;
  int card = 0;
  kernels::StabilityReport stability;
  IterationCounts iterations;
  /// Set by gamma_sweep when this entry failed; K is then the last stable
  /// iterate available and cost is +inf.
  std::optional<std::string> failure;

  bool ok() const { return !failure.has_value(); }
};

struct CostAndGradient {
  double cost = 0.0;
  Eigen::MatrixXd gradient;
};

/// Throws kUnstableGain when A - B2 K is not Hurwitz.
double h2_cost(const net::LinearModel& model, const kernels::DesignWeights& w,
               const Eigen::MatrixXd& K);

/// grad J = 2 (R K - B2^T P) Lc with (A - B2 K) Lc + Lc (A - B2 K)^T = -B1 B1^T.
Eigen::MatrixXd h2_gradient(const net::LinearModel& model, const kernels::DesignWeights& w,
                            const Eigen::MatrixXd& K);

CostAndGradient h2_cost_and_gradient(const net::LinearModel& model,
                                     const kernels::DesignWeights& w, const Eigen::MatrixXd& K);

/// W_ij = 1 / (|K_ij| + eps).
Eigen::MatrixXd reweight(const Eigen::MatrixXd& K, double epsilon);

/// Elementwise prox of t_ij |.|: sign(v) max(|v| - t, 0).
Eigen::MatrixXd soft_threshold(const Eigen::MatrixXd& v, const Eigen::MatrixXd& thresholds);

/// Mask of |K_ij| > tol.
Pattern support(const Eigen::MatrixXd& K, double tol);
int cardinality(const Pattern& pattern);

/// ADMM iterate carried between reweighting passes and sweep points.
struct AdmmState {
  Eigen::MatrixXd K;       // smooth-step variable, always stabilizing
  Eigen::MatrixXd G;       // sparse copy
  Eigen::MatrixXd Lambda;  // dual variable (unscaled)
  int iterations = 0;
  double rho = 0.0;  // penalty in effect at the last iteration
  double primal_residual = 0.0;
  double dual_residual = 0.0;

  static AdmmState from_gain(const Eigen::MatrixXd& K);
};

/// One ADMM solve of min J(K) + gamma ||W o G||_1 s.t. K = G, warm-started
/// from `state`. Throws kAdmmStabilityLoss or kAdmmMaxIters; both messages
/// name the last stable iterate's cost.
AdmmState admm(const net::LinearModel& model, const kernels::DesignWeights& w,
               const SparsityOptions& opts, const Eigen::MatrixXd& weights, AdmmState state);

/// Reweighted ADMM passes followed by polishing on the final pattern.
/// `warm` carries ADMM state from a previous solve; when absent the
/// centralized (gamma = 0) gain seeds the iteration.
GainResult admm_sparse_gain(const net::LinearModel& model, const kernels::DesignWeights& w,
                            const SparsityOptions& opts,
                            const std::optional<Eigen::MatrixXd>& K_init = std::nullopt,
                            AdmmState* warm = nullptr);

/// Minimizes J over gains supported on `pattern`, starting from the
/// projection of `K_start`. Throws kPolishStabilityLoss if that projection
/// is not stabilizing.
GainResult polish(const net::LinearModel& model, const kernels::DesignWeights& w,
                  const Pattern& pattern, const Eigen::MatrixXd& K_start,
                  const SparsityOptions& opts = {});

enum class SweepMode {
  kWarmSequential,  // each point warm-started from its predecessor
  kColdParallel,    // independent solves from the centralized gain
};

/// One GainResult per gamma (ascending). Failed points are marked and the
/// sweep continues from the last successful state.
std::vector<GainResult> gamma_sweep(const net::LinearModel& model,
                                    const kernels::DesignWeights& w,
                                    const std::vector<double>& gammas, const SparsityOptions& opts,
                                    SweepMode mode = SweepMode::kWarmSequential);

/// `count` log-spaced values from lo to hi inclusive (a single value = lo).
std::vector<double> log_space(double lo, double hi, int count);

nlohmann::json to_json(const GainResult& result);
/// Reads the document written by to_json. Pattern, card and stability are
/// taken from the document; K must be n x 2n.
GainResult gain_from_json(const nlohmann::json& doc);

}  // namespace gridsafe::sparse
