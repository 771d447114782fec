#pragma once

// Dense control kernels for desk-scale systems (state dimension up to a few
// dozen): Lyapunov solves by Kronecker vectorization, Hurwitz checks, and a
// Newton-Kleinman continuous-time Riccati solver built on the Lyapunov kernel.

#include <vector>

#include <Eigen/Dense>

#include "gridsafe/netmodel.hpp"

namespace gridsafe::kernels {

struct StabilityReport {
  double spectral_abscissa = 0.0;
  bool is_hurwitz = false;
};

/// Maximum real part over the eigenvalues of a square matrix.
double spectral_abscissa(const Eigen::MatrixXd& a);
StabilityReport check_stability(const Eigen::MatrixXd& a);

struct LyapunovOptions {
  double residual_tol = 1e-10;
  /// Reciprocal condition estimate of the vectorized operator below which the
  /// solve is refused.
  double min_rcond = 1e-15;
  int max_refinements = 3;
  /// Refinement steps always taken with the residual formed in extended
  /// precision. The inertia scaling makes A badly scaled, and a residual
  /// computed in double hides errors of ~100 ulp in P.
  int extended_refinements = 1;
};

/// LU factorization of the vectorized operator I (x) A^T + A^T (x) I for a
/// Hurwitz A. One factorization serves both Gramian forms because the
/// controllability operator is the transpose of the observability one.
class LyapunovOperator {
 public:
  /// Throws kUnstableClosedLoop when `a` is not Hurwitz and
  /// kLyapunovConditioning when the operator is numerically singular.
  explicit LyapunovOperator(const Eigen::MatrixXd& a, const LyapunovOptions& options = {});

  /// P with A^T P + P A = -S.
  Eigen::MatrixXd solve_observability(const Eigen::MatrixXd& s) const;
  /// X with A X + X A^T = -S.
  Eigen::MatrixXd solve_controllability(const Eigen::MatrixXd& s) const;

  double rcond() const { return rcond_; }
  const StabilityReport& stability() const { return stability_; }

 private:
  Eigen::MatrixXd solve(const Eigen::MatrixXd& s, bool transposed) const;

  Eigen::MatrixXd a_;
  LyapunovOptions options_;
  StabilityReport stability_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  double rcond_ = 0.0;
};

/// P solving A_cl^T P + P A_cl = -S.
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a_cl, const Eigen::MatrixXd& s,
                               const LyapunovOptions& options = {});

/// ||A^T P + P A + S||_F / ||S||_F (absolute when S = 0).
double lyapunov_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& p,
                         const Eigen::MatrixXd& s);

/// State and control weights of the H2 / LQR design.
struct DesignWeights {
  Eigen::MatrixXd Q;
  Eigen::MatrixXd R;

  static DesignWeights identity(int states, int inputs);
};

/// Symmetry and definiteness of Q and R, plus stabilizability of (A, B) and
/// detectability of (A, Q^1/2) by the PBH rank test.
void validate_weights(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      const DesignWeights& w);

struct AreOptions {
  double residual_tol = 1e-8;
  int max_iterations = 60;
  LyapunovOptions lyapunov;
};

struct AreSolution {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> residual_history;
};

/// Normwise relative residual of A^T P + P A - P B R^-1 B^T P + Q = 0.
double are_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const DesignWeights& w,
                    const Eigen::MatrixXd& p);

/// Gain K0 with A - B K0 Hurwitz, from the shifted-Lyapunov (Bass) construction.
Eigen::MatrixXd initial_stabilizing_gain(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                         const LyapunovOptions& options = {});

/// Stabilizing solution of the continuous-time ARE by Newton-Kleinman.
/// Throws kAreDivergence (with the residual history in the message) when the
/// residual does not reach `residual_tol`.
AreSolution solve_are(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const DesignWeights& w,
                      const AreOptions& options = {});
AreSolution solve_are(const net::LinearModel& model, const DesignWeights& w,
                      const AreOptions& options = {});

}  // namespace gridsafe::kernels
