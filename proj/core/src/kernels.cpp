#include "gridsafe/kernels.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "gridsafe/error.hpp"

namespace gridsafe::kernels {
namespace {

using Eigen::MatrixXd;

// Real parts within this band of zero are treated as exactly zero, so a
// Laplacian null space stays marginal instead of flickering around 0.
double abscissa_snap(const MatrixXd& a) {
  return 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, a.norm());
}

void require_square(const MatrixXd& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + " must be square");
  }
}

std::string format_history(const std::vector<double>& history) {
  std::ostringstream os;
  os << "[";
  for (std::size_t k = 0; k < history.size(); ++k) {
    if (k) os << ", ";
    os << history[k];
  }
  os << "]";
  return os.str();
}

// A^T P + P A + S accumulated in long double, rounded once at the end.
MatrixXd extended_residual(const MatrixXd& a, const MatrixXd& p, const MatrixXd& s) {
  using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const LMat al = a.cast<long double>();
  const LMat pl = p.cast<long double>();
  const LMat r = al.transpose() * pl + pl * al + s.cast<long double>();
  return r.cast<double>();
}

// Rank of [A - lambda I; C] (or its transpose form) via SVD.
bool pbh_full_rank(const Eigen::MatrixXcd& stacked, int n) {
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(stacked);
  const auto& sv = svd.singularValues();
  const double tol = std::max(stacked.rows(), stacked.cols()) *
                     std::numeric_limits<double>::epsilon() * std::max(1.0, sv(0)) * 1e3;
  int rank = 0;
  for (int k = 0; k < sv.size(); ++k) rank += sv(k) > tol ? 1 : 0;
  return rank == n;
}

}  // namespace

double spectral_abscissa(const MatrixXd& a) {
  require_square(a, "matrix");
  if (a.size() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<MatrixXd> es(a, /*computeEigenvectors=*/false);
  double alpha = es.eigenvalues().real().maxCoeff();
  if (std::abs(alpha) <= abscissa_snap(a)) alpha = 0.0;
  return alpha;
}

StabilityReport check_stability(const MatrixXd& a) {
  StabilityReport report;
  report.spectral_abscissa = spectral_abscissa(a);
  report.is_hurwitz = report.spectral_abscissa < 0.0;
  return report;
}

LyapunovOperator::LyapunovOperator(const MatrixXd& a, const LyapunovOptions& options)
    : a_(a), options_(options) {
  require_square(a, "Lyapunov matrix");
  stability_ = check_stability(a);
  if (!stability_.is_hurwitz) {
    std::ostringstream os;
    os << "spectral abscissa " << stability_.spectral_abscissa << " >= 0";
    throw Error(ErrorCode::kUnstableClosedLoop, os.str());
  }
  const Eigen::Index k = a.rows();
  const MatrixXd at = a.transpose();
  MatrixXd op = MatrixXd::Zero(k * k, k * k);
  // I (x) A^T on the diagonal blocks, A^T (x) I as scaled identities.
  for (Eigen::Index col = 0; col < k; ++col) {
    op.block(col * k, col * k, k, k) += at;
    for (Eigen::Index row = 0; row < k; ++row) {
      const double v = at(row, col);
      if (v == 0.0) continue;
      for (Eigen::Index d = 0; d < k; ++d) op(row * k + d, col * k + d) += v;
    }
  }
  lu_.compute(op);
  rcond_ = lu_.rcond();
  if (!(rcond_ >= options_.min_rcond)) {
    std::ostringstream os;
    os << "vectorized operator reciprocal condition estimate " << rcond_ << " below "
       << options_.min_rcond;
    throw Error(ErrorCode::kLyapunovConditioning, os.str());
  }
}

MatrixXd LyapunovOperator::solve(const MatrixXd& s, bool transposed) const {
  const Eigen::Index k = a_.rows();
  if (s.rows() != k || s.cols() != k) {
    throw Error(ErrorCode::kShapeMismatch, "Lyapunov right-hand side has the wrong shape");
  }
  // Solving the controllability form is the observability form with A^T.
  const MatrixXd a_eff = transposed ? MatrixXd(a_.transpose()) : a_;
  auto apply_inverse = [&](const MatrixXd& rhs) {
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(rhs.data(), rhs.size());
    Eigen::VectorXd sol = transposed ? Eigen::VectorXd(lu_.transpose().solve(v))
                                     : Eigen::VectorXd(lu_.solve(v));
    return MatrixXd(Eigen::Map<MatrixXd>(sol.data(), k, k));
  };
  const bool symmetric = (s - s.transpose()).cwiseAbs().maxCoeff() == 0.0;

  MatrixXd p = apply_inverse(-s);
  if (symmetric) p = 0.5 * (p + p.transpose()).eval();
  for (int it = 0; it < options_.extended_refinements; ++it) {
    p += apply_inverse(-extended_residual(a_eff, p, s));
    if (symmetric) p = 0.5 * (p + p.transpose()).eval();
  }
  double residual = lyapunov_residual(a_eff, p, s);
  for (int it = 0; it < options_.max_refinements && residual > options_.residual_tol; ++it) {
    p += apply_inverse(-extended_residual(a_eff, p, s));
    if (symmetric) p = 0.5 * (p + p.transpose()).eval();
    residual = lyapunov_residual(a_eff, p, s);
  }
  if (!(residual <= options_.residual_tol)) {
    std::ostringstream os;
    os << "relative residual " << residual << " after refinement (rcond estimate " << rcond_
       << ")";
    throw Error(ErrorCode::kLyapunovConditioning, os.str());
  }
  return p;
}

MatrixXd LyapunovOperator::solve_observability(const MatrixXd& s) const { return solve(s, false); }

MatrixXd LyapunovOperator::solve_controllability(const MatrixXd& s) const {
  return solve(s, true);
}

MatrixXd solve_lyapunov(const MatrixXd& a_cl, const MatrixXd& s, const LyapunovOptions& options) {
  return LyapunovOperator(a_cl, options).solve_observability(s);
}

double lyapunov_residual(const MatrixXd& a, const MatrixXd& p, const MatrixXd& s) {
  const double r = (a.transpose() * p + p * a + s).norm();
  const double scale = s.norm();
  return scale > 0.0 ? r / scale : r;
}

DesignWeights DesignWeights::identity(int states, int inputs) {
  return {MatrixXd::Identity(states, states), MatrixXd::Identity(inputs, inputs)};
}

void validate_weights(const MatrixXd& a, const MatrixXd& b, const DesignWeights& w) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  require_square(a, "A");
  if (b.rows() != n || w.Q.rows() != n || w.Q.cols() != n || w.R.rows() != m || w.R.cols() != m) {
    throw Error(ErrorCode::kShapeMismatch, "design weights do not match the plant dimensions");
  }
  const double sym_tol = 1e-12;
  if ((w.Q - w.Q.transpose()).norm() > sym_tol * std::max(1.0, w.Q.norm())) {
    throw Error(ErrorCode::kInvalidParameter, "Q must be symmetric");
  }
  if ((w.R - w.R.transpose()).norm() > sym_tol * std::max(1.0, w.R.norm())) {
    throw Error(ErrorCode::kInvalidParameter, "R must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> q_eig(w.Q, Eigen::EigenvaluesOnly);
  if (n > 0 && q_eig.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, w.Q.norm())) {
    throw Error(ErrorCode::kInvalidParameter, "Q must be positive semidefinite");
  }
  Eigen::LLT<MatrixXd> r_llt(w.R);
  if (r_llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kInvalidParameter, "R must be positive definite");
  }

  Eigen::EigenSolver<MatrixXd> es(a, false);
  const Eigen::MatrixXcd ac = a.cast<std::complex<double>>();
  const double snap = abscissa_snap(a);
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
    const std::complex<double> lambda = es.eigenvalues()(k);
    if (lambda.real() < -snap) continue;
    const Eigen::MatrixXcd shifted = ac - lambda * Eigen::MatrixXcd::Identity(n, n);
    Eigen::MatrixXcd ctrb(n, n + m);
    ctrb << shifted, b.cast<std::complex<double>>();
    if (!pbh_full_rank(ctrb, static_cast<int>(n))) {
      throw Error(ErrorCode::kInvalidParameter, "(A, B) is not stabilizable");
    }
    Eigen::MatrixXcd obsv(2 * n, n);
    obsv << shifted, w.Q.cast<std::complex<double>>();
    if (!pbh_full_rank(obsv, static_cast<int>(n))) {
      throw Error(ErrorCode::kInvalidParameter, "(A, Q^1/2) is not detectable");
    }
  }
}

double are_residual(const MatrixXd& a, const MatrixXd& b, const DesignWeights& w,
                    const MatrixXd& p) {
  const MatrixXd atp = a.transpose() * p;
  const MatrixXd quad = p * b * w.R.llt().solve(b.transpose() * p);
  const MatrixXd res = atp + atp.transpose() - quad + w.Q;
  const double scale = w.Q.norm() + 2.0 * atp.norm() + quad.norm();
  return scale > 0.0 ? res.norm() / scale : res.norm();
}

MatrixXd initial_stabilizing_gain(const MatrixXd& a, const MatrixXd& b,
                                  const LyapunovOptions& options) {
  const Eigen::Index n = a.rows();
  if (check_stability(a).is_hurwitz) return MatrixXd::Zero(b.cols(), n);
  // Shift so that every eigenvalue of A + sigma I lies in the open right half
  // plane, then X solving (A + sigma I) X + X (A + sigma I)^T = 2 B B^T is
  // positive definite and K0 = B^T X^-1 gives (A - B K0) X + X (A - B K0)^T
  // = -2 sigma X.
  Eigen::EigenSolver<MatrixXd> es(a, false);
  const double beta = -es.eigenvalues().real().minCoeff();
  const double sigma = std::max(beta, 0.0) + 0.1 * std::max(1.0, std::abs(beta));
  const MatrixXd shifted = -(a + sigma * MatrixXd::Identity(n, n)).transpose();
  const MatrixXd x = solve_lyapunov(shifted, 2.0 * b * b.transpose(), options);
  Eigen::LDLT<MatrixXd> ldlt(x);
  MatrixXd k0 = ldlt.solve(b).transpose();
  if (!check_stability(a - b * k0).is_hurwitz) {
    throw Error(ErrorCode::kAreDivergence,
                "could not construct a stabilizing initial gain (is (A, B) stabilizable?)");
  }
  return k0;
}

AreSolution solve_are(const MatrixXd& a, const MatrixXd& b, const DesignWeights& w,
                      const AreOptions& options) {
  validate_weights(a, b, w);
  const Eigen::LLT<MatrixXd> r_llt(w.R);
  AreSolution sol;
  sol.K = initial_stabilizing_gain(a, b, options.lyapunov);

  // Intermediate Newton steps may be poorly conditioned far from the
  // solution; the residual check at the end is the real acceptance test.
  LyapunovOptions inner = options.lyapunov;
  inner.residual_tol = std::max(inner.residual_tol, 1e-6);

  double previous = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= options.max_iterations; ++it) {
    const MatrixXd a_cl = a - b * sol.K;
    MatrixXd p;
    try {
      p = LyapunovOperator(a_cl, inner)
              .solve_observability(w.Q + sol.K.transpose() * w.R * sol.K);
    } catch (const Error& e) {
      throw Error(ErrorCode::kAreDivergence, std::string("Newton step failed (") + e.what() +
                                                 "); residual history " +
                                                 format_history(sol.residual_history));
    }
    sol.P = p;
    sol.K = r_llt.solve(b.transpose() * p);
    sol.iterations = it;
    sol.residual = are_residual(a, b, w, p);
    sol.residual_history.push_back(sol.residual);
    const bool converged = sol.residual <= options.residual_tol;
    if (converged && (sol.residual <= 1e-3 * options.residual_tol || sol.residual > 0.5 * previous)) {
      break;
    }
    previous = sol.residual;
  }
  if (!(sol.residual <= options.residual_tol)) {
    throw Error(ErrorCode::kAreDivergence,
                "residual history " + format_history(sol.residual_history));
  }
  if (!check_stability(a - b * sol.K).is_hurwitz) {
    throw Error(ErrorCode::kAreDivergence, "final gain is not stabilizing");
  }
  return sol;
}

AreSolution solve_are(const net::LinearModel& model, const DesignWeights& w,
                      const AreOptions& options) {
  return solve_are(model.A, model.B2, w, options);
}

}  // namespace gridsafe::kernels
