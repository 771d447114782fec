#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridsafe/io.hpp"
#include "gridsafe/kernels.hpp"
#include "gridsafe/netmodel.hpp"
#include "gridsafe/safety.hpp"

namespace gridsafe::testing {

inline std::string config_path(const std::string& name) {
  return std::string(GRIDSAFE_CONFIG_DIR) + "/" + name;
}

inline net::NetworkSpec four_bus() { return io::load_network(config_path("four_bus.json")); }

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = uniform(rng, -scale, scale);
  }
  return m;
}

// Random Hurwitz matrix with abscissa in [-2, -0.1].
inline Eigen::MatrixXd random_stable(std::mt19937_64& rng, int n) {
  Eigen::MatrixXd a = random_matrix(rng, n, n);
  const double alpha = kernels::spectral_abscissa(a);
  return a - (alpha + uniform(rng, 0.1, 2.0)) * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::MatrixXd random_psd(std::mt19937_64& rng, int n) {
  const Eigen::MatrixXd f = random_matrix(rng, n, n);
  return f * f.transpose();
}

// Independent Lyapunov oracle: assemble the n^2 x n^2 system for
// A^T P + P A = -S entry by entry and solve it with textbook Gaussian
// elimination (partial pivoting) in scalar type T. Deliberately shares no
// code with the library's vectorized solver.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> naive_lyapunov_t(
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& a,
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& s) {
  const int n = static_cast<int>(a.rows());
  const int m = n * n;
  std::vector<std::vector<T>> sys(m, std::vector<T>(m + 1, T(0)));
  auto idx = [n](int i, int j) { return i + n * j; };
  // (A^T P + P A)_{ij} = sum_k a_ki p_kj + sum_k p_ik a_kj
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      auto& row = sys[idx(i, j)];
      for (int k = 0; k < n; ++k) {
        row[idx(k, j)] += a(k, i);
        row[idx(i, k)] += a(k, j);
      }
      row[m] = -s(i, j);
    }
  }
  for (int c = 0; c < m; ++c) {
    int piv = c;
    for (int r = c + 1; r < m; ++r) {
      if (std::abs(sys[r][c]) > std::abs(sys[piv][c])) piv = r;
    }
    std::swap(sys[c], sys[piv]);
    for (int r = c + 1; r < m; ++r) {
      const T f = sys[r][c] / sys[c][c];
      if (f == T(0)) continue;
      for (int k = c; k <= m; ++k) sys[r][k] -= f * sys[c][k];
    }
  }
  std::vector<T> x(m, T(0));
  for (int r = m - 1; r >= 0; --r) {
    T acc = sys[r][m];
    for (int k = r + 1; k < m; ++k) acc -= sys[r][k] * x[k];
    x[r] = acc / sys[r][r];
  }
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> p(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) p(i, j) = x[idx(i, j)];
  }
  return p;
}

inline Eigen::MatrixXd naive_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& s) {
  return naive_lyapunov_t<double>(a, s);
}

// H2 cost tr(B1^T P B1) of u = -K x evaluated in long double by the naive
// oracle plus one refinement step, for finite differences well below the
// double-precision noise floor.
inline long double h2_cost_extended(const net::LinearModel& model, const Eigen::MatrixXd& q,
                                    const Eigen::MatrixXd& r, const Eigen::MatrixXd& k) {
  using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const LMat kl = k.cast<long double>();
  const LMat acl = model.A.cast<long double>() - model.B2.cast<long double>() * kl;
  const LMat s = q.cast<long double>() + kl.transpose() * r.cast<long double>() * kl;
  LMat p = naive_lyapunov_t<long double>(acl, s);
  const LMat e = acl.transpose() * p + p * acl + s;
  p += naive_lyapunov_t<long double>(acl, e);
  const LMat b1 = model.B1.cast<long double>();
  return (b1.transpose() * p * b1).trace();
}

// Scalar-structured single bus model used by several tests.
inline net::NetworkSpec single_bus(double inertia, double damping) {
  net::NetworkSpec spec;
  net::BusSpec bus;
  bus.kind = net::BusKind::kSynchronousGenerator;
  bus.inertia = inertia;
  bus.damping = damping;
  spec.buses.push_back(bus);
  return spec;
}

// Two identical generators joined by one lossless line of coupling 1 / x.
inline net::NetworkSpec two_bus(double x = 1.0) {
  net::NetworkSpec spec;
  for (int i = 0; i < 2; ++i) {
    net::BusSpec bus;
    bus.id = i;
    bus.kind = net::BusKind::kSynchronousGenerator;
    bus.inertia = 1.0;
    bus.damping = 1.0;
    spec.buses.push_back(bus);
  }
  spec.lines.push_back({0, 1, 0.0, x});
  return spec;
}

// Margins of the two barrier conditions dh1/dt + eta1 h1 >= 0 and
// dh2/dt + eta2 h2 >= 0 at bus i, with the bus frequency derivative taken
// straight from the state-space rows for a given input u_i and disturbance d_i
// (all other inputs and disturbances zero).
struct BarrierMargins {
  double lower = 0.0;
  double upper = 0.0;
};

inline BarrierMargins barrier_margins(const net::LinearModel& model, const Eigen::VectorXd& x,
                                      int i, const safety::SafetyEnvelope& env, double u, double d) {
  const int n = model.n;
  const double omega_dot =
      model.A.row(n + i).dot(x) + model.B2(n + i, i) * u + model.B1(n + i, i) * d;
  const double omega = x(n + i);
  return {omega_dot + env.eta1 * (omega + env.omega_low),
          -omega_dot + env.eta2 * (env.omega_high - omega)};
}

// Minimizer of (u - u0)^2 on [lo, hi] by enumerating the KKT cases
// (no active bound, lower active, upper active) and keeping the one whose
// primal and dual feasibility both hold.
inline double kkt_projection(double u0, double lo, double hi) {
  struct Candidate {
    double u;
    double mu_lo;
    double mu_hi;
  };
  const Candidate cases[] = {
      {u0, 0.0, 0.0},
      {lo, 2.0 * (lo - u0), 0.0},
      {hi, 0.0, 2.0 * (u0 - hi)},
  };
  for (const Candidate& c : cases) {
    if (c.u >= lo && c.u <= hi && c.mu_lo >= 0.0 && c.mu_hi >= 0.0) return c.u;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline safety::SafetyEnvelope random_envelope(std::mt19937_64& rng) {
  return {uniform(rng, 0.5, 5.0), uniform(rng, 0.5, 5.0), uniform(rng, 1.0, 10.0),
          uniform(rng, 1.0, 10.0), uniform(rng, 0.0, 0.02)};
}

inline Eigen::VectorXd random_state(std::mt19937_64& rng, int n) {
  Eigen::VectorXd x(2 * n);
  for (int i = 0; i < n; ++i) x(i) = uniform(rng, -0.3, 0.3);
  for (int i = 0; i < n; ++i) x(n + i) = uniform(rng, -4.0, 4.0);
  return x;
}

}  // namespace gridsafe::testing
