#pragma once

// Sampled-data closed-loop simulation. At every t_k = k dt the nominal
// control -K x(t_k) is filtered bus by bus and held, together with the
// disturbance sample, over [t_k, t_k + dt) while the plant is integrated by
// fixed-step RK4.

#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridsafe/error.hpp"
#include "gridsafe/netmodel.hpp"
#include "gridsafe/safety.hpp"

namespace gridsafe::sim {

enum class DisturbanceKind { kZero, kConstant, kStep, kSinusoid, kUniformRandom, kAdversarial };

std::string to_string(DisturbanceKind kind);
DisturbanceKind parse_disturbance_kind(const std::string& text);

struct DisturbanceModel {
  DisturbanceKind kind = DisturbanceKind::kZero;
  double bound = 0.0;      // d_s, p.u.
  double amplitude = 0.0;  // constant level, step height, sine or uniform amplitude
  double step_time = 0.0;  // s
  double frequency_hz = 1.0;
  double phase = 0.0;  // rad, advanced by 2 pi / n per bus for sinusoids
  std::uint64_t seed = 0;

  /// Amplitudes must not exceed the bound, so every sample satisfies |d| <= d_s.
  void validate() const;
};

/// Stateful sampler; random kinds draw from a seeded 64-bit Mersenne Twister
/// with a portable uniform mapping, so sequences are reproducible anywhere.
class DisturbanceGenerator {
 public:
  DisturbanceGenerator(const DisturbanceModel& model, int n);

  /// d(t) for state x = [theta_hat; omega_hat].
  Eigen::VectorXd sample(double t, const Eigen::VectorXd& x);

 private:
  double uniform();  // in [-1, 1]

  DisturbanceModel model_;
  int n_;
  std::mt19937_64 rng_;
};

/// Stateless convenience for the deterministic kinds (and a fresh generator
/// for random ones).
Eigen::VectorXd sample_disturbance(const DisturbanceModel& dm, double t, const Eigen::VectorXd& x);

/// One RK4 substep of x' = A x + B2 u + B1 d with u and d held.
/// Throws kNumericalBlowup on a non-finite result.
Eigen::VectorXd step_linear(const net::LinearModel& model, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& u, const Eigen::VectorXd& d, double h);

/// Sine-coupled swing dynamics in shifted coordinates:
///   M w' = -D w + P_set - G v^2 - sum_j v_i v_j b_ij sin(th_i - th_j + th0_i - th0_j) + v^2 d
class NonlinearPlant {
 public:
  explicit NonlinearPlant(const net::NetworkSpec& spec);

  Eigen::VectorXd derivative(const Eigen::VectorXd& x, const Eigen::VectorXd& p_set,
                             const Eigen::VectorXd& d) const;
  /// Set-point that realizes the linear-model input u: P_set = u - c.
  Eigen::VectorXd setpoint(const Eigen::VectorXd& u) const { return u - offsets_; }
  int size() const { return n_; }

 private:
  struct Edge {
    int i;
    int j;
    double weight;        // b_ij v_i v_j
    double angle_offset;  // theta0_i - theta0_j
  };
  int n_;
  Eigen::VectorXd m_inv_;
  Eigen::VectorXd damping_;
  Eigen::VectorXd v_sq_;
  Eigen::VectorXd load_;  // G_ii v_i^2
  Eigen::VectorXd offsets_;
  std::vector<Edge> edges_;
};

Eigen::VectorXd step_nonlinear(const NonlinearPlant& plant, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& p_set, const Eigen::VectorXd& d, double h);

enum class PlantKind { kLinear, kNonlinear };
std::string to_string(PlantKind kind);
PlantKind parse_plant_kind(const std::string& text);

struct SimConfig {
  double dt = 1e-3;
  double horizon = 10.0;
  PlantKind plant = PlantKind::kLinear;
  int substeps = 1;
  safety::SafetyEnvelope envelope;
  /// When false the nominal -K x is applied unmodified.
  bool filter = true;

  int steps() const;
  void validate() const;
};

struct SimTrace {
  int n = 0;
  std::vector<double> time;
  Eigen::MatrixXd theta;  // samples x n, rad
  Eigen::MatrixXd omega;  // samples x n, rad/s
  Eigen::MatrixXd u;      // samples x n, p.u. (as applied)
  Eigen::MatrixXd d;      // samples x n, p.u.
  std::vector<std::vector<safety::FilterStatus>> status;

  int samples() const { return static_cast<int>(time.size()); }
  Eigen::VectorXd state(int k) const;
};

/// Aborts with the partial trace attached.
class SimulationError : public Error {
 public:
  SimulationError(const Error& cause, SimTrace partial);
  const SimTrace& partial() const { return partial_; }

 private:
  SimTrace partial_;
};

/// Records samples k = 0..steps(); the control recorded at t_k is the one
/// held over [t_k, t_k + dt) (the last row's control is computed but not
/// integrated). Throws kUnstableGain if K does not stabilize the linear model.
SimTrace run_closed_loop(const net::NetworkSpec& spec, const net::LinearModel& model,
                         const Eigen::MatrixXd& K, const SimConfig& cfg,
                         const DisturbanceModel& dm, const Eigen::VectorXd& x0);

/// x0 with theta_hat_i ~ U[theta_lo, theta_hi] and omega_hat_i ~ U[-omega_max, omega_max].
Eigen::VectorXd random_initial_state(int n, std::uint64_t seed, double theta_lo, double theta_hi,
                                     double omega_max);

struct BatchRun {
  std::uint64_t seed = 0;
  Eigen::VectorXd x0;
  std::optional<SimTrace> trace;
  std::optional<std::string> failure;
};

/// Independent runs (one per x0) executed on a thread pool; results keep
/// the input order. The disturbance seed of run k is dm.seed + k.
std::vector<BatchRun> run_batch(const net::NetworkSpec& spec, const net::LinearModel& model,
                                const Eigen::MatrixXd& K, const SimConfig& cfg,
                                const DisturbanceModel& dm,
                                const std::vector<Eigen::VectorXd>& initial_states,
                                unsigned threads = 0);

struct SafetyMetrics {
  double max_abs_omega = 0.0;      // rad/s over all samples and buses
  int violation_samples = 0;       // samples with some bus outside the band (+ tolerance)
  double violation_duration = 0.0;  // violation_samples * dt
  double max_exceedance = 0.0;     // largest distance outside the band, rad/s
  std::optional<double> settling_time;  // first t after which ||x||_inf <= settle_tol
  int filter_activations = 0;      // clamped (bus, sample) pairs
  int infeasible_fallbacks = 0;
  double final_omega_inf = 0.0;
  double final_theta_inf = 0.0;
};

/// `band_tol` widens the band before counting violations; `settle_tol`
/// bounds ||x||_inf for the settling time.
SafetyMetrics safety_metrics(const SimTrace& trace, const safety::SafetyEnvelope& env,
                             double band_tol = 0.0, double settle_tol = 1e-3);

nlohmann::json to_json(const SafetyMetrics& metrics);

/// CSV with frequencies converted to Hz; numbers printed with 17
/// significant digits so equal traces give byte-identical files.
void write_trace_csv(std::ostream& out, const SimTrace& trace);

}  // namespace gridsafe::sim
