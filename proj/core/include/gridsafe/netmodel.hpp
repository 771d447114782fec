#pragma once

// Microgrid network description and the small-angle state-space model
//
//   d/dt theta_hat = omega_hat
//   M d/dt omega_hat = -D omega_hat - L theta_hat + u + V^2 d
//
// with x = [theta_hat; omega_hat], i.e. x' = A x + B2 u + B1 d.
//
// Conventions:
//  * Lines are stored by their positive coupling b = X / (R^2 + X^2), so the
//    weighted Laplacian L is positive semidefinite.
//  * Frequencies are rad/s internally. Droop slopes arrive in Hz per p.u. and
//    are scaled by 2*pi when M and D are derived.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace gridsafe::net {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

inline double hz_to_rad(double hz) { return hz * kTwoPi; }
inline double rad_to_hz(double rad) { return rad / kTwoPi; }

enum class BusKind { kSynchronousGenerator, kDroopInverter };

struct BusSpec {
  int id = 0;
  BusKind kind = BusKind::kDroopInverter;
  double droop_hz_per_pu = 0.0;       // inverter only
  double filter_time_constant = 0.0;  // inverter only, seconds
  double inertia = 0.0;               // generator only
  double damping = 0.0;               // generator only
  double voltage = 1.0;               // p.u.
  double shunt_conductance = 0.0;     // p.u., the active power load G_ii
  double initial_angle = 0.0;         // rad

  bool operator==(const BusSpec&) const = default;
};

struct LineSpec {
  int from = 0;
  int to = 0;
  double resistance = 0.0;  // p.u.
  double reactance = 0.0;   // p.u.

  bool operator==(const LineSpec&) const = default;
};

struct NetworkSpec {
  std::vector<BusSpec> buses;  // sorted by id, ids are 0..n-1
  std::vector<LineSpec> lines;
  double desired_frequency_hz = 60.0;

  int size() const { return static_cast<int>(buses.size()); }
  /// Power-network neighbours of `bus`, ascending.
  std::vector<int> neighbors(int bus) const;

  bool operator==(const NetworkSpec&) const = default;
};

/// Assembled design plant. M, D and V are diagonal and stored as vectors.
struct LinearModel {
  int n = 0;
  Eigen::MatrixXd A;   // 2n x 2n
  Eigen::MatrixXd B1;  // 2n x n, disturbance input
  Eigen::MatrixXd B2;  // 2n x n, control input
  Eigen::VectorXd M;
  Eigen::VectorXd D;
  Eigen::VectorXd V;
  Eigen::MatrixXd L;  // n x n weighted Laplacian

  int states() const { return 2 * n; }
  int inputs() const { return n; }
};

/// Validates and converts a configuration document. Errors name the bus or
/// line at fault.
NetworkSpec parse_network(const nlohmann::json& doc);
NetworkSpec parse_network(const std::string& text);
nlohmann::json to_json(const NetworkSpec& spec);

/// Checks every NetworkSpec invariant; throws gridsafe::Error on the first
/// violation.
void validate(const NetworkSpec& spec);

/// Magnitude of the imaginary part of 1 / (R + jX).
double line_coupling(const LineSpec& line);

/// (M_i, D_i). Inverters: (tau / lambda, 1 / lambda) with lambda in rad/s
/// per p.u.; generators: the stored values.
std::pair<double, double> inertia_damping(const BusSpec& bus);

Eigen::MatrixXd assemble_laplacian(const NetworkSpec& spec);
LinearModel assemble_state_space(const NetworkSpec& spec);

/// Constant c_i such that P_set = u - c_i cancels the load and initial-angle
/// forcing of the swing equation at bus i.
double setpoint_offset(const NetworkSpec& spec, int bus);
Eigen::VectorXd setpoint_offsets(const NetworkSpec& spec);

std::string to_string(BusKind kind);

}  // namespace gridsafe::net
