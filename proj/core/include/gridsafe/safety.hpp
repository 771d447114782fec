#pragma once

// Frequency safety layer.
//
// Per bus i the barrier pair h1 = omega_hat_i + omega_l, h2 = omega_h -
// omega_hat_i encodes -omega_l <= omega_hat_i <= omega_h. With linear class-K
// slopes eta1, eta2 and a disturbance bound |d_i| <= d_s, the robust
// conditions
//
//   dh1/dt + eta1 h1 >= 0,   dh2/dt + eta2 h2 >= 0   for every |d_i| <= d_s
//
// are affine in u_i, so the admissible set is an interval [lo, hi] and the
// minimal-deviation filter of a nominal control is a projection onto it.

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridsafe/error.hpp"
#include "gridsafe/netmodel.hpp"
#include "gridsafe/sparse_design.hpp"

namespace gridsafe::safety {

/// Band and slopes in internal units (rad/s, 1/s, p.u.).
struct SafetyEnvelope {
  double omega_low = 0.0;
  double omega_high = 0.0;
  double eta1 = 0.0;
  double eta2 = 0.0;
  double disturbance_bound = 0.0;

  /// Symmetric band given in Hz.
  static SafetyEnvelope from_hz(double band_hz, double eta1, double eta2, double d_s);
  void validate() const;
};

struct BarrierValues {
  double h1 = 0.0;
  double h2 = 0.0;
};

BarrierValues barrier_values(double omega_hat, const SafetyEnvelope& env);

struct ControlBounds {
  double lo = 0.0;
  double hi = 0.0;

  bool feasible() const { return lo <= hi; }
  double gap() const { return hi - lo; }
};

/// Thrown for an empty admissible interval; carries hi - lo (< 0).
class CbfConflict : public Error {
 public:
  CbfConflict(int node, const ControlBounds& bounds);
  double gap() const { return gap_; }

 private:
  double gap_;
};

/// Admissible interval for u_i at state x = [theta_hat; omega_hat]; may be
/// empty (lo > hi). Never throws for well-shaped inputs.
ControlBounds control_bounds(const net::LinearModel& model, const Eigen::VectorXd& x, int node,
                             const SafetyEnvelope& env);

/// As control_bounds, but an empty interval throws CbfConflict.
ControlBounds safe_control_bounds(const net::LinearModel& model, const Eigen::VectorXd& x,
                                  int node, const SafetyEnvelope& env);

/// u0 = -K x.
Eigen::VectorXd nominal_control(const Eigen::MatrixXd& K, const Eigen::VectorXd& x);

enum class FilterStatus { kInactive, kClampedLow, kClampedHigh, kInfeasibleFallback };
std::string to_string(FilterStatus status);

struct FilterOutput {
  double u = 0.0;
  FilterStatus status = FilterStatus::kInactive;
};

/// Projection of u0 onto [lo, hi]. Throws CbfConflict when the interval is
/// empty.
FilterOutput qp_filter(double u0, const ControlBounds& bounds);

/// Control for an empty interval: the midpoint, which minimizes the larger
/// of the two constraint violations.
FilterOutput infeasible_fallback(const ControlBounds& bounds);

/// Which layer makes node j part of node i's information set.
enum class Provenance { kGain, kPower, kBoth };
std::string to_string(Provenance p);

struct InformationSource {
  int node = 0;
  Provenance provenance = Provenance::kGain;
};

struct TopologyReport {
  /// nodes[i]: every j != i whose data the filtered control u_i* needs.
  std::vector<std::vector<InformationSource>> nodes;
  /// Undirected link counts per layer and for their union.
  int gain_links = 0;
  int power_links = 0;
  int union_links = 0;
};

/// Node i needs j when K has a nonzero in column j or n + j of row i
/// (nominal control) or when j is a power-network neighbour of i (filter
/// bounds).
TopologyReport cross_layer_topology(const sparse::Pattern& pattern, const net::NetworkSpec& spec);

nlohmann::json to_json(const TopologyReport& report);

}  // namespace gridsafe::safety
