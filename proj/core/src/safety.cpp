#include "gridsafe/safety.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gridsafe::safety {
namespace {

std::string conflict_message(int node, const ControlBounds& b) {
  std::ostringstream os;
  os << "bus " << node << ": lo " << b.lo << " > hi " << b.hi << " (gap " << b.gap()
     << "); d_s or eta too aggressive for the band";
  return os.str();
}

}  // namespace

SafetyEnvelope SafetyEnvelope::from_hz(double band_hz, double eta1, double eta2, double d_s) {
  return {net::hz_to_rad(band_hz), net::hz_to_rad(band_hz), eta1, eta2, d_s};
}

void SafetyEnvelope::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!positive(omega_low) || !positive(omega_high)) {
    throw Error(ErrorCode::kInvalidParameter, "safety band limits must be > 0");
  }
  if (!positive(eta1) || !positive(eta2)) {
    throw Error(ErrorCode::kInvalidParameter, "eta1 and eta2 must be > 0");
  }
  if (!(disturbance_bound >= 0.0) || !std::isfinite(disturbance_bound)) {
    throw Error(ErrorCode::kInvalidParameter, "disturbance bound must be >= 0");
  }
}

BarrierValues barrier_values(double omega_hat, const SafetyEnvelope& env) {
  return {omega_hat + env.omega_low, env.omega_high - omega_hat};
}

CbfConflict::CbfConflict(int node, const ControlBounds& bounds)
    : Error(ErrorCode::kCbfConflict, conflict_message(node, bounds)), gap_(bounds.gap()) {}

ControlBounds control_bounds(const net::LinearModel& model, const Eigen::VectorXd& x, int node,
                             const SafetyEnvelope& env) {
  const int n = model.n;
  if (x.size() != 2 * n || node < 0 || node >= n) {
    throw Error(ErrorCode::kShapeMismatch, "state or node index does not match the model");
  }
  const double m = model.M(node);
  const double omega = x(n + node);
  // (L theta)_i = sum_j b_ij v_i v_j (theta_i - theta_j): the linearized
  // power flowing out of bus i.
  const double outflow = model.L.row(node).dot(x.head(n));
  const double drift = model.D(node) * omega + outflow;
  const double worst_d = model.V(node) * model.V(node) * env.disturbance_bound;
  const BarrierValues h = barrier_values(omega, env);
  return {drift + worst_d - m * env.eta1 * h.h1, drift - worst_d + m * env.eta2 * h.h2};
}

ControlBounds safe_control_bounds(const net::LinearModel& model, const Eigen::VectorXd& x,
                                  int node, const SafetyEnvelope& env) {
  const ControlBounds b = control_bounds(model, x, node, env);
  if (!b.feasible()) throw CbfConflict(node, b);
  return b;
}

Eigen::VectorXd nominal_control(const Eigen::MatrixXd& K, const Eigen::VectorXd& x) {
  if (K.cols() != x.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gain columns do not match the state size");
  }
  return -(K * x);
}

std::string to_string(FilterStatus status) {
  switch (status) {
    case FilterStatus::kInactive: return "inactive";
    case FilterStatus::kClampedLow: return "clamped-lo";
    case FilterStatus::kClampedHigh: return "clamped-hi";
    case FilterStatus::kInfeasibleFallback: return "infeasible-fallback";
  }
  return "unknown";
}

FilterOutput qp_filter(double u0, const ControlBounds& bounds) {
  if (!bounds.feasible()) throw CbfConflict(-1, bounds);
  if (u0 < bounds.lo) return {bounds.lo, FilterStatus::kClampedLow};
  if (u0 > bounds.hi) return {bounds.hi, FilterStatus::kClampedHigh};
  return {u0, FilterStatus::kInactive};
}

FilterOutput infeasible_fallback(const ControlBounds& bounds) {
  return {0.5 * (bounds.lo + bounds.hi), FilterStatus::kInfeasibleFallback};
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kGain: return "gain";
    case Provenance::kPower: return "power";
    case Provenance::kBoth: return "both";
  }
  return "unknown";
}

TopologyReport cross_layer_topology(const sparse::Pattern& pattern, const net::NetworkSpec& spec) {
  const int n = spec.size();
  if (pattern.rows() != n || pattern.cols() != 2 * n) {
    throw Error(ErrorCode::kShapeMismatch, "pattern must be n x 2n for an n-bus network");
  }
  std::vector<std::vector<bool>> gain(n, std::vector<bool>(n, false));
  std::vector<std::vector<bool>> power(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) gain[i][j] = pattern(i, j) || pattern(i, n + j);
    }
    for (int j : spec.neighbors(i)) power[i][j] = true;
  }

  TopologyReport report;
  report.nodes.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (gain[i][j] && power[i][j]) {
        report.nodes[i].push_back({j, Provenance::kBoth});
      } else if (gain[i][j]) {
        report.nodes[i].push_back({j, Provenance::kGain});
      } else if (power[i][j]) {
        report.nodes[i].push_back({j, Provenance::kPower});
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool g = gain[i][j] || gain[j][i];
      const bool p = power[i][j];
      report.gain_links += g ? 1 : 0;
      report.power_links += p ? 1 : 0;
      report.union_links += (g || p) ? 1 : 0;
    }
  }
  return report;
}

nlohmann::json to_json(const TopologyReport& report) {
  using nlohmann::json;
  json nodes = json::array();
  for (std::size_t i = 0; i < report.nodes.size(); ++i) {
    json sources = json::array();
    for (const auto& s : report.nodes[i]) {
      sources.push_back({{"node", s.node}, {"provenance", to_string(s.provenance)}});
    }
    nodes.push_back({{"node", static_cast<int>(i)}, {"needs", std::move(sources)}});
  }
  return json{{"nodes", std::move(nodes)},
              {"links",
               {{"gain", report.gain_links},
                {"power", report.power_links},
                {"union", report.union_links}}}};
}

}  // namespace gridsafe::safety
