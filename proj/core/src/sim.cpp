#include "gridsafe/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "gridsafe/kernels.hpp"

namespace gridsafe::sim {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void require_finite(const VectorXd& x) {
  if (!x.allFinite()) throw Error(ErrorCode::kNumericalBlowup, "state became non-finite");
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(DisturbanceKind kind) {
  switch (kind) {
    case DisturbanceKind::kZero: return "zero";
    case DisturbanceKind::kConstant: return "constant";
    case DisturbanceKind::kStep: return "step";
    case DisturbanceKind::kSinusoid: return "sinusoid";
    case DisturbanceKind::kUniformRandom: return "uniform-random";
    case DisturbanceKind::kAdversarial: return "adversarial";
  }
  return "unknown";
}

DisturbanceKind parse_disturbance_kind(const std::string& text) {
  for (auto k : {DisturbanceKind::kZero, DisturbanceKind::kConstant, DisturbanceKind::kStep,
                 DisturbanceKind::kSinusoid, DisturbanceKind::kUniformRandom,
                 DisturbanceKind::kAdversarial}) {
    if (text == to_string(k)) return k;
  }
  throw Error(ErrorCode::kInvalidParameter, "unknown disturbance kind '" + text + "'");
}

void DisturbanceModel::validate() const {
  if (!(bound >= 0.0) || !std::isfinite(bound)) {
    throw Error(ErrorCode::kInvalidParameter, "disturbance bound must be >= 0");
  }
  if (kind != DisturbanceKind::kZero && kind != DisturbanceKind::kAdversarial &&
      !(std::abs(amplitude) <= bound)) {
    throw Error(ErrorCode::kInvalidParameter,
                "disturbance amplitude exceeds the bound d_s for kind " + to_string(kind));
  }
  if (kind == DisturbanceKind::kSinusoid && !std::isfinite(frequency_hz)) {
    throw Error(ErrorCode::kInvalidParameter, "sinusoid frequency must be finite");
  }
}

DisturbanceGenerator::DisturbanceGenerator(const DisturbanceModel& model, int n)
    : model_(model), n_(n), rng_(model.seed) {
  model_.validate();
}

double DisturbanceGenerator::uniform() {
  const double unit = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  return 2.0 * unit - 1.0;
}

VectorXd DisturbanceGenerator::sample(double t, const VectorXd& x) {
  VectorXd d = VectorXd::Zero(n_);
  switch (model_.kind) {
    case DisturbanceKind::kZero:
      break;
    case DisturbanceKind::kConstant:
      d.setConstant(model_.amplitude);
      break;
    case DisturbanceKind::kStep:
      if (t >= model_.step_time) d.setConstant(model_.amplitude);
      break;
    case DisturbanceKind::kSinusoid:
      for (int i = 0; i < n_; ++i) {
        d(i) = model_.amplitude * std::sin(net::hz_to_rad(model_.frequency_hz) * t + model_.phase +
                                           net::kTwoPi * i / n_);
      }
      break;
    case DisturbanceKind::kUniformRandom:
      for (int i = 0; i < n_; ++i) d(i) = model_.amplitude * uniform();
      break;
    case DisturbanceKind::kAdversarial:
      // Push each bus toward the band edge it is already heading to; ties go up.
      for (int i = 0; i < n_; ++i) d(i) = x(n_ + i) >= 0.0 ? model_.bound : -model_.bound;
      break;
  }
  return d;
}

VectorXd sample_disturbance(const DisturbanceModel& dm, double t, const VectorXd& x) {
  DisturbanceGenerator gen(dm, static_cast<int>(x.size() / 2));
  return gen.sample(t, x);
}

VectorXd step_linear(const net::LinearModel& model, const VectorXd& x, const VectorXd& u,
                     const VectorXd& d, double h) {
  const VectorXd forcing = model.B2 * u + model.B1 * d;
  auto f = [&](const VectorXd& s) -> VectorXd { return model.A * s + forcing; };
  const VectorXd k1 = f(x);
  const VectorXd k2 = f(x + 0.5 * h * k1);
  const VectorXd k3 = f(x + 0.5 * h * k2);
  const VectorXd k4 = f(x + h * k3);
  VectorXd next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  require_finite(next);
  return next;
}

NonlinearPlant::NonlinearPlant(const net::NetworkSpec& spec) : n_(spec.size()) {
  m_inv_.resize(n_);
  damping_.resize(n_);
  v_sq_.resize(n_);
  load_.resize(n_);
  for (int i = 0; i < n_; ++i) {
    const auto& bus = spec.buses[static_cast<std::size_t>(i)];
    const auto [m, d] = net::inertia_damping(bus);
    m_inv_(i) = 1.0 / m;
    damping_(i) = d;
    v_sq_(i) = bus.voltage * bus.voltage;
    load_(i) = bus.shunt_conductance * v_sq_(i);
  }
  for (const auto& line : spec.lines) {
    const auto& a = spec.buses[static_cast<std::size_t>(line.from)];
    const auto& b = spec.buses[static_cast<std::size_t>(line.to)];
    edges_.push_back({line.from, line.to, net::line_coupling(line) * a.voltage * b.voltage,
                      a.initial_angle - b.initial_angle});
  }
  offsets_ = net::setpoint_offsets(spec);
}

VectorXd NonlinearPlant::derivative(const VectorXd& x, const VectorXd& p_set,
                                    const VectorXd& d) const {
  VectorXd power = p_set - load_ + v_sq_.cwiseProduct(d) - damping_.cwiseProduct(x.tail(n_));
  for (const auto& e : edges_) {
    const double flow = e.weight * std::sin(x(e.i) - x(e.j) + e.angle_offset);
    power(e.i) -= flow;
    power(e.j) += flow;
  }
  VectorXd dx(2 * n_);
  dx.head(n_) = x.tail(n_);
  dx.tail(n_) = m_inv_.cwiseProduct(power);
  return dx;
}

VectorXd step_nonlinear(const NonlinearPlant& plant, const VectorXd& x, const VectorXd& p_set,
                        const VectorXd& d, double h) {
  const VectorXd k1 = plant.derivative(x, p_set, d);
  const VectorXd k2 = plant.derivative(x + 0.5 * h * k1, p_set, d);
  const VectorXd k3 = plant.derivative(x + 0.5 * h * k2, p_set, d);
  const VectorXd k4 = plant.derivative(x + h * k3, p_set, d);
  VectorXd next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  require_finite(next);
  return next;
}

std::string to_string(PlantKind kind) {
  return kind == PlantKind::kLinear ? "linear" : "nonlinear";
}

PlantKind parse_plant_kind(const std::string& text) {
  if (text == "linear") return PlantKind::kLinear;
  if (text == "nonlinear") return PlantKind::kNonlinear;
  throw Error(ErrorCode::kInvalidParameter, "unknown plant '" + text + "'");
}

int SimConfig::steps() const { return static_cast<int>(std::llround(horizon / dt)); }

void SimConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::kInvalidParameter, "dt must be > 0");
  if (!(horizon >= dt) || !std::isfinite(horizon)) {
    throw Error(ErrorCode::kInvalidParameter, "horizon must be >= dt");
  }
  if (substeps < 1) throw Error(ErrorCode::kInvalidParameter, "substeps must be >= 1");
  if (filter) envelope.validate();
}

VectorXd SimTrace::state(int k) const {
  VectorXd x(2 * n);
  x.head(n) = theta.row(k).transpose();
  x.tail(n) = omega.row(k).transpose();
  return x;
}

SimulationError::SimulationError(const Error& cause, SimTrace partial)
    : Error(cause.code(), std::string("simulation aborted: ") + cause.what()),
      partial_(std::move(partial)) {}

SimTrace run_closed_loop(const net::NetworkSpec& spec, const net::LinearModel& model,
                         const MatrixXd& K, const SimConfig& cfg, const DisturbanceModel& dm,
                         const VectorXd& x0) {
  cfg.validate();
  const int n = model.n;
  if (K.rows() != n || K.cols() != 2 * n || x0.size() != 2 * n) {
    throw Error(ErrorCode::kShapeMismatch, "gain or initial state does not match the model");
  }
  if (!x0.allFinite()) throw Error(ErrorCode::kInvalidParameter, "initial state must be finite");
  if (!kernels::check_stability(model.A - model.B2 * K).is_hurwitz) {
    throw Error(ErrorCode::kUnstableGain, "gain does not stabilize the linear model");
  }

  std::optional<NonlinearPlant> plant;
  if (cfg.plant == PlantKind::kNonlinear) plant.emplace(spec);
  DisturbanceGenerator disturbance(dm, n);

  const int steps = cfg.steps();
  const int rows = steps + 1;
  SimTrace trace;
  trace.n = n;
  trace.time.reserve(static_cast<std::size_t>(rows));
  trace.theta.resize(rows, n);
  trace.omega.resize(rows, n);
  trace.u.resize(rows, n);
  trace.d.resize(rows, n);
  trace.status.reserve(static_cast<std::size_t>(rows));

  auto truncated = [&](int recorded) {
    SimTrace partial = trace;
    partial.theta.conservativeResize(recorded, n);
    partial.omega.conservativeResize(recorded, n);
    partial.u.conservativeResize(recorded, n);
    partial.d.conservativeResize(recorded, n);
    partial.time.resize(static_cast<std::size_t>(recorded));
    partial.status.resize(static_cast<std::size_t>(recorded));
    return partial;
  };

  const double h = cfg.dt / cfg.substeps;
  VectorXd x = x0;
  for (int k = 0; k < rows; ++k) {
    const double t = k * cfg.dt;
    const VectorXd u0 = safety::nominal_control(K, x);
    VectorXd u = u0;
    std::vector<safety::FilterStatus> status(static_cast<std::size_t>(n),
                                             safety::FilterStatus::kInactive);
    if (cfg.filter) {
      for (int i = 0; i < n; ++i) {
        const auto bounds = safety::control_bounds(model, x, i, cfg.envelope);
        const auto out = bounds.feasible() ? safety::qp_filter(u0(i), bounds)
                                           : safety::infeasible_fallback(bounds);
        u(i) = out.u;
        status[static_cast<std::size_t>(i)] = out.status;
      }
    }
    const VectorXd d = disturbance.sample(t, x);

    trace.time.push_back(t);
    trace.theta.row(k) = x.head(n).transpose();
    trace.omega.row(k) = x.tail(n).transpose();
    trace.u.row(k) = u.transpose();
    trace.d.row(k) = d.transpose();
    trace.status.push_back(std::move(status));
    if (k == steps) break;

    try {
      if (plant) {
        const VectorXd p_set = plant->setpoint(u);
        for (int s = 0; s < cfg.substeps; ++s) x = step_nonlinear(*plant, x, p_set, d, h);
      } else {
        for (int s = 0; s < cfg.substeps; ++s) x = step_linear(model, x, u, d, h);
      }
    } catch (const Error& e) {
      throw SimulationError(e, truncated(k + 1));
    }
  }
  return trace;
}

VectorXd random_initial_state(int n, std::uint64_t seed, double theta_lo, double theta_hi,
                              double omega_max) {
  std::mt19937_64 rng(seed);
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  VectorXd x(2 * n);
  for (int i = 0; i < n; ++i) x(i) = theta_lo + (theta_hi - theta_lo) * unit();
  for (int i = 0; i < n; ++i) x(n + i) = omega_max * (2.0 * unit() - 1.0);
  return x;
}

std::vector<BatchRun> run_batch(const net::NetworkSpec& spec, const net::LinearModel& model,
                                const MatrixXd& K, const SimConfig& cfg,
                                const DisturbanceModel& dm,
                                const std::vector<VectorXd>& initial_states, unsigned threads) {
  std::vector<BatchRun> runs(initial_states.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < runs.size(); k = next++) {
      DisturbanceModel local = dm;
      local.seed = dm.seed + k;
      runs[k].seed = local.seed;
      runs[k].x0 = initial_states[k];
      try {
        runs[k].trace = run_closed_loop(spec, model, K, cfg, local, initial_states[k]);
      } catch (const Error& e) {
        runs[k].failure = e.what();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, runs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return runs;
}

SafetyMetrics safety_metrics(const SimTrace& trace, const safety::SafetyEnvelope& env,
                             double band_tol, double settle_tol) {
  SafetyMetrics m;
  const int rows = trace.samples();
  if (rows == 0) return m;
  const double dt = rows > 1 ? trace.time[1] - trace.time[0] : 0.0;
  int last_unsettled = -1;
  for (int k = 0; k < rows; ++k) {
    bool violated = false;
    for (int i = 0; i < trace.n; ++i) {
      const double w = trace.omega(k, i);
      m.max_abs_omega = std::max(m.max_abs_omega, std::abs(w));
      const double outside = std::max(w - env.omega_high, -env.omega_low - w);
      if (outside > band_tol) violated = true;
      m.max_exceedance = std::max(m.max_exceedance, outside);
      switch (trace.status[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]) {
        case safety::FilterStatus::kClampedLow:
        case safety::FilterStatus::kClampedHigh:
          ++m.filter_activations;
          break;
        case safety::FilterStatus::kInfeasibleFallback:
          ++m.infeasible_fallbacks;
          break;
        case safety::FilterStatus::kInactive:
          break;
      }
    }
    if (violated) ++m.violation_samples;
    const double x_inf =
        std::max(trace.theta.row(k).cwiseAbs().maxCoeff(), trace.omega.row(k).cwiseAbs().maxCoeff());
    if (x_inf > settle_tol) last_unsettled = k;
  }
  m.violation_duration = m.violation_samples * dt;
  if (last_unsettled < 0) {
    m.settling_time = trace.time.front();
  } else if (last_unsettled + 1 < rows) {
    m.settling_time = trace.time[static_cast<std::size_t>(last_unsettled + 1)];
  }
  m.final_omega_inf = trace.omega.row(rows - 1).cwiseAbs().maxCoeff();
  m.final_theta_inf = trace.theta.row(rows - 1).cwiseAbs().maxCoeff();
  return m;
}

nlohmann::json to_json(const SafetyMetrics& m) {
  using nlohmann::json;
  return json{
      {"max_abs_omega_hz", net::rad_to_hz(m.max_abs_omega)},
      {"violation_samples", m.violation_samples},
      {"violation_duration_s", m.violation_duration},
      {"max_exceedance_hz", net::rad_to_hz(m.max_exceedance)},
      {"settling_time_s", m.settling_time ? json(*m.settling_time) : json(nullptr)},
      {"filter_activations", m.filter_activations},
      {"infeasible_fallbacks", m.infeasible_fallbacks},
      {"final_omega_inf_hz", net::rad_to_hz(m.final_omega_inf)},
      {"final_theta_inf_rad", m.final_theta_inf},
  };
}

void write_trace_csv(std::ostream& out, const SimTrace& trace) {
  const int n = trace.n;
  out << "t";
  for (int i = 0; i < n; ++i) out << ",theta_hat_" << i;
  for (int i = 0; i < n; ++i) out << ",omega_hat_" << i;
  for (int i = 0; i < n; ++i) out << ",u_" << i;
  for (int i = 0; i < n; ++i) out << ",d_" << i;
  for (int i = 0; i < n; ++i) out << ",filter_" << i;
  out << "\n";
  for (int k = 0; k < trace.samples(); ++k) {
    out << format_number(trace.time[static_cast<std::size_t>(k)]);
    for (int i = 0; i < n; ++i) out << ',' << format_number(trace.theta(k, i));
    for (int i = 0; i < n; ++i) out << ',' << format_number(net::rad_to_hz(trace.omega(k, i)));
    for (int i = 0; i < n; ++i) out << ',' << format_number(trace.u(k, i));
    for (int i = 0; i < n; ++i) out << ',' << format_number(trace.d(k, i));
    for (int i = 0; i < n; ++i) {
      out << ',' << safety::to_string(trace.status[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]);
    }
    out << "\n";
  }
}

}  // namespace gridsafe::sim
