#include "gridsafe/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>

#include "gridsafe/error.hpp"

namespace gridsafe::net {
namespace {

using nlohmann::json;

std::string bus_name(int id) { return "bus " + std::to_string(id); }

std::string line_name(const LineSpec& line) {
  return "line (" + std::to_string(line.from) + "," + std::to_string(line.to) + ")";
}

const json& require(const json& obj, const char* key, const std::string& owner) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    throw Error(ErrorCode::kMissingField, owner + ": '" + key + "' is required");
  }
  return *it;
}

double require_number(const json& obj, const char* key, const std::string& owner) {
  const json& v = require(obj, key, owner);
  if (!v.is_number()) {
    throw Error(ErrorCode::kInvalidParameter, owner + ": '" + key + "' must be a number");
  }
  return v.get<double>();
}

double optional_number(const json& obj, const char* key, const std::string& owner,
                       double fallback) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  if (!it->is_number()) {
    throw Error(ErrorCode::kInvalidParameter, owner + ": '" + key + "' must be a number");
  }
  return it->get<double>();
}

int require_index(const json& obj, const char* key, const std::string& owner) {
  const json& v = require(obj, key, owner);
  if (!v.is_number_integer()) {
    throw Error(ErrorCode::kInvalidParameter, owner + ": '" + key + "' must be an integer");
  }
  return v.get<int>();
}

BusKind parse_kind(const std::string& text, const std::string& owner) {
  if (text == "synchronous-generator") return BusKind::kSynchronousGenerator;
  if (text == "droop-inverter") return BusKind::kDroopInverter;
  throw Error(ErrorCode::kInvalidParameter,
              owner + ": unknown kind '" + text +
                  "' (expected synchronous-generator or droop-inverter)");
}

void require_positive(double value, const char* key, const std::string& owner) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    std::ostringstream os;
    os << owner << ": '" << key << "' must be > 0 (got " << value << ")";
    throw Error(ErrorCode::kInvalidParameter, os.str());
  }
}

void require_finite(double value, const char* key, const std::string& owner) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kInvalidParameter, owner + ": '" + key + "' must be finite");
  }
}

}  // namespace

std::string to_string(BusKind kind) {
  return kind == BusKind::kSynchronousGenerator ? "synchronous-generator" : "droop-inverter";
}

std::vector<int> NetworkSpec::neighbors(int bus) const {
  std::vector<int> out;
  for (const auto& line : lines) {
    if (line.from == bus) out.push_back(line.to);
    if (line.to == bus) out.push_back(line.from);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void validate(const NetworkSpec& spec) {
  const int n = spec.size();
  if (n == 0) throw Error(ErrorCode::kMissingField, "network: 'buses' must not be empty");
  require_positive(spec.desired_frequency_hz, "desired_frequency_hz", "network");

  for (int k = 0; k < n; ++k) {
    const BusSpec& bus = spec.buses[static_cast<std::size_t>(k)];
    if (bus.id != k) {
      throw Error(ErrorCode::kInvalidParameter,
                  bus_name(bus.id) + ": bus ids must be 0..n-1 without gaps (expected " +
                      std::to_string(k) + ")");
    }
    const std::string owner = bus_name(bus.id);
    if (bus.kind == BusKind::kDroopInverter) {
      require_positive(bus.droop_hz_per_pu, "lambda_p_hz_per_pu", owner);
      require_positive(bus.filter_time_constant, "tau_s", owner);
    } else {
      require_positive(bus.inertia, "inertia", owner);
      require_positive(bus.damping, "damping", owner);
    }
    require_positive(bus.voltage, "voltage_pu", owner);
    require_finite(bus.shunt_conductance, "g_shunt_pu", owner);
    require_finite(bus.initial_angle, "theta0_rad", owner);
  }

  std::set<std::pair<int, int>> seen;
  for (const auto& line : spec.lines) {
    const std::string owner = line_name(line);
    if (line.from < 0 || line.from >= n || line.to < 0 || line.to >= n) {
      throw Error(ErrorCode::kInvalidParameter, owner + ": endpoint is not a bus id");
    }
    if (line.from == line.to) {
      throw Error(ErrorCode::kInvalidParameter, owner + ": endpoints must differ");
    }
    require_positive(line.reactance, "x_pu", owner);
    if (!(line.resistance >= 0.0) || !std::isfinite(line.resistance)) {
      throw Error(ErrorCode::kInvalidParameter, owner + ": 'r_pu' must be >= 0");
    }
    const auto key = std::minmax(line.from, line.to);
    if (!seen.insert(key).second) {
      throw Error(ErrorCode::kDuplicateLine, owner + " appears more than once");
    }
  }

  if (n > 1) {
    std::vector<bool> reached(static_cast<std::size_t>(n), false);
    std::queue<int> frontier;
    frontier.push(0);
    reached[0] = true;
    while (!frontier.empty()) {
      const int at = frontier.front();
      frontier.pop();
      for (int next : spec.neighbors(at)) {
        if (!reached[static_cast<std::size_t>(next)]) {
          reached[static_cast<std::size_t>(next)] = true;
          frontier.push(next);
        }
      }
    }
    for (int k = 0; k < n; ++k) {
      if (!reached[static_cast<std::size_t>(k)]) {
        throw Error(ErrorCode::kDisconnected,
                    bus_name(k) + " is not reachable from bus 0 through the line graph");
      }
    }
  }
}

NetworkSpec parse_network(const json& doc) {
  if (!doc.is_object()) {
    throw Error(ErrorCode::kMalformedDocument, "network document must be an object");
  }
  NetworkSpec spec;
  spec.desired_frequency_hz = require_number(doc, "desired_frequency_hz", "network");

  const json& buses = require(doc, "buses", "network");
  if (!buses.is_array()) {
    throw Error(ErrorCode::kMalformedDocument, "network: 'buses' must be an array");
  }
  for (std::size_t k = 0; k < buses.size(); ++k) {
    const json& b = buses[k];
    const std::string where = "buses[" + std::to_string(k) + "]";
    if (!b.is_object()) throw Error(ErrorCode::kMalformedDocument, where + " must be an object");
    BusSpec bus;
    bus.id = require_index(b, "id", where);
    const std::string owner = bus_name(bus.id);
    const json& kind = require(b, "kind", owner);
    if (!kind.is_string()) {
      throw Error(ErrorCode::kInvalidParameter, owner + ": 'kind' must be a string");
    }
    bus.kind = parse_kind(kind.get<std::string>(), owner);
    if (bus.kind == BusKind::kDroopInverter) {
      bus.droop_hz_per_pu = require_number(b, "lambda_p_hz_per_pu", owner);
      bus.filter_time_constant = require_number(b, "tau_s", owner);
    } else {
      bus.inertia = require_number(b, "inertia", owner);
      bus.damping = require_number(b, "damping", owner);
    }
    bus.voltage = require_number(b, "voltage_pu", owner);
    bus.shunt_conductance = optional_number(b, "g_shunt_pu", owner, 0.0);
    bus.initial_angle = optional_number(b, "theta0_rad", owner, 0.0);
    spec.buses.push_back(bus);
  }
  std::sort(spec.buses.begin(), spec.buses.end(),
            [](const BusSpec& a, const BusSpec& b) { return a.id < b.id; });
  for (std::size_t k = 1; k < spec.buses.size(); ++k) {
    if (spec.buses[k].id == spec.buses[k - 1].id) {
      throw Error(ErrorCode::kInvalidParameter,
                  bus_name(spec.buses[k].id) + ": duplicate bus id");
    }
  }

  const json& lines = require(doc, "lines", "network");
  if (!lines.is_array()) {
    throw Error(ErrorCode::kMalformedDocument, "network: 'lines' must be an array");
  }
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const json& l = lines[k];
    const std::string where = "lines[" + std::to_string(k) + "]";
    if (!l.is_object()) throw Error(ErrorCode::kMalformedDocument, where + " must be an object");
    LineSpec line;
    line.from = require_index(l, "from", where);
    line.to = require_index(l, "to", where);
    const std::string owner = line_name(line);
    line.resistance = require_number(l, "r_pu", owner);
    line.reactance = require_number(l, "x_pu", owner);
    spec.lines.push_back(line);
  }

  validate(spec);
  return spec;
}

NetworkSpec parse_network(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedDocument, e.what());
  }
  return parse_network(doc);
}

json to_json(const NetworkSpec& spec) {
  json buses = json::array();
  for (const auto& bus : spec.buses) {
    json b{{"id", bus.id}, {"kind", to_string(bus.kind)}};
    if (bus.kind == BusKind::kDroopInverter) {
      b["lambda_p_hz_per_pu"] = bus.droop_hz_per_pu;
      b["tau_s"] = bus.filter_time_constant;
    } else {
      b["inertia"] = bus.inertia;
      b["damping"] = bus.damping;
    }
    b["voltage_pu"] = bus.voltage;
    b["g_shunt_pu"] = bus.shunt_conductance;
    b["theta0_rad"] = bus.initial_angle;
    buses.push_back(std::move(b));
  }
  json lines = json::array();
  for (const auto& line : spec.lines) {
    lines.push_back(
        {{"from", line.from}, {"to", line.to}, {"r_pu", line.resistance}, {"x_pu", line.reactance}});
  }
  return json{{"desired_frequency_hz", spec.desired_frequency_hz},
              {"buses", std::move(buses)},
              {"lines", std::move(lines)}};
}

double line_coupling(const LineSpec& line) {
  const double r = line.resistance;
  const double x = line.reactance;
  return x / (r * r + x * x);
}

std::pair<double, double> inertia_damping(const BusSpec& bus) {
  if (bus.kind == BusKind::kSynchronousGenerator) return {bus.inertia, bus.damping};
  const double droop = hz_to_rad(bus.droop_hz_per_pu);
  return {bus.filter_time_constant / droop, 1.0 / droop};
}

Eigen::MatrixXd assemble_laplacian(const NetworkSpec& spec) {
  const int n = spec.size();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (const auto& line : spec.lines) {
    const int i = line.from;
    const int j = line.to;
    const double w = line_coupling(line) * spec.buses[static_cast<std::size_t>(i)].voltage *
                     spec.buses[static_cast<std::size_t>(j)].voltage;
    L(i, j) -= w;
    L(j, i) -= w;
    L(i, i) += w;
    L(j, j) += w;
  }
  return L;
}

LinearModel assemble_state_space(const NetworkSpec& spec) {
  const int n = spec.size();
  LinearModel model;
  model.n = n;
  model.M.resize(n);
  model.D.resize(n);
  model.V.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& bus = spec.buses[static_cast<std::size_t>(i)];
    const auto [m, d] = inertia_damping(bus);
    model.M(i) = m;
    model.D(i) = d;
    model.V(i) = bus.voltage;
  }
  model.L = assemble_laplacian(spec);

  const Eigen::VectorXd m_inv = model.M.cwiseInverse();
  model.A = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  model.A.topRightCorner(n, n).setIdentity();
  model.A.bottomLeftCorner(n, n) = -(m_inv.asDiagonal() * model.L);
  model.A.bottomRightCorner(n, n) = (-m_inv.cwiseProduct(model.D)).asDiagonal();

  model.B2 = Eigen::MatrixXd::Zero(2 * n, n);
  model.B2.bottomRows(n) = m_inv.asDiagonal();
  model.B1 = Eigen::MatrixXd::Zero(2 * n, n);
  model.B1.bottomRows(n) = m_inv.cwiseProduct(model.V.cwiseAbs2()).asDiagonal();
  return model;
}

double setpoint_offset(const NetworkSpec& spec, int bus) {
  const auto& b = spec.buses[static_cast<std::size_t>(bus)];
  double c = -b.shunt_conductance * b.voltage * b.voltage;
  for (const auto& line : spec.lines) {
    int other = -1;
    if (line.from == bus) other = line.to;
    if (line.to == bus) other = line.from;
    if (other < 0) continue;
    const auto& o = spec.buses[static_cast<std::size_t>(other)];
    c -= b.voltage * o.voltage * line_coupling(line) * (b.initial_angle - o.initial_angle);
  }
  return c;
}

Eigen::VectorXd setpoint_offsets(const NetworkSpec& spec) {
  Eigen::VectorXd c(spec.size());
  for (int i = 0; i < spec.size(); ++i) c(i) = setpoint_offset(spec, i);
  return c;
}

}  // namespace gridsafe::net
