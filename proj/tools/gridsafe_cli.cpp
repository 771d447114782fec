#include "gridsafe_cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "gridsafe/error.hpp"
#include "gridsafe/io.hpp"
#include "gridsafe/kernels.hpp"
#include "gridsafe/netmodel.hpp"
#include "gridsafe/safety.hpp"
#include "gridsafe/sim.hpp"
#include "gridsafe/sparse_design.hpp"

#ifndef GRIDSAFE_VERSION
#define GRIDSAFE_VERSION "unknown"
#endif

namespace gridsafe::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum class ValueType { kReal, kInteger, kText };

struct OptionKey {
  std::string name;  // config spelling; the flag is --name with '-' for '_'
  ValueType type;
  json fallback;
  std::string help;
};

std::string flag_of(const std::string& name) {
  std::string flag = "--" + name;
  for (char& c : flag) {
    if (c == '_') c = '-';
  }
  return flag;
}

const std::vector<OptionKey>& sweep_keys() {
  static const std::vector<OptionKey> keys = {
      {"gamma_min", ValueType::kReal, 1e-4, "smallest sparsity weight"},
      {"gamma_max", ValueType::kReal, 1e-1, "largest sparsity weight"},
      {"gamma_count", ValueType::kInteger, 50, "number of log-spaced weights"},
      {"rho", ValueType::kReal, 100.0, "initial ADMM penalty"},
      {"epsilon", ValueType::kReal, 1e-3, "reweighting constant"},
      {"relative_tol", ValueType::kReal, 1e-2, "relative ADMM stopping tolerance"},
  };
  return keys;
}

const std::vector<OptionKey>& simulate_keys() {
  static const std::vector<OptionKey> keys = {
      {"gain", ValueType::kText, nullptr, "gain document written by sweep or design"},
      {"dt", ValueType::kReal, 1e-3, "sampling period [s]"},
      {"horizon", ValueType::kReal, 10.0, "simulated time [s]"},
      {"plant", ValueType::kText, "linear", "linear | nonlinear"},
      {"substeps", ValueType::kInteger, 1, "RK4 substeps per sample"},
      {"disturbance", ValueType::kText, "adversarial",
       "zero | constant | step | sinusoid | uniform-random | adversarial"},
      {"ds", ValueType::kReal, 0.5, "disturbance bound [p.u.]"},
      {"amplitude", ValueType::kReal, nullptr, "disturbance amplitude [p.u.] (default: ds)"},
      {"step_time", ValueType::kReal, 0.0, "step disturbance onset [s]"},
      {"frequency_hz", ValueType::kReal, 1.0, "sinusoidal disturbance frequency [Hz]"},
      {"eta1", ValueType::kReal, 5.0, "lower barrier slope [1/s]"},
      {"eta2", ValueType::kReal, 5.0, "upper barrier slope [1/s]"},
      {"omega_band_hz", ValueType::kReal, 0.5, "symmetric frequency band [Hz]"},
      {"band_tol_hz", ValueType::kReal, 1e-3, "violation tolerance [Hz]"},
      {"filter", ValueType::kInteger, 1, "1 applies the safety filter, 0 bypasses it"},
      {"seed", ValueType::kInteger, 0, "seed of initial states and random disturbances"},
      {"runs", ValueType::kInteger, 1, "number of seeded runs"},
      {"theta0_min_rad", ValueType::kReal, 0.0, "initial angle lower bound [rad]"},
      {"theta0_max_rad", ValueType::kReal, 1.5707963267948966, "initial angle upper bound [rad]"},
      {"omega0_max_hz", ValueType::kReal, 0.5, "initial frequency magnitude bound [Hz]"},
  };
  return keys;
}

const std::vector<OptionKey>& topology_keys() {
  static const std::vector<OptionKey> keys = {
      {"gain", ValueType::kText, nullptr, "gain document written by sweep or design"},
  };
  return keys;
}

const std::vector<OptionKey>& no_keys() {
  static const std::vector<OptionKey> keys;
  return keys;
}

/// Flag text typed for the JSON options object.
json convert(const OptionKey& key, const std::string& text) {
  try {
    std::size_t used = 0;
    switch (key.type) {
      case ValueType::kReal: {
        const double v = std::stod(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case ValueType::kInteger: {
        const long long v = std::stoll(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case ValueType::kText:
        return text;
    }
  } catch (const std::logic_error&) {
  }
  throw Error(ErrorCode::kInvalidParameter, flag_of(key.name) + ": cannot parse '" + text + "'");
}

void check_type(const OptionKey& key, const json& value, const std::string& origin) {
  const bool ok = value.is_null() || (key.type == ValueType::kText && value.is_string()) ||
                  (key.type == ValueType::kReal && value.is_number()) ||
                  (key.type == ValueType::kInteger && value.is_number_integer());
  if (!ok) {
    throw Error(ErrorCode::kInvalidParameter, origin + ": option '" + key.name + "' has the wrong type");
  }
}

double real(const json& options, const char* key) { return options.at(key).get<double>(); }
long long integer(const json& options, const char* key) { return options.at(key).get<long long>(); }
std::string text(const json& options, const char* key) {
  const json& v = options.at(key);
  if (v.is_null()) throw Error(ErrorCode::kMissingField, std::string("option '") + key + "' is required");
  return v.get<std::string>();
}

struct Context {
  std::string config_path;  // absolute
  json options;             // resolved
  fs::path out_dir;
  bool json_output = false;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

struct Outcome {
  int exit_code = kExitOk;
  json summary;
  std::vector<std::string> outputs;  // relative to out_dir, in write order
};

void write_output(const Context& ctx, Outcome& outcome, const std::string& relative,
                  const std::string& content) {
  io::write_text_file(ctx.out_dir / relative, content);
  outcome.outputs.push_back(relative);
}

std::string matrix_csv(const sparse::Pattern& p) {
  std::ostringstream os;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) os << (j ? "," : "") << (p(i, j) ? 1 : 0);
    os << "\n";
  }
  return os.str();
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

std::string indexed(const char* stem, std::size_t k, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu%s", stem, k, ext);
  return buf;
}

sparse::GainResult load_gain(const std::string& path, const net::LinearModel& model) {
  sparse::GainResult gain = sparse::gain_from_json(io::read_json_file(path));
  if (gain.K.rows() != model.n || gain.K.cols() != model.states()) {
    std::ostringstream os;
    os << path << ": gain is " << gain.K.rows() << "x" << gain.K.cols() << " but the model needs "
       << model.n << "x" << model.states();
    throw Error(ErrorCode::kShapeMismatch, os.str());
  }
  return gain;
}

// ---------------------------------------------------------------------------
// Commands

Outcome cmd_build(const Context& ctx) {
  const net::NetworkSpec spec = io::load_network(ctx.config_path);
  const net::LinearModel model = net::assemble_state_space(spec);
  const kernels::StabilityReport open_loop = kernels::check_stability(model.A);
  const Eigen::VectorXd spectrum = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(model.L).eigenvalues();

  Outcome outcome;
  outcome.summary = {{"n", model.n},
                     {"states", model.states()},
                     {"laplacian_spectrum", vector_json(spectrum)},
                     {"open_loop_abscissa", open_loop.spectral_abscissa},
                     {"open_loop_hurwitz", open_loop.is_hurwitz}};
  json doc = outcome.summary;
  doc["A"] = matrix_json(model.A);
  doc["B1"] = matrix_json(model.B1);
  doc["B2"] = matrix_json(model.B2);
  doc["L"] = matrix_json(model.L);
  doc["M"] = vector_json(model.M);
  doc["D"] = vector_json(model.D);
  doc["V"] = vector_json(model.V);
  write_output(ctx, outcome, "model.json", io::dump_json(doc));

  if (!ctx.json_output) {
    std::ostream& out = *ctx.out;
    out << "n=" << model.n << ", states=" << model.states() << ", open-loop abscissa "
        << format_number(open_loop.spectral_abscissa) << "\n";
    out << "laplacian spectrum:";
    for (Eigen::Index i = 0; i < spectrum.size(); ++i) out << " " << format_number(spectrum(i));
    out << "\n";
  }
  return outcome;
}

sparse::GainResult centralized_gain(const net::LinearModel& model, const kernels::DesignWeights& w) {
  sparse::GainResult r;
  r.K = kernels::solve_are(model, w).K;
  r.pattern = sparse::support(r.K, sparse::SparsityOptions{}.zero_tol);
  r.card = sparse::cardinality(r.pattern);
  r.cost = sparse::h2_cost(model, w, r.K);
  r.stability = kernels::check_stability(model.A - model.B2 * r.K);
  return r;
}

Outcome cmd_design(const Context& ctx) {
  const net::LinearModel model = net::assemble_state_space(io::load_network(ctx.config_path));
  const sparse::GainResult gain =
      centralized_gain(model, kernels::DesignWeights::identity(model.states(), model.inputs()));
  Outcome outcome;
  write_output(ctx, outcome, "gain.json", io::dump_json(sparse::to_json(gain)));
  outcome.summary = {{"card", gain.card},
                     {"cost", gain.cost},
                     {"spectral_abscissa", gain.stability.spectral_abscissa}};
  if (!ctx.json_output) {
    *ctx.out << "centralized gain: card " << gain.card << ", cost " << format_number(gain.cost)
             << ", closed-loop abscissa " << format_number(gain.stability.spectral_abscissa) << "\n";
  }
  return outcome;
}

Outcome cmd_sweep(const Context& ctx) {
  const net::LinearModel model = net::assemble_state_space(io::load_network(ctx.config_path));
  const json& o = ctx.options;
  const long long count = integer(o, "gamma_count");
  if (count < 1) throw Error(ErrorCode::kInvalidParameter, "--gamma-count must be >= 1");
  const std::vector<double> gammas =
      sparse::log_space(real(o, "gamma_min"), real(o, "gamma_max"), static_cast<int>(count));
  sparse::SparsityOptions opts;
  opts.rho = real(o, "rho");
  opts.epsilon = real(o, "epsilon");
  opts.relative_tol = real(o, "relative_tol");
  opts.validate();

  const std::vector<sparse::GainResult> results = sparse::gamma_sweep(
      model, kernels::DesignWeights::identity(model.states(), model.inputs()), gammas, opts);

  Outcome outcome;
  std::ostringstream table;
  table << "gamma,card,cost,abscissa,status\n";
  json rows = json::array();
  int failures = 0;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const sparse::GainResult& r = results[k];
    const std::string status = r.ok() ? "ok" : "failed";
    failures += r.ok() ? 0 : 1;
    table << format_number(r.gamma) << "," << r.card << "," << format_number(r.cost) << ","
          << format_number(r.stability.spectral_abscissa) << "," << status << "\n";
    rows.push_back({{"gamma", r.gamma},
                    {"card", r.card},
                    {"cost", r.ok() ? json(r.cost) : json(nullptr)},
                    {"abscissa", r.stability.spectral_abscissa},
                    {"status", r.ok() ? std::string("ok") : *r.failure}});
  }
  write_output(ctx, outcome, "sweep.csv", table.str());
  for (std::size_t k = 0; k < results.size(); ++k) {
    write_output(ctx, outcome, "gains/" + indexed("gain", k, ".json"),
                 io::dump_json(sparse::to_json(results[k])));
    write_output(ctx, outcome, "patterns/" + indexed("pattern", k, ".csv"),
                 matrix_csv(results[k].pattern));
  }
  outcome.summary = {{"points", std::move(rows)}, {"failures", failures}};
  if (failures == static_cast<int>(results.size())) outcome.exit_code = kExitNumerical;

  if (!ctx.json_output) {
    std::ostream& out = *ctx.out;
    out << "gamma            card  cost                abscissa\n";
    for (const auto& r : results) {
      char line[160];
      std::snprintf(line, sizeof(line), "%-16.6g %4d  %-19.12g %-12.6g%s\n", r.gamma, r.card,
                    r.cost, r.stability.spectral_abscissa, r.ok() ? "" : "  FAILED");
      out << line;
    }
    out << results.size() << " points, " << failures << " failed\n";
  }
  return outcome;
}

Outcome cmd_simulate(const Context& ctx) {
  const net::NetworkSpec spec = io::load_network(ctx.config_path);
  const net::LinearModel model = net::assemble_state_space(spec);
  const json& o = ctx.options;
  const sparse::GainResult gain = load_gain(text(o, "gain"), model);

  sim::SimConfig cfg;
  cfg.dt = real(o, "dt");
  cfg.horizon = real(o, "horizon");
  cfg.plant = sim::parse_plant_kind(text(o, "plant"));
  cfg.substeps = static_cast<int>(integer(o, "substeps"));
  cfg.filter = integer(o, "filter") != 0;
  cfg.envelope = safety::SafetyEnvelope::from_hz(real(o, "omega_band_hz"), real(o, "eta1"),
                                                 real(o, "eta2"), real(o, "ds"));
  cfg.validate();

  const long long seed = integer(o, "seed");
  const long long runs = integer(o, "runs");
  if (seed < 0) throw Error(ErrorCode::kInvalidParameter, "--seed must be >= 0");
  if (runs < 1) throw Error(ErrorCode::kInvalidParameter, "--runs must be >= 1");

  sim::DisturbanceModel dm;
  dm.kind = sim::parse_disturbance_kind(text(o, "disturbance"));
  dm.bound = real(o, "ds");
  dm.amplitude = o.at("amplitude").is_null() ? dm.bound : real(o, "amplitude");
  dm.step_time = real(o, "step_time");
  dm.frequency_hz = real(o, "frequency_hz");
  dm.seed = static_cast<std::uint64_t>(seed);
  dm.validate();

  std::vector<Eigen::VectorXd> starts;
  for (long long r = 0; r < runs; ++r) {
    starts.push_back(sim::random_initial_state(model.n, static_cast<std::uint64_t>(seed + r),
                                               real(o, "theta0_min_rad"), real(o, "theta0_max_rad"),
                                               net::hz_to_rad(real(o, "omega0_max_hz"))));
  }
  // Checked once up front so an unstable gain fails before any file is written.
  if (!kernels::check_stability(model.A - model.B2 * gain.K).is_hurwitz) {
    throw Error(ErrorCode::kUnstableGain, "gain does not stabilize the model");
  }
  const std::vector<sim::BatchRun> batch = sim::run_batch(spec, model, gain.K, cfg, dm, starts);

  Outcome outcome;
  json reports = json::array();
  const double band_tol = net::hz_to_rad(real(o, "band_tol_hz"));
  int violating = 0;
  int failed = 0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const sim::BatchRun& run = batch[k];
    json report{{"run", k}, {"seed", run.seed}};
    if (!run.trace) {
      ++failed;
      report["status"] = run.failure.value_or("failed");
      reports.push_back(std::move(report));
      continue;
    }
    std::ostringstream csv;
    sim::write_trace_csv(csv, *run.trace);
    write_output(ctx, outcome, runs == 1 ? std::string("trace.csv") : indexed("trace", k, ".csv"),
                 csv.str());
    const sim::SafetyMetrics m = sim::safety_metrics(*run.trace, cfg.envelope, band_tol);
    violating += m.violation_samples > 0 ? 1 : 0;
    report["status"] = "ok";
    report["metrics"] = sim::to_json(m);
    reports.push_back(std::move(report));
  }
  outcome.summary = {{"runs", std::move(reports)},
                     {"violating_runs", violating},
                     {"failed_runs", failed}};
  write_output(ctx, outcome, "metrics.json", io::dump_json(outcome.summary));
  if (failed > 0) {
    outcome.exit_code = kExitNumerical;
  } else if (violating > 0) {
    outcome.exit_code = kExitSafety;
  }

  if (!ctx.json_output) {
    std::ostream& out = *ctx.out;
    for (const json& r : outcome.summary.at("runs")) {
      out << "run " << r.at("run").get<int>() << ": ";
      if (!r.contains("metrics")) {
        out << r.at("status").get<std::string>() << "\n";
        continue;
      }
      const json& m = r.at("metrics");
      char line[200];
      std::snprintf(line, sizeof(line),
                    "max|omega| %.6g Hz, violations %d, fallbacks %d, final |omega| %.3g Hz, "
                    "final |theta| %.3g rad\n",
                    m.at("max_abs_omega_hz").get<double>(), m.at("violation_samples").get<int>(),
                    m.at("infeasible_fallbacks").get<int>(), m.at("final_omega_inf_hz").get<double>(),
                    m.at("final_theta_inf_rad").get<double>());
      out << line;
    }
    out << batch.size() << " runs, " << violating << " with violations, " << failed << " failed\n";
  }
  return outcome;
}

Outcome cmd_topology(const Context& ctx) {
  const net::NetworkSpec spec = io::load_network(ctx.config_path);
  const net::LinearModel model = net::assemble_state_space(spec);
  const sparse::GainResult gain = load_gain(text(ctx.options, "gain"), model);
  const safety::TopologyReport report = safety::cross_layer_topology(gain.pattern, spec);

  Outcome outcome;
  outcome.summary = safety::to_json(report);
  write_output(ctx, outcome, "topology.json", io::dump_json(outcome.summary));
  if (!ctx.json_output) {
    std::ostream& out = *ctx.out;
    for (std::size_t i = 0; i < report.nodes.size(); ++i) {
      out << "node " << i << ":";
      for (const auto& s : report.nodes[i]) out << " " << s.node << "(" << safety::to_string(s.provenance) << ")";
      out << "\n";
    }
    out << "links: gain " << report.gain_links << ", power " << report.power_links << ", union "
        << report.union_links << "\n";
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Manifest

json build_manifest(const std::string& command, const Context& ctx, const Outcome& outcome) {
  json inputs = json::array();
  if (ctx.options.contains("gain") && ctx.options.at("gain").is_string()) {
    const std::string gain = ctx.options.at("gain").get<std::string>();
    inputs.push_back({{"path", gain}, {"hash", io::content_hash(io::read_text_file(gain))}});
  }
  json outputs = json::array();
  for (const std::string& rel : outcome.outputs) {
    outputs.push_back(
        {{"path", rel}, {"hash", io::content_hash(io::read_text_file(ctx.out_dir / rel))}});
  }
  return json{{"tool", "gridsafe"},
              {"version", GRIDSAFE_VERSION},
              {"command", command},
              {"config",
               {{"path", ctx.config_path},
                {"hash", io::content_hash(io::read_text_file(ctx.config_path))}}},
              {"inputs", std::move(inputs)},
              {"options", ctx.options},
              {"seed", ctx.options.contains("seed") ? ctx.options.at("seed") : json(nullptr)},
              {"outputs", std::move(outputs)},
              {"exit_code", outcome.exit_code}};
}

using CommandFn = std::function<Outcome(const Context&)>;

struct Command {
  std::string name;
  std::string description;
  const std::vector<OptionKey>* keys;
  CommandFn fn;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> list = {
      {"build", "parse a network and report the assembled model", &no_keys(), cmd_build},
      {"design", "centralized H2-optimal gain", &no_keys(), cmd_design},
      {"sweep", "sparsity-promoting designs over log-spaced weights", &sweep_keys(), cmd_sweep},
      {"simulate", "safety-filtered closed-loop simulation", &simulate_keys(), cmd_simulate},
      {"topology", "cross-layer communication topology of a gain", &topology_keys(), cmd_topology},
  };
  return list;
}

const Command& find_command(const std::string& name) {
  for (const Command& c : commands()) {
    if (c.name == name) return c;
  }
  throw Error(ErrorCode::kInvalidParameter, "unknown command '" + name + "'");
}

int execute(const Command& command, Context& ctx) {
  fs::create_directories(ctx.out_dir);
  const Outcome outcome = command.fn(ctx);
  io::write_text_file(ctx.out_dir / "manifest.json",
                      io::dump_json(build_manifest(command.name, ctx, outcome)));
  if (ctx.json_output) *ctx.out << outcome.summary.dump(2) << "\n";
  return outcome.exit_code;
}

std::string absolute(const std::string& path) { return fs::absolute(path).lexically_normal().string(); }

int replay(const std::string& manifest_path, const std::string& out_override, bool json_output,
           std::ostream& out, std::ostream& err) {
  const json manifest = io::read_json_file(manifest_path);
  for (const char* key : {"command", "config", "options", "outputs"}) {
    if (!manifest.contains(key)) {
      throw Error(ErrorCode::kMissingField, manifest_path + ": '" + key + "'");
    }
  }
  const Command& command = find_command(manifest.at("command").get<std::string>());
  Context ctx;
  ctx.config_path = manifest.at("config").at("path").get<std::string>();
  const std::string recorded = manifest.at("config").at("hash").get<std::string>();
  if (io::content_hash(io::read_text_file(ctx.config_path)) != recorded) {
    throw Error(ErrorCode::kInvalidParameter, ctx.config_path + ": content differs from the manifest");
  }
  for (const json& input : manifest.value("inputs", json::array())) {
    const std::string path = input.at("path").get<std::string>();
    if (io::content_hash(io::read_text_file(path)) != input.at("hash").get<std::string>()) {
      throw Error(ErrorCode::kInvalidParameter, path + ": content differs from the manifest");
    }
  }
  ctx.options = manifest.at("options");
  ctx.out_dir = out_override.empty() ? fs::path(manifest_path).parent_path() : fs::path(out_override);
  if (ctx.out_dir.empty()) ctx.out_dir = ".";
  ctx.json_output = json_output;
  ctx.out = &out;
  ctx.err = &err;
  const int code = execute(command, ctx);

  int mismatches = 0;
  for (const json& o : manifest.at("outputs")) {
    const std::string rel = o.at("path").get<std::string>();
    const fs::path path = ctx.out_dir / rel;
    if (!fs::exists(path) || io::content_hash(io::read_text_file(path)) != o.at("hash").get<std::string>()) {
      err << "replay: " << rel << " differs from the recorded output\n";
      ++mismatches;
    }
  }
  if (mismatches > 0) return kExitNumerical;
  if (!json_output) out << "replay: " << manifest.at("outputs").size() << " outputs reproduced\n";
  return code;
}

int exit_code_for(const Error& e) {
  return e.kind() == ErrorKind::kValidation ? kExitUsage : kExitNumerical;
}

}  // namespace

std::string format_number(double value) {
  if (!std::isfinite(value)) return std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

json read_manifest(const std::string& out_dir) {
  return io::read_json_file(fs::path(out_dir) / "manifest.json");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"gridsafe: sparse H2 design and safety-filtered microgrid frequency control"};
  app.set_version_flag("--version", GRIDSAFE_VERSION);
  app.require_subcommand(1);

  struct Parsed {
    CLI::App* sub = nullptr;
    std::string config;
    std::string out_dir = "out";
    bool json_output = false;
    std::map<std::string, std::string> raw;
    std::map<std::string, CLI::Option*> flags;
  };
  std::vector<std::unique_ptr<Parsed>> parsed;
  for (const Command& c : commands()) {
    auto p = std::make_unique<Parsed>();
    p->sub = app.add_subcommand(c.name, c.description);
    p->sub->add_option("--config", p->config, "network document (JSON)")->required();
    p->sub->add_option("--out-dir", p->out_dir, "output directory")->capture_default_str();
    p->sub->add_flag("--json", p->json_output, "print a machine-readable summary");
    for (const OptionKey& key : *c.keys) {
      CLI::Option* opt = p->sub->add_option(flag_of(key.name), p->raw[key.name], key.help);
      if (!key.fallback.is_null()) opt->default_str(key.fallback.dump());
      p->flags[key.name] = opt;
    }
    parsed.push_back(std::move(p));
  }
  std::string manifest_path;
  std::string replay_out;
  bool replay_json = false;
  CLI::App* replay_cmd = app.add_subcommand("replay", "re-run a manifest and verify its outputs");
  replay_cmd->add_option("--manifest", manifest_path, "manifest.json written by a command")->required();
  replay_cmd->add_option("--out-dir", replay_out, "output directory (default: the manifest's)");
  replay_cmd->add_flag("--json", replay_json, "print a machine-readable summary");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (replay_cmd->parsed()) return replay(manifest_path, replay_out, replay_json, out, err);
    for (std::size_t k = 0; k < parsed.size(); ++k) {
      Parsed& p = *parsed[k];
      if (!p.sub->parsed()) continue;
      const Command& command = commands()[k];
      Context ctx;
      ctx.config_path = absolute(p.config);
      ctx.out_dir = p.out_dir;
      ctx.json_output = p.json_output;
      ctx.out = &out;
      ctx.err = &err;

      const json config = io::read_json_file(ctx.config_path);
      const json overrides = config.is_object() ? config.value("options", json::object()) : json::object();
      if (!overrides.is_object()) {
        throw Error(ErrorCode::kInvalidParameter, ctx.config_path + ": 'options' must be an object");
      }
      ctx.options = json::object();
      for (const OptionKey& key : *command.keys) {
        json value = key.fallback;
        if (overrides.contains(key.name)) {
          value = overrides.at(key.name);
          check_type(key, value, ctx.config_path);
        }
        if (p.flags.at(key.name)->count() > 0) value = convert(key, p.raw.at(key.name));
        if (key.name == "gain" && value.is_string()) value = absolute(value.get<std::string>());
        ctx.options[key.name] = value;
      }
      return execute(command, ctx);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace gridsafe::cli
