// Acceptance gate: prints one PASS/FAIL line per criterion (with indented
// detail lines) and exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gridsafe/error.hpp"
#include "gridsafe/io.hpp"
#include "gridsafe/kernels.hpp"
#include "gridsafe/netmodel.hpp"
#include "gridsafe/safety.hpp"
#include "gridsafe/sim.hpp"
#include "gridsafe/sparse_design.hpp"
#include "support.hpp"

#ifdef GRIDSAFE_HAVE_CLI
#include "gridsafe_cli.hpp"
#endif

namespace gs = gridsafe;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kHalfPi = 1.5707963267948966;

class Report {
 public:
  explicit Report(int id, std::string title) : id_(id), title_(std::move(title)) {}

  void check(bool ok, const std::string& what) {
    ok_ = ok_ && ok;
    lines_.push_back(std::string(ok ? "  ok    " : "  FAIL  ") + what);
  }
  void note(const std::string& what) { lines_.push_back("  note  " + what); }
  bool ok() const { return ok_; }

  bool print(double seconds) const {
    std::printf("criterion %d %s  %s (%.1f s)\n", id_, ok_ ? "PASS" : "FAIL", title_.c_str(), seconds);
    for (const auto& l : lines_) std::printf("%s\n", l.c_str());
    std::fflush(stdout);
    return ok_;
  }

 private:
  int id_;
  std::string title_;
  bool ok_ = true;
  std::vector<std::string> lines_;
};

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

template <typename... Args>
std::string format(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Shared {
  gs::net::NetworkSpec spec;
  gs::net::LinearModel model;
  gs::kernels::DesignWeights weights;
  std::vector<gs::sparse::GainResult> sweep;
  double sweep_seconds = 0.0;
};

// ---------------------------------------------------------------------------

Report kernel_accuracy() {
  Report r(1, "kernel accuracy on 1000 random systems");
  std::mt19937_64 rng(20240101);
  double worst_lyap_residual = 0.0, worst_oracle = 0.0, worst_are = 0.0;
  int lyap_failures = 0, are_failures = 0, unstable = 0;
  const auto t0 = Clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 * (1 + static_cast<int>(rng() % 8));  // state dimension 2..16
    const MatrixXd a = gs::testing::random_stable(rng, n);
    const MatrixXd s = gs::testing::random_psd(rng, n) + 0.1 * MatrixXd::Identity(n, n);
    try {
      const MatrixXd p = gs::kernels::solve_lyapunov(a, s);
      const MatrixXd oracle = gs::testing::naive_lyapunov(a, s);
      worst_lyap_residual = std::max(worst_lyap_residual, gs::kernels::lyapunov_residual(a, p, s));
      worst_oracle = std::max(worst_oracle, (p - oracle).norm() / oracle.norm());
    } catch (const gs::Error& e) {
      ++lyap_failures;
    }

    const int m = std::max(1, n / 2);
    const MatrixXd a_open = gs::testing::random_matrix(rng, n, n);
    const MatrixXd b = gs::testing::random_matrix(rng, n, m);
    try {
      const gs::kernels::AreSolution sol =
          gs::kernels::solve_are(a_open, b, gs::kernels::DesignWeights::identity(n, m));
      worst_are = std::max(worst_are, sol.residual);
      if (!gs::kernels::check_stability(a_open - b * sol.K).is_hurwitz) ++unstable;
    } catch (const gs::Error& e) {
      ++are_failures;
    }
  }
  const double seconds = since(t0);
  r.check(lyap_failures == 0 && worst_lyap_residual <= 1e-10,
          format("Lyapunov relative residual max %.3g (<= 1e-10), %d solver errors",
                 worst_lyap_residual, lyap_failures));
  r.check(worst_oracle <= 1e-9, format("vectorization oracle agreement max %.3g (<= 1e-9)", worst_oracle));
  r.check(are_failures == 0 && worst_are <= 1e-8,
          format("ARE residual max %.3g (<= 1e-8), %d solver errors", worst_are, are_failures));
  r.check(unstable == 0, format("%d non-Hurwitz ARE closed loops", unstable));
  r.check(seconds <= 60.0, fmt("runtime %.1f s (<= 60 s)", seconds));
  return r;
}

Report gradient_correctness(const Shared& sh) {
  Report r(2, "gradient against central differences on 50 gains");
  std::mt19937_64 rng(424242);
  const MatrixXd k_central = gs::kernels::solve_are(sh.model, sh.weights).K;
  const double h = 1e-6;
  double worst = 0.0;
  int gains = 0;
  const auto t0 = Clock::now();
  while (gains < 50) {
    const MatrixXd k = k_central + gs::testing::random_matrix(rng, 4, 8, 0.5);
    if (!gs::kernels::check_stability(sh.model.A - sh.model.B2 * k).is_hurwitz) continue;
    ++gains;
    const MatrixXd g = gs::sparse::h2_gradient(sh.model, sh.weights, k);
    for (int i = 0; i < k.rows(); ++i) {
      for (int j = 0; j < k.cols(); ++j) {
        MatrixXd kp = k, km = k;
        kp(i, j) += h;
        km(i, j) -= h;
        const double fd = static_cast<double>(
            (gs::testing::h2_cost_extended(sh.model, sh.weights.Q, sh.weights.R, kp) -
             gs::testing::h2_cost_extended(sh.model, sh.weights.Q, sh.weights.R, km)) /
            (2 * h));
        worst = std::max(worst, std::abs(fd - g(i, j)) / std::abs(g(i, j)));
      }
    }
  }
  const double seconds = since(t0);
  r.check(worst <= 1e-5, format("worst per-entry relative error %.3g (<= 1e-5)", worst));
  r.check(seconds <= 30.0, fmt("runtime %.1f s (<= 30 s)", seconds));
  return r;
}

Report sweep_endpoints(const Shared& sh) {
  Report r(3, "50-point gamma sweep endpoints");
  const auto& s = sh.sweep;
  int failures = 0, non_hurwitz = 0, upticks = 0;
  std::string uptick_list;
  for (std::size_t k = 0; k < s.size(); ++k) {
    failures += s[k].ok() ? 0 : 1;
    non_hurwitz += s[k].stability.is_hurwitz ? 0 : 1;
    if (k > 0 && s[k].card > s[k - 1].card) {
      ++upticks;
      uptick_list += format(" gamma=%.4g (%d -> %d)", s[k].gamma, s[k - 1].card, s[k].card);
    }
  }
  r.check(s.front().card == 32, format("card %d at gamma=1e-4 (expected 32)", s.front().card));
  r.check(s.back().card >= 7 && s.back().card <= 15,
          format("card %d at gamma=1e-1 (expected 7..15)", s.back().card));
  r.check(upticks <= 2, format("%d cardinality upticks (<= 2)", upticks));
  if (upticks > 0) r.note("upticks:" + uptick_list);
  r.check(failures == 0 && non_hurwitz == 0,
          format("%d failed points, %d non-Hurwitz gains", failures, non_hurwitz));
  std::string cards;
  for (const auto& g : s) cards += " " + std::to_string(g.card);
  r.note("card profile:" + cards);
  r.check(sh.sweep_seconds <= 600.0, fmt("runtime %.1f s (<= 600 s)", sh.sweep_seconds));
  return r;
}

Report h2_monotonicity(const Shared& sh) {
  Report r(4, "H2 cost along the ascending sweep");
  double worst_drop = 0.0;
  for (std::size_t k = 1; k < sh.sweep.size(); ++k) {
    worst_drop = std::max(worst_drop, sh.sweep[k - 1].cost - sh.sweep[k].cost);
  }
  r.check(worst_drop <= 1e-8, format("largest decrease %.3g (<= 1e-8)", worst_drop));
  r.note(format("J from %.10g to %.10g", sh.sweep.front().cost, sh.sweep.back().cost));
  return r;
}

Report safety_replication(const Shared& sh) {
  Report r(5, "safety replication, 100 adversarial runs");
  const MatrixXd k = sh.sweep.back().K;
  gs::sim::SimConfig cfg;
  cfg.dt = 1e-3;
  cfg.horizon = 10.0;
  cfg.envelope = gs::safety::SafetyEnvelope::from_hz(0.5, 5.0, 5.0, 0.5);
  gs::sim::DisturbanceModel dm;
  dm.kind = gs::sim::DisturbanceKind::kAdversarial;
  dm.bound = 0.5;

  std::vector<VectorXd> starts;
  for (int run = 0; run < 100; ++run) {
    starts.push_back(gs::sim::random_initial_state(4, 1000 + run, 0.0, kHalfPi, gs::net::hz_to_rad(0.5)));
  }
  const auto t0 = Clock::now();
  const auto batch = gs::sim::run_batch(sh.spec, sh.model, k, cfg, dm, starts);
  const double seconds = since(t0);

  double max_omega_hz = 0.0, worst_final_omega_hz = 0.0, worst_final_theta = 0.0;
  int failed = 0, fallbacks = 0, band_breaches = 0, unconverged = 0;
  for (const auto& b : batch) {
    if (!b.trace) {
      ++failed;
      continue;
    }
    const gs::sim::SafetyMetrics m = gs::sim::safety_metrics(*b.trace, cfg.envelope);
    const double peak = gs::net::rad_to_hz(m.max_abs_omega);
    max_omega_hz = std::max(max_omega_hz, peak);
    band_breaches += peak > 0.5 + 1e-3 ? 1 : 0;
    fallbacks += m.infeasible_fallbacks;
    const double fo = gs::net::rad_to_hz(m.final_omega_inf);
    worst_final_omega_hz = std::max(worst_final_omega_hz, fo);
    worst_final_theta = std::max(worst_final_theta, m.final_theta_inf);
    unconverged += (fo > 0.01 || m.final_theta_inf > 0.05) ? 1 : 0;
  }
  r.check(failed == 0, format("%d runs aborted", failed));
  r.check(band_breaches == 0,
          format("max |omega| %.6f Hz over all runs (<= 0.501 Hz), %d runs outside", max_omega_hz,
                 band_breaches));
  r.check(fallbacks == 0, format("%d infeasibility fallbacks", fallbacks));
  r.check(unconverged == 0,
          format("final ||omega||inf max %.4g Hz (<= 0.01), ||theta||inf max %.4g rad (<= 0.05), "
                 "%d runs not converged",
                 worst_final_omega_hz, worst_final_theta, unconverged));
  r.check(seconds <= 300.0, fmt("runtime %.1f s (<= 300 s)", seconds));
  return r;
}

Report qp_oracle() {
  Report r(6, "filter against KKT case enumeration, 10000 instances");
  std::mt19937_64 rng(6060);
  double worst = 0.0;
  int bad = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    double lo = gs::testing::uniform(rng, -10, 10);
    double hi = gs::testing::uniform(rng, -10, 10);
    if (lo > hi) std::swap(lo, hi);
    if (trial % 10 == 0) hi = lo;  // degenerate intervals
    const double u0 = gs::testing::uniform(rng, -15, 15);
    const double u = gs::safety::qp_filter(u0, {lo, hi}).u;
    const double oracle = gs::testing::kkt_projection(u0, lo, hi);
    if (!std::isfinite(oracle)) ++bad;
    worst = std::max(worst, std::abs(u - oracle));
  }
  r.check(bad == 0 && worst <= 1e-12, format("max deviation %.3g (<= 1e-12), %d oracle gaps", worst, bad));
  return r;
}

Report robust_bounds(const Shared& sh) {
  Report r(7, "robust bounds by direct substitution, 1000 samples");
  std::mt19937_64 rng(7070);
  const double delta = 1e-6;
  int samples = 0, drawn = 0, inside_violations = 0, outside_misses = 0;
  double worst_inside = 0.0;
  while (samples < 1000) {
    ++drawn;
    const VectorXd x = gs::testing::random_state(rng, 4);
    const gs::safety::SafetyEnvelope env = gs::testing::random_envelope(rng);
    const int i = static_cast<int>(rng() % 4);
    const gs::safety::ControlBounds b = gs::safety::control_bounds(sh.model, x, i, env);
    if (!b.feasible()) continue;
    ++samples;
    const double ds = env.disturbance_bound;
    auto margin = [&](double u) {
      double worst = std::numeric_limits<double>::infinity();
      for (double d : {-ds, ds}) {
        const auto m = gs::testing::barrier_margins(sh.model, x, i, env, u, d);
        worst = std::min({worst, m.lower, m.upper});
      }
      return worst;
    };
    // Margins at the interval ends are zero up to rounding of the terms.
    const double scale = 1e-12 * (1.0 + std::abs(b.lo) + std::abs(b.hi)) / sh.model.M(i);
    for (int g = 0; g <= 20; ++g) {
      const double u = b.lo + (b.hi - b.lo) * g / 20.0;
      const double m = margin(u);
      if (m < -scale) ++inside_violations;
      worst_inside = std::min(worst_inside, m);
    }
    if (!(margin(b.lo - delta) < 0.0)) ++outside_misses;
    if (!(margin(b.hi + delta) < 0.0)) ++outside_misses;
  }
  r.check(inside_violations == 0,
          format("%d grid points violate a condition (worst margin %.3g)", inside_violations, worst_inside));
  r.check(outside_misses == 0, format("%d out-of-interval probes satisfy both conditions", outside_misses));
  r.note(format("%d feasible samples from %d draws", samples, drawn));
  return r;
}

Report filter_transparency(const Shared& sh) {
  Report r(8, "filter transparency with a 1000x wider envelope");
  gs::sim::SimConfig cfg;
  cfg.envelope = gs::safety::SafetyEnvelope::from_hz(0.5 * 1000.0, 5.0, 5.0, 0.5);
  gs::sim::SimConfig plain = cfg;
  plain.filter = false;
  gs::sim::DisturbanceModel dm;
  dm.kind = gs::sim::DisturbanceKind::kAdversarial;
  dm.bound = 0.5;
  double worst = 0.0;
  int activations = 0;
  for (int run = 0; run < 5; ++run) {
    const VectorXd x0 = gs::sim::random_initial_state(4, 80 + run, 0.0, kHalfPi, gs::net::hz_to_rad(0.5));
    const auto a = gs::sim::run_closed_loop(sh.spec, sh.model, sh.sweep.back().K, cfg, dm, x0);
    const auto b = gs::sim::run_closed_loop(sh.spec, sh.model, sh.sweep.back().K, plain, dm, x0);
    worst = std::max({worst, (a.theta - b.theta).cwiseAbs().maxCoeff(),
                      (a.omega - b.omega).cwiseAbs().maxCoeff(), (a.u - b.u).cwiseAbs().maxCoeff()});
    activations += gs::sim::safety_metrics(a, cfg.envelope).filter_activations;
  }
  r.check(worst <= 1e-12, format("max per-sample difference %.3g (<= 1e-12)", worst));
  r.note(format("%d filter activations", activations));
  return r;
}

#ifdef GRIDSAFE_HAVE_CLI
std::string slurp(const std::filesystem::path& p) { return gs::io::read_text_file(p); }

Report determinism() {
  Report r(9, "byte-identical outputs for identical manifests");
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "gridsafe_acceptance";
  fs::remove_all(root);
  const std::string config = gs::testing::config_path("four_bus.json");
  std::ostringstream out, err;
  auto cli = [&](std::vector<std::string> args) { return gs::cli::run(args, out, err); };

  const int sweep_a = cli({"sweep", "--config", config, "--gamma-count", "5", "--out-dir", (root / "sweep_a").string()});
  const int sweep_b = cli({"sweep", "--config", config, "--gamma-count", "5", "--out-dir", (root / "sweep_b").string()});
  r.check(sweep_a == 0 && sweep_b == 0, format("sweep exit codes %d, %d", sweep_a, sweep_b));
  r.check(slurp(root / "sweep_a/sweep.csv") == slurp(root / "sweep_b/sweep.csv"), "sweep.csv identical");

  const std::string gain = (root / "sweep_a/gains/gain_004.json").string();
  std::vector<int> codes;
  for (const char* dir : {"sim_a", "sim_b"}) {
    codes.push_back(cli({"simulate", "--config", config, "--gain", gain, "--seed", "7",
                         "--disturbance", "uniform-random", "--horizon", "2", "--out-dir",
                         (root / dir).string()}));
  }
  r.check(codes[0] != 1 && codes[1] != 1, format("simulate exit codes %d, %d", codes[0], codes[1]));
  r.check(slurp(root / "sim_a/trace.csv") == slurp(root / "sim_b/trace.csv"),
          "trace.csv identical for repeated --seed 7");

  const int replayed = cli({"replay", "--manifest", (root / "sim_a/manifest.json").string(),
                            "--out-dir", (root / "sim_c").string()});
  r.check(replayed == codes[0] && slurp(root / "sim_a/trace.csv") == slurp(root / "sim_c/trace.csv"),
          format("manifest replay reproduces every output (exit %d)", replayed));
  const int replay_sweep = cli({"replay", "--manifest", (root / "sweep_a/manifest.json").string(),
                                "--out-dir", (root / "sweep_c").string()});
  r.check(replay_sweep == 0, format("sweep manifest replay exit %d", replay_sweep));
  if (!r.ok()) r.note(err.str());
  fs::remove_all(root);
  return r;
}
#endif

}  // namespace

int main() {
  Shared sh;
  sh.spec = gs::testing::four_bus();
  sh.model = gs::net::assemble_state_space(sh.spec);
  sh.weights = gs::kernels::DesignWeights::identity(8, 4);

  std::vector<std::function<Report()>> criteria = {
      [] { return kernel_accuracy(); },
      [&] { return gradient_correctness(sh); },
      [&] {
        const auto t0 = Clock::now();
        sh.sweep = gs::sparse::gamma_sweep(sh.model, sh.weights, gs::sparse::log_space(1e-4, 1e-1, 50),
                                           gs::sparse::SparsityOptions{});
        sh.sweep_seconds = since(t0);
        return sweep_endpoints(sh);
      },
      [&] { return h2_monotonicity(sh); },
      [&] { return safety_replication(sh); },
      [] { return qp_oracle(); },
      [&] { return robust_bounds(sh); },
      [&] { return filter_transparency(sh); },
#ifdef GRIDSAFE_HAVE_CLI
      [] { return determinism(); },
#endif
  };

  int failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const auto t0 = Clock::now();
    try {
      const Report r = criteria[c]();
      failed += r.print(since(t0)) ? 0 : 1;
    } catch (const std::exception& e) {
      std::printf("criterion %zu FAIL  raised: %s\n", c + 1, e.what());
      ++failed;
    }
  }
#ifndef GRIDSAFE_HAVE_CLI
  std::printf("criterion 9 FAIL  command-line tool not built\n");
  ++failed;
#endif
  std::printf("%d of 9 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
