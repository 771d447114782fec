#include "gridsafe/sparse_design.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "gridsafe/error.hpp"

namespace gridsafe::sparse {
namespace {

using Eigen::MatrixXd;
using kernels::DesignWeights;
using kernels::LyapunovOperator;
using net::LinearModel;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Everything the H2 cost, its gradient and its Hessian action need at one K.
struct H2Point {
  MatrixXd K;
  std::optional<LyapunovOperator> op;
  MatrixXd P;   // observability Gramian of the closed loop
  MatrixXd Lc;  // controllability Gramian seeded by B1
  MatrixXd E;   // R K - B2^T P
  double cost = kInf;
  MatrixXd gradient;
};

// Returns nullopt when K does not stabilize the plant (or the Gramian solve
// is numerically unusable, which only happens right at the boundary).
std::optional<H2Point> evaluate(const LinearModel& model, const DesignWeights& w,
                                const MatrixXd& K, bool with_gradient = true) {
  H2Point pt;
  pt.K = K;
  kernels::LyapunovOptions lyap;
  lyap.residual_tol = 1e-8;
  try {
    pt.op.emplace(model.A - model.B2 * K, lyap);
    pt.P = pt.op->solve_observability(w.Q + K.transpose() * w.R * K);
    if (with_gradient) pt.Lc = pt.op->solve_controllability(model.B1 * model.B1.transpose());
  } catch (const Error&) {
    return std::nullopt;
  }
  pt.cost = (model.B1.transpose() * pt.P * model.B1).trace();
  if (!std::isfinite(pt.cost)) return std::nullopt;
  if (with_gradient) {
    pt.E = w.R * K - model.B2.transpose() * pt.P;
    pt.gradient = 2.0 * pt.E * pt.Lc;
  }
  return pt;
}

// Directional derivative of the gradient along dK.
MatrixXd hessian_product(const LinearModel& model, const DesignWeights& w, const H2Point& pt,
                         const MatrixXd& dK) {
  const MatrixXd sym_p = dK.transpose() * pt.E;
  const MatrixXd dP = pt.op->solve_observability(sym_p + sym_p.transpose());
  const MatrixXd sym_l = model.B2 * dK * pt.Lc;
  const MatrixXd dL = pt.op->solve_controllability(-(sym_l + sym_l.transpose()));
  return 2.0 * (w.R * dK - model.B2.transpose() * dP) * pt.Lc + 2.0 * pt.E * dL;
}

std::string describe_cost(double cost) {
  std::ostringstream os;
  os << cost;
  return os.str();
}

MatrixXd project(const MatrixXd& K, const Pattern& pattern) {
  return K.cwiseProduct(pattern.cast<double>());
}

// min_K J(K) + rho/2 ||K - U||^2 by gradient descent with Armijo
// backtracking; candidates that lose stability halve the step.
H2Point k_step(const LinearModel& model, const DesignWeights& w, const SparsityOptions& opts,
               double rho, const MatrixXd& U, H2Point current) {
  auto objective = [&](const H2Point& p) { return p.cost + 0.5 * rho * (p.K - U).squaredNorm(); };
  auto full_gradient = [&](const H2Point& p) -> MatrixXd { return p.gradient + rho * (p.K - U); };

  double f = objective(current);
  MatrixXd g = full_gradient(current);
  double step = 1.0 / rho;
  for (int it = 0; it < opts.max_kstep_iters; ++it) {
    const double gnorm2 = g.squaredNorm();
    if (std::sqrt(gnorm2) <= opts.kstep_tol) break;
    // Below this predicted decrease the Armijo test compares rounding noise.
    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(f);
    if (step * gnorm2 <= noise) break;
    std::optional<H2Point> next;
    double f_next = kInf;
    double s = step;
    for (int ls = 0; ls < 40 && s * gnorm2 > noise; ++ls, s *= 0.5) {
      next = evaluate(model, w, current.K - s * g);
      if (next) {
        f_next = objective(*next);
        if (f_next <= f - 1e-4 * s * gnorm2) break;
      }
      next.reset();
    }
    if (!next) break;  // no admissible decrease at machine-level steps
    const MatrixXd g_next = full_gradient(*next);
    const MatrixXd dk = next->K - current.K;
    const MatrixXd dg = g_next - g;
    const double curvature = (dk.array() * dg.array()).sum();
    step = curvature > 0.0 ? dk.squaredNorm() / curvature : 1.0 / rho;
    step = std::clamp(step, 1e-6 / rho, 10.0 / rho);
    current = std::move(*next);
    f = f_next;
    g = g_next;
  }
  return current;
}

void fill_outcome(const LinearModel& model, const DesignWeights& w, GainResult& result) {
  result.stability = kernels::check_stability(model.A - model.B2 * result.K);
  result.card = cardinality(result.pattern);
  auto pt = evaluate(model, w, result.K, /*with_gradient=*/false);
  result.cost = pt ? pt->cost : kInf;
}

}  // namespace

void SparsityOptions::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidParameter, what); };
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be >= 0");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (!(rho > 0.0)) fail("rho must be > 0");
  if (!(rho_balance > 1.0) || !(rho_scale > 1.0)) fail("rho_balance and rho_scale must be > 1");
  if (max_admm_iters < 1 || max_reweight_iters < 1) fail("iteration limits must be >= 1");
  if (!(primal_tol > 0.0) || !(dual_tol > 0.0) || !(zero_tol > 0.0) ||
      !(relative_zero_tol > 0.0) || !(relative_tol >= 0.0) || !(kstep_tol > 0.0) || !(polish_tol > 0.0)) {
    fail("tolerances must be > 0");
  }
  if (!(zero_tol < epsilon)) fail("zero_tol must be smaller than epsilon");
}

double h2_cost(const LinearModel& model, const DesignWeights& w, const MatrixXd& K) {
  auto pt = evaluate(model, w, K, /*with_gradient=*/false);
  if (!pt) {
    throw Error(ErrorCode::kUnstableGain,
                "A - B2 K has spectral abscissa " +
                    describe_cost(kernels::spectral_abscissa(model.A - model.B2 * K)));
  }
  return pt->cost;
}

CostAndGradient h2_cost_and_gradient(const LinearModel& model, const DesignWeights& w,
                                     const MatrixXd& K) {
  auto pt = evaluate(model, w, K);
  if (!pt) {
    throw Error(ErrorCode::kUnstableGain,
                "A - B2 K has spectral abscissa " +
                    describe_cost(kernels::spectral_abscissa(model.A - model.B2 * K)));
  }
  return {pt->cost, pt->gradient};
}

MatrixXd h2_gradient(const LinearModel& model, const DesignWeights& w, const MatrixXd& K) {
  return h2_cost_and_gradient(model, w, K).gradient;
}

MatrixXd reweight(const MatrixXd& K, double epsilon) {
  return (K.array().abs() + epsilon).inverse().matrix();
}

MatrixXd soft_threshold(const MatrixXd& v, const MatrixXd& thresholds) {
  MatrixXd out(v.rows(), v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const double mag = std::abs(v(i, j)) - thresholds(i, j);
      out(i, j) = mag > 0.0 ? std::copysign(mag, v(i, j)) : 0.0;
    }
  }
  return out;
}

Pattern support(const MatrixXd& K, double tol) { return (K.array().abs() > tol).matrix(); }

int cardinality(const Pattern& pattern) { return static_cast<int>(pattern.count()); }

AdmmState AdmmState::from_gain(const MatrixXd& K) {
  AdmmState s;
  s.K = K;
  s.G = K;
  s.Lambda = MatrixXd::Zero(K.rows(), K.cols());
  return s;
}

AdmmState admm(const LinearModel& model, const DesignWeights& w, const SparsityOptions& opts,
               const MatrixXd& weights, AdmmState state) {
  auto current = evaluate(model, w, state.K);
  if (!current) {
    throw Error(ErrorCode::kAdmmStabilityLoss, "warm-start gain is not stabilizing");
  }
  double rho = opts.rho;
  state.iterations = 0;
  for (int it = 1; it <= opts.max_admm_iters; ++it) {
    const MatrixXd U = state.G - state.Lambda / rho;
    *current = k_step(model, w, opts, rho, U, std::move(*current));
    state.K = current->K;

    const MatrixXd G_next = soft_threshold(state.K + state.Lambda / rho, (opts.gamma / rho) * weights);
    state.Lambda += rho * (state.K - G_next);
    state.primal_residual = (state.K - G_next).norm();
    state.dual_residual = rho * (G_next - state.G).norm();
    state.G = G_next;
    state.iterations = it;
    state.rho = rho;
    if (!std::isfinite(state.primal_residual) || !std::isfinite(state.dual_residual)) {
      throw Error(ErrorCode::kAdmmStabilityLoss,
                  "non-finite residuals; last stable iterate cost " + describe_cost(current->cost));
    }
    const double root_size = std::sqrt(static_cast<double>(state.K.size()));
    const double primal_bound = root_size * opts.primal_tol +
                                opts.relative_tol * std::max(state.K.norm(), state.G.norm());
    const double dual_bound = root_size * opts.dual_tol + opts.relative_tol * state.Lambda.norm();
    if (state.primal_residual <= primal_bound && state.dual_residual <= dual_bound) {
      return state;
    }
    if (opts.adaptive_rho) {
      if (state.primal_residual > opts.rho_balance * state.dual_residual) {
        rho *= opts.rho_scale;
      } else if (state.dual_residual > opts.rho_balance * state.primal_residual) {
        rho /= opts.rho_scale;
      }
    }
  }
  std::ostringstream os;
  os << "no convergence in " << opts.max_admm_iters << " iterations (primal "
     << state.primal_residual << ", dual " << state.dual_residual
     << "); last stable iterate cost " << current->cost;
  throw Error(ErrorCode::kAdmmMaxIters, os.str());
}

GainResult polish(const LinearModel& model, const DesignWeights& w, const Pattern& pattern,
                  const MatrixXd& K_start, const SparsityOptions& opts) {
  if (pattern.rows() != K_start.rows() || pattern.cols() != K_start.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "pattern and gain shapes differ");
  }
  GainResult result;
  result.gamma = opts.gamma;
  result.pattern = pattern;

  auto current = evaluate(model, w, project(K_start, pattern));
  if (!current) {
    throw Error(ErrorCode::kPolishStabilityLoss,
                "the gain projected onto the pattern (card " +
                    std::to_string(cardinality(pattern)) + ") is not stabilizing");
  }

  std::vector<std::pair<Eigen::Index, Eigen::Index>> free;
  for (Eigen::Index j = 0; j < pattern.cols(); ++j) {
    for (Eigen::Index i = 0; i < pattern.rows(); ++i) {
      if (pattern(i, j)) free.emplace_back(i, j);
    }
  }
  const Eigen::Index p = static_cast<Eigen::Index>(free.size());

  int it = 0;
  for (; it < opts.max_polish_iters && p > 0; ++it) {
    Eigen::VectorXd g(p);
    for (Eigen::Index k = 0; k < p; ++k) g(k) = current->gradient(free[k].first, free[k].second);
    if (g.norm() <= opts.polish_tol) break;

    // Newton direction on the free entries; falls back toward steepest
    // descent when the reduced Hessian is not positive definite.
    MatrixXd H(p, p);
    bool have_hessian = true;
    try {
      for (Eigen::Index k = 0; k < p; ++k) {
        MatrixXd dK = MatrixXd::Zero(pattern.rows(), pattern.cols());
        dK(free[k].first, free[k].second) = 1.0;
        const MatrixXd hd = hessian_product(model, w, *current, dK);
        for (Eigen::Index r = 0; r < p; ++r) H(r, k) = hd(free[r].first, free[r].second);
      }
      H = 0.5 * (H + H.transpose()).eval();
    } catch (const Error&) {
      have_hessian = false;
    }
    Eigen::VectorXd direction;
    double shift = 0.0;
    for (int attempt = 0; have_hessian && attempt < 40; ++attempt) {
      Eigen::LLT<MatrixXd> llt(H + shift * MatrixXd::Identity(p, p));
      if (llt.info() == Eigen::Success) {
        direction = -llt.solve(g);
        if (direction.dot(g) < 0.0) break;
      }
      shift = shift == 0.0 ? 1e-8 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff()) : 10 * shift;
      direction.resize(0);
    }
    if (direction.size() == 0) direction = -g;

    const double slope = direction.dot(g);
    MatrixXd step = MatrixXd::Zero(pattern.rows(), pattern.cols());
    for (Eigen::Index k = 0; k < p; ++k) step(free[k].first, free[k].second) = direction(k);

    std::optional<H2Point> next;
    double t = 1.0;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      next = evaluate(model, w, current->K + t * step);
      if (next && next->cost <= current->cost + 1e-4 * t * slope) break;
      next.reset();
    }
    if (!next) break;  // converged to rounding level
    const double decrease = current->cost - next->cost;
    current = std::move(next);
    if (decrease <= 1e-14 * std::max(1.0, std::abs(current->cost))) break;
  }

  result.iterations.polish = it;
  MatrixXd K = current->K;
  result.pattern = support(K, opts.zero_tol);
  result.K = project(K, result.pattern);
  fill_outcome(model, w, result);
  if (!result.stability.is_hurwitz) {
    throw Error(ErrorCode::kPolishStabilityLoss, "polished gain lost stability after truncation");
  }
  return result;
}

GainResult admm_sparse_gain(const LinearModel& model, const DesignWeights& w,
                            const SparsityOptions& opts, const std::optional<MatrixXd>& K_init,
                            AdmmState* warm) {
  opts.validate();
  AdmmState state;
  if (warm && warm->K.size() > 0) {
    state = *warm;
  } else {
    MatrixXd K0 = K_init ? *K_init : kernels::solve_are(model, w).K;
    if (K0.rows() != model.inputs() || K0.cols() != model.states()) {
      throw Error(ErrorCode::kShapeMismatch, "initial gain must be n x 2n");
    }
    if (!kernels::check_stability(model.A - model.B2 * K0).is_hurwitz) {
      throw Error(ErrorCode::kUnstableGain, "initial gain is not stabilizing");
    }
    state = AdmmState::from_gain(K0);
  }

  IterationCounts counts;
  MatrixXd weights = reweight(state.G, opts.epsilon);
  for (int pass = 0; pass < opts.max_reweight_iters; ++pass) {
    state = admm(model, w, opts, weights, std::move(state));
    counts.admm += state.iterations;
    counts.reweight = pass + 1;
    const MatrixXd refreshed = reweight(state.G, opts.epsilon);
    const double change = (refreshed - weights).norm() / weights.norm();
    weights = refreshed;
    if (change < 1e-2) break;
  }
  if (warm) *warm = state;

  const double g_max = state.G.cwiseAbs().maxCoeff();
  const Pattern pattern = support(state.G, opts.relative_zero_tol * g_max);

  GainResult result;
  if (opts.polish) {
    // Prefer the sparse iterate itself as the starting point; fall back to
    // the (stabilizing) smooth iterate restricted to the pattern.
    const bool g_stable =
        g_max > 0.0 && kernels::check_stability(model.A - model.B2 * state.G).is_hurwitz;
    result = polish(model, w, pattern, g_stable ? state.G : state.K, opts);
  } else {
    result.pattern = pattern;
    result.K = project(state.G, pattern);
    fill_outcome(model, w, result);
  }
  result.gamma = opts.gamma;
  result.iterations.admm = counts.admm;
  result.iterations.reweight = counts.reweight;
  return result;
}

std::vector<GainResult> gamma_sweep(const LinearModel& model, const DesignWeights& w,
                                    const std::vector<double>& gammas, const SparsityOptions& opts,
                                    SweepMode mode) {
  if (!std::is_sorted(gammas.begin(), gammas.end())) {
    throw Error(ErrorCode::kInvalidParameter, "gamma list must be ascending");
  }
  const MatrixXd centralized = kernels::solve_are(model, w).K;
  std::vector<GainResult> results(gammas.size());

  auto mark_failed = [&](std::size_t k, const std::string& what, const MatrixXd& fallback) {
    GainResult& r = results[k];
    r.gamma = gammas[k];
    r.K = fallback;
    r.pattern = support(fallback, opts.zero_tol);
    r.card = cardinality(r.pattern);
    r.stability = kernels::check_stability(model.A - model.B2 * fallback);
    r.cost = kInf;
    r.failure = what;
  };

  if (mode == SweepMode::kWarmSequential) {
    AdmmState state = AdmmState::from_gain(centralized);
    for (std::size_t k = 0; k < gammas.size(); ++k) {
      SparsityOptions point = opts;
      point.gamma = gammas[k];
      AdmmState trial = state;
      try {
        results[k] = admm_sparse_gain(model, w, point, std::nullopt, &trial);
        state = std::move(trial);
      } catch (const Error& e) {
        mark_failed(k, e.what(), state.K);
      }
    }
    return results;
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < gammas.size(); k = next++) {
      SparsityOptions point = opts;
      point.gamma = gammas[k];
      try {
        results[k] = admm_sparse_gain(model, w, point, centralized);
      } catch (const Error& e) {
        mark_failed(k, e.what(), centralized);
      }
    }
  };
  const unsigned threads =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                      static_cast<unsigned>(gammas.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return results;
}

std::vector<double> log_space(double lo, double hi, int count) {
  if (count < 1) throw Error(ErrorCode::kInvalidParameter, "count must be >= 1");
  if (count == 1) return {lo};
  if (!(lo > 0.0) || !(hi >= lo)) {
    throw Error(ErrorCode::kInvalidParameter, "log spacing needs 0 < lo <= hi");
  }
  std::vector<double> out(static_cast<std::size_t>(count));
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (int k = 0; k < count; ++k) {
    out[static_cast<std::size_t>(k)] = std::pow(10.0, a + (b - a) * k / (count - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

nlohmann::json to_json(const GainResult& result) {
  using nlohmann::json;
  json k = json::array();
  json pattern = json::array();
  for (Eigen::Index i = 0; i < result.K.rows(); ++i) {
    json row = json::array();
    json mask = json::array();
    for (Eigen::Index j = 0; j < result.K.cols(); ++j) {
      row.push_back(result.K(i, j));
      mask.push_back(result.pattern(i, j) ? 1 : 0);
    }
    k.push_back(std::move(row));
    pattern.push_back(std::move(mask));
  }
  json doc{{"gamma", result.gamma},
           {"cost", std::isfinite(result.cost) ? json(result.cost) : json(nullptr)},
           {"card", result.card},
           {"spectral_abscissa", result.stability.spectral_abscissa},
           {"k", std::move(k)},
           {"pattern", std::move(pattern)},
           {"iterations",
            {{"admm", result.iterations.admm},
             {"reweight", result.iterations.reweight},
             {"polish", result.iterations.polish}}},
           {"status", result.ok() ? std::string("ok") : *result.failure}};
  return doc;
}

GainResult gain_from_json(const nlohmann::json& doc) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kMalformedDocument, what); };
  if (!doc.is_object()) fail("gain document must be an object");
  for (const char* key : {"gamma", "card", "k", "pattern"}) {
    if (!doc.contains(key)) throw Error(ErrorCode::kMissingField, std::string("gain: '") + key + "'");
  }
  const auto& k = doc.at("k");
  const auto& mask = doc.at("pattern");
  if (!k.is_array() || k.empty() || !k[0].is_array()) fail("gain: 'k' must be a 2-D array");
  const Eigen::Index rows = static_cast<Eigen::Index>(k.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(k[0].size());
  if (cols != 2 * rows) fail("gain: 'k' must have n rows and 2n columns");
  if (!mask.is_array() || static_cast<Eigen::Index>(mask.size()) != rows) {
    fail("gain: 'pattern' must match the shape of 'k'");
  }
  GainResult result;
  result.K.resize(rows, cols);
  result.pattern.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = k[static_cast<std::size_t>(i)];
    const auto& mrow = mask[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols || !mrow.is_array() ||
        static_cast<Eigen::Index>(mrow.size()) != cols) {
      fail("gain: ragged row " + std::to_string(i));
    }
    for (Eigen::Index j = 0; j < cols; ++j) {
      result.K(i, j) = row[static_cast<std::size_t>(j)].get<double>();
      result.pattern(i, j) = mrow[static_cast<std::size_t>(j)].get<int>() != 0;
    }
  }
  result.gamma = doc.at("gamma").get<double>();
  result.card = doc.at("card").get<int>();
  result.cost = doc.contains("cost") && doc.at("cost").is_number() ? doc.at("cost").get<double>()
                                                                   : kInf;
  if (doc.contains("spectral_abscissa")) {
    result.stability.spectral_abscissa = doc.at("spectral_abscissa").get<double>();
    result.stability.is_hurwitz = result.stability.spectral_abscissa < 0.0;
  }
  if (doc.contains("status") && doc.at("status") != "ok") {
    result.failure = doc.at("status").get<std::string>();
  }
  return result;
}

}  // namespace gridsafe::sparse
