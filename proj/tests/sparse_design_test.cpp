#include "gridsafe/sparse_design.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gridsafe/error.hpp"
#include "support.hpp"

namespace gridsafe::sparse {
namespace {

using Eigen::MatrixXd;
using kernels::DesignWeights;

// x' = a x + b2 u + b1 d with scalar entries; only A, B1, B2 matter here.
net::LinearModel scalar_model(double a) {
  net::LinearModel m;
  m.n = 1;
  m.A = MatrixXd::Constant(1, 1, a);
  m.B1 = MatrixXd::Ones(1, 1);
  m.B2 = MatrixXd::Ones(1, 1);
  return m;
}

class FourBusTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = new net::LinearModel(net::assemble_state_space(testing::four_bus()));
    central_ = new MatrixXd(kernels::solve_are(*model_, weights()).K);
  }
  static void TearDownTestSuite() {
    delete model_;
    delete central_;
  }
  static DesignWeights weights() { return DesignWeights::identity(8, 4); }

  static net::LinearModel* model_;
  static MatrixXd* central_;
};
net::LinearModel* FourBusTest::model_ = nullptr;
MatrixXd* FourBusTest::central_ = nullptr;

TEST(H2CostTest, ScalarHandSolve) {
  const DesignWeights w{MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)};
  const net::LinearModel m = scalar_model(0.0);
  // -2K P = -(1 + K^2)  =>  J = P = (1 + K^2) / (2K)
  EXPECT_NEAR(h2_cost(m, w, MatrixXd::Ones(1, 1)), 1.0, 1e-14);
  EXPECT_NEAR(h2_cost(m, w, MatrixXd::Constant(1, 1, 2.0)), 1.25, 1e-14);
  // dJ/dK = (K^2 - 1) / (2 K^2)
  EXPECT_NEAR(h2_gradient(m, w, MatrixXd::Ones(1, 1))(0, 0), 0.0, 1e-14);
  EXPECT_NEAR(h2_gradient(m, w, MatrixXd::Constant(1, 1, 2.0))(0, 0), 0.375, 1e-14);
}

TEST_F(FourBusTest, NonStabilizingGainRejected) {
  try {
    h2_cost(*model_, weights(), MatrixXd::Zero(4, 8));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnstableGain);
  }
}

TEST_F(FourBusTest, StationaryAtCentralizedGain) {
  EXPECT_LE(h2_gradient(*model_, weights(), *central_).norm(), 1e-6);
}

TEST_F(FourBusTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    MatrixXd k;
    do {
      k = *central_ + testing::random_matrix(rng, 4, 8, 0.3);
    } while (!kernels::check_stability(model_->A - model_->B2 * k).is_hurwitz);
    const MatrixXd g = h2_gradient(*model_, weights(), k);
    const double h = 1e-6;
    for (int j = 0; j < 8; ++j) {
      for (int i = 0; i < 4; ++i) {
        MatrixXd kp = k, km = k;
        kp(i, j) += h;
        km(i, j) -= h;
        const double fd =
            (h2_cost(*model_, weights(), kp) - h2_cost(*model_, weights(), km)) / (2 * h);
        EXPECT_NEAR(g(i, j), fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(ReweightTest, Examples) {
  MatrixXd k(1, 3);
  k << 0.0, 0.999, -0.999;
  const MatrixXd w = reweight(k, 1e-3);
  EXPECT_DOUBLE_EQ(w(0, 0), 1000.0);
  EXPECT_DOUBLE_EQ(w(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(w(0, 2), 1.0);
  EXPECT_TRUE(reweight(MatrixXd::Zero(2, 4), 1e-3).isApproxToConstant(1000.0));
}

TEST(SoftThresholdTest, MatchesScalarProx) {
  // argmin_g t|g| + (g - v)^2 / 2 over the three stationary candidates.
  auto prox = [](double v, double t) {
    double best = 0.0;
    double best_val = 0.5 * v * v;
    for (double g : {v - t, v + t}) {
      const double val = t * std::abs(g) + 0.5 * (g - v) * (g - v);
      if (val < best_val) {
        best = g;
        best_val = val;
      }
    }
    return best;
  };
  std::mt19937_64 rng(43);
  const MatrixXd v = testing::random_matrix(rng, 20, 20, 3.0);
  MatrixXd t = testing::random_matrix(rng, 20, 20, 1.0).cwiseAbs();
  t(0, 0) = 0.0;
  const MatrixXd g = soft_threshold(v, t);
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 20; ++j) EXPECT_NEAR(g(i, j), prox(v(i, j), t(i, j)), 1e-14);
  }
}

TEST(SupportTest, CardinalityInvariances) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixXd k = testing::random_matrix(rng, 4, 8);
    for (int e = 0; e < 10; ++e) k(rng() % 4, rng() % 8) = 0.0;
    const int card = cardinality(support(k, 1e-6));
    EXPECT_EQ(cardinality(support(k.transpose().transpose(), 1e-6)), card);
    Eigen::PermutationMatrix<Eigen::Dynamic> p(4);
    p.setIdentity();
    std::shuffle(p.indices().data(), p.indices().data() + 4, rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> p2(8);
    for (int i = 0; i < 4; ++i) {
      p2.indices()(i) = p.indices()(i);
      p2.indices()(4 + i) = 4 + p.indices()(i);
    }
    const MatrixXd permuted = p * k * p2.transpose();
    EXPECT_EQ(cardinality(support(permuted, 1e-6)), card);
    EXPECT_EQ(p.transpose() * permuted * p2, k);
  }
}

TEST(OptionsTest, Validation) {
  SparsityOptions o;
  o.validate();
  o.zero_tol = o.epsilon;
  EXPECT_THROW(o.validate(), Error);
  o = {};
  o.rho = 0.0;
  EXPECT_THROW(o.validate(), Error);
  o = {};
  o.gamma = -1.0;
  EXPECT_THROW(o.validate(), Error);
}

TEST_F(FourBusTest, ZeroGammaGivesCentralizedGain) {
  SparsityOptions o;
  const GainResult r = admm_sparse_gain(*model_, weights(), o);
  EXPECT_LE((r.K - *central_).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(r.card, 32);
  EXPECT_TRUE(r.stability.is_hurwitz);
}

TEST_F(FourBusTest, SparseGainAtLargeGamma) {
  SparsityOptions o;
  o.gamma = 0.1;
  const GainResult r = admm_sparse_gain(*model_, weights(), o);
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.stability.is_hurwitz);
  EXPECT_GE(r.card, 7);
  EXPECT_LE(r.card, 15);
  EXPECT_EQ(r.card, cardinality(support(r.K, o.zero_tol)));
  EXPECT_EQ(r.pattern, support(r.K, o.zero_tol));
  EXPECT_GE(r.cost, h2_cost(*model_, weights(), *central_));

  // Polishing never loses to the thresholded ADMM iterate on the same pattern.
  SparsityOptions raw = o;
  raw.polish = false;
  const GainResult unpolished = admm_sparse_gain(*model_, weights(), raw);
  EXPECT_EQ(unpolished.pattern, r.pattern);
  EXPECT_LE(r.cost, unpolished.cost + 1e-9);
}

TEST_F(FourBusTest, PatternIsEquivariantUnderBusRelabeling) {
  const net::NetworkSpec spec = testing::four_bus();
  const std::vector<int> perm{2, 0, 3, 1};  // old id -> new id
  net::NetworkSpec relabeled = spec;
  for (int i = 0; i < 4; ++i) {
    relabeled.buses[perm[i]] = spec.buses[i];
    relabeled.buses[perm[i]].id = perm[i];
  }
  for (auto& line : relabeled.lines) {
    line.from = perm[line.from];
    line.to = perm[line.to];
  }
  const net::LinearModel other = net::assemble_state_space(relabeled);
  SparsityOptions o;
  o.gamma = 0.1;
  const GainResult a = admm_sparse_gain(*model_, weights(), o);
  const GainResult b = admm_sparse_gain(other, weights(), o);
  EXPECT_EQ(a.card, b.card);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      EXPECT_EQ(a.pattern(i, j), b.pattern(perm[i], perm[j]));
      EXPECT_EQ(a.pattern(i, 4 + j), b.pattern(perm[i], 4 + perm[j]));
    }
  }
  EXPECT_NEAR(a.cost, b.cost, 1e-8 * a.cost);
}

TEST_F(FourBusTest, PolishFullPatternReturnsCentralizedGain) {
  const Pattern full = Pattern::Constant(4, 8, true);
  const GainResult r = polish(*model_, weights(), full, *central_ + 0.01 * MatrixXd::Ones(4, 8));
  EXPECT_LE((r.K - *central_).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(r.card, 32);
}

TEST_F(FourBusTest, PolishEmptyPatternFails) {
  try {
    polish(*model_, weights(), Pattern::Constant(4, 8, false), *central_);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPolishStabilityLoss);
  }
}

TEST_F(FourBusTest, AdmmRejectsUnstableWarmStart) {
  SparsityOptions o;
  o.gamma = 0.01;
  try {
    admm(*model_, weights(), o, MatrixXd::Ones(4, 8), AdmmState::from_gain(MatrixXd::Zero(4, 8)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAdmmStabilityLoss);
  }
}

TEST_F(FourBusTest, AdmmMaxItersIsReported) {
  SparsityOptions o;
  o.gamma = 0.1;
  o.max_admm_iters = 1;
  try {
    admm(*model_, weights(), o, reweight(*central_, o.epsilon), AdmmState::from_gain(*central_));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAdmmMaxIters);
    EXPECT_NE(std::string(e.what()).find("last stable iterate cost"), std::string::npos);
  }
}

TEST_F(FourBusTest, ShortSweepProperties) {
  SparsityOptions o;
  const std::vector<double> gammas = log_space(1e-4, 1e-1, 12);
  const std::vector<GainResult> sweep = gamma_sweep(*model_, weights(), gammas, o);
  ASSERT_EQ(sweep.size(), gammas.size());
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    EXPECT_TRUE(sweep[k].ok()) << *sweep[k].failure;
    EXPECT_TRUE(sweep[k].stability.is_hurwitz);
    EXPECT_EQ(sweep[k].gamma, gammas[k]);
    if (k > 0) {
      EXPECT_LE(sweep[k].card, sweep[k - 1].card + 1);
      EXPECT_GE(sweep[k].cost, sweep[k - 1].cost - 1e-8);
    }
  }
}

TEST_F(FourBusTest, SweepAtZeroIsDense) {
  const auto sweep = gamma_sweep(*model_, weights(), {0.0}, SparsityOptions{});
  ASSERT_EQ(sweep.size(), 1u);
  EXPECT_EQ(sweep[0].card, 32);
}

TEST_F(FourBusTest, SweepRejectsDescendingGammas) {
  EXPECT_THROW(gamma_sweep(*model_, weights(), {0.1, 0.01}, SparsityOptions{}), Error);
}

TEST_F(FourBusTest, GainDocumentRoundTrip) {
  SparsityOptions o;
  o.gamma = 0.1;
  const GainResult r = admm_sparse_gain(*model_, weights(), o);
  const nlohmann::json doc = to_json(r);
  EXPECT_EQ(doc["k"].size(), 4u);
  EXPECT_EQ(doc["k"][0].size(), 8u);
  EXPECT_EQ(doc["pattern"][0].size(), 8u);
  const GainResult back = gain_from_json(nlohmann::json::parse(doc.dump()));
  EXPECT_EQ(back.K, r.K);
  EXPECT_EQ(back.pattern, r.pattern);
  EXPECT_EQ(back.card, r.card);
  EXPECT_EQ(back.gamma, r.gamma);
}

TEST(LogSpaceTest, Endpoints) {
  const auto g = log_space(1e-4, 1e-1, 50);
  ASSERT_EQ(g.size(), 50u);
  EXPECT_DOUBLE_EQ(g.front(), 1e-4);
  EXPECT_DOUBLE_EQ(g.back(), 1e-1);
  for (std::size_t k = 1; k < g.size(); ++k) {
    EXPECT_NEAR(std::log(g[k] / g[k - 1]), std::log(1e3) / 49, 1e-12);
  }
  EXPECT_EQ(log_space(0.5, 2.0, 1), std::vector<double>{0.5});
}

}  // namespace
}  // namespace gridsafe::sparse
