#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "qmetro/models.hpp"
#include "qmetro/policy.hpp"

using namespace qmetro;

namespace {

constexpr double kPi = std::numbers::pi;

// Deterministic concave objective with its maximum at `target`.
struct QuadraticEnv {
  Eigen::VectorXd target;
  std::size_t parameter_count() const { return static_cast<std::size_t>(target.size()); }
  double evaluate(const Eigen::VectorXd& w, std::uint64_t) const { return -(w - target).squaredNorm(); }
};

auto mz_env(int n_probes) {
  auto g = build_grid(0, kPi, 50, 1);
  return EstimationEnv(ExactSource<MzModel>{MzModel{}}, ExactProvider<MzModel>(MzModel{}, g),
                       uniform_particles(g), n_probes, TruthSampler{}, 4);
}

}  // namespace

TEST(PolicyNetwork, ZeroWeightsGiveMidpoint) {
  PolicyNetwork p(3, 16);
  p.set_weights(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.parameter_count())));
  Eigen::VectorXd obs = Eigen::VectorXd::Random(observation_size(3));
  EXPECT_LE(p.forward(obs).cwiseAbs().maxCoeff(), 1e-15);
  PolicyNetwork q(1, 4, 0.0, 2.0);
  q.set_weights(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q.parameter_count())));
  EXPECT_DOUBLE_EQ(q.forward(Eigen::VectorXd::Ones(observation_size(1)))[0], 1.0);
}

TEST(PolicyNetwork, OutputsStayInRange) {
  PolicyNetwork p(3, 16);
  Rng rng = make_stream(1, {});
  std::normal_distribution<double> n(0, 10);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(p.parameter_count()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = n(rng);
    p.set_weights(w);
    Eigen::VectorXd obs(observation_size(3));
    for (Eigen::Index i = 0; i < obs.size(); ++i) obs[i] = n(rng);
    PhaseVector c = p.forward(obs);
    EXPECT_GT(c.minCoeff(), -kPi);
    EXPECT_LT(c.maxCoeff(), kPi);
  }
}

TEST(PolicyNetwork, ShapesAndPersistence) {
  EXPECT_EQ(observation_size(3), 13);
  PolicyNetwork p(3, 16);
  EXPECT_EQ(p.parameter_count(), static_cast<std::size_t>(13 * 16 + 16 + 16 * 3 + 3));
  EXPECT_THROW(p.forward(Eigen::VectorXd::Zero(12)), ShapeError);
  EXPECT_THROW(p.set_weights(Eigen::VectorXd::Zero(5)), ShapeError);
  EXPECT_THROW(PolicyNetwork(1, 4, 1.0, 1.0), ConfigError);
  Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(p.parameter_count()), -1, 1);
  p.set_weights(w);
  auto back = PolicyNetwork::from_json(p.to_json());
  EXPECT_EQ(back.weights(), w);
  Eigen::VectorXd obs = Eigen::VectorXd::Constant(13, 0.3);
  EXPECT_EQ(back.forward(obs), p.forward(obs));
  auto doc = p.to_json();
  doc["kind"] = "posterior";
  EXPECT_THROW(PolicyNetwork::from_json(doc), ConfigError);
}

TEST(Observation, Layout) {
  PhaseVector est(2);
  est << 1, 2;
  Eigen::MatrixXd cov(2, 2);
  cov << 3, 4, 5, 6;
  Eigen::VectorXd obs = make_observation(est, 5, 20, cov);
  Eigen::VectorXd expect(7);
  expect << 1, 2, 0.25, 3, 4, 5, 6;
  EXPECT_EQ(obs, expect);
}

TEST(Reward, ExamplesAndTelescoping) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(3, 3) * 2;
  Eigen::MatrixXd b = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_DOUBLE_EQ(reward(a, b), 3.0);
  EXPECT_DOUBLE_EQ(reward(b, a), -3.0);
  EXPECT_DOUBLE_EQ(reward(a, a), 0.0);
  EXPECT_THROW(reward(a, Eigen::MatrixXd::Identity(2, 2)), ShapeError);

  auto env = mz_env(25);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(env.parameter_count()), 0.1);
  auto ep = run_episode(env, w, 25, 7);
  ASSERT_EQ(ep.rewards.size(), 25u);
  double sum = std::accumulate(ep.rewards.begin(), ep.rewards.end(), 0.0);
  EXPECT_NEAR(sum, ep.total_reward, 1e-12);
  EXPECT_NEAR(ep.total_reward, ep.initial_cov_trace - ep.final_cov_trace, 1e-15);
  EXPECT_DOUBLE_EQ(ep.initial_cov_trace, env.prior_cov_trace());
}

TEST(Episode, EdgeCasesAndDeterminism) {
  auto env = mz_env(30);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(env.parameter_count()), -0.2);
  auto none = run_episode(env, w, 0, 3);
  EXPECT_EQ(none.total_reward, 0.0);
  EXPECT_TRUE(none.rewards.empty());
  auto a = run_episode(env, w, 30, 11);
  auto b = run_episode(env, w, 30, 11);
  EXPECT_EQ(a.rewards, b.rewards);
  EXPECT_EQ(env.evaluate(w, 11), a.total_reward);
  // Reward can never exceed the prior trace: the final trace is nonnegative.
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_LE(env.evaluate(w, s), env.prior_cov_trace() + 1e-12);
}

TEST(Cem, EliteSelection) {
  CemState st(4, 1.0, 100, 0.1);
  EXPECT_EQ(st.elite_count(), 10);
  EXPECT_EQ(CemState(4, 1.0, 7, 0.1).elite_count(), 1);
  EXPECT_EQ(CemState(4, 1.0, 10, 1.0).elite_count(), 10);
  std::vector<double> r = {1, 5, 5, 3, 5, 0};
  EXPECT_EQ(elite_indices(r, 2), (std::vector<int>{1, 2}));
  EXPECT_EQ(elite_indices(r, 4), (std::vector<int>{1, 2, 4, 3}));
  EXPECT_THROW(CemState(4, 1.0, 10, 0.0), ConfigError);
  EXPECT_THROW(CemState(4, -1.0, 10, 0.5), ConfigError);
}

TEST(Cem, RefitIgnoresNonElite) {
  std::vector<Eigen::VectorXd> c = {Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 4), Eigen::Vector2d(100, -100)};
  Eigen::VectorXd mean, sigma;
  refit_gaussian(c, {0, 1}, mean, sigma);
  EXPECT_EQ(mean, Eigen::Vector2d(2, 3));
  EXPECT_NEAR(sigma[0], std::sqrt(2.0), 1e-15);
  c[2] = Eigen::Vector2d(-7, 9);
  Eigen::VectorXd mean2, sigma2;
  refit_gaussian(c, {0, 1}, mean2, sigma2);
  EXPECT_EQ(mean, mean2);
  EXPECT_EQ(sigma, sigma2);
}

TEST(Cem, QuadraticToyConverges) {
  QuadraticEnv env{Eigen::Vector3d(0.5, -1.2, 2.0)};
  CemState st(3, 2.0, 50, 0.2);
  auto res = cem_train(env, st, 50L * 50, 4);
  EXPECT_LE(res.history.size(), 50u);
  EXPECT_LE((res.weights - env.target).cwiseAbs().maxCoeff(), 0.05);
  for (std::size_t i = 1; i < res.history.size(); ++i) {
    // Sampling noise allows a tiny slip once sigma has collapsed.
    EXPECT_GE(res.history[i].elite_mean_reward, res.history[i - 1].elite_mean_reward - 1e-3) << i;
  }
  auto again = cem_train(env, st, 50L * 50, 4);
  EXPECT_EQ(again.weights, res.weights);
  EXPECT_THROW(cem_train(env, st, 10, 4), ConfigError);
  EXPECT_THROW(cem_train(env, CemState(4, 1.0, 50, 0.2), 100, 4), ShapeError);
}

TEST(Cem, TrainsOnEstimationEnv) {
  auto env = mz_env(10);
  CemState st(env.parameter_count(), 0.5, 20, 0.2);
  auto res = cem_train(env, st, 20L * 5, 2);
  EXPECT_EQ(res.history.size(), 5u);
  EXPECT_EQ(res.weights.size(), static_cast<Eigen::Index>(env.parameter_count()));
  for (const auto& h : res.history) {
    EXPECT_TRUE(std::isfinite(h.mean_reward));
    EXPECT_GE(h.best_reward, h.elite_mean_reward);
    EXPECT_GE(h.elite_mean_reward, h.mean_reward);
  }
}

TEST(BayesRisk, StartsAtPriorAndIsDeterministic) {
  auto env = mz_env(20);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(env.parameter_count()), 0.05);
  auto risk = evaluate_bayes_risk(w, env, 5, 3, 20, 9);
  ASSERT_EQ(risk.size(), 21u);
  EXPECT_DOUBLE_EQ(risk[0], env.prior_cov_trace());
  for (double r : risk) EXPECT_TRUE(std::isfinite(r));
  EXPECT_LT(risk.back(), risk.front());
  EXPECT_EQ(evaluate_bayes_risk(w, env, 5, 3, 20, 9), risk);
  EXPECT_THROW(evaluate_bayes_risk(w, env, 0, 3, 20, 9), ConfigError);
}

TEST(TruthSampler, Kinds) {
  auto g = build_grid(0, kPi, 10, 3);
  auto ps = uniform_particles(g);
  Rng rng = make_stream(5, {});
  TruthSampler pts;
  for (int i = 0; i < 50; ++i) {
    PhaseVector t = pts.sample(ps, rng);
    EXPECT_LT((g.point(g.nearest_index(t)) - t).norm(), 1e-12);
  }
  TruthSampler box{TruthSampler::Kind::uniform_box, 0.5, 1.0};
  for (int i = 0; i < 50; ++i) {
    PhaseVector t = box.sample(ps, rng);
    EXPECT_GE(t.minCoeff(), 0.5);
    EXPECT_LE(t.maxCoeff(), 1.0);
  }
}
