#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qmetro/error.hpp"
#include "qmetro/estimator.hpp"
#include "qmetro/neural.hpp"
#include "qmetro/parallel.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

/// Observation length for D phases: estimate (D), probe counter (1) and the
/// flattened covariance (D^2).
inline int observation_size(int dims) { return dims + 1 + dims * dims; }

/// [estimate, probe / n_probes, cov (row-major)].
inline Eigen::VectorXd make_observation(const PhaseVector& estimate, int probe, int n_probes,
                                        const Eigen::MatrixXd& cov) {
  const auto dims = estimate.size();
  Eigen::VectorXd obs(observation_size(static_cast<int>(dims)));
  obs.head(dims) = estimate;
  obs[dims] = n_probes > 0 ? static_cast<double>(probe) / n_probes : 0.0;
  Eigen::Index k = dims + 1;
  for (Eigen::Index i = 0; i < dims; ++i) {
    for (Eigen::Index j = 0; j < dims; ++j) obs[k++] = cov(i, j);
  }
  return obs;
}

/// Maps observations to controls: one rectifier hidden layer, sigmoid output
/// scaled to [lo, hi].
class PolicyNetwork {
 public:
  PolicyNetwork() = default;
  PolicyNetwork(int dims, int hidden = 16, double lo = -std::numbers::pi,
                double hi = std::numbers::pi)
      : net_({observation_size(dims), hidden, dims}, Activation::relu, Activation::sigmoid),
        dims_(dims),
        lo_(lo),
        hi_(hi) {
    if (!(hi > lo)) throw ConfigError("policy control range must satisfy lo < hi");
  }

  int dims() const noexcept { return dims_; }
  int observation_dims() const { return net_.input_size(); }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  std::size_t parameter_count() const { return net_.parameter_count(); }
  const Mlp& mlp() const noexcept { return net_; }

  void set_weights(const Eigen::VectorXd& flat) { net_.set_flat_parameters(flat); }
  Eigen::VectorXd weights() const { return net_.flat_parameters(); }

  PhaseVector forward(const Eigen::VectorXd& obs) const {
    if (obs.size() != observation_dims()) {
      throw ShapeError("observation has " + std::to_string(obs.size()) + " entries, policy expects " +
                       std::to_string(observation_dims()));
    }
    // Open interval: controls never touch the box edges.
    Eigen::VectorXd s = net_.forward(obs).cwiseMax(1e-15).cwiseMin(1.0 - 1e-15);
    return (lo_ + (hi_ - lo_) * s.array()).matrix();
  }

  nlohmann::json to_json() const {
    auto j = net_.to_json();
    j["format"] = "qmetro-mlp";
    j["version"] = 1;
    j["kind"] = "policy";
    j["dims"] = dims_;
    j["output_range"] = {lo_, hi_};
    return j;
  }

  static PolicyNetwork from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "qmetro-mlp" || j.value("kind", "") != "policy") {
      throw ConfigError("not a qmetro policy network document");
    }
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported network version");
    auto sizes = j.at("layers").get<std::vector<int>>();
    if (sizes.size() != 3) throw ShapeError("policy network must have exactly one hidden layer");
    auto range = j.at("output_range").get<std::vector<double>>();
    if (range.size() != 2) throw ShapeError("policy output_range needs two entries");
    PolicyNetwork p(j.at("dims").get<int>(), sizes[1], range[0], range[1]);
    p.net_ = Mlp::from_json(j);
    if (p.net_.input_size() != observation_size(p.dims_) || p.net_.output_size() != p.dims_) {
      throw ShapeError("policy layer sizes do not match its dimensionality");
    }
    return p;
  }

 private:
  Mlp net_;
  int dims_ = 3;
  double lo_ = -std::numbers::pi;
  double hi_ = std::numbers::pi;
};

struct PolicyFeedback {
  PolicyNetwork policy;

  PhaseVector choose(const EstimationState& s, Rng&) const {
    return policy.forward(make_observation(s.estimate, s.probe, s.n_probes, s.cov));
  }
};

/// Drop in traced posterior covariance produced by one probe.
inline double reward(const Eigen::MatrixXd& prev_cov, const Eigen::MatrixXd& new_cov) {
  if (prev_cov.rows() != new_cov.rows() || prev_cov.cols() != new_cov.cols()) {
    throw ShapeError("reward: covariance shapes differ");
  }
  return prev_cov.trace() - new_cov.trace();
}

// ---------------------------------------------------------------------------
// Environment

/// Where episode truths come from.
struct TruthSampler {
  enum class Kind { prior_points, uniform_box };
  Kind kind = Kind::prior_points;
  double lo = 0.0;
  double hi = std::numbers::pi;

  PhaseVector sample(const ParticleSet& prior, Rng& rng) const {
    if (kind == Kind::uniform_box) {
      PhaseVector t(prior.dims());
      for (Eigen::Index k = 0; k < t.size(); ++k) t[k] = lo + (hi - lo) * uniform01(rng);
      return t;
    }
    int i = draw_categorical(prior.weights, rng);
    return prior.positions.row(i).transpose();
  }
};

/// Adaptive estimation as an RL environment. Every episode starts from a
/// fresh copy of the prior particle set.
template <typename Source, typename Provider>
class EstimationEnv {
 public:
  EstimationEnv(Source source, Provider provider, ParticleSet prior, int n_probes,
                TruthSampler truths = {}, int hidden = 16)
      : source_(std::move(source)),
        provider_(std::move(provider)),
        prior_(std::move(prior)),
        n_probes_(n_probes),
        truths_(truths),
        hidden_(hidden) {
    if (n_probes < 0) throw ConfigError("n_probes must be >= 0");
    if (prior_.size() != provider_.particle_grid().size()) {
      throw ShapeError("prior particle count differs from the provider grid");
    }
    prior_cov_trace_ = covariance_trace(prior_);
  }

  const Source& source() const noexcept { return source_; }
  const Provider& provider() const noexcept { return provider_; }
  const ParticleSet& prior() const noexcept { return prior_; }
  const TruthSampler& truths() const noexcept { return truths_; }
  int n_probes() const noexcept { return n_probes_; }
  int dims() const noexcept { return prior_.dims(); }
  double prior_cov_trace() const noexcept { return prior_cov_trace_; }

  PolicyNetwork make_policy(const Eigen::VectorXd& weights) const {
    PolicyNetwork p(dims(), hidden_);
    p.set_weights(weights);
    return p;
  }

  std::size_t parameter_count() const { return PolicyNetwork(dims(), hidden_).parameter_count(); }

  /// Total episode reward; the CEM objective.
  double evaluate(const Eigen::VectorXd& weights, std::uint64_t seed) const;

 private:
  Source source_;
  Provider provider_;
  ParticleSet prior_;
  int n_probes_;
  TruthSampler truths_;
  int hidden_;
  double prior_cov_trace_ = 0.0;
};

struct EpisodeResult {
  double total_reward = 0.0;
  std::vector<double> rewards;
  double initial_cov_trace = 0.0;
  double final_cov_trace = 0.0;
  bool aborted = false;
};

/// One training episode: truth from the sampler, then n_probes rounds of
/// observe -> act -> measure -> update, accumulating the covariance reward.
/// A degenerate update aborts the episode with the worst-case reward
/// -Tr[cov_prior].
template <typename Source, typename Provider>
EpisodeResult run_episode(const EstimationEnv<Source, Provider>& env, const Eigen::VectorXd& weights,
                          int n_probes, std::uint64_t seed) {
  PolicyNetwork policy = env.make_policy(weights);
  Rng truth_rng = make_stream(seed, {0});
  Rng outcome_rng = make_stream(seed, {1});
  PhaseVector truth = env.truths().sample(env.prior(), truth_rng);

  ParticleSet particles = env.prior();
  EpisodeResult result;
  Eigen::MatrixXd cov = covariance(particles);
  result.initial_cov_trace = cov.trace();
  result.final_cov_trace = result.initial_cov_trace;
  PhaseVector estimate = estimate_mean(particles);
  Eigen::VectorXd scratch;
  result.rewards.reserve(static_cast<std::size_t>(std::max(n_probes, 0)));
  try {
    for (int m = 0; m < n_probes; ++m) {
      PhaseVector wanted = policy.forward(make_observation(estimate, m, n_probes, cov));
      LatticeShift imparted = env.provider().snap(wanted);
      int d = env.source().draw(truth, imparted.snapped, outcome_rng);
      bayes_update(particles, d, imparted, env.provider(), scratch);
      Eigen::MatrixXd next = covariance(particles);
      result.rewards.push_back(reward(cov, next));
      cov = std::move(next);
      estimate = estimate_mean(particles);
    }
  } catch (const DegenerateUpdateError&) {
    result.aborted = true;
    result.total_reward = -env.prior_cov_trace();
    return result;
  }
  result.final_cov_trace = cov.trace();
  result.total_reward = result.initial_cov_trace - result.final_cov_trace;
  return result;
}

template <typename Source, typename Provider>
double EstimationEnv<Source, Provider>::evaluate(const Eigen::VectorXd& weights,
                                                 std::uint64_t seed) const {
  return run_episode(*this, weights, n_probes_, seed).total_reward;
}

// ---------------------------------------------------------------------------
// Cross-entropy method

struct CemState {
  Eigen::VectorXd mean;
  Eigen::VectorXd sigma;
  int population = 100;
  double elite_fraction = 0.10;
  int episodes_per_candidate = 1;
  int iteration = 0;

  CemState() = default;
  CemState(std::size_t parameters, double sigma0, int population_size = 100,
           double elite = 0.10)
      : mean(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameters))),
        sigma(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(parameters), sigma0)),
        population(population_size),
        elite_fraction(elite) {
    if (sigma0 < 0) throw ConfigError("CEM sigma must be nonnegative");
    if (population_size < 1) throw ConfigError("CEM population must be >= 1");
    if (!(elite > 0 && elite <= 1)) throw ConfigError("CEM elite fraction must be in (0, 1]");
  }

  int elite_count() const {
    int n = static_cast<int>(std::ceil(elite_fraction * population - 1e-9));
    return std::clamp(n, 1, population);
  }
};

struct CemIteration {
  double mean_reward = 0.0;
  double elite_mean_reward = 0.0;
  double best_reward = 0.0;
  double max_sigma = 0.0;
};

struct CemResult {
  Eigen::VectorXd weights;  // final mean
  CemState state;
  std::vector<CemIteration> history;
  bool converged_early = false;
};

inline constexpr double kCemSigmaFloor = 1e-6;
inline constexpr double kCemConvergedSigma = 1e-8;

/// Indices of the top `count` rewards; ties go to the lower index.
inline std::vector<int> elite_indices(const std::vector<double>& rewards, int count) {
  std::vector<int> order(rewards.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return rewards[static_cast<std::size_t>(a)] > rewards[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(count));
  return order;
}

/// Mean and sample standard deviation of the selected candidates.
inline void refit_gaussian(const std::vector<Eigen::VectorXd>& candidates, const std::vector<int>& elite,
                           Eigen::VectorXd& mean, Eigen::VectorXd& sigma) {
  const auto dim = candidates.front().size();
  mean = Eigen::VectorXd::Zero(dim);
  for (int i : elite) mean += candidates[static_cast<std::size_t>(i)];
  mean /= static_cast<double>(elite.size());
  sigma = Eigen::VectorXd::Zero(dim);
  if (elite.size() < 2) return;
  for (int i : elite) {
    sigma += (candidates[static_cast<std::size_t>(i)] - mean).array().square().matrix();
  }
  sigma = (sigma / static_cast<double>(elite.size() - 1)).cwiseSqrt();
}

/// Iterations = n_episodes / (population * episodes_per_candidate). Each
/// iteration draws the population from N(mean, diag sigma^2), scores every
/// candidate, and refits mean/sigma to the elite. Candidates run through
/// parallel_for with per-candidate streams.
template <typename Env>
CemResult cem_train(const Env& env, CemState cem, long n_episodes, std::uint64_t seed) {
  const auto dim = static_cast<Eigen::Index>(env.parameter_count());
  if (cem.mean.size() != dim || cem.sigma.size() != dim) {
    throw ShapeError("CEM state dimension does not match the policy parameter count");
  }
  const long per_iteration = static_cast<long>(cem.population) * cem.episodes_per_candidate;
  if (n_episodes < per_iteration) {
    throw ConfigError("n_episodes must be at least population * episodes_per_candidate");
  }
  const long iterations = n_episodes / per_iteration;
  const int elite_n = cem.elite_count();

  CemResult result;
  std::vector<Eigen::VectorXd> candidates(static_cast<std::size_t>(cem.population));
  std::vector<double> rewards(static_cast<std::size_t>(cem.population));
  for (long it = 0; it < iterations; ++it) {
    const auto iter_key = static_cast<std::uint64_t>(cem.iteration);
    parallel_for(static_cast<std::size_t>(cem.population), [&](std::size_t k) {
      Rng rng = make_stream(seed, {iter_key, k, 0});
      std::normal_distribution<double> normal(0.0, 1.0);
      Eigen::VectorXd w(dim);
      for (Eigen::Index i = 0; i < dim; ++i) w[i] = cem.mean[i] + cem.sigma[i] * normal(rng);
      double total = 0.0;
      for (int e = 0; e < cem.episodes_per_candidate; ++e) {
        Rng episode = make_stream(seed, {iter_key, k, static_cast<std::uint64_t>(e) + 1});
        total += env.evaluate(w, episode());
      }
      candidates[k] = std::move(w);
      rewards[k] = total / cem.episodes_per_candidate;
    });

    auto elite = elite_indices(rewards, elite_n);
    CemIteration log;
    log.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) / rewards.size();
    log.best_reward = rewards[static_cast<std::size_t>(elite.front())];
    for (int i : elite) log.elite_mean_reward += rewards[static_cast<std::size_t>(i)];
    log.elite_mean_reward /= elite_n;

    Eigen::VectorXd raw_sigma;
    refit_gaussian(candidates, elite, cem.mean, raw_sigma);
    ++cem.iteration;
    if (raw_sigma.maxCoeff() < kCemConvergedSigma) {
      cem.sigma = raw_sigma;
      log.max_sigma = raw_sigma.maxCoeff();
      result.history.push_back(log);
      result.converged_early = true;
      break;
    }
    cem.sigma = raw_sigma.cwiseMax(kCemSigmaFloor);
    log.max_sigma = cem.sigma.maxCoeff();
    result.history.push_back(log);
  }
  result.weights = cem.mean;
  result.state = std::move(cem);
  return result;
}

/// Mean posterior covariance trace after 0..n_probes probes, over
/// n_truths x n_reps policy-driven runs. Entry 0 is the prior.
template <typename Source, typename Provider>
std::vector<double> evaluate_bayes_risk(const Eigen::VectorXd& weights,
                                        const EstimationEnv<Source, Provider>& env, int n_truths,
                                        int n_reps, int n_probes, std::uint64_t seed) {
  if (n_truths < 1 || n_reps < 1) throw ConfigError("n_truths and n_reps must be >= 1");
  PolicyFeedback strategy{env.make_policy(weights)};
  const auto cells = static_cast<std::size_t>(n_truths) * static_cast<std::size_t>(n_reps);
  std::vector<std::vector<double>> traces(cells);
  parallel_for(cells, [&](std::size_t cell) {
    std::size_t t = cell / static_cast<std::size_t>(n_reps);
    Rng truth_rng = make_stream(seed, {t, 0});
    PhaseVector truth = env.truths().sample(env.prior(), truth_rng);
    auto trace = run_estimation(env.source(), env.provider(), strategy, env.prior(), n_probes, truth,
                                make_stream(seed, {t, cell % static_cast<std::size_t>(n_reps) + 1})());
    std::vector<double> risk;
    risk.reserve(trace.size() + 1);
    risk.push_back(trace.initial_cov_trace);
    for (const auto& r : trace.probes) risk.push_back(r.cov_trace);
    traces[cell] = std::move(risk);
  });
  std::vector<double> curve(static_cast<std::size_t>(n_probes) + 1, 0.0);
  for (const auto& tr : traces) {
    for (std::size_t m = 0; m < curve.size(); ++m) curve[m] += tr[m];
  }
  for (double& v : curve) v /= static_cast<double>(cells);
  return curve;
}

}  // namespace qmetro
