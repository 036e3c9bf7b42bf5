#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qmetro/dataset.hpp"
#include "qmetro/error.hpp"
#include "qmetro/grid.hpp"
#include "qmetro/prob_table.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

enum class Activation { relu, softmax, sigmoid, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

/// Column-wise softmax, shifted by the column max.
inline void softmax_columns(Eigen::MatrixXd& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    double m = col.maxCoeff();
    col = (col.array() - m).exp();
    col /= col.sum();
  }
}

inline void apply_activation(Activation a, Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::softmax: softmax_columns(z); break;
    case Activation::sigmoid: z = (1.0 + (-z.array()).exp()).inverse().matrix(); break;
    case Activation::identity: break;
  }
}

/// Fully connected feedforward network. Samples are columns.
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> sizes, Activation hidden, Activation output)
      : sizes_(std::move(sizes)), hidden_(hidden), output_(output) {
    if (sizes_.size() < 2) throw ShapeError("network needs at least an input and an output layer");
    for (int s : sizes_) {
      if (s < 1) throw ShapeError("layer sizes must be positive");
    }
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weights_.push_back(Eigen::MatrixXd::Zero(sizes_[l + 1], sizes_[l]));
      biases_.push_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
    }
  }

  /// Weights ~ N(0, 2 / fan_in), biases zero.
  void init_he_normal(Rng& rng) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / sizes_[l]));
      auto& w = weights_[l];
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = normal(rng);
      }
      biases_[l].setZero();
    }
  }

  const std::vector<int>& sizes() const noexcept { return sizes_; }
  std::size_t layers() const noexcept { return weights_.size(); }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  Activation hidden_activation() const noexcept { return hidden_; }
  Activation output_activation() const noexcept { return output_; }

  Eigen::MatrixXd& weight(std::size_t l) { return weights_[l]; }
  const Eigen::MatrixXd& weight(std::size_t l) const { return weights_[l]; }
  Eigen::VectorXd& bias(std::size_t l) { return biases_[l]; }
  const Eigen::VectorXd& bias(std::size_t l) const { return biases_[l]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    }
    return n;
  }

  /// Activations of every layer; acts[0] is the input.
  std::vector<Eigen::MatrixXd> forward_all(const Eigen::MatrixXd& x) const {
    if (x.rows() != input_size()) throw ShapeError("network input has the wrong dimension");
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(weights_.size() + 1);
    acts.push_back(x);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Eigen::MatrixXd z = weights_[l] * acts.back();
      z.colwise() += biases_[l];
      apply_activation(l + 1 == weights_.size() ? output_ : hidden_, z);
      acts.push_back(std::move(z));
    }
    return acts;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const { return forward_all(x).back(); }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    return forward_all(Eigen::MatrixXd(x)).back().col(0);
  }

  /// Layer-major flattening: for each layer, W row-major then b.
  Eigen::VectorXd flat_parameters() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      for (Eigen::Index i = 0; i < weights_[l].rows(); ++i) {
        for (Eigen::Index j = 0; j < weights_[l].cols(); ++j) flat[k++] = weights_[l](i, j);
      }
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) flat[k++] = biases_[l][i];
    }
    return flat;
  }

  void set_flat_parameters(const Eigen::VectorXd& flat) {
    if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
      throw ShapeError("flat parameter vector has the wrong length");
    }
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      for (Eigen::Index i = 0; i < weights_[l].rows(); ++i) {
        for (Eigen::Index j = 0; j < weights_[l].cols(); ++j) weights_[l](i, j) = flat[k++];
      }
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) biases_[l][i] = flat[k++];
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json w = nlohmann::json::array();
    nlohmann::json b = nlohmann::json::array();
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      std::vector<double> rows;
      rows.reserve(static_cast<std::size_t>(weights_[l].size()));
      for (Eigen::Index i = 0; i < weights_[l].rows(); ++i) {
        for (Eigen::Index j = 0; j < weights_[l].cols(); ++j) rows.push_back(weights_[l](i, j));
      }
      w.push_back(rows);
      b.push_back(std::vector<double>(biases_[l].data(), biases_[l].data() + biases_[l].size()));
    }
    return {{"layers", sizes_},
            {"hidden_activation", to_string(hidden_)},
            {"output_activation", to_string(output_)},
            {"weights", w},
            {"biases", b}};
  }

  static Mlp from_json(const nlohmann::json& j) {
    Mlp net(j.at("layers").get<std::vector<int>>(),
            activation_from_string(j.at("hidden_activation").get<std::string>()),
            activation_from_string(j.at("output_activation").get<std::string>()));
    const auto& w = j.at("weights");
    const auto& b = j.at("biases");
    if (w.size() != net.layers() || b.size() != net.layers()) {
      throw ShapeError("network document has the wrong number of layers");
    }
    for (std::size_t l = 0; l < net.layers(); ++l) {
      auto rows = w[l].get<std::vector<double>>();
      auto bias = b[l].get<std::vector<double>>();
      auto& wm = net.weights_[l];
      if (rows.size() != static_cast<std::size_t>(wm.size()) ||
          bias.size() != static_cast<std::size_t>(net.biases_[l].size())) {
        throw ShapeError("network document layer " + std::to_string(l) + " has the wrong size");
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < wm.rows(); ++r) {
        for (Eigen::Index c = 0; c < wm.cols(); ++c) wm(r, c) = rows[k++];
      }
      for (std::size_t i = 0; i < bias.size(); ++i) {
        net.biases_[l][static_cast<Eigen::Index>(i)] = bias[i];
      }
    }
    return net;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.sizes_ != b.sizes_ || a.hidden_ != b.hidden_ || a.output_ != b.output_) return false;
    for (std::size_t l = 0; l < a.weights_.size(); ++l) {
      if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
    }
    return true;
  }

 private:
  std::vector<int> sizes_;
  Activation hidden_ = Activation::relu;
  Activation output_ = Activation::identity;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

/// Gradient buffers shaped like an Mlp.
struct MlpGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  explicit MlpGradient(const Mlp& net) {
    for (std::size_t l = 0; l < net.layers(); ++l) {
      weights.push_back(Eigen::MatrixXd::Zero(net.weight(l).rows(), net.weight(l).cols()));
      biases.push_back(Eigen::VectorXd::Zero(net.bias(l).size()));
    }
  }
};

/// Categorical cross-entropy of a softmax network against target counts.
///
/// Column c of `inputs` is one distinct input; column c of `targets` holds how
/// many samples with that input carry each class label. The loss is
/// -sum_{c,k} targets(k,c) log softmax(k,c) / norm, identical to the mean
/// per-sample loss over `norm` samples. Writes the gradient into `grad` and
/// returns the loss.
inline double cross_entropy_gradient(const Mlp& net, const Eigen::MatrixXd& inputs,
                                     const Eigen::MatrixXd& targets, double norm,
                                     MlpGradient& grad) {
  if (net.output_activation() != Activation::softmax) {
    throw ShapeError("cross-entropy training requires a softmax output layer");
  }
  if (targets.rows() != net.output_size() || targets.cols() != inputs.cols()) {
    throw ShapeError("target matrix does not match network output / input batch");
  }
  auto acts = net.forward_all(inputs);
  const Eigen::MatrixXd& probs = acts.back();
  double loss = 0.0;
  for (Eigen::Index c = 0; c < targets.cols(); ++c) {
    for (Eigen::Index k = 0; k < targets.rows(); ++k) {
      double t = targets(k, c);
      if (t != 0.0) loss -= t * std::log(std::max(probs(k, c), 1e-300));
    }
  }
  loss /= norm;

  // d loss / d logits for softmax + cross-entropy: (m_c * p - t) / norm.
  Eigen::RowVectorXd per_input = targets.colwise().sum();
  Eigen::MatrixXd delta = (probs.array().rowwise() * per_input.array()).matrix() - targets;
  delta /= norm;
  for (std::size_t l = net.layers(); l-- > 0;) {
    grad.weights[l].noalias() = delta * acts[l].transpose();
    grad.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = net.weight(l).transpose() * delta;
    if (net.hidden_activation() == Activation::relu) {
      back = (acts[l].array() > 0.0).select(back, 0.0);
    } else if (net.hidden_activation() == Activation::sigmoid) {
      back = (back.array() * acts[l].array() * (1.0 - acts[l].array())).matrix();
    }
    delta = std::move(back);
  }
  return loss;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const Mlp& net, AdamConfig cfg) : cfg_(cfg), m_(net), v_(net) {}

  void step(Mlp& net, const MlpGradient& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step = cfg_.learning_rate * std::sqrt(c2) / c1;
    // Equivalent to lr * m_hat / (sqrt(v_hat) + eps) with eps rescaled by sqrt(c2).
    const double eps = cfg_.epsilon * std::sqrt(c2);
    for (std::size_t l = 0; l < net.layers(); ++l) {
      update(net.weight(l).array(), m_.weights[l].array(), v_.weights[l].array(),
             g.weights[l].array(), step, eps);
      update(net.bias(l).array(), m_.biases[l].array(), v_.biases[l].array(),
             g.biases[l].array(), step, eps);
    }
  }

  long steps() const noexcept { return t_; }

 private:
  template <typename P, typename M, typename V, typename G>
  void update(P&& p, M&& m, V&& v, const G& g, double step, double eps) const {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.square();
    p -= step * m / (v.sqrt() + eps);
  }

  AdamConfig cfg_;
  MlpGradient m_;
  MlpGradient v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Posterior network

/// Classifier from a single outcome label to a distribution over grid points.
/// The outcome d enters the single input node as d / (outcomes - 1).
class PosteriorNetwork {
 public:
  PosteriorNetwork() = default;
  PosteriorNetwork(Mlp net, int outcomes) : net_(std::move(net)), outcomes_(outcomes) {
    if (net_.input_size() != 1) throw ShapeError("posterior network takes one input node");
    if (outcomes < 2) throw ShapeError("posterior network needs at least two outcomes");
  }

  static double encode(int outcome, int outcomes) {
    return static_cast<double>(outcome) / static_cast<double>(outcomes - 1);
  }

  int outcomes() const noexcept { return outcomes_; }
  int classes() const { return net_.output_size(); }
  const Mlp& mlp() const noexcept { return net_; }
  Mlp& mlp() noexcept { return net_; }

  Eigen::VectorXd forward(int outcome) const {
    if (outcome < 0 || outcome >= outcomes_) {
      throw InvalidOutcomeError("outcome " + std::to_string(outcome) + " outside 0.." +
                                std::to_string(outcomes_ - 1));
    }
    Eigen::VectorXd x(1);
    x[0] = encode(outcome, outcomes_);
    return net_.forward(x);
  }

  nlohmann::json to_json() const {
    auto j = net_.to_json();
    j["format"] = "qmetro-mlp";
    j["version"] = 1;
    j["kind"] = "posterior";
    j["outcomes"] = outcomes_;
    return j;
  }

  static PosteriorNetwork from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "qmetro-mlp" || j.value("kind", "") != "posterior") {
      throw ConfigError("not a qmetro posterior network document");
    }
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported network version");
    return PosteriorNetwork(Mlp::from_json(j), j.at("outcomes").get<int>());
  }

  friend bool operator==(const PosteriorNetwork&, const PosteriorNetwork&) = default;

 private:
  Mlp net_;
  int outcomes_ = 2;
};

struct TrainConfig {
  int epochs = 60;
  int batch = 256;
  AdamConfig adam{};
  std::vector<int> hidden = {64, 64, 64};
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch", batch},
            {"learning_rate", adam.learning_rate},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"epsilon", adam.epsilon},
            {"hidden", hidden},
            {"seed", seed},
            {"init", "he_normal"},
            {"input_encoding", "outcome/(outcomes-1)"},
            {"shuffle", "per_epoch"}};
  }
};

struct TrainReport {
  /// Cross-entropy over the whole training set after each epoch.
  std::vector<double> epoch_loss;
  /// Cross-entropy over the whole training set before the first step.
  double initial_loss = 0.0;
  long steps = 0;
};

/// Mean cross-entropy of the network over every event in the dataset.
inline double dataset_cross_entropy(const PosteriorNetwork& net, const GridDataset& ds) {
  double loss = 0.0;
  for (int d = 0; d < ds.outcomes; ++d) {
    Eigen::VectorXd p = net.forward(d);
    for (std::size_t j = 0; j < ds.grid.size(); ++j) {
      auto n = ds.count(j, d);
      if (n) loss -= static_cast<double>(n) * std::log(std::max(p[static_cast<Eigen::Index>(j)], 1e-300));
    }
  }
  return loss / static_cast<double>(ds.total_events());
}

/// Minibatch ADAM on categorical cross-entropy. Every recorded event is one
/// training sample (input: its outcome, label: its grid point). Samples are
/// reshuffled each epoch; labels stay sparse (class indices only).
///
/// A minibatch holds at most `outcomes` distinct inputs, so its gradient is
/// evaluated once per distinct input with per-class counts as targets. This
/// is exactly the per-sample mean gradient.
inline PosteriorNetwork train_posterior_network(const GridDataset& ds, const TrainConfig& cfg,
                                                TrainReport* report = nullptr) {
  if (cfg.epochs < 1 || cfg.batch < 1) throw ConfigError("epochs and batch must be >= 1");
  if (ds.grid.size() == 0 || ds.total_events() == 0) {
    throw InsufficientDataError("training dataset is empty");
  }
  if (ds.outcomes < 2) throw ConfigError("training needs at least two outcomes");
  const auto classes = static_cast<int>(ds.grid.size());
  const int outcomes = ds.outcomes;

  Rng rng = make_stream(cfg.seed, {0x6e6e});
  std::vector<int> sizes{1};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(classes);
  Mlp mlp(sizes, Activation::relu, Activation::softmax);
  mlp.init_he_normal(rng);
  PosteriorNetwork net(std::move(mlp), outcomes);

  // Sample code: class * outcomes + outcome.
  std::vector<std::uint32_t> samples;
  samples.reserve(static_cast<std::size_t>(ds.total_events()));
  for (std::size_t j = 0; j < ds.grid.size(); ++j) {
    for (int d = 0; d < outcomes; ++d) {
      auto code = static_cast<std::uint32_t>(j * static_cast<std::size_t>(outcomes) +
                                             static_cast<std::size_t>(d));
      samples.insert(samples.end(), static_cast<std::size_t>(ds.count(j, d)), code);
    }
  }

  Adam adam(net.mlp(), cfg.adam);
  MlpGradient grad(net.mlp());
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(classes, outcomes);
  std::vector<int> per_outcome(static_cast<std::size_t>(outcomes), 0);
  std::vector<int> active;
  if (report) {
    report->epoch_loss.clear();
    report->initial_loss = dataset_cross_entropy(net, ds);
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(samples.begin(), samples.end(), rng);
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(cfg.batch)) {
      std::size_t stop = std::min(samples.size(), start + static_cast<std::size_t>(cfg.batch));
      std::fill(per_outcome.begin(), per_outcome.end(), 0);
      for (std::size_t s = start; s < stop; ++s) {
        auto j = static_cast<Eigen::Index>(samples[s] / static_cast<std::uint32_t>(outcomes));
        auto d = static_cast<int>(samples[s] % static_cast<std::uint32_t>(outcomes));
        counts(j, d) += 1.0;
        ++per_outcome[static_cast<std::size_t>(d)];
      }
      active.clear();
      for (int d = 0; d < outcomes; ++d) {
        if (per_outcome[static_cast<std::size_t>(d)] > 0) active.push_back(d);
      }
      Eigen::MatrixXd inputs(1, static_cast<Eigen::Index>(active.size()));
      Eigen::MatrixXd targets(classes, static_cast<Eigen::Index>(active.size()));
      for (std::size_t c = 0; c < active.size(); ++c) {
        inputs(0, static_cast<Eigen::Index>(c)) = PosteriorNetwork::encode(active[c], outcomes);
        targets.col(static_cast<Eigen::Index>(c)) = counts.col(active[c]);
      }
      cross_entropy_gradient(net.mlp(), inputs, targets, static_cast<double>(stop - start), grad);
      adam.step(net.mlp(), grad);
      for (std::size_t s = start; s < stop; ++s) {
        auto j = static_cast<Eigen::Index>(samples[s] / static_cast<std::uint32_t>(outcomes));
        auto d = static_cast<int>(samples[s] % static_cast<std::uint32_t>(outcomes));
        counts(j, d) = 0.0;
      }
    }
    if (report) report->epoch_loss.push_back(dataset_cross_entropy(net, ds));
  }
  if (report) report->steps = adam.steps();
  return net;
}

/// table[d][j] = P_NN(phi_j | d).
inline ProbTable posterior_table(const PosteriorNetwork& net, const ParameterGrid& grid) {
  if (static_cast<std::size_t>(net.classes()) != grid.size()) {
    throw ShapeError("network has " + std::to_string(net.classes()) + " classes but the grid has " +
                     std::to_string(grid.size()) + " points");
  }
  ProbTable t;
  t.grid = grid;
  t.values.resize(net.outcomes(), static_cast<Eigen::Index>(grid.size()));
  for (int d = 0; d < net.outcomes(); ++d) t.values.row(d) = net.forward(d).transpose();
  return t;
}

// ---------------------------------------------------------------------------
// Prior recovery

/// Weights over grid points, normalized so sum_j p_j * cell_volume = 1.
struct PriorVector {
  ParameterGrid grid;
  Eigen::VectorXd values;
  double eigenvalue = 1.0;
  double residual = 0.0;
  long iterations = 0;

  /// Same weights as a discrete distribution (sum 1).
  Eigen::VectorXd probabilities() const { return values / values.sum(); }
};

inline PriorVector uniform_prior(const ParameterGrid& grid) {
  PriorVector p;
  p.grid = grid;
  p.values = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(grid.size()),
                                       1.0 / (static_cast<double>(grid.size()) * grid.cell_volume()));
  return p;
}

struct PriorSolveOptions {
  double tolerance = 1e-10;
  long max_iterations = 100000;
};

/// Prior implied by a posterior table and the outcome frequencies of the data
/// it was trained on: the fixed point p_j = sum_d Pbar(phi_j|d) sum_k f_dk p_k dphi^D,
/// with Pbar = P_NN / dphi^D the density-rescaled posterior. This is the
/// eigenvector for eigenvalue 1 of M_jk = sum_d P_NN(phi_j|d) f_dk.
///
/// M is applied in factored form, M p = P^T (F p), so memory stays
/// O(outcomes * points). Power iteration runs on (I + M) / 2, which shares
/// M's eigenvectors and removes period-2 oscillation.
inline PriorVector solve_prior(const ProbTable& posterior, const ProbTable& freqs,
                               const PriorSolveOptions& opts = {}) {
  if (!(posterior.grid == freqs.grid) || posterior.outcomes() != freqs.outcomes() ||
      posterior.points() != freqs.points()) {
    throw ShapeError("posterior and frequency tables must share grid and outcome count");
  }
  const Eigen::MatrixXd& post = posterior.values;  // d x C
  const Eigen::MatrixXd& f = freqs.values;         // d x C
  auto apply = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    return post.transpose() * (f * p);
  };

  const auto n = static_cast<Eigen::Index>(posterior.points());
  Eigen::VectorXd p = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  PriorVector out;
  out.grid = posterior.grid;
  bool converged = false;
  for (long it = 1; it <= opts.max_iterations; ++it) {
    Eigen::VectorXd next = 0.5 * (p + apply(p));
    double s = next.sum();
    if (!(s > 0) || !std::isfinite(s)) {
      throw PriorRecoveryError("prior iteration collapsed to zero");
    }
    next /= s;
    double change = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    out.iterations = it;
    if (change <= opts.tolerance * p.cwiseAbs().maxCoeff()) {
      converged = true;
      break;
    }
  }
  Eigen::VectorXd mp = apply(p);
  double lambda = mp.sum() / p.sum();
  out.eigenvalue = lambda;
  if (!converged) {
    throw PriorRecoveryError("prior power iteration did not converge in " +
                             std::to_string(opts.max_iterations) + " iterations");
  }
  if (std::abs(lambda - 1.0) > 0.1) {
    throw PriorRecoveryError("no eigenvalue near 1 (found " + std::to_string(lambda) +
                             "); posterior and frequency tables are inconsistent");
  }
  double scale = 1.0 / (p.sum() * posterior.grid.cell_volume());
  p *= scale;
  mp *= scale;
  out.residual = (mp - lambda * p).cwiseAbs().maxCoeff();
  out.values = std::move(p);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << j.dump() << '\n';
  if (!out) throw ConfigError("write failed for " + path);
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path, 1, e.byte, "invalid JSON");
  }
}

}  // namespace qmetro
