#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "qmetro/error.hpp"
#include "qmetro/grid.hpp"
#include "qmetro/models.hpp"
#include "qmetro/neural.hpp"
#include "qmetro/prob_table.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

/// Weighted particles on fixed lattice positions. Positions never move.
struct ParticleSet {
  ParameterGrid grid;
  Eigen::MatrixXd positions;  // size x dims
  Eigen::VectorXd weights;

  std::size_t size() const noexcept { return static_cast<std::size_t>(weights.size()); }
  int dims() const noexcept { return static_cast<int>(positions.cols()); }
};

inline ParticleSet init_particles(const Eigen::VectorXd& prior, const ParameterGrid& grid) {
  if (static_cast<std::size_t>(prior.size()) != grid.size()) {
    throw ShapeError("prior length does not match the particle grid");
  }
  if ((prior.array() < 0).any() || !prior.allFinite()) {
    throw InvalidPriorError("prior has negative or non-finite entries");
  }
  double s = prior.sum();
  if (!(s > 0)) throw InvalidPriorError("prior is identically zero");
  ParticleSet ps;
  ps.grid = grid;
  ps.positions = grid.positions();
  ps.weights = prior / s;
  return ps;
}

inline ParticleSet init_particles(const PriorVector& prior, const ParameterGrid& grid) {
  return init_particles(prior.values, grid);
}

inline ParticleSet uniform_particles(const ParameterGrid& grid) {
  return init_particles(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(grid.size())), grid);
}

inline PhaseVector estimate_mean(const ParticleSet& ps) {
  return ps.positions.transpose() * ps.weights;
}

inline Eigen::MatrixXd covariance(const ParticleSet& ps) {
  PhaseVector mean = estimate_mean(ps);
  Eigen::MatrixXd centered = ps.positions.rowwise() - mean.transpose();
  return centered.transpose() * ps.weights.asDiagonal() * centered;
}

inline double covariance_trace(const ParticleSet& ps) {
  PhaseVector mean = estimate_mean(ps);
  double t = 0.0;
  for (Eigen::Index i = 0; i < ps.positions.rows(); ++i) {
    t += ps.weights[i] * (ps.positions.row(i).transpose() - mean).squaredNorm();
  }
  return t;
}

inline double qloss(const PhaseVector& estimate, const PhaseVector& truth) {
  if (estimate.size() != truth.size()) throw ShapeError("qloss: length mismatch");
  return (estimate - truth).squaredNorm();
}

// ---------------------------------------------------------------------------
// Lattice translation and restriction

/// A control snapped onto the lattice: integer translation per axis plus the
/// part of the control the lattice cannot represent.
struct LatticeShift {
  std::vector<int> steps;
  PhaseVector snapped;
  double residue = 0.0;  // max |c - snapped| over axes, <= spacing / 2

  bool is_zero() const {
    return std::all_of(steps.begin(), steps.end(), [](int s) { return s == 0; });
  }
};

inline LatticeShift snap_control(const PhaseVector& control, const ParameterGrid& grid) {
  if (control.size() != grid.dims()) throw ShapeError("control length does not match grid");
  LatticeShift s;
  s.snapped.resize(grid.dims());
  for (int a = 0; a < grid.dims(); ++a) {
    int k = static_cast<int>(std::lround(control[a] / grid.spacing()));
    s.steps.push_back(k);
    s.snapped[a] = k * grid.spacing();
    s.residue = std::max(s.residue, std::abs(control[a] - s.snapped[a]));
  }
  return s;
}

/// out(phi) = values(phi + c) on a grid spanning one 2pi period per axis, with
/// c snapped to the lattice and indices wrapping around the period.
inline Eigen::VectorXd shift_values(const Eigen::VectorXd& values, const LatticeShift& shift,
                                    const ParameterGrid& grid) {
  if (!grid.is_periodic()) {
    throw ShiftUnsupportedError("lattice shift needs a grid spanning a full 2pi period");
  }
  if (static_cast<std::size_t>(values.size()) != grid.size()) {
    throw ShapeError("shifted vector does not match grid");
  }
  const int n = grid.n_per_axis();
  const int dims = grid.dims();
  // Per-axis source index lookup.
  std::vector<std::vector<int>> src(static_cast<std::size_t>(dims), std::vector<int>(static_cast<std::size_t>(n)));
  for (int a = 0; a < dims; ++a) {
    for (int k = 0; k < n; ++k) {
      src[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] =
          grid.wrap_axis_index(k + shift.steps[static_cast<std::size_t>(a)]);
    }
  }
  Eigen::VectorXd out(values.size());
  if (dims == 1) {
    for (int k = 0; k < n; ++k) out[k] = values[src[0][static_cast<std::size_t>(k)]];
    return out;
  }
  Eigen::Index j = 0;
  const auto nn = static_cast<Eigen::Index>(n);
  for (int a = 0; a < n; ++a) {
    Eigen::Index ia = src[0][static_cast<std::size_t>(a)] * nn * nn;
    for (int b = 0; b < n; ++b) {
      Eigen::Index ib = ia + src[1][static_cast<std::size_t>(b)] * nn;
      for (int c = 0; c < n; ++c) out[j++] = values[ib + src[2][static_cast<std::size_t>(c)]];
    }
  }
  return out;
}

/// Non-periodic variant: out(phi) = values(phi + c) where phi + c stays on
/// the grid; entries whose source falls off the grid are set to `fill` and
/// flagged in `outside` when given.
inline Eigen::VectorXd shift_values_truncated(const Eigen::VectorXd& values, const LatticeShift& shift,
                                              const ParameterGrid& grid, double fill = 0.0,
                                              std::vector<char>* outside = nullptr) {
  if (static_cast<std::size_t>(values.size()) != grid.size()) {
    throw ShapeError("shifted vector does not match grid");
  }
  const int n = grid.n_per_axis();
  Eigen::VectorXd out(values.size());
  if (outside) outside->assign(grid.size(), 0);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    auto idx = grid.unflatten(j);
    bool inside = true;
    for (int a = 0; a < grid.dims(); ++a) {
      idx[static_cast<std::size_t>(a)] += shift.steps[static_cast<std::size_t>(a)];
      if (idx[static_cast<std::size_t>(a)] < 0 || idx[static_cast<std::size_t>(a)] >= n) inside = false;
    }
    const auto jj = static_cast<Eigen::Index>(j);
    if (inside) {
      out[jj] = values[static_cast<Eigen::Index>(grid.flatten(idx))];
    } else {
      out[jj] = fill;
      if (outside) (*outside)[j] = 1;
    }
  }
  return out;
}

inline Eigen::VectorXd shift_table(const Eigen::VectorXd& values, const PhaseVector& control,
                                   const ParameterGrid& grid) {
  return shift_values(values, snap_control(control, grid), grid);
}

inline ProbTable shift_table(const ProbTable& table, const PhaseVector& control) {
  LatticeShift s = snap_control(control, table.grid);
  ProbTable out;
  out.grid = table.grid;
  out.values.resize(table.values.rows(), table.values.cols());
  for (Eigen::Index d = 0; d < table.values.rows(); ++d) {
    out.values.row(d) = shift_values(table.values.row(d).transpose(), s, table.grid).transpose();
  }
  return out;
}

inline PriorVector shift_table(const PriorVector& prior, const PhaseVector& control) {
  PriorVector out = prior;
  out.values = shift_table(prior.values, control, prior.grid);
  return out;
}

/// Keeps the sub-grid entries and rescales them into a discrete distribution.
inline Eigen::VectorXd restrict_renormalize(const Eigen::VectorXd& values, const SubGrid& sub) {
  if (static_cast<std::size_t>(values.size()) != sub.parent.size()) {
    throw ShapeError("restricted vector does not match the parent grid");
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(sub.grid.size()));
  for (std::size_t i = 0; i < sub.grid.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = values[static_cast<Eigen::Index>(sub.parent_index(i))];
  }
  double s = out.sum();
  if (!(s > 0)) throw DomainError("restricted values sum to zero");
  return out / s;
}

/// Restriction onto [0, pi]^D of a table defined on the full period.
inline SubGrid half_period_subgrid(const ParameterGrid& full) {
  return restrict_grid(full, 0.0, std::numbers::pi);
}

// ---------------------------------------------------------------------------
// Likelihood providers
//
// A provider exposes:
//   const ParameterGrid& particle_grid() const;
//   LatticeShift snap(const PhaseVector& c) const;   // control actually imparted
//   void likelihoods(int outcome, const LatticeShift& c, Eigen::VectorXd& out) const;
// where out[i] is the (unnormalized) update factor of particle i.

/// Known likelihood model evaluated at particle + control. Controls are used
/// as given (no snapping).
template <typename Model>
class ExactProvider {
 public:
  ExactProvider(Model model, ParameterGrid grid)
      : model_(std::move(model)), grid_(std::move(grid)), positions_(grid_.positions()) {
    if (grid_.dims() != model_.dims()) throw ShapeError("model and particle grid dimensions differ");
    if constexpr (std::is_same_v<Model, FourArmModel>) {
      phasors_.reserve(grid_.size());
      for (Eigen::Index i = 0; i < positions_.rows(); ++i) {
        phasors_.push_back(FourArmModel::phasors(positions_.row(i).transpose()));
      }
    }
  }

  const Model& model() const noexcept { return model_; }
  const ParameterGrid& particle_grid() const noexcept { return grid_; }
  int outcomes() const { return model_.outcomes(); }

  LatticeShift snap(const PhaseVector& c) const {
    LatticeShift s;
    s.snapped = c;
    s.steps.assign(static_cast<std::size_t>(c.size()), 0);
    return s;
  }

  void likelihoods(int outcome, const LatticeShift& control, Eigen::VectorXd& out) const {
    if (outcome < 0 || outcome >= model_.outcomes()) throw InvalidOutcomeError("outcome out of range");
    const PhaseVector& c = control.snapped;
    out.resize(positions_.rows());
    if constexpr (std::is_same_v<Model, FourArmModel>) {
      const FourArmModel::Phasors zc = FourArmModel::phasors(c);
      for (std::size_t i = 0; i < phasors_.size(); ++i) {
        const auto& z = phasors_[i];
        FourArmModel::Phasors t{z[0], z[1] * zc[1], z[2] * zc[2], z[3] * zc[3]};
        out[static_cast<Eigen::Index>(i)] =
            std::max(model_.prob_from_phasors(outcome, t), kProbabilityFloor);
      }
    } else {
      for (Eigen::Index i = 0; i < positions_.rows(); ++i) {
        PhaseVector total = positions_.row(i).transpose() + c;
        out[i] = std::max(model_.prob(outcome, total), kProbabilityFloor);
      }
    }
  }

 private:
  Model model_;
  ParameterGrid grid_;
  Eigen::MatrixXd positions_;
  std::vector<FourArmModel::Phasors> phasors_;
};

/// Lattice-tabulated provider. With a prior it is the network update
/// w_i *= P_NN(phi_i + c | d) / p(phi_i + c); without one it is the
/// frequency-table update w_i *= f(d | phi_i + c). With a restriction the
/// shifted tables are cut to the sub-grid and renormalized before use.
class TableProvider {
 public:
  /// How a shift is applied on a grid that does not span a full period.
  /// `periodic` refuses (ShiftUnsupportedError); `truncate` gives particles
  /// whose shifted location leaves the grid the floor likelihood.
  enum class EdgeMode { periodic, truncate };

  TableProvider(ProbTable table, std::optional<Eigen::VectorXd> prior = std::nullopt,
                std::optional<SubGrid> restriction = std::nullopt)
      : table_(std::move(table)), prior_(std::move(prior)), restriction_(std::move(restriction)) {
    if (prior_ && static_cast<std::size_t>(prior_->size()) != table_.points()) {
      throw ShapeError("prior length does not match the table grid");
    }
    if (restriction_ && !(restriction_->parent == table_.grid)) {
      throw ShapeError("restriction parent grid differs from the table grid");
    }
  }

  static TableProvider network(const ProbTable& posterior, const PriorVector& prior,
                               std::optional<SubGrid> restriction = std::nullopt) {
    return TableProvider(posterior, prior.values, std::move(restriction));
  }

  static TableProvider frequency(const ProbTable& freqs,
                                 std::optional<SubGrid> restriction = std::nullopt) {
    return TableProvider(freqs, std::nullopt, std::move(restriction));
  }

  const ParameterGrid& particle_grid() const noexcept {
    return restriction_ ? restriction_->grid : table_.grid;
  }
  const ProbTable& table() const noexcept { return table_; }
  bool has_prior() const noexcept { return prior_.has_value(); }
  int outcomes() const { return table_.outcomes(); }

  LatticeShift snap(const PhaseVector& c) const { return snap_control(c, table_.grid); }

  EdgeMode edge_mode() const noexcept { return edges_; }
  TableProvider& set_edge_mode(EdgeMode m) {
    edges_ = m;
    return *this;
  }

  void likelihoods(int outcome, const LatticeShift& shift, Eigen::VectorXd& out) const {
    if (outcome < 0 || outcome >= table_.outcomes()) throw InvalidOutcomeError("outcome out of range");
    Eigen::VectorXd row = table_.values.row(outcome).transpose();
    Eigen::VectorXd prior;
    if (prior_) prior = *prior_;
    std::vector<char> outside;
    if (!shift.is_zero()) {
      if (edges_ == EdgeMode::truncate && !table_.grid.is_periodic()) {
        row = shift_values_truncated(row, shift, table_.grid, 0.0, &outside);
        if (prior_) prior = shift_values_truncated(prior, shift, table_.grid, 1.0);
      } else {
        row = shift_values(row, shift, table_.grid);
        if (prior_) prior = shift_values(prior, shift, table_.grid);
      }
    }
    if (restriction_) {
      row = restrict_renormalize(row, *restriction_);
      if (prior_) prior = restrict_renormalize(prior, *restriction_);
    }
    out = row.cwiseMax(kProbabilityFloor);
    if (prior_) out = out.cwiseQuotient(prior.cwiseMax(kProbabilityFloor));
    if (!outside.empty() && !restriction_) {
      for (std::size_t i = 0; i < outside.size(); ++i) {
        if (outside[i]) out[static_cast<Eigen::Index>(i)] = kProbabilityFloor;
      }
    }
  }

 private:
  ProbTable table_;
  std::optional<Eigen::VectorXd> prior_;
  std::optional<SubGrid> restriction_;
  EdgeMode edges_ = EdgeMode::periodic;
};

/// w_i <- w_i * L_i / n. Throws DegenerateUpdateError (leaving the set
/// untouched) when n = 0.
template <typename Provider>
void bayes_update(ParticleSet& ps, int outcome, const LatticeShift& control,
                  const Provider& provider, Eigen::VectorXd& scratch) {
  provider.likelihoods(outcome, control, scratch);
  if (scratch.size() != ps.weights.size()) {
    throw ShapeError("provider particle count differs from the particle set");
  }
  Eigen::VectorXd updated = ps.weights.cwiseProduct(scratch);
  double n = updated.sum();
  if (!(n > 0) || !std::isfinite(n)) {
    throw DegenerateUpdateError("Bayesian update excluded every particle");
  }
  ps.weights = updated / n;
}

template <typename Provider>
void bayes_update(ParticleSet& ps, int outcome, const PhaseVector& control, const Provider& provider) {
  Eigen::VectorXd scratch;
  bayes_update(ps, outcome, provider.snap(control), provider, scratch);
}

// ---------------------------------------------------------------------------
// Outcome sources

inline int draw_categorical(const Eigen::VectorXd& probs, Rng& rng) {
  double u = uniform01(rng) * probs.sum();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  for (Eigen::Index k = probs.size(); k-- > 0;) {
    if (probs[k] > 0) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size() - 1);
}

/// Simulated device: outcomes drawn from the model at truth + control.
template <typename Model>
struct ExactSource {
  Model model;

  int draw(const PhaseVector& truth, const PhaseVector& control, Rng& rng) const {
    PhaseVector total = truth + control;
    Eigen::VectorXd p(model.outcomes());
    for (int d = 0; d < model.outcomes(); ++d) p[d] = model.prob(d, total);
    return draw_categorical(p, rng);
  }
};

/// Offline experiment: outcomes drawn from the recorded frequencies of the
/// grid point nearest to truth + control.
struct OfflineGridSource {
  ProbTable frequencies;

  int draw(const PhaseVector& truth, const PhaseVector& control, Rng& rng) const {
    std::size_t j = frequencies.grid.nearest_index(truth + control);
    return draw_categorical(frequencies.values.col(static_cast<Eigen::Index>(j)), rng);
  }
};

// ---------------------------------------------------------------------------
// Feedback strategies

/// What a strategy may look at before choosing the next control.
struct EstimationState {
  const ParticleSet* particles = nullptr;
  PhaseVector estimate;
  Eigen::MatrixXd cov;
  int probe = 0;     // probes consumed so far
  int n_probes = 0;  // budget
  const PhaseVector* truth = nullptr;
};

struct ZeroFeedback {
  PhaseVector choose(const EstimationState& s, Rng&) const {
    return PhaseVector::Zero(s.estimate.size());
  }
};

/// Independent uniform control per component in [lo, hi).
struct RandomFeedback {
  double lo = -std::numbers::pi;
  double hi = std::numbers::pi;

  PhaseVector choose(const EstimationState& s, Rng& rng) const {
    PhaseVector c(s.estimate.size());
    for (Eigen::Index k = 0; k < c.size(); ++k) c[k] = lo + (hi - lo) * uniform01(rng);
    return c;
  }
};

/// Random control that keeps truth + c inside [lo, hi] per component. It
/// reads the true phases, so it is a benchmark device only.
struct TruthWindowFeedback {
  double lo = 0.0;
  double hi = std::numbers::pi;

  PhaseVector choose(const EstimationState& s, Rng& rng) const {
    if (!s.truth) throw ConfigError("truth-window feedback needs the true phases");
    PhaseVector c(s.estimate.size());
    for (Eigen::Index k = 0; k < c.size(); ++k) {
      c[k] = lo - (*s.truth)[k] + (hi - lo) * uniform01(rng);
    }
    return c;
  }
};

// ---------------------------------------------------------------------------
// Estimation run

struct ProbeRecord {
  PhaseVector control;  // imparted (snapped) control
  double snap_residue = 0.0;
  int outcome = 0;
  PhaseVector estimate;
  double cov_trace = 0.0;
  double qloss = 0.0;
};

struct EstimationTrace {
  PhaseVector truth;
  PhaseVector initial_estimate;
  double initial_cov_trace = 0.0;
  double initial_qloss = 0.0;
  std::vector<ProbeRecord> probes;

  std::size_t size() const noexcept { return probes.size(); }
  PhaseVector final_estimate() const {
    return probes.empty() ? initial_estimate : probes.back().estimate;
  }
};

/// Sends n_probes probes: choose control, impart it (snapped for lattice
/// providers), draw the outcome at truth + control, update, record.
template <typename Source, typename Provider, typename Strategy>
EstimationTrace run_estimation(const Source& source, const Provider& provider,
                               const Strategy& strategy, ParticleSet particles, int n_probes,
                               const PhaseVector& truth, std::uint64_t seed) {
  if (truth.size() != particles.dims()) throw ShapeError("truth length does not match particles");
  Rng outcome_rng = make_stream(seed, {1});
  Rng strategy_rng = make_stream(seed, {2});
  EstimationTrace trace;
  trace.truth = truth;
  trace.initial_estimate = estimate_mean(particles);
  trace.initial_cov_trace = covariance_trace(particles);
  trace.initial_qloss = qloss(trace.initial_estimate, truth);
  trace.probes.reserve(static_cast<std::size_t>(std::max(n_probes, 0)));

  EstimationState state;
  state.particles = &particles;
  state.estimate = trace.initial_estimate;
  state.cov = covariance(particles);
  state.n_probes = n_probes;
  state.truth = &truth;
  Eigen::VectorXd scratch;
  for (int m = 0; m < n_probes; ++m) {
    state.probe = m;
    PhaseVector wanted = strategy.choose(state, strategy_rng);
    LatticeShift imparted = provider.snap(wanted);
    int d = source.draw(truth, imparted.snapped, outcome_rng);
    bayes_update(particles, d, imparted, provider, scratch);
    state.estimate = estimate_mean(particles);
    state.cov = covariance(particles);
    ProbeRecord rec;
    rec.control = imparted.snapped;
    rec.snap_residue = imparted.residue;
    rec.outcome = d;
    rec.estimate = state.estimate;
    rec.cov_trace = state.cov.trace();
    rec.qloss = qloss(state.estimate, truth);
    trace.probes.push_back(std::move(rec));
  }
  return trace;
}

/// CSV: probe_index, c0.., outcome, est0.., cov_trace, qloss.
inline void write_trace_csv(const EstimationTrace& trace, std::ostream& out) {
  const auto dims = trace.truth.size();
  out << "probe_index";
  for (Eigen::Index k = 0; k < dims; ++k) out << ",c" << k;
  out << ",outcome";
  for (Eigen::Index k = 0; k < dims; ++k) out << ",estimate" << k;
  out << ",cov_trace,qloss\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < trace.probes.size(); ++i) {
    const auto& r = trace.probes[i];
    out << (i + 1);
    for (Eigen::Index k = 0; k < dims; ++k) out << ',' << num(r.control[k]);
    out << ',' << r.outcome;
    for (Eigen::Index k = 0; k < dims; ++k) out << ',' << num(r.estimate[k]);
    out << ',' << num(r.cov_trace) << ',' << num(r.qloss) << '\n';
  }
}

}  // namespace qmetro
