#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <cstddef>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "qmetro/error.hpp"
#include "qmetro/grid.hpp"

namespace qmetro {

using Complex = std::complex<double>;
using UnitaryMatrix = Eigen::Matrix4cd;
/// Outcome probabilities, length d. Nonnegative, summing to 1.
using OutcomeDistribution = Eigen::VectorXd;

/// Lower bound applied to model probabilities before they are used as
/// likelihood factors. Finite-precision zeros would otherwise remove particles
/// permanently.
inline constexpr double kProbabilityFloor = 1e-12;

// ---------------------------------------------------------------------------
// Mach-Zehnder

/// Two-outcome interferometer: P(0) = cos^2((phi + c)/2).
inline OutcomeDistribution mz_outcome_probs(double phase, double control) {
  double half = 0.5 * wrap_phase(phase + control);
  double c = std::cos(half);
  double s = std::sin(half);
  OutcomeDistribution p(2);
  p << c * c, s * s;
  return p;
}

/// Classical Fisher information of the two-outcome interferometer. Equal to 1
/// wherever both outcomes have nonzero probability.
inline double mz_fisher_information(double phase) {
  double p0 = std::cos(0.5 * phase) * std::cos(0.5 * phase);
  double p1 = 1.0 - p0;
  double dp0 = -0.5 * std::sin(phase);
  return dp0 * dp0 / p0 + dp0 * dp0 / p1;
}

struct MzModel {
  static constexpr int kOutcomes = 2;

  int outcomes() const noexcept { return kOutcomes; }
  int dims() const noexcept { return 1; }
  std::string name() const { return "mz"; }

  /// P(outcome | total phase).
  double prob(int outcome, const PhaseVector& total) const {
    double half = 0.5 * total[0];
    if (outcome == 0) return std::cos(half) * std::cos(half);
    return std::sin(half) * std::sin(half);
  }

  OutcomeDistribution probs(const PhaseVector& phase, const PhaseVector& control) const {
    return mz_outcome_probs(phase[0], control[0]);
  }
};

// ---------------------------------------------------------------------------
// Four-arm two-photon interferometer

/// How the balanced 4x4 splitter is realized.
///  - coupler: two layers of balanced 2x2 directional couplers, B (x) B with
///    B = [[1, i], [i, 1]] / sqrt(2). Default.
///  - dft: symmetric multiport Q[j][k] = exp(i pi j k / 2) / 2.
enum class QuarterKind { coupler, dft };

inline UnitaryMatrix quarter_unitary(QuarterKind kind = QuarterKind::coupler) {
  UnitaryMatrix q;
  const Complex i(0.0, 1.0);
  if (kind == QuarterKind::dft) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 4; ++k) q(j, k) = 0.5 * std::exp(i * (std::numbers::pi * j * k / 2.0));
    }
    return q;
  }
  Eigen::Matrix2cd b;
  const double h = 1.0 / std::sqrt(2.0);
  b << h, i * h, i * h, h;
  for (int j = 0; j < 4; ++j) {
    for (int k = 0; k < 4; ++k) q(j, k) = b(j / 2, k / 2) * b(j % 2, k % 2);
  }
  return q;
}

inline double unitarity_defect(const UnitaryMatrix& u) {
  return (u.adjoint() * u - UnitaryMatrix::Identity()).norm();
}

/// Q . diag(1, e^{i(phi1+c1)}, e^{i(phi2+c2)}, e^{i(phi3+c3)}) . Q. Mode 0 is the
/// reference arm.
inline UnitaryMatrix device_unitary(const PhaseVector& phases, const PhaseVector& controls,
                                    QuarterKind kind = QuarterKind::coupler) {
  if (phases.size() != 3 || controls.size() != 3) {
    throw ShapeError("device_unitary expects three phases and three controls");
  }
  UnitaryMatrix q = quarter_unitary(kind);
  Eigen::Vector4cd diag;
  diag[0] = 1.0;
  for (int k = 0; k < 3; ++k) diag[k + 1] = std::polar(1.0, phases[k] + controls[k]);
  return q * diag.asDiagonal() * q;
}

/// Two-photon output events: four bunched events (both photons in mode m)
/// followed by the six coincidences {i, j}, i < j, in lexicographic order.
struct OutcomeIndexing {
  static constexpr int kCount = 10;
  static constexpr std::array<std::pair<int, int>, kCount> kEvents = {{
      {0, 0}, {1, 1}, {2, 2}, {3, 3}, {0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

  static std::pair<int, int> event(int index) {
    if (index < 0 || index >= kCount) throw InvalidOutcomeError("outcome index out of range");
    return kEvents[static_cast<std::size_t>(index)];
  }

  static int index_of(int r, int s) {
    if (r > s) std::swap(r, s);
    for (int k = 0; k < kCount; ++k) {
      if (kEvents[static_cast<std::size_t>(k)] == std::pair{r, s}) return k;
    }
    throw InvalidOutcomeError("no such output event");
  }

  static std::string label(int index) {
    auto [r, s] = event(index);
    return r == s ? "2@" + std::to_string(r) : std::to_string(r) + "," + std::to_string(s);
  }
};

inline void check_input_modes(std::pair<int, int> modes) {
  auto [a, b] = modes;
  if (a == b || a < 0 || b < 0 || a > 3 || b > 3) {
    throw DomainError("input modes must be two distinct modes in 0..3");
  }
}

/// Output distribution of two indistinguishable photons entering modes
/// (a, b) of the four-mode unitary U.
inline OutcomeDistribution two_photon_outcome_probs(const UnitaryMatrix& u,
                                                    std::pair<int, int> input_modes) {
  check_input_modes(input_modes);
  if (unitarity_defect(u) > 1e-10) {
    throw InvalidModelError("two_photon_outcome_probs: matrix is not unitary");
  }
  auto [a, b] = input_modes;
  OutcomeDistribution p(OutcomeIndexing::kCount);
  for (int k = 0; k < OutcomeIndexing::kCount; ++k) {
    auto [r, s] = OutcomeIndexing::kEvents[static_cast<std::size_t>(k)];
    if (r == s) {
      p[k] = 2.0 * std::norm(u(r, a) * u(r, b));
    } else {
      p[k] = std::norm(u(r, a) * u(s, b) + u(r, b) * u(s, a));
    }
  }
  return p;
}

/// Four-arm device with two-photon input. Single-outcome evaluation avoids
/// forming U: each needed entry U[x][y] = sum_k Q[x][k] z_k Q[k][y] with
/// z = (1, e^{i theta_1}, e^{i theta_2}, e^{i theta_3}).
class FourArmModel {
 public:
  static constexpr int kOutcomes = OutcomeIndexing::kCount;
  using Phasors = std::array<Complex, 4>;

  explicit FourArmModel(std::pair<int, int> input_modes = {2, 3},
                        QuarterKind kind = QuarterKind::coupler)
      : input_(input_modes), kind_(kind) {
    check_input_modes(input_modes);
    UnitaryMatrix q = quarter_unitary(kind);
    auto [a, b] = input_modes;
    for (int k = 0; k < kOutcomes; ++k) {
      auto [r, s] = OutcomeIndexing::kEvents[static_cast<std::size_t>(k)];
      const std::array<std::pair<int, int>, 4> entries = {{{r, a}, {s, b}, {r, b}, {s, a}}};
      for (std::size_t e = 0; e < 4; ++e) {
        for (int m = 0; m < 4; ++m) {
          coeff_[static_cast<std::size_t>(k)][e][static_cast<std::size_t>(m)] =
              q(entries[e].first, m) * q(m, entries[e].second);
        }
      }
    }
  }

  int outcomes() const noexcept { return kOutcomes; }
  int dims() const noexcept { return 3; }
  std::string name() const { return "fourarm"; }
  std::pair<int, int> input_modes() const noexcept { return input_; }
  QuarterKind quarter() const noexcept { return kind_; }

  static Phasors phasors(const PhaseVector& total) {
    return {Complex(1.0, 0.0), std::polar(1.0, total[0]), std::polar(1.0, total[1]),
            std::polar(1.0, total[2])};
  }

  double prob_from_phasors(int outcome, const Phasors& z) const {
    const auto& c = coeff_[static_cast<std::size_t>(outcome)];
    Complex u[4];
    for (std::size_t e = 0; e < 4; ++e) {
      u[e] = c[e][0] * z[0] + c[e][1] * z[1] + c[e][2] * z[2] + c[e][3] * z[3];
    }
    auto [r, s] = OutcomeIndexing::kEvents[static_cast<std::size_t>(outcome)];
    if (r == s) return 2.0 * std::norm(u[0] * u[2]);
    return std::norm(u[0] * u[1] + u[2] * u[3]);
  }

  double prob(int outcome, const PhaseVector& total) const {
    return prob_from_phasors(outcome, phasors(total));
  }

  OutcomeDistribution probs(const PhaseVector& phase, const PhaseVector& control) const {
    return two_photon_outcome_probs(device_unitary(phase, control, kind_), input_);
  }

 private:
  std::pair<int, int> input_;
  QuarterKind kind_;
  // [outcome][entry: (r,a) (s,b) (r,b) (s,a)][internal mode]
  std::array<std::array<std::array<Complex, 4>, 4>, kOutcomes> coeff_{};
};

// ---------------------------------------------------------------------------
// Quantum Fisher information of the probe

/// Normalized two-photon Fock amplitudes (ordered per OutcomeIndexing) of the
/// probe after the first quarter and the internal phases.
inline Eigen::VectorXcd probe_state(std::pair<int, int> input_modes, const PhaseVector& phases,
                                    QuarterKind kind = QuarterKind::coupler) {
  check_input_modes(input_modes);
  UnitaryMatrix q = quarter_unitary(kind);
  Eigen::Vector4cd diag;
  diag[0] = 1.0;
  for (int k = 0; k < 3; ++k) diag[k + 1] = std::polar(1.0, phases[k]);
  UnitaryMatrix a = diag.asDiagonal() * q;
  auto [i, j] = input_modes;
  Eigen::VectorXcd psi(OutcomeIndexing::kCount);
  for (int k = 0; k < OutcomeIndexing::kCount; ++k) {
    auto [r, s] = OutcomeIndexing::kEvents[static_cast<std::size_t>(k)];
    psi[k] = r == s ? std::sqrt(2.0) * a(r, i) * a(r, j) : a(r, i) * a(s, j) + a(r, j) * a(s, i);
  }
  return psi / psi.norm();
}

/// 3x3 quantum Fisher information of the pure probe w.r.t. (phi1, phi2, phi3),
/// F_ij = 4 Re(<d_i psi|d_j psi> - <d_i psi|psi><psi|d_j psi>), with central
/// differences of the given step.
inline Eigen::Matrix3d quantum_fisher_matrix(std::pair<int, int> input_modes, double step = 1e-6,
                                             const PhaseVector& at = PhaseVector::Zero(3),
                                             QuarterKind kind = QuarterKind::coupler) {
  Eigen::VectorXcd psi = probe_state(input_modes, at, kind);
  std::array<Eigen::VectorXcd, 3> dpsi;
  for (int k = 0; k < 3; ++k) {
    PhaseVector plus = at;
    PhaseVector minus = at;
    plus[k] += step;
    minus[k] -= step;
    dpsi[static_cast<std::size_t>(k)] =
        (probe_state(input_modes, plus, kind) - probe_state(input_modes, minus, kind)) /
        (2.0 * step);
  }
  Eigen::Matrix3d f;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const auto& di = dpsi[static_cast<std::size_t>(i)];
      const auto& dj = dpsi[static_cast<std::size_t>(j)];
      Complex v = di.dot(dj) - di.dot(psi) * psi.dot(dj);
      f(i, j) = 4.0 * v.real();
    }
  }
  return 0.5 * (f + f.transpose());
}

/// Coefficient of 1/N in the multiparameter quantum Cramer-Rao bound, Tr[F^-1].
inline double qcrb_bound(std::pair<int, int> input_modes = {2, 3}, double step = 1e-6,
                         QuarterKind kind = QuarterKind::coupler) {
  Eigen::Matrix3d f = quantum_fisher_matrix(input_modes, step, PhaseVector::Zero(3), kind);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(f);
  double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0) || eig.eigenvalues().minCoeff() < 1e-9 * top) {
    throw DegenerateProbeError("quantum Fisher matrix is singular for this probe");
  }
  return f.inverse().trace();
}

/// Classical Fisher information of a likelihood model at a total phase, by
/// central differences. Outcomes with probability below the floor are skipped.
template <typename Model>
Eigen::MatrixXd classical_fisher_matrix(const Model& model, const PhaseVector& total,
                                        double step = 1e-6) {
  const int dims = model.dims();
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(dims, dims);
  for (int d = 0; d < model.outcomes(); ++d) {
    double p = model.prob(d, total);
    if (p < kProbabilityFloor) continue;
    Eigen::VectorXd grad(dims);
    for (int k = 0; k < dims; ++k) {
      PhaseVector plus = total;
      PhaseVector minus = total;
      plus[k] += step;
      minus[k] -= step;
      grad[k] = (model.prob(d, plus) - model.prob(d, minus)) / (2.0 * step);
    }
    f += grad * grad.transpose() / p;
  }
  return f;
}

}  // namespace qmetro
