#pragma once

// Time integration of the coupled mode equations
//   i hbar d'_j = sum_l T_{j,l} d_l + eps_c |d_j|^{2 sigma} d_j
// with an adaptive embedded Dormand-Prince 5(4) pair, plus the Hamiltonian
// of the (q, theta) chart and conservation reporting.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "nmode/lattice.hpp"
#include "nmode/stationary.hpp"

namespace nmode {

struct DynamicsConfig {
  double hbar = 1.0;
  double epsilon_c = 0.0;  // the product eps * c; equals eta in reduced units
  int sigma = 1;
  double t0 = 0.0;
  double t1 = 1.0;
  double dt_initial = 1e-3;
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  std::vector<double> sample_times;  // empty: record every accepted step
  int max_steps = 50'000'000;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXcd> states;
  std::vector<double> norms;         // ||d||^2 per sample
  std::vector<double> hamiltonians;  // H per sample
};

struct ConservationReport {
  double max_norm_drift = 0.0;
  double max_hamiltonian_drift = 0.0;
};

/// Hamiltonian in the (q, theta) chart. The neighbour sum runs over ordered
/// pairs, counting each coupling twice, which is the convention under which
/// hbar q' = dH/dtheta and hbar theta' = -dH/dq reproduce the mode
/// equations.
inline double hamiltonian_value(const ModeState& state, const LatticeSpec& spec, double lambda_d, double beta,
                                double epsilon_c, int sigma) {
  const auto nbr = adjacency_lists(spec);
  const Eigen::Index n = spec.size();
  if (state.q.size() != n) throw std::invalid_argument("hamiltonian_value: state size does not match lattice");
  double h = lambda_d * state.q.sum();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index l : nbr[static_cast<std::size_t>(j)])
      h -= beta * std::sqrt(state.q[j] * state.q[l]) * std::cos(state.theta[l] - state.theta[j]);
  for (Eigen::Index j = 0; j < n; ++j) h += epsilon_c / (sigma + 1.0) * std::pow(state.q[j], sigma + 1);
  return h;
}

/// Hamiltonian evaluated directly on complex amplitudes:
/// H = Re(d^* T d) + eps_c/(sigma+1) sum |d_j|^{2(sigma+1)}.
inline double hamiltonian_value(const Eigen::VectorXcd& d, const HoppingMatrix& t, double epsilon_c, int sigma) {
  if (d.size() != t.size()) throw std::invalid_argument("hamiltonian_value: state size does not match matrix");
  double h = (d.adjoint() * (t.entries * d)).value().real();
  for (Eigen::Index j = 0; j < d.size(); ++j) h += epsilon_c / (sigma + 1.0) * std::pow(std::norm(d[j]), sigma + 1);
  return h;
}

namespace detail {

inline Eigen::VectorXcd mode_rhs(const Eigen::VectorXcd& d, const HoppingMatrix& t, const DynamicsConfig& cfg) {
  Eigen::VectorXcd nl(d.size());
  for (Eigen::Index j = 0; j < d.size(); ++j) nl[j] = std::pow(std::norm(d[j]), cfg.sigma) * d[j];
  const std::complex<double> minus_i_over_hbar(0.0, -1.0 / cfg.hbar);
  return minus_i_over_hbar * (t.entries * d + cfg.epsilon_c * nl);
}

}  // namespace detail

/// Integrate the mode equations from a normalised initial state. Accepted
/// steps use the 5th-order solution; the embedded 4th-order difference
/// drives the step-size controller. Sample times, when given, are hit
/// exactly by clamping the step. Norm and Hamiltonian are logged per
/// sample and monitored, never enforced.
inline Trajectory evolve(const Eigen::VectorXcd& d0, const HoppingMatrix& t, const DynamicsConfig& cfg) {
  if (std::abs(d0.squaredNorm() - 1.0) > 1e-12)
    throw std::invalid_argument("evolve: initial state must be normalised to 1e-12");
  if (cfg.t1 == cfg.t0) throw std::invalid_argument("evolve: empty time span");
  if (!(cfg.dt_initial > 0.0)) throw std::invalid_argument("evolve: dt_initial must be positive");

  // Dormand-Prince 5(4) tableau
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84;
  static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                          e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                          e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

  const double direction = (cfg.t1 > cfg.t0) ? 1.0 : -1.0;
  double time = cfg.t0;
  double h = direction * cfg.dt_initial;
  Eigen::VectorXcd d = d0;
  Eigen::VectorXcd k1 = detail::mode_rhs(d, t, cfg);

  Trajectory traj;
  const auto record = [&](double at, const Eigen::VectorXcd& state) {
    traj.times.push_back(at);
    traj.states.push_back(state);
    traj.norms.push_back(state.squaredNorm());
    traj.hamiltonians.push_back(hamiltonian_value(state, t, cfg.epsilon_c, cfg.sigma));
  };

  std::size_t next_sample = 0;
  std::vector<double> samples = cfg.sample_times;
  if (!samples.empty()) {
    std::sort(samples.begin(), samples.end(),
              [&](double a, double b) { return direction > 0 ? a < b : a > b; });
    while (next_sample < samples.size() && direction * (samples[next_sample] - cfg.t0) <= 0.0) {
      record(samples[next_sample], d);
      ++next_sample;
    }
  } else {
    record(time, d);
  }

  const double span = std::abs(cfg.t1 - cfg.t0);
  for (int step = 0; step < cfg.max_steps; ++step) {
    if (direction * (time - cfg.t1) >= 0.0) break;
    bool clipped_to_sample = false;
    double target = cfg.t1;
    if (next_sample < samples.size() && direction * (samples[next_sample] - cfg.t1) < 0.0)
      target = samples[next_sample];
    if (direction * (time + h - target) > 0.0) {
      h = target - time;
      clipped_to_sample = true;
    }

    const Eigen::VectorXcd k2 = detail::mode_rhs(d + h * (a21 * k1), t, cfg);
    const Eigen::VectorXcd k3 = detail::mode_rhs(d + h * (a31 * k1 + a32 * k2), t, cfg);
    const Eigen::VectorXcd k4 = detail::mode_rhs(d + h * (a41 * k1 + a42 * k2 + a43 * k3), t, cfg);
    const Eigen::VectorXcd k5 = detail::mode_rhs(d + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t, cfg);
    const Eigen::VectorXcd k6 =
        detail::mode_rhs(d + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t, cfg);
    const Eigen::VectorXcd d_new = d + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Eigen::VectorXcd k7 = detail::mode_rhs(d_new, t, cfg);
    const Eigen::VectorXcd err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err = 0.0;
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      const double scale = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(d[j]), std::abs(d_new[j]));
      err = std::max(err, std::abs(err_vec[j]) / scale);
    }

    if (err <= 1.0) {
      time += h;
      d = d_new;
      k1 = k7;  // first-same-as-last
      if (samples.empty()) {
        record(time, d);
      } else {
        while (next_sample < samples.size() && direction * (samples[next_sample] - time) <= 1e-14 * span) {
          record(samples[next_sample], d);
          ++next_sample;
        }
      }
    }
    const double factor = (err > 0.0) ? 0.9 * std::pow(err, -0.2) : 5.0;
    double h_next = h * std::min(5.0, std::max(0.2, factor));
    if (clipped_to_sample && err <= 1.0) h_next = std::max(std::abs(h_next), std::abs(h)) * direction;
    h = h_next;
    if (std::abs(h) < 1e-15 * std::max(1.0, std::abs(time)))
      throw std::runtime_error("evolve: step size underflow");
  }
  if (samples.empty() && (traj.times.empty() || traj.times.back() != time)) record(time, d);
  return traj;
}

/// Maximum absolute drifts of the logged invariants relative to their
/// initial values.
inline ConservationReport verify_conservation(const Trajectory& traj) {
  if (traj.times.empty()) throw std::invalid_argument("verify_conservation: empty trajectory");
  ConservationReport rep;
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    rep.max_norm_drift = std::max(rep.max_norm_drift, std::abs(traj.norms[i] - traj.norms.front()));
    rep.max_hamiltonian_drift =
        std::max(rep.max_hamiltonian_drift, std::abs(traj.hamiltonians[i] - traj.hamiltonians.front()));
  }
  return rep;
}

/// Complex amplitudes of a (q, theta) state.
inline Eigen::VectorXcd to_complex(const ModeState& state) {
  Eigen::VectorXcd d(state.q.size());
  for (Eigen::Index j = 0; j < state.q.size(); ++j)
    d[j] = std::sqrt(state.q[j]) * std::exp(std::complex<double>(0.0, state.theta[j]));
  return d;
}

/// (q, theta) chart of a complex amplitude vector.
inline ModeState to_mode_state(const Eigen::VectorXcd& d) {
  ModeState state;
  state.q.resize(d.size());
  state.theta.resize(d.size());
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    state.q[j] = std::norm(d[j]);
    state.theta[j] = std::arg(d[j]);
  }
  return state;
}

}  // namespace nmode
