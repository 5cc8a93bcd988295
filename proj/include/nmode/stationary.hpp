#pragma once

// Stationary equations of the reduced lattice model in the (q, Omega)
// chart, their analytic Jacobian, the closed-form solution families for
// sigma = 1, symmetry-reduced subsystems and a damped Newton solver with
// the simplex normalisation built into the system.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmode/lattice.hpp"

namespace nmode {

struct StationaryParams {
  int sigma = 1;     // nonlinearity exponent, >= 1
  double eta = 0.0;  // reduced nonlinearity strength
};

inline void validate_params(const StationaryParams& p) {
  if (p.sigma < 1) throw std::invalid_argument("StationaryParams: sigma must be >= 1");
}

/// Amplitudes and phases of a mode vector d_j = sqrt(q_j) e^{i theta_j}.
/// q must lie on the unit simplex to 1e-12.
struct ModeState {
  Eigen::VectorXd q;
  Eigen::VectorXd theta;
};

inline ModeState make_mode_state(Eigen::VectorXd q, Eigen::VectorXd theta) {
  if (q.size() != theta.size()) throw std::invalid_argument("ModeState: q and theta sizes differ");
  if ((q.array() < 0.0).any()) throw std::invalid_argument("ModeState: q must be nonnegative");
  if (std::abs(q.sum() - 1.0) > 1e-12) throw std::invalid_argument("ModeState: sum(q) must be 1");
  return ModeState{std::move(q), std::move(theta)};
}

namespace detail {
inline void require_positive_sites(const Eigen::VectorXd& q, const char* where) {
  for (Eigen::Index j = 0; j < q.size(); ++j)
    if (!(q[j] > 0.0))
      throw std::domain_error(std::string(where) + ": zero amplitude at site " + std::to_string(j));
}
}  // namespace detail

/// Full phase-resolved stationary residual, 2N components: N phase-balance
/// equations followed by the N frequency equations written as
/// f_j = -sum_nbr sqrt(q_l/q_j) cos(theta_l - theta_j) + eta q_j^sigma - Omega.
inline Eigen::VectorXd residual_full(const ModeState& state, const StationaryParams& params, double omega,
                                     const LatticeSpec& spec) {
  validate_params(params);
  detail::require_positive_sites(state.q, "residual_full");
  const auto nbr = adjacency_lists(spec);
  const Eigen::Index n = spec.size();
  Eigen::VectorXd r(2 * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double s = 0.0, c = 0.0;
    for (Eigen::Index l : nbr[static_cast<std::size_t>(j)]) {
      const double dtheta = state.theta[l] - state.theta[j];
      s += std::sqrt(state.q[j] * state.q[l]) * std::sin(dtheta);
      c += std::sqrt(state.q[l] / state.q[j]) * std::cos(dtheta);
    }
    r[j] = s;
    r[n + j] = -c + params.eta * std::pow(state.q[j], params.sigma) - omega;
  }
  return r;
}

/// Equal-phase stationary system, N+1 components:
/// f_j = -sum_nbr sqrt(q_l/q_j) + eta q_j^sigma - Omega and f_{N+1} = sum q - 1.
inline Eigen::VectorXd residual_positive(const Eigen::VectorXd& q, const StationaryParams& params, double omega,
                                         const LatticeSpec& spec) {
  validate_params(params);
  detail::require_positive_sites(q, "residual_positive");
  const auto nbr = adjacency_lists(spec);
  const Eigen::Index n = spec.size();
  Eigen::VectorXd f(n + 1);
  for (Eigen::Index j = 0; j < n; ++j) {
    double hop = 0.0;
    for (Eigen::Index l : nbr[static_cast<std::size_t>(j)]) hop += std::sqrt(q[l] / q[j]);
    f[j] = -hop + params.eta * std::pow(q[j], params.sigma) - omega;
  }
  f[n] = q.sum() - 1.0;
  return f;
}

/// Analytic Jacobian of residual_positive with respect to (q_1..q_N, Omega).
/// d f_j / d Omega = -1; the last row is the normalisation gradient (1..1, 0).
inline Eigen::MatrixXd jacobian_positive(const Eigen::VectorXd& q, const StationaryParams& params,
                                         const LatticeSpec& spec) {
  validate_params(params);
  detail::require_positive_sites(q, "jacobian_positive");
  const auto nbr = adjacency_lists(spec);
  const Eigen::Index n = spec.size();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n + 1, n + 1);
  for (Eigen::Index j = 0; j < n; ++j) {
    double sqrt_sum = 0.0;
    for (Eigen::Index l : nbr[static_cast<std::size_t>(j)]) {
      sqrt_sum += std::sqrt(q[l]);
      jac(j, l) = -0.5 / std::sqrt(q[j] * q[l]);
    }
    jac(j, j) = 0.5 * sqrt_sum * std::pow(q[j], -1.5) +
                params.eta * params.sigma * std::pow(q[j], params.sigma - 1);
    jac(j, n) = -1.0;
  }
  jac.row(n).head(n).setOnes();
  return jac;
}

/// d residual_positive / d eta; used by continuation.
inline Eigen::VectorXd residual_eta_gradient(const Eigen::VectorXd& q, const StationaryParams& params) {
  Eigen::VectorXd g(q.size() + 1);
  for (Eigen::Index j = 0; j < q.size(); ++j) g[j] = std::pow(q[j], params.sigma);
  g[q.size()] = 0.0;
  return g;
}

/// Uniform solution of the hypercube system: q_j = 2^-d,
/// Omega = eta 2^{-d sigma} - d. Exists for every eta.
inline std::pair<Eigen::VectorXd, double> symmetric_solution(const LatticeSpec& spec, int sigma, double eta) {
  if (!spec.is_hypercube()) throw std::invalid_argument("symmetric_solution: hypercube box required");
  const int d = spec.dims();
  const Eigen::Index n = spec.size();
  const double qj = std::pow(2.0, -d);
  const double omega = eta * std::pow(2.0, -double(d) * sigma) - d;
  return {Eigen::VectorXd::Constant(n, qj), omega};
}

/// Scalar pitchfork equation shared by the two-site reductions:
/// sqrt((1-z)/(1+z)) - chi (1+z)^sigma - sqrt((1+z)/(1-z)) + chi (1-z)^sigma.
/// Odd in z; z = 0 is always a root.
inline double scalar_pitchfork_residual(double z, double chi, int sigma) {
  if (!(std::abs(z) < 1.0)) throw std::domain_error("scalar_pitchfork_residual: |z| must be < 1");
  return std::sqrt((1.0 - z) / (1.0 + z)) - chi * std::pow(1.0 + z, sigma) -
         std::sqrt((1.0 + z) / (1.0 - z)) + chi * std::pow(1.0 - z, sigma);
}

/// Positive roots of the scalar pitchfork equation found by bisection on a
/// sign-change scan of z in (0, 1). Covers sigma >= 2, where no closed form
/// is available; for sigma = 1 it reproduces sqrt(chi^2-1)/|chi|.
inline std::vector<double> scalar_pitchfork_positive_roots(double chi, int sigma) {
  const double z_lo = 1e-12, z_hi = 1.0 - 1e-12;
  const int scan = 4096;
  std::vector<double> roots;
  double prev_z = z_lo;
  double prev_f = scalar_pitchfork_residual(prev_z, chi, sigma);
  for (int i = 1; i <= scan; ++i) {
    const double z = z_lo + (z_hi - z_lo) * i / scan;
    const double f = scalar_pitchfork_residual(z, chi, sigma);
    if (prev_f == 0.0) roots.push_back(prev_z);
    if (prev_f * f < 0.0) {
      double a = prev_z, b = z, fa = prev_f;
      for (int it = 0; it < 200; ++it) {
        const double m = 0.5 * (a + b);
        const double fm = scalar_pitchfork_residual(m, chi, sigma);
        if (fa * fm <= 0.0) b = m;
        else a = m, fa = fm;
        if (b - a < 1e-15) break;
      }
      roots.push_back(0.5 * (a + b));
    }
    prev_z = z;
    prev_f = f;
  }
  return roots;
}

/// One member of a closed-form solution family.
struct ClosedFormState {
  double z = 0.0;
  double omega = 0.0;
  Eigen::VectorXd q;
};

/// Two-well asymmetric family (sigma = 1): z = +-sqrt(eta^2-4)/eta and
/// Omega = eta for eta <= -2; empty above the bifurcation.
inline std::vector<ClosedFormState> closed_form_1d(double eta, int sigma = 1) {
  if (sigma != 1) throw std::invalid_argument("closed_form_1d: closed form exists for sigma = 1 only");
  std::vector<ClosedFormState> out;
  if (eta > -2.0) return out;
  const double z = std::sqrt(eta * eta - 4.0) / eta;  // negative branch value for eta < 0
  for (double s : {+1.0, -1.0}) {
    ClosedFormState st;
    st.z = s * std::abs(z);
    st.omega = eta;
    st.q = Eigen::Vector2d((1.0 + st.z) / 2.0, (1.0 - st.z) / 2.0);
    out.push_back(std::move(st));
  }
  return out;
}

/// Four-well mirror family (sigma = 1): halves split as (1+-z)/4 with
/// z = +-sqrt(eta^2-16)/eta, Omega = -1 + eta/2, for eta <= -4. Returns the
/// split across the first axis and its three dihedral reflections.
inline std::vector<ClosedFormState> closed_form_2d_mirror(double eta, int sigma = 1) {
  if (sigma != 1) throw std::invalid_argument("closed_form_2d_mirror: closed form exists for sigma = 1 only");
  std::vector<ClosedFormState> out;
  if (eta > -4.0) return out;
  const double zmag = std::sqrt(eta * eta - 16.0) / std::abs(eta);
  const double omega = -1.0 + 0.5 * eta;
  for (double z : {+zmag, -zmag}) {
    const double a = (1.0 + z) / 4.0, b = (1.0 - z) / 4.0;
    ClosedFormState axis1{z, omega, Eigen::Vector4d(a, a, b, b)};  // split by j_1
    ClosedFormState axis2{z, omega, Eigen::Vector4d(a, b, a, b)};  // split by j_2
    out.push_back(std::move(axis1));
    out.push_back(std::move(axis2));
  }
  return out;
}

/// Four-well point-symmetric family (sigma = 1): q_1 = q_4 = (1+z)/4,
/// q_2 = q_3 = (1-z)/4, z = +-sqrt(eta^2-64)/eta, Omega = eta/2, eta <= -8.
inline std::vector<ClosedFormState> closed_form_2d_point(double eta, int sigma = 1) {
  if (sigma != 1) throw std::invalid_argument("closed_form_2d_point: closed form exists for sigma = 1 only");
  std::vector<ClosedFormState> out;
  if (eta > -8.0) return out;
  const double zmag = std::sqrt(eta * eta - 64.0) / std::abs(eta);
  for (double z : {+zmag, -zmag}) {
    const double a = (1.0 + z) / 4.0, b = (1.0 - z) / 4.0;
    out.push_back({z, 0.5 * eta, Eigen::Vector4d(a, b, b, a)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Symmetry classes: partitions of the site set into groups of equal q.

/// A partition of the sites; the constraint map assigns one free variable
/// per group. Valid classes are equitable: every site in a group sees the
/// same multiset of neighbour groups, so the reduced system closes.
struct SymmetryClass {
  std::string label;
  std::vector<std::vector<Eigen::Index>> groups;

  Eigen::Index free_count() const { return static_cast<Eigen::Index>(groups.size()); }

  Eigen::VectorXd expand(const Eigen::VectorXd& q_red, Eigen::Index n) const {
    Eigen::VectorXd q(n);
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (Eigen::Index s : groups[g]) q[s] = q_red[static_cast<Eigen::Index>(g)];
    return q;
  }

  Eigen::VectorXd reduce(const Eigen::VectorXd& q) const {
    Eigen::VectorXd q_red(free_count());
    for (std::size_t g = 0; g < groups.size(); ++g) q_red[static_cast<Eigen::Index>(g)] = q[groups[g].front()];
    return q_red;
  }
};

inline bool is_equitable(const SymmetryClass& cls, const LatticeSpec& spec) {
  const auto nbr = adjacency_lists(spec);
  std::vector<int> gid(static_cast<std::size_t>(spec.size()), -1);
  for (std::size_t g = 0; g < cls.groups.size(); ++g)
    for (Eigen::Index s : cls.groups[g]) gid[static_cast<std::size_t>(s)] = static_cast<int>(g);
  if (std::any_of(gid.begin(), gid.end(), [](int g) { return g < 0; })) return false;
  for (const auto& group : cls.groups) {
    std::vector<int> signature0;
    for (Eigen::Index s : group) {
      std::vector<int> sig;
      for (Eigen::Index l : nbr[static_cast<std::size_t>(s)]) sig.push_back(gid[static_cast<std::size_t>(l)]);
      std::sort(sig.begin(), sig.end());
      if (signature0.empty()) signature0 = sig;
      else if (sig != signature0) return false;
    }
  }
  return true;
}

/// All sites in one group.
inline SymmetryClass full_symmetry(const LatticeSpec& spec) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(spec.size()));
  std::iota(all.begin(), all.end(), Eigen::Index(0));
  return {"full", {all}};
}

/// Every site its own group (no reduction).
inline SymmetryClass no_symmetry(const LatticeSpec& spec) {
  SymmetryClass cls{"none", {}};
  for (Eigen::Index i = 0; i < spec.size(); ++i) cls.groups.push_back({i});
  return cls;
}

/// Named classes of the 4- and 8-well models. Site order is the
/// lexicographic enumeration of LatticeSpec.
inline SymmetryClass named_symmetry_class(const std::string& label, const LatticeSpec& spec) {
  const int d = spec.dims();
  if (label == "full") return full_symmetry(spec);
  if (label == "none") return no_symmetry(spec);
  if (!spec.is_hypercube()) throw std::invalid_argument("named_symmetry_class: hypercube box required");
  if (d == 2) {
    if (label == "mirror2d") return {label, {{0, 1}, {2, 3}}};
    if (label == "point2d") return {label, {{0, 3}, {1, 2}}};
    if (label == "partial2d") return {label, {{0, 3}, {1}, {2}}};
  }
  if (d == 3) {
    if (label == "mirror3d") return {label, {{0, 1, 2, 3}, {4, 5, 6, 7}}};
    if (label == "partial3d_f27") return {label, {{0}, {1, 2, 4}, {3, 5, 6}, {7}}};
    if (label == "partial3d_f28") return {label, {{0, 1, 6, 7}, {4, 5}, {2, 3}}};
  }
  throw std::invalid_argument("named_symmetry_class: unknown label '" + label + "' for d=" + std::to_string(d));
}

/// Group sites whose q values agree within tol; the resulting partition is
/// named when it matches one of the built-in classes up to reordering.
inline SymmetryClass detect_symmetry_class(const LatticeSpec& spec, const Eigen::VectorXd& q, double tol = 1e-9) {
  SymmetryClass cls{"custom", {}};
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    bool placed = false;
    for (auto& g : cls.groups)
      if (std::abs(q[g.front()] - q[i]) <= tol) {
        g.push_back(i);
        placed = true;
        break;
      }
    if (!placed) cls.groups.push_back({i});
  }
  auto same_partition = [](const SymmetryClass& a, const SymmetryClass& b) {
    if (a.groups.size() != b.groups.size()) return false;
    auto key = [](const SymmetryClass& c) {
      std::vector<std::vector<Eigen::Index>> g = c.groups;
      for (auto& grp : g) std::sort(grp.begin(), grp.end());
      std::sort(g.begin(), g.end());
      return g;
    };
    return key(a) == key(b);
  };
  std::vector<std::string> candidates = {"full", "none"};
  if (spec.is_hypercube() && spec.dims() == 2)
    candidates.insert(candidates.end(), {"mirror2d", "point2d", "partial2d"});
  if (spec.is_hypercube() && spec.dims() == 3)
    candidates.insert(candidates.end(), {"mirror3d", "partial3d_f27", "partial3d_f28"});
  for (const auto& name : candidates) {
    if (same_partition(cls, named_symmetry_class(name, spec))) {
      cls.label = name;
      return cls;
    }
  }
  return cls;
}

/// Representative rows of residual_positive for a symmetry class, plus the
/// normalisation row expressed through group sizes.
inline Eigen::VectorXd reduced_residual(const SymmetryClass& cls, const Eigen::VectorXd& q_red,
                                        const StationaryParams& params, double omega, const LatticeSpec& spec) {
  const Eigen::VectorXd q = cls.expand(q_red, spec.size());
  const Eigen::VectorXd f = residual_positive(q, params, omega, spec);
  Eigen::VectorXd r(cls.free_count() + 1);
  for (Eigen::Index g = 0; g < cls.free_count(); ++g) r[g] = f[cls.groups[static_cast<std::size_t>(g)].front()];
  r[cls.free_count()] = f[spec.size()];
  return r;
}

/// Chain rule through the expansion map: reduced Jacobian with respect to
/// (q_red, Omega).
inline Eigen::MatrixXd reduced_jacobian(const SymmetryClass& cls, const Eigen::VectorXd& q_red,
                                        const StationaryParams& params, const LatticeSpec& spec) {
  const Eigen::VectorXd q = cls.expand(q_red, spec.size());
  const Eigen::MatrixXd full = jacobian_positive(q, params, spec);
  const Eigen::Index m = cls.free_count();
  Eigen::MatrixXd jac(m + 1, m + 1);
  for (Eigen::Index r = 0; r <= m; ++r) {
    const Eigen::Index row = (r < m) ? cls.groups[static_cast<std::size_t>(r)].front() : spec.size();
    for (Eigen::Index g = 0; g < m; ++g) {
      double sum = 0.0;
      for (Eigen::Index s : cls.groups[static_cast<std::size_t>(g)]) sum += full(row, s);
      jac(r, g) = sum;
    }
    jac(r, m) = full(row, spec.size());
  }
  return jac;
}

inline Eigen::VectorXd reduced_eta_gradient(const SymmetryClass& cls, const Eigen::VectorXd& q_red,
                                            const StationaryParams& params, const LatticeSpec& spec) {
  const Eigen::VectorXd q = cls.expand(q_red, spec.size());
  const Eigen::VectorXd g = residual_eta_gradient(q, params);
  Eigen::VectorXd out(cls.free_count() + 1);
  for (Eigen::Index i = 0; i < cls.free_count(); ++i) out[i] = g[cls.groups[static_cast<std::size_t>(i)].front()];
  out[cls.free_count()] = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Newton solver

struct NewtonConfig {
  double tol = 1e-12;        // max-norm residual target
  int max_iter = 60;
  double q_floor = 1e-10;    // steps are damped so q stays above this
  int max_halvings = 30;
  double cond_limit = 1e14;  // reciprocal-condition guard on the Jacobian
};

struct NewtonResult {
  Eigen::VectorXd q;
  double omega = 0.0;
  bool converged = false;
  int iterations = 0;
  double residual_norm = 0.0;
  std::string failure;  // empty on success
};

/// Newton on the reduced system of a symmetry class. Steps are backtracked
/// (up to max_halvings) whenever they would cross the q floor or increase
/// the residual norm. A seed on the simplex stays on it exactly, since the
/// normalisation row is linear.
inline NewtonResult solve_newton_reduced(const SymmetryClass& cls, const Eigen::VectorXd& q_red0, double omega0,
                                         const StationaryParams& params, const LatticeSpec& spec,
                                         const NewtonConfig& config = {}) {
  validate_params(params);
  NewtonResult res;
  Eigen::VectorXd q_red = q_red0;
  double omega = omega0;
  Eigen::VectorXd f = reduced_residual(cls, q_red, params, omega, spec);
  double fnorm = f.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < config.max_iter; ++it) {
    if (fnorm < config.tol) {
      res.q = cls.expand(q_red, spec.size());
      res.omega = omega;
      res.converged = true;
      res.iterations = it;
      res.residual_norm = fnorm;
      return res;
    }
    const Eigen::MatrixXd jac = reduced_jacobian(cls, q_red, params, spec);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    if (lu.rcond() < 1.0 / config.cond_limit) {
      res.q = cls.expand(q_red, spec.size());
      res.omega = omega;
      res.iterations = it;
      res.residual_norm = fnorm;
      res.failure = "jacobian numerically singular (near a bifurcation point)";
      return res;
    }
    const Eigen::VectorXd step = lu.solve(-f);
    double alpha = 1.0;
    bool have_feasible = false;
    Eigen::VectorXd q_best;
    Eigen::VectorXd f_best;
    double omega_best = omega, fnorm_best = fnorm;
    for (int h = 0; h <= config.max_halvings; ++h) {
      const Eigen::VectorXd q_try = q_red + alpha * step.head(cls.free_count());
      const double omega_try = omega + alpha * step[cls.free_count()];
      if ((q_try.array() > config.q_floor).all()) {
        const Eigen::VectorXd f_try = reduced_residual(cls, q_try, params, omega_try, spec);
        const double fnorm_try = f_try.lpNorm<Eigen::Infinity>();
        if (!have_feasible) {
          have_feasible = true;
          q_best = q_try;
          omega_best = omega_try;
          f_best = f_try;
          fnorm_best = fnorm_try;
        }
        if (fnorm_try < fnorm || fnorm_try < config.tol) {
          q_best = q_try;
          omega_best = omega_try;
          f_best = f_try;
          fnorm_best = fnorm_try;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!have_feasible) {
      res.q = cls.expand(q_red, spec.size());
      res.omega = omega;
      res.iterations = it;
      res.residual_norm = fnorm;
      res.failure = "step damping underflow at the q > 0 boundary";
      return res;
    }
    // a non-decreasing residual at the smallest feasible step is still taken;
    // stagnation is caught by max_iter
    q_red = q_best;
    omega = omega_best;
    f = f_best;
    fnorm = fnorm_best;
  }
  res.q = cls.expand(q_red, spec.size());
  res.omega = omega;
  res.iterations = config.max_iter;
  res.residual_norm = fnorm;
  if (fnorm < config.tol) res.converged = true;
  else res.failure = "max_iter exceeded (residual " + std::to_string(fnorm) + ")";
  return res;
}

/// Newton on the full system (every site free).
inline NewtonResult solve_newton(const Eigen::VectorXd& q0, double omega0, const StationaryParams& params,
                                 const LatticeSpec& spec, const NewtonConfig& config = {}) {
  return solve_newton_reduced(no_symmetry(spec), q0, omega0, params, spec, config);
}

}  // namespace nmode
