#pragma once

// Pseudo-arclength continuation of stationary branches in eta, detection
// of folds and branch points along a branch (determinant sign changes plus
// a magnitude-dip probe for even-multiplicity zeros), refinement of event
// locations, branch switching through the null space, and the recursive
// sweep that assembles a whole bifurcation diagram.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "nmode/lattice.hpp"
#include "nmode/stationary.hpp"

namespace nmode {

struct BranchPoint {
  double eta = 0.0;
  Eigen::VectorXd q;
  double omega = 0.0;
  double det = 0.0;      // det of the full (N+1)-square Jacobian
  double det_log = 0.0;  // log |det|, safe for large lattices
  int det_sign = 0;
  double arclength = 0.0;
};

struct Branch {
  std::vector<BranchPoint> points;
  SymmetryClass symmetry;
  std::string origin;
  std::string termination;  // range | q_boundary | merged_symmetric | step_underflow | max_steps
};

struct BifurcationEvent {
  enum class Kind { fold, branch_point };
  Kind kind = Kind::fold;
  double eta_star = 0.0;
  Eigen::VectorXd q_star;
  double omega_star = 0.0;
  std::vector<Eigen::VectorXd> null_directions;  // orthonormal, q-space
  int branch_count = 0;                          // families through the point; filled by the sweep
};

struct StepControl {
  double initial = 1e-2;
  double min = 1e-8;
  double max = 0.1;
};

struct ContinuationConfig {
  StepControl step;
  double tol = 1e-12;
  int max_steps = 20000;
  double q_boundary = 1e-6;       // stop when any group amplitude falls below this
  int corrector_max_iter = 12;
  double det_dip_threshold = 1e-8;  // relative |det| dip that counts as an even-order zero
  double event_eta_tol = 1e-8;      // bisection width for event refinement
};

struct BranchSeed {
  Eigen::VectorXd q;
  double omega = 0.0;
  double eta = 0.0;
  SymmetryClass symmetry;
  std::string origin;
};

namespace detail {

inline std::pair<double, int> signed_log_det(const Eigen::MatrixXd& a) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const Eigen::MatrixXd& m = lu.matrixLU();
  double log_abs = 0.0;
  int sign = lu.permutationP().determinant() > 0 ? 1 : -1;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double d = m(i, i);
    if (d == 0.0) return {-std::numeric_limits<double>::infinity(), 0};
    log_abs += std::log(std::abs(d));
    if (d < 0.0) sign = -sign;
  }
  return {log_abs, sign};
}

/// Reduced stationary system in the continuation variables
/// u = (q_red, Omega, eta).
struct ArclengthSystem {
  const LatticeSpec& spec;
  SymmetryClass cls;
  int sigma;

  Eigen::Index m() const { return cls.free_count(); }
  Eigen::Index dim() const { return m() + 2; }

  StationaryParams params_at(double eta) const { return StationaryParams{sigma, eta}; }

  Eigen::VectorXd residual(const Eigen::VectorXd& u) const {
    return reduced_residual(cls, u.head(m()), params_at(u[m() + 1]), u[m()], spec);
  }

  /// (m+1) x (m+2) Jacobian of the residual with respect to u.
  Eigen::MatrixXd extended_jacobian(const Eigen::VectorXd& u) const {
    const StationaryParams p = params_at(u[m() + 1]);
    Eigen::MatrixXd jac(m() + 1, m() + 2);
    jac.leftCols(m() + 1) = reduced_jacobian(cls, u.head(m()), p, spec);
    jac.col(m() + 1) = reduced_eta_gradient(cls, u.head(m()), p, spec);
    return jac;
  }

  Eigen::VectorXd tangent(const Eigen::VectorXd& u, const Eigen::VectorXd* previous) const {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(extended_jacobian(u), Eigen::ComputeFullV);
    Eigen::VectorXd t = svd.matrixV().col(dim() - 1);
    if (previous && t.dot(*previous) < 0.0) t = -t;
    return t.normalized();
  }

  /// Newton corrector for [residual; t . (u - u_anchor)] = 0.
  bool correct(Eigen::VectorXd& u, const Eigen::VectorXd& t, const Eigen::VectorXd& u_anchor, double tol,
               int max_iter, double q_floor) const {
    for (int it = 0; it < max_iter; ++it) {
      Eigen::VectorXd f(dim());
      f.head(m() + 1) = residual(u);
      f[m() + 1] = t.dot(u - u_anchor);
      if (f.lpNorm<Eigen::Infinity>() < tol) return true;
      Eigen::MatrixXd jac(dim(), dim());
      jac.topRows(m() + 1) = extended_jacobian(u);
      jac.row(m() + 1) = t.transpose();
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
      const Eigen::VectorXd step = lu.solve(-f);
      if (!step.allFinite()) return false;
      double alpha = 1.0;
      for (int h = 0; h < 40; ++h) {
        if (((u.head(m()) + alpha * step.head(m())).array() > q_floor).all()) break;
        alpha *= 0.5;
      }
      u += alpha * step;
    }
    Eigen::VectorXd f(dim());
    f.head(m() + 1) = residual(u);
    f[m() + 1] = t.dot(u - u_anchor);
    return f.lpNorm<Eigen::Infinity>() < tol;
  }

  BranchPoint make_point(const Eigen::VectorXd& u, double arclength) const {
    BranchPoint p;
    p.eta = u[m() + 1];
    p.omega = u[m()];
    p.q = cls.expand(u.head(m()), spec.size());
    const auto [log_abs, sign] = signed_log_det(jacobian_positive(p.q, params_at(p.eta), spec));
    p.det_log = log_abs;
    p.det_sign = sign;
    p.det = sign * std::exp(log_abs);
    p.arclength = arclength;
    return p;
  }
};

inline bool near_uniform(const Eigen::VectorXd& q, const LatticeSpec& spec, double tol = 1e-9) {
  if (!spec.is_hypercube()) return false;
  const double uniform = 1.0 / static_cast<double>(spec.size());
  return (q.array() - uniform).abs().maxCoeff() < tol;
}

}  // namespace detail

/// Trace one branch with adaptive pseudo-arclength steps. The trace runs in
/// the symmetry-reduced chart of seed.symmetry and traverses folds; it stops
/// at the eta range boundary, at the q > 0 boundary, when the step
/// underflows, or when a non-trivial branch lands on the uniform family.
/// direction flips the initial tangent orientation.
inline Branch continue_branch(const BranchSeed& seed, int sigma, const LatticeSpec& spec, double eta_min,
                              double eta_max, const ContinuationConfig& config = {}, int direction = -1) {
  if (!(eta_min < eta_max)) throw std::invalid_argument("continue_branch: empty eta range");
  detail::ArclengthSystem sys{spec, seed.symmetry, sigma};
  const Eigen::Index m = sys.m();

  // converge the seed in its own chart first
  NewtonConfig ncfg;
  ncfg.tol = config.tol;
  const NewtonResult start =
      solve_newton_reduced(seed.symmetry, seed.symmetry.reduce(seed.q), seed.omega, sys.params_at(seed.eta), spec, ncfg);
  if (!start.converged) throw std::runtime_error("continue_branch: seed failed to converge: " + start.failure);

  Branch branch;
  branch.symmetry = seed.symmetry;
  branch.origin = seed.origin;

  Eigen::VectorXd u(m + 2);
  u.head(m) = seed.symmetry.reduce(start.q);
  u[m] = start.omega;
  u[m + 1] = seed.eta;

  Eigen::VectorXd t = sys.tangent(u, nullptr);
  // orient: positive eta component, then flip by the requested direction
  if (t[m + 1] < 0.0) t = -t;
  if (direction < 0) t = -t;

  double arclength = 0.0;
  branch.points.push_back(sys.make_point(u, arclength));

  double ds = config.step.initial;
  for (int step_count = 0; step_count < config.max_steps; ++step_count) {
    Eigen::VectorXd u_pred = u + ds * t;
    Eigen::VectorXd u_new = u_pred;
    if (!sys.correct(u_new, t, u_pred, config.tol, config.corrector_max_iter, 0.5 * config.q_boundary)) {
      ds *= 0.5;
      if (ds < config.step.min) {
        branch.termination = "step_underflow";
        return branch;
      }
      continue;
    }
    arclength += (u_new - u).norm();
    u = u_new;
    t = sys.tangent(u, &t);
    branch.points.push_back(sys.make_point(u, arclength));
    ds = std::min(ds * 1.3, config.step.max);

    const double eta = u[m + 1];
    if (eta < eta_min || eta > eta_max) {
      // clamp the endpoint to the range boundary when possible
      const double bound = (eta < eta_min) ? eta_min : eta_max;
      const NewtonResult clamped =
          solve_newton_reduced(seed.symmetry, u.head(m), u[m], sys.params_at(bound), spec, ncfg);
      if (clamped.converged) {
        Eigen::VectorXd u_b(m + 2);
        u_b.head(m) = seed.symmetry.reduce(clamped.q);
        u_b[m] = clamped.omega;
        u_b[m + 1] = bound;
        branch.points.back() = sys.make_point(u_b, arclength);
      }
      branch.termination = "range";
      return branch;
    }
    if (u.head(m).minCoeff() < config.q_boundary) {
      branch.termination = "q_boundary";
      return branch;
    }
    if (branch.symmetry.label != "full" && detail::near_uniform(branch.points.back().q, spec)) {
      branch.termination = "merged_symmetric";
      return branch;
    }
  }
  branch.termination = "max_steps";
  return branch;
}

namespace detail {

/// Corrected point on the section between two stored branch points,
/// parametrised by blend in [0, 1].
inline std::optional<Eigen::VectorXd> section_point(const ArclengthSystem& sys, const Eigen::VectorXd& ua,
                                                    const Eigen::VectorXd& ub, double blend, double tol,
                                                    double q_floor) {
  const Eigen::VectorXd t = (ub - ua).normalized();
  Eigen::VectorXd u = (1.0 - blend) * ua + blend * ub;
  const Eigen::VectorXd anchor = u;
  if (!sys.correct(u, t, anchor, tol, 20, q_floor)) return std::nullopt;
  return u;
}

inline Eigen::VectorXd pack_point(const ArclengthSystem& sys, const BranchPoint& p) {
  Eigen::VectorXd u(sys.dim());
  u.head(sys.m()) = sys.cls.reduce(p.q);
  u[sys.m()] = p.omega;
  u[sys.m() + 1] = p.eta;
  return u;
}

inline std::pair<double, int> full_det_at(const ArclengthSystem& sys, const Eigen::VectorXd& u) {
  const Eigen::VectorXd q = sys.cls.expand(u.head(sys.m()), sys.spec.size());
  return signed_log_det(jacobian_positive(q, sys.params_at(u[sys.m() + 1]), sys.spec));
}

inline BifurcationEvent finish_event(const ArclengthSystem& sys, const Eigen::VectorXd& u,
                                     BifurcationEvent::Kind kind) {
  BifurcationEvent ev;
  ev.kind = kind;
  ev.eta_star = u[sys.m() + 1];
  ev.omega_star = u[sys.m()];
  ev.q_star = sys.cls.expand(u.head(sys.m()), sys.spec.size());
  // null directions of the full Jacobian, restricted to q space
  const Eigen::MatrixXd jac = jacobian_positive(ev.q_star, sys.params_at(ev.eta_star), sys.spec);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    if (sv[k] < 1e-6 * sv[0]) {
      Eigen::VectorXd dir = svd.matrixV().col(k).head(sys.spec.size());
      if (dir.norm() > 1e-8) ev.null_directions.push_back(dir.normalized());
    }
  }
  return ev;
}

}  // namespace detail

/// Scan a branch for determinant sign changes and for sign-preserving
/// |det| dips (even-multiplicity zeros), refine each location by bisection
/// or golden-section on the secant sections, and classify fold versus
/// branch point by whether eta reverses across the zero.
inline std::vector<BifurcationEvent> detect_events(const Branch& branch, int sigma, const LatticeSpec& spec,
                                                   const ContinuationConfig& config = {}) {
  std::vector<BifurcationEvent> events;
  if (branch.points.size() < 2) return events;
  detail::ArclengthSystem sys{spec, branch.symmetry, sigma};
  const Eigen::Index m = sys.m();

  // at a fold eta is extremal, so both coarse bracket endpoints lie on the
  // same side of the refined eta*
  const auto classify = [](double eta_a, double eta_b, double eta_star) {
    return ((eta_a - eta_star) * (eta_b - eta_star) > 0.0) ? BifurcationEvent::Kind::fold
                                                           : BifurcationEvent::Kind::branch_point;
  };

  // sign changes between consecutive points
  for (std::size_t i = 0; i + 1 < branch.points.size(); ++i) {
    const BranchPoint& a = branch.points[i];
    const BranchPoint& b = branch.points[i + 1];
    if (a.det_sign == 0 || b.det_sign == 0 || a.det_sign == b.det_sign) continue;
    Eigen::VectorXd ua = detail::pack_point(sys, a);
    Eigen::VectorXd ub = detail::pack_point(sys, b);
    int sign_a = a.det_sign;
    for (int it = 0; it < 200 && std::abs(ub[m + 1] - ua[m + 1]) > config.event_eta_tol; ++it) {
      const auto mid = detail::section_point(sys, ua, ub, 0.5, config.tol, 0.1 * config.q_boundary);
      if (!mid) break;
      const auto [log_abs, sign] = detail::full_det_at(sys, *mid);
      (void)log_abs;
      if (sign == sign_a || sign == 0) ua = *mid;
      else ub = *mid;
    }
    const Eigen::VectorXd u_star = 0.5 * (ua + ub);
    events.push_back(detail::finish_event(sys, u_star, classify(a.eta, b.eta, u_star[m + 1])));
  }

  // sign-preserving dips: golden-section on log|det| over the two segments
  // around a local minimum
  const double gold = 0.5 * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 1; i + 1 < branch.points.size(); ++i) {
    const BranchPoint& prev = branch.points[i - 1];
    const BranchPoint& mid = branch.points[i];
    const BranchPoint& next = branch.points[i + 1];
    if (prev.det_sign != mid.det_sign || mid.det_sign != next.det_sign) continue;
    if (!(mid.det_log < prev.det_log && mid.det_log < next.det_log)) continue;
    const double scale_log = std::max({0.0, prev.det_log, next.det_log});
    // evaluate across both segments with s in [0, 2]
    const Eigen::VectorXd u0 = detail::pack_point(sys, prev);
    const Eigen::VectorXd u1 = detail::pack_point(sys, mid);
    const Eigen::VectorXd u2 = detail::pack_point(sys, next);
    auto eval = [&](double s) -> std::optional<std::pair<double, Eigen::VectorXd>> {
      std::optional<Eigen::VectorXd> u = (s <= 1.0) ? detail::section_point(sys, u0, u1, s, config.tol, 0.1 * config.q_boundary)
                                                    : detail::section_point(sys, u1, u2, s - 1.0, config.tol, 0.1 * config.q_boundary);
      if (!u) return std::nullopt;
      return std::make_pair(detail::full_det_at(sys, *u).first, *u);
    };
    double lo = 0.0, hi = 2.0;
    double x1 = lo + gold * (hi - lo), x2 = hi - gold * (hi - lo);
    auto e1 = eval(x1), e2 = eval(x2);
    if (!e1 || !e2) continue;
    for (int it = 0; it < 120; ++it) {
      if (e1->first < e2->first) {
        hi = x2;
        x2 = x1;
        e2 = e1;
        x1 = lo + gold * (hi - lo);
        e1 = eval(x1);
        if (!e1) break;
      } else {
        lo = x1;
        x1 = x2;
        e1 = e2;
        x2 = hi - gold * (hi - lo);
        e2 = eval(x2);
        if (!e2) break;
      }
      if (e1 && e2 && std::abs(e1->second[m + 1] - e2->second[m + 1]) < config.event_eta_tol) break;
    }
    if (!e1 || !e2) continue;
    const auto& best = (e1->first < e2->first) ? *e1 : *e2;
    if (best.first < scale_log + std::log(config.det_dip_threshold)) {
      const double eta_star = best.second[m + 1];
      events.push_back(detail::finish_event(sys, best.second, classify(prev.eta, next.eta, eta_star)));
    }
  }

  std::sort(events.begin(), events.end(),
            [](const BifurcationEvent& a, const BifurcationEvent& b) { return a.eta_star > b.eta_star; });
  return events;
}

/// Refine a fold bracketed by two consecutive branch points: bisection on
/// the sign of the tangent eta component. Throws if the bracket does not
/// contain an eta-direction reversal.
inline BifurcationEvent locate_fold(const Branch& branch, std::size_t bracket_index, int sigma,
                                    const LatticeSpec& spec, const ContinuationConfig& config = {}) {
  if (bracket_index + 1 >= branch.points.size()) throw std::invalid_argument("locate_fold: bad bracket index");
  detail::ArclengthSystem sys{spec, branch.symmetry, sigma};
  const Eigen::Index m = sys.m();
  Eigen::VectorXd ua = detail::pack_point(sys, branch.points[bracket_index]);
  Eigen::VectorXd ub = detail::pack_point(sys, branch.points[bracket_index + 1]);
  const Eigen::VectorXd dir = ub - ua;
  const double slope_a = sys.tangent(ua, &dir)[m + 1];
  const double slope_b = sys.tangent(ub, &dir)[m + 1];
  if (slope_a * slope_b > 0.0) throw std::invalid_argument("locate_fold: bracket has no eta-direction reversal");
  double sa = slope_a;
  for (int it = 0; it < 200 && std::abs(ub[m + 1] - ua[m + 1]) > config.event_eta_tol; ++it) {
    const auto mid = detail::section_point(sys, ua, ub, 0.5, config.tol, 0.1 * config.q_boundary);
    if (!mid) break;
    const double sm = sys.tangent(*mid, &dir)[m + 1];
    if (sa * sm <= 0.0) ub = *mid;
    else {
      ua = *mid;
      sa = sm;
    }
  }
  BifurcationEvent ev = detail::finish_event(sys, 0.5 * (ua + ub), BifurcationEvent::Kind::fold);
  return ev;
}

/// Switch onto the branches crossing a branch point. Probe directions are
/// drawn from the null space (basis vectors, pairwise and triple
/// combinations, and null-space projections of single-site and site-pair
/// templates). Each probe is corrected with the predictor pinned along the
/// probe direction inside the symmetry class induced by the perturbed
/// state, then polished at fixed eta; seeds that fall back onto the parent
/// or duplicate one another modulo lattice symmetry are dropped.
inline std::vector<BranchSeed> branch_switch(const BifurcationEvent& event, int sigma, const LatticeSpec& spec,
                                             double perturbation = 0.05, const ContinuationConfig& config = {}) {
  if (event.kind != BifurcationEvent::Kind::branch_point)
    throw std::invalid_argument("branch_switch: event must be a branch point");
  if (event.null_directions.empty()) throw std::invalid_argument("branch_switch: event has no null direction");
  const Eigen::Index n = spec.size();
  const auto& base = event.null_directions;

  std::vector<Eigen::VectorXd> dirs;
  auto push_dir = [&](Eigen::VectorXd v) {
    if (v.norm() < 1e-8) return;
    v.normalize();
    for (const auto& w : dirs)
      if ((w - v).lpNorm<Eigen::Infinity>() < 1e-8) return;
    dirs.push_back(std::move(v));
  };
  for (const auto& v : base) {
    push_dir(v);
    push_dir(-v);
  }
  for (std::size_t i = 0; i < base.size(); ++i)
    for (std::size_t j = i + 1; j < base.size(); ++j)
      for (double s : {+1.0, -1.0}) {
        push_dir(base[i] + s * base[j]);
        push_dir(-(base[i] + s * base[j]));
      }
  if (base.size() >= 3)
    for (double s1 : {+1.0, -1.0})
      for (double s2 : {+1.0, -1.0}) {
        push_dir(base[0] + s1 * base[1] + s2 * base[2]);
        push_dir(-(base[0] + s1 * base[1] + s2 * base[2]));
      }
  // null-space projections of site and site-pair templates; these align the
  // probes with the lattice symmetry classes
  auto project = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    for (const auto& b : base) p += b.dot(v) * b;
    return p;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[i] = 1.0;
    e.array() -= 1.0 / static_cast<double>(n);
    const Eigen::VectorXd p = project(e);
    push_dir(p);
    push_dir(-p);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      Eigen::VectorXd diff = Eigen::VectorXd::Zero(n);
      diff[i] = 1.0;
      diff[j] = -1.0;
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
      sum[i] = 1.0;
      sum[j] = 1.0;
      sum.array() -= 2.0 / static_cast<double>(n);
      for (const Eigen::VectorXd* v : {&diff, &sum}) {
        const Eigen::VectorXd p = project(*v);
        push_dir(p);
        push_dir(-p);
      }
    }

  const auto perms = symmetry_permutations(spec);
  const StationaryParams params_star{sigma, event.eta_star};
  NewtonConfig ncfg;
  ncfg.tol = config.tol;

  std::vector<BranchSeed> seeds;
  for (const auto& w : dirs) {
    // joint partition of (q_star, direction): sites may only share a group
    // when both agree
    SymmetryClass cls{"custom", {}};
    for (Eigen::Index i = 0; i < n; ++i) {
      bool placed = false;
      for (auto& g : cls.groups) {
        const Eigen::Index r = g.front();
        if (std::abs(event.q_star[r] - event.q_star[i]) < 1e-9 && std::abs(w[r] - w[i]) < 1e-9) {
          g.push_back(i);
          placed = true;
          break;
        }
      }
      if (!placed) cls.groups.push_back({i});
    }
    if (!is_equitable(cls, spec)) cls = no_symmetry(spec);

    detail::ArclengthSystem sys{spec, cls, sigma};
    const Eigen::Index m = sys.m();
    Eigen::VectorXd t(m + 2);
    for (Eigen::Index g = 0; g < m; ++g) t[g] = w[cls.groups[static_cast<std::size_t>(g)].front()];
    t[m] = 0.0;
    t[m + 1] = 0.0;
    if (t.norm() < 1e-10) continue;
    t.normalize();

    Eigen::VectorXd u(m + 2);
    u.head(m) = cls.reduce(event.q_star);
    u[m] = event.omega_star;
    u[m + 1] = event.eta_star;
    const Eigen::VectorXd anchor = u + perturbation * t;
    u = anchor;
    if (!sys.correct(u, t, anchor, config.tol, 30, 0.1 * config.q_boundary)) continue;

    const NewtonResult polished =
        solve_newton_reduced(cls, u.head(m), u[m], StationaryParams{sigma, u[m + 1]}, spec, ncfg);
    if (!polished.converged) continue;
    // distinct from the parent state at the landed eta
    bool distinct = (polished.q - event.q_star).lpNorm<Eigen::Infinity>() > std::max(10.0 * config.tol, 1e-7);
    if (distinct) {
      const NewtonResult parent = solve_newton(event.q_star, event.omega_star,
                                               StationaryParams{sigma, u[m + 1]}, spec, ncfg);
      if (parent.converged && (polished.q - parent.q).lpNorm<Eigen::Infinity>() < std::max(10.0 * config.tol, 1e-7))
        distinct = false;
    }
    if (!distinct) continue;

    BranchSeed seed;
    seed.q = polished.q;
    seed.omega = polished.omega;
    seed.eta = u[m + 1];
    seed.symmetry = detect_symmetry_class(spec, polished.q);
    seed.origin = "switch@" + std::to_string(event.eta_star);
    // family-level dedup: walk an existing seed to this one's eta and
    // compare modulo the lattice symmetry group
    bool duplicate = false;
    for (const auto& other : seeds) {
      const NewtonResult walked =
          solve_newton(other.q, other.omega, StationaryParams{sigma, seed.eta}, spec, ncfg);
      if (walked.converged && orbit_distance(walked.q, seed.q, perms) < 1e-6) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) seeds.push_back(std::move(seed));
  }
  if (seeds.empty()) throw std::runtime_error("branch_switch: no distinct branch found");
  return seeds;
}

struct Diagram {
  std::vector<Branch> branches;
  std::vector<BifurcationEvent> events;
};

/// Assemble the full ground-state diagram over an eta range: trace the
/// uniform branch, detect its events, switch onto every new family and
/// recurse. Branches and events are deduplicated modulo the lattice
/// symmetry group. Seeds of one generation may be traced on up to
/// `threads` workers; results are merged in seed order, so the diagram is
/// independent of the thread count.
inline Diagram sweep_ground_diagram(const LatticeSpec& spec, int sigma, double eta_min, double eta_max,
                                    const ContinuationConfig& config = {}, int max_branches = 64,
                                    int threads = 1) {
  if (!spec.is_hypercube()) throw std::invalid_argument("sweep_ground_diagram: hypercube box required");
  Diagram diagram;
  const auto perms = symmetry_permutations(spec);
  NewtonConfig ncfg;
  ncfg.tol = config.tol;

  const auto duplicate_branch = [&](const BranchSeed& seed) {
    for (const auto& br : diagram.branches) {
      const BranchPoint* nearest = nullptr;
      for (const auto& p : br.points)
        if (!nearest || std::abs(p.eta - seed.eta) < std::abs(nearest->eta - seed.eta)) nearest = &p;
      if (!nearest || std::abs(nearest->eta - seed.eta) > 5.0 * config.step.max) continue;
      const NewtonResult walked =
          solve_newton(nearest->q, nearest->omega, StationaryParams{sigma, seed.eta}, spec, ncfg);
      if (walked.converged && orbit_distance(walked.q, seed.q, perms) < 1e-6) return true;
    }
    return false;
  };

  std::vector<BranchSeed> generation;
  {
    BranchSeed root;
    auto [q0, omega0] = symmetric_solution(spec, sigma, eta_max);
    root.q = q0;
    root.omega = omega0;
    root.eta = eta_max;
    root.symmetry = full_symmetry(spec);
    root.origin = "seed:symmetric";
    generation.push_back(std::move(root));
  }

  struct Traced {
    Branch branch;
    std::vector<BifurcationEvent> events;
    bool valid = false;
  };
  const auto trace_one = [&](const BranchSeed& seed) {
    Traced out;
    Branch down = continue_branch(seed, sigma, spec, eta_min, eta_max, config, -1);
    Branch up = continue_branch(seed, sigma, spec, eta_min, eta_max, config, +1);
    out.branch.symmetry = seed.symmetry;
    out.branch.origin = seed.origin;
    out.branch.termination = down.termination;
    out.branch.points.assign(up.points.rbegin(), up.points.rend());
    out.branch.points.insert(out.branch.points.end(), down.points.begin() + 1, down.points.end());
    if (out.branch.points.empty()) return out;
    out.events = detect_events(out.branch, sigma, spec, config);
    out.valid = true;
    return out;
  };

  while (!generation.empty() && static_cast<int>(diagram.branches.size()) < max_branches) {
    std::vector<Traced> traced(generation.size());
    if (threads > 1 && generation.size() > 1) {
      std::vector<std::thread> pool;
      std::atomic<std::size_t> cursor{0};
      const int workers = static_cast<int>(
          std::min(static_cast<std::size_t>(std::max(threads, 1)), generation.size()));
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t i = cursor.fetch_add(1); i < generation.size(); i = cursor.fetch_add(1))
            traced[i] = trace_one(generation[i]);
        });
      for (auto& th : pool) th.join();
    } else {
      for (std::size_t i = 0; i < generation.size(); ++i) traced[i] = trace_one(generation[i]);
    }

    std::vector<BranchSeed> next;
    for (std::size_t i = 0; i < generation.size(); ++i) {
      if (!traced[i].valid) continue;
      if (duplicate_branch(generation[i])) continue;
      if (static_cast<int>(diagram.branches.size()) >= max_branches) break;
      diagram.branches.push_back(traced[i].branch);
      for (const auto& ev : traced[i].events) {
        bool known = false;
        for (auto& existing : diagram.events)
          if (existing.kind == ev.kind && std::abs(existing.eta_star - ev.eta_star) < 1e-5 &&
              orbit_distance(existing.q_star, ev.q_star, perms) < 1e-4) {
            known = true;
            break;
          }
        if (known) continue;
        diagram.events.push_back(ev);
        if (ev.kind != BifurcationEvent::Kind::branch_point) continue;
        try {
          std::vector<BranchSeed> children = branch_switch(ev, sigma, spec, 0.05, config);
          diagram.events.back().branch_count = static_cast<int>(children.size()) + 1;
          for (auto& child : children) {
            if (child.eta < eta_min || child.eta > eta_max) continue;
            next.push_back(std::move(child));
          }
        } catch (const std::exception&) {
          diagram.events.back().branch_count = 1;
        }
      }
    }
    generation = std::move(next);
  }

  std::sort(diagram.events.begin(), diagram.events.end(),
            [](const BifurcationEvent& a, const BifurcationEvent& b) { return a.eta_star > b.eta_star; });
  return diagram;
}

/// State of one of the named nonlinear families at a requested eta,
/// produced by switching at the family's birth branch point and continuing
/// to the target. family is one of partial2d, partial3d_f27, partial3d_f28;
/// side selects the sub-branch relative to the family's fold ("a"/"c" for
/// the segment connected to the uniform state, "b"/"d" for the localised
/// segment).
inline NewtonResult family_state(const LatticeSpec& spec, int sigma, const std::string& family,
                                 const std::string& side, double eta_target,
                                 const ContinuationConfig& config = {}) {
  struct Recipe {
    double birth_eta;
    const char* cls;
  };
  Recipe recipe{};
  if (family == "partial2d") recipe = {-4.0, "partial2d"};
  else if (family == "partial3d_f27") recipe = {-8.0, "partial3d_f27"};
  else if (family == "partial3d_f28") recipe = {-8.0, "partial3d_f28"};
  else throw std::invalid_argument("family_state: unknown family '" + family + "'");
  const bool localized_side = (side == "b" || side == "d");
  if (!localized_side && side != "a" && side != "c")
    throw std::invalid_argument("family_state: side must be one of a, b, c, d");

  auto [q0, omega0] = symmetric_solution(spec, sigma, recipe.birth_eta);
  detail::ArclengthSystem probe{spec, full_symmetry(spec), sigma};
  Eigen::VectorXd u_star(3);
  u_star << q0[0], omega0, recipe.birth_eta;
  BifurcationEvent ev = detail::finish_event(probe, u_star, BifurcationEvent::Kind::branch_point);
  std::vector<BranchSeed> children = branch_switch(ev, sigma, spec, 0.05, config);
  const BranchSeed* chosen = nullptr;
  for (const auto& child : children)
    if (child.symmetry.label == recipe.cls) chosen = &child;
  if (!chosen) throw std::runtime_error("family_state: family not found at its birth point");

  Branch traced = continue_branch(*chosen, sigma, spec, std::min(eta_target, recipe.birth_eta) - 1.0, 0.0, config,
                                  /*direction=*/+1);
  // locate the fold (maximum eta along the trace)
  std::size_t fold_idx = 0;
  for (std::size_t i = 0; i < traced.points.size(); ++i)
    if (traced.points[i].eta > traced.points[fold_idx].eta) fold_idx = i;
  const BranchPoint* best = nullptr;
  for (std::size_t i = 0; i < traced.points.size(); ++i) {
    const bool on_localized = i > fold_idx;
    if (on_localized != localized_side) continue;
    if (!best || std::abs(traced.points[i].eta - eta_target) < std::abs(best->eta - eta_target))
      best = &traced.points[i];
  }
  if (!best || std::abs(best->eta - eta_target) > 0.5)
    throw std::runtime_error("family_state: family does not reach the requested eta");
  NewtonConfig ncfg;
  ncfg.tol = config.tol;
  NewtonResult out = solve_newton_reduced(chosen->symmetry, chosen->symmetry.reduce(best->q), best->omega,
                                          StationaryParams{sigma, eta_target}, spec, ncfg);
  if (!out.converged) throw std::runtime_error("family_state: refinement at the target eta failed");
  return out;
}

}  // namespace nmode
