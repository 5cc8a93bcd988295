#pragma once

// Radial single-well profiles (analytic callbacks or monotone-cubic
// interpolated tables), the lattice potential they generate, the
// adjacent-well tunnelling action S0 by adaptive quadrature, the harmonic
// ground-energy estimate, the Gaussian effective-nonlinearity constant and
// wavefunction reconstruction on sampling grids.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nmode/lattice.hpp"
#include "nmode/stationary.hpp"

namespace nmode {

/// Radial well profile f(r): non-positive, monotone non-decreasing,
/// f(0) < 0, f'(0+) = 0, f''(0) > 0, vanishing for r >= support radius.
class WellProfile {
 public:
  /// Analytic profile; the invariants are checked on a sampling grid.
  static WellProfile analytic(std::function<double(double)> f, double support_radius) {
    WellProfile p(std::move(f), support_radius);
    p.validate();
    return p;
  }

  /// Escape hatch for degenerate test fixtures; skips the invariant checks.
  static WellProfile analytic_unvalidated(std::function<double(double)> f, double support_radius) {
    return WellProfile(std::move(f), support_radius);
  }

  /// Monotone cubic (Fritsch-Carlson) interpolation through samples
  /// (r_k, f_k); r must start at 0 and increase, f must end at 0.
  static WellProfile from_table(std::vector<double> r, std::vector<double> f) {
    if (r.size() != f.size() || r.size() < 4) throw std::invalid_argument("WellProfile: need >= 4 samples");
    if (r.front() != 0.0) throw std::invalid_argument("WellProfile: table must start at r = 0");
    for (std::size_t k = 1; k < r.size(); ++k)
      if (!(r[k] > r[k - 1])) throw std::invalid_argument("WellProfile: radii must increase");
    if (f.back() != 0.0) throw std::invalid_argument("WellProfile: table must reach 0 at its end");
    WellProfile p;
    p.table_r_ = std::move(r);
    p.table_f_ = std::move(f);
    p.slopes_ = pchip_slopes(p.table_r_, p.table_f_);
    // support radius: first sample from which the profile stays at zero
    std::size_t k = p.table_f_.size();
    while (k > 1 && p.table_f_[k - 2] == 0.0) --k;
    p.support_radius_ = p.table_r_[k - 1];
    p.validate();
    return p;
  }

  double value(double r) const {
    if (r < 0.0) throw std::domain_error("WellProfile: negative radius");
    if (r >= support_radius_) return 0.0;
    return table_r_.empty() ? f_(r) : eval_table(r);
  }

  double depth() const { return value(0.0); }
  double support_radius() const { return support_radius_; }

  /// mu = f''(0) / 2, from a one-sided second difference.
  double curvature_mu() const {
    if (!table_r_.empty()) {
      const double x0 = table_r_[0], x1 = table_r_[1], x2 = table_r_[2];
      const double f0 = table_f_[0], f1 = table_f_[1], f2 = table_f_[2];
      const double second = 2.0 * (f0 / ((x0 - x1) * (x0 - x2)) + f1 / ((x1 - x0) * (x1 - x2)) +
                                   f2 / ((x2 - x0) * (x2 - x1)));
      return 0.5 * second;
    }
    const double h = 1e-4 * support_radius_;
    const double second =
        (2.0 * f_(0.0) - 5.0 * f_(h) + 4.0 * f_(2.0 * h) - f_(3.0 * h)) / (h * h);
    return 0.5 * second;
  }

 private:
  WellProfile() = default;
  WellProfile(std::function<double(double)> f, double support_radius)
      : f_(std::move(f)), support_radius_(support_radius) {
    if (!(support_radius_ > 0.0)) throw std::invalid_argument("WellProfile: support radius must be positive");
  }

  void validate() const {
    if (!(value(0.0) < 0.0)) throw std::invalid_argument("WellProfile: depth f(0) must be negative");
    const int samples = 512;
    double prev = value(0.0);
    for (int k = 1; k <= samples; ++k) {
      const double r = support_radius_ * k / samples;
      const double v = value(r);
      if (v > 1e-12) throw std::invalid_argument("WellProfile: profile must be non-positive");
      if (v + 1e-12 < prev) throw std::invalid_argument("WellProfile: profile must be monotone non-decreasing");
      prev = v;
    }
    double slope0;
    if (!table_r_.empty()) {
      const double x0 = table_r_[0], x1 = table_r_[1], x2 = table_r_[2];
      const double f0 = table_f_[0], f1 = table_f_[1], f2 = table_f_[2];
      slope0 = f0 * (2.0 * x0 - x1 - x2) / ((x0 - x1) * (x0 - x2)) +
               f1 * (x0 - x2) / ((x1 - x0) * (x1 - x2)) + f2 * (x0 - x1) / ((x2 - x0) * (x2 - x1));
    } else {
      const double h = 1e-5 * support_radius_;
      slope0 = (-3.0 * f_(0.0) + 4.0 * f_(h) - f_(2.0 * h)) / (2.0 * h);
    }
    if (std::abs(slope0) > 1e-8) throw std::invalid_argument("WellProfile: f'(0+) must vanish");
    if (!(curvature_mu() > 0.0)) throw std::invalid_argument("WellProfile: f''(0) must be positive");
  }

  static std::vector<double> pchip_slopes(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::vector<double> h(n - 1), delta(n - 1), m(n);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      h[k] = x[k + 1] - x[k];
      delta[k] = (y[k + 1] - y[k]) / h[k];
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
      if (delta[k - 1] * delta[k] <= 0.0) {
        m[k] = 0.0;
      } else {
        const double w1 = 2.0 * h[k] + h[k - 1];
        const double w2 = h[k] + 2.0 * h[k - 1];
        m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
      }
    }
    auto endpoint = [](double h0, double h1, double d0, double d1) {
      double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
      if (s * d0 <= 0.0) s = 0.0;
      else if (d0 * d1 <= 0.0 && std::abs(s) > 3.0 * std::abs(d0)) s = 3.0 * d0;
      return s;
    };
    m[0] = endpoint(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = endpoint(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    return m;
  }

  double eval_table(double r) const {
    if (r <= table_r_.front()) return table_f_.front();
    if (r >= table_r_.back()) return table_f_.back();
    std::size_t lo = 0, hi = table_r_.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (table_r_[mid] <= r) lo = mid;
      else hi = mid;
    }
    const double h = table_r_[hi] - table_r_[lo];
    const double s = (r - table_r_[lo]) / h;
    const double y0 = table_f_[lo], y1 = table_f_[hi];
    const double m0 = slopes_[lo] * h, m1 = slopes_[hi] * h;
    const double s2 = s * s, s3 = s2 * s;
    return (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 +
           (s3 - s2) * m1;
  }

  std::function<double(double)> f_;
  double support_radius_ = 0.0;
  std::vector<double> table_r_, table_f_;
  std::vector<double> slopes_;
};

/// Lattice geometry: wells of one profile at x_j = j * b. The separation
/// b > 2a keeps the supports disjoint.
struct LatticeGeometry {
  double spacing = 0.0;
  LatticeSpec spec;
};

inline Eigen::VectorXd well_center(const LatticeGeometry& geom, std::size_t site) {
  const auto& j = geom.spec.sites().at(site);
  Eigen::VectorXd c(geom.spec.dims());
  for (int m = 0; m < geom.spec.dims(); ++m) c[m] = geom.spacing * j[static_cast<std::size_t>(m)];
  return c;
}

/// Sum of single-well values over all lattice sites; at most one term is
/// nonzero when b > 2a.
inline double lattice_potential_eval(const Eigen::VectorXd& x, const LatticeGeometry& geom,
                                     const WellProfile& profile) {
  if (x.size() != geom.spec.dims()) throw std::invalid_argument("lattice_potential_eval: dimension mismatch");
  double v = 0.0;
  for (std::size_t s = 0; s < geom.spec.sites().size(); ++s) {
    const double r = (x - well_center(geom, s)).norm();
    if (r < profile.support_radius()) v += profile.value(r);
  }
  return v;
}

namespace detail {

/// Adaptive Gauss-Kronrod 7-15 on [a, b].
inline std::pair<double, double> gk15(const std::function<double(double)>& g, double a, double b) {
  static const double xk[8] = {0.991455371120813, 0.949107912342759, 0.864864423359769, 0.741531185599394,
                               0.586087235467691, 0.405845151377397, 0.207784955007898, 0.0};
  static const double wk[8] = {0.022935322010529, 0.063092092629979, 0.104790010322250, 0.140653259715525,
                               0.169004726639267, 0.190350578064785, 0.204432940075298, 0.209482141084728};
  static const double wg[4] = {0.129484966168870, 0.279705391489277, 0.381830050505119, 0.417959183673469};
  const double c = 0.5 * (a + b), hl = 0.5 * (b - a);
  double k15 = 0.0, g7 = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double f1 = g(c - hl * xk[i]);
    const double f2 = (i == 7) ? f1 : g(c + hl * xk[i]);
    const double pair_sum = (i == 7) ? f1 : f1 + f2;
    k15 += wk[i] * pair_sum;
    if (i % 2 == 1) g7 += wg[i / 2] * pair_sum;
    if (i == 7) g7 += wg[3] * f1;
  }
  return {k15 * hl, std::abs((k15 - g7) * hl)};
}

inline void adaptive_gk(const std::function<double(double)>& g, double a, double b, double tol_abs, int depth,
                        double& total, double& err_total) {
  const auto [val, err] = gk15(g, a, b);
  if (err <= tol_abs || depth >= 48 || (b - a) < 1e-15 * std::abs(b)) {
    total += val;
    err_total += err;
    return;
  }
  const double mid = 0.5 * (a + b);
  adaptive_gk(g, a, mid, 0.5 * tol_abs, depth + 1, total, err_total);
  adaptive_gk(g, mid, b, 0.5 * tol_abs, depth + 1, total, err_total);
}

}  // namespace detail

/// Tunnelling action between adjacent wells,
/// S0 = 2 * integral_0^{b/2} sqrt(f(r) - f(0)) dr, by adaptive quadrature
/// with relative error below 1e-10. The integration is split at the
/// support radius, where the integrand has a kink.
inline double agmon_s0(const WellProfile& profile, double b, double* error_estimate = nullptr) {
  if (!(b > 2.0 * profile.support_radius()))
    throw std::invalid_argument("agmon_s0: spacing must exceed twice the support radius");
  const double f0 = profile.depth();
  auto integrand = [&](double r) {
    const double arg = profile.value(r) - f0;
    if (arg < -1e-12) throw std::domain_error("agmon_s0: integrand negative; profile is not monotone");
    return std::sqrt(std::max(arg, 0.0));
  };
  const double half = 0.5 * b;
  const double a = profile.support_radius();
  // crude magnitude for the absolute tolerance target
  const double scale = std::max(std::sqrt(-f0) * half, 1e-300);
  double total = 0.0, err = 0.0;
  detail::adaptive_gk(integrand, 0.0, std::min(a, half), 0.5e-10 * scale, 0, total, err);
  if (half > a) detail::adaptive_gk(integrand, a, half, 0.5e-10 * scale, 0, total, err);
  if (error_estimate) *error_estimate = 2.0 * err;
  return 2.0 * total;
}

/// Leading-order ground energy of the single well: v_min + d sqrt(mu) hbar.
inline double harmonic_ground_energy(const WellProfile& profile, double hbar, int d) {
  if (!(hbar > 0.0)) throw std::invalid_argument("harmonic_ground_energy: hbar must be positive");
  const double mu = profile.curvature_mu();
  if (!(mu > 0.0)) throw std::invalid_argument("harmonic_ground_energy: f''(0) must be positive");
  return profile.depth() + d * std::sqrt(mu) * hbar;
}

/// L^{2 sigma + 2} norm (to that power) of the normalised Gaussian ground
/// state approximant: mu^{d sigma/4} (pi hbar)^{-d sigma/2} (sigma+1)^{-d/2}.
/// This is the leading-order value of the effective nonlinear constant c.
inline double effective_nonlinearity_c(const WellProfile& profile, double hbar, int d, int sigma) {
  if (!(hbar > 0.0)) throw std::invalid_argument("effective_nonlinearity_c: hbar must be positive");
  if (sigma < 0) throw std::invalid_argument("effective_nonlinearity_c: sigma must be >= 0");
  const double mu = profile.curvature_mu();
  return std::pow(mu, 0.25 * d * sigma) * std::pow(M_PI * hbar, -0.5 * d * sigma) *
         std::pow(sigma + 1.0, -0.5 * d);
}

/// Axis-aligned sampling grid; values are stored row-major with the last
/// axis fastest.
struct GridSpec {
  Eigen::VectorXd origin;
  Eigen::VectorXd step;
  std::vector<int> shape;

  Eigen::Index total() const {
    Eigen::Index n = 1;
    for (int s : shape) n *= s;
    return n;
  }

  double cell_volume() const {
    double v = 1.0;
    for (Eigen::Index m = 0; m < step.size(); ++m) v *= step[m];
    return v;
  }

  Eigen::VectorXd point(Eigen::Index flat) const {
    Eigen::VectorXd x(origin.size());
    for (int m = static_cast<int>(shape.size()) - 1; m >= 0; --m) {
      const Eigen::Index extent = shape[static_cast<std::size_t>(m)];
      x[m] = origin[m] + step[m] * static_cast<double>(flat % extent);
      flat /= extent;
    }
    return x;
  }
};

/// Uniform grid covering the lattice with the given margin and a fixed
/// number of samples per axis.
inline GridSpec cover_lattice(const LatticeGeometry& geom, double margin, int samples_per_axis) {
  const int d = geom.spec.dims();
  GridSpec grid;
  grid.origin.resize(d);
  grid.step.resize(d);
  grid.shape.assign(static_cast<std::size_t>(d), samples_per_axis);
  for (int m = 0; m < d; ++m) {
    const auto& bm = geom.spec.bounds()[static_cast<std::size_t>(m)];
    const double lo = geom.spacing * bm.lo - margin;
    const double hi = geom.spacing * bm.hi + margin;
    grid.origin[m] = lo;
    grid.step[m] = (hi - lo) / (samples_per_axis - 1);
  }
  return grid;
}

struct ScalarField {
  GridSpec grid;
  Eigen::VectorXd values;  // |psi| samples
};

/// |sum_j sqrt(q_j) e^{i theta_j} phi_j(x)| on the grid, with phi_j the
/// normalised Gaussian of width set by (mu, hbar) centred on well j.
inline ScalarField reconstruct_wavefunction(const ModeState& state, const LatticeGeometry& geom,
                                            const WellProfile& profile, double hbar, const GridSpec& grid) {
  if (state.q.size() != geom.spec.size())
    throw std::invalid_argument("reconstruct_wavefunction: state size does not match lattice");
  const int d = geom.spec.dims();
  const double mu = profile.curvature_mu();
  const double sqrt_mu = std::sqrt(mu);
  const double amplitude = std::pow(mu, 0.125 * d) * std::pow(M_PI * hbar, -0.25 * d);
  std::vector<Eigen::VectorXd> centers;
  for (std::size_t s = 0; s < static_cast<std::size_t>(geom.spec.size()); ++s)
    centers.push_back(well_center(geom, s));

  ScalarField field;
  field.grid = grid;
  field.values.resize(grid.total());
  for (Eigen::Index i = 0; i < grid.total(); ++i) {
    const Eigen::VectorXd x = grid.point(i);
    std::complex<double> psi(0.0, 0.0);
    for (Eigen::Index j = 0; j < geom.spec.size(); ++j) {
      const double r2 = (x - centers[static_cast<std::size_t>(j)]).squaredNorm();
      psi += std::sqrt(state.q[j]) * std::exp(std::complex<double>(0.0, state.theta[j])) * amplitude *
             std::exp(-sqrt_mu * r2 / (2.0 * hbar));
    }
    field.values[i] = std::abs(psi);
  }
  return field;
}

/// Grid-sum estimate of the squared-field mass (approximates 1 when the
/// grid resolves the Gaussians).
inline double squared_mass(const ScalarField& field) {
  return field.values.squaredNorm() * field.grid.cell_volume();
}

/// Fraction of the squared mass within Euclidean distance radius of center.
inline double mass_fraction_within(const ScalarField& field, const Eigen::VectorXd& center, double radius) {
  double inside = 0.0, total = 0.0;
  for (Eigen::Index i = 0; i < field.grid.total(); ++i) {
    const double w = field.values[i] * field.values[i];
    total += w;
    if ((field.grid.point(i) - center).norm() <= radius) inside += w;
  }
  if (total == 0.0) throw std::domain_error("mass_fraction_within: empty field");
  return inside / total;
}

}  // namespace nmode
