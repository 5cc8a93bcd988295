#pragma once

// Well index sets on integer boxes, nearest-neighbour adjacency and the
// dense hopping matrix, plus its spectrum (recursive rule for hypercube
// boxes, clustered dense eigensolve for everything else).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmode {

using MultiIndex = std::vector<int>;

struct AxisBounds {
  int lo = 0;
  int hi = 0;
};

/// Integer box J = { j : lo_m <= j_m <= hi_m }. Sites are enumerated
/// lexicographically with the first axis varying slowest; the order is
/// fixed at construction and stable across runs.
class LatticeSpec {
 public:
  explicit LatticeSpec(std::vector<AxisBounds> bounds) : bounds_(std::move(bounds)) {
    if (bounds_.empty()) throw std::invalid_argument("LatticeSpec: dims must be >= 1");
    for (const auto& b : bounds_) {
      if (b.lo > b.hi) throw std::invalid_argument("LatticeSpec: axis bounds require lo <= hi");
    }
    MultiIndex j(bounds_.size());
    for (std::size_t m = 0; m < bounds_.size(); ++m) j[m] = bounds_[m].lo;
    for (;;) {
      sites_.push_back(j);
      int m = static_cast<int>(bounds_.size()) - 1;
      while (m >= 0) {
        if (++j[m] <= bounds_[m].hi) break;
        j[m] = bounds_[m].lo;
        --m;
      }
      if (m < 0) break;
    }
  }

  /// The 2^d-well box (0,1)^d.
  static LatticeSpec hypercube(int dims) {
    if (dims < 1) throw std::invalid_argument("hypercube: dims must be >= 1");
    return LatticeSpec(std::vector<AxisBounds>(static_cast<std::size_t>(dims), AxisBounds{0, 1}));
  }

  int dims() const { return static_cast<int>(bounds_.size()); }
  const std::vector<AxisBounds>& bounds() const { return bounds_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(sites_.size()); }
  const std::vector<MultiIndex>& sites() const { return sites_; }

  bool is_hypercube() const {
    return std::all_of(bounds_.begin(), bounds_.end(),
                       [](const AxisBounds& b) { return b.lo == 0 && b.hi == 1; });
  }

 private:
  std::vector<AxisBounds> bounds_;
  std::vector<MultiIndex> sites_;
};

inline int l1_distance(const MultiIndex& j, const MultiIndex& l) {
  if (j.size() != l.size()) throw std::invalid_argument("l1_distance: dimension mismatch");
  int s = 0;
  for (std::size_t m = 0; m < j.size(); ++m) s += std::abs(j[m] - l[m]);
  return s;
}

/// Nearest neighbours couple exactly when the L1 distance is 1.
inline bool adjacent(const MultiIndex& j, const MultiIndex& l) { return l1_distance(j, l) == 1; }

/// Neighbour lists in site enumeration order.
inline std::vector<std::vector<Eigen::Index>> adjacency_lists(const LatticeSpec& spec) {
  const auto& sites = spec.sites();
  const Eigen::Index n = spec.size();
  std::vector<std::vector<Eigen::Index>> nbr(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n; ++k)
      if (adjacent(sites[static_cast<std::size_t>(i)], sites[static_cast<std::size_t>(k)]))
        nbr[static_cast<std::size_t>(i)].push_back(k);
  return nbr;
}

/// Dense symmetric hopping matrix: lambda_d on the diagonal, -beta on
/// nearest-neighbour pairs, zero elsewhere.
template <typename Scalar>
struct HoppingMatrixT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> entries;
  Scalar lambda_d{};
  Scalar beta{};

  Eigen::Index size() const { return entries.rows(); }
};

using HoppingMatrix = HoppingMatrixT<double>;

template <typename Scalar = double>
HoppingMatrixT<Scalar> build_hopping_matrix(const LatticeSpec& spec, Scalar lambda_d, Scalar beta) {
  if (!(beta > Scalar(0))) throw std::invalid_argument("build_hopping_matrix: beta must be positive");
  const Eigen::Index n = spec.size();
  const auto& sites = spec.sites();
  HoppingMatrixT<Scalar> t;
  t.lambda_d = lambda_d;
  t.beta = beta;
  t.entries.setZero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.entries(i, i) = lambda_d;
    for (Eigen::Index k = i + 1; k < n; ++k) {
      if (adjacent(sites[static_cast<std::size_t>(i)], sites[static_cast<std::size_t>(k)])) {
        t.entries(i, k) = -beta;
        t.entries(k, i) = -beta;
      }
    }
  }
  return t;
}

struct SpectrumLine {
  double value = 0.0;
  int multiplicity = 0;
};

/// Eigenvalues with multiplicities, sorted ascending.
using SpectrumMultiset = std::vector<SpectrumLine>;

inline Eigen::Index spectrum_size(const SpectrumMultiset& s) {
  return std::accumulate(s.begin(), s.end(), Eigen::Index(0),
                         [](Eigen::Index acc, const SpectrumLine& line) { return acc + line.multiplicity; });
}

/// Hypercube spectrum by the doubling recursion: starting from the single
/// level lambda_d, each added axis shifts every level by +-beta and adds
/// the multiplicities of coinciding results.
inline SpectrumMultiset spectrum_recursive(int d, double lambda_d, double beta) {
  if (d < 1) throw std::invalid_argument("spectrum_recursive: d must be >= 1");
  if (!(beta > 0.0)) throw std::invalid_argument("spectrum_recursive: beta must be positive");
  // track levels by the integer offset k in lambda_d + k*beta, so the
  // merge of coinciding values is exact
  std::map<long, long> mult{{0, 1}};
  for (int step = 0; step < d; ++step) {
    std::map<long, long> next;
    for (const auto& [k, m] : mult) {
      next[k - 1] += m;
      next[k + 1] += m;
    }
    mult = std::move(next);
  }
  SpectrumMultiset out;
  out.reserve(mult.size());
  for (const auto& [k, m] : mult)
    out.push_back({lambda_d + static_cast<double>(k) * beta, static_cast<int>(m)});
  return out;
}

/// Collapse a sorted list of numerically near-degenerate eigenvalues into
/// (value, multiplicity) lines; values within cluster_tol of the running
/// cluster are merged and averaged.
inline SpectrumMultiset cluster_spectrum(const Eigen::VectorXd& eigenvalues, double cluster_tol) {
  SpectrumMultiset out;
  Eigen::VectorXd ev = eigenvalues;
  std::sort(ev.begin(), ev.end());
  Eigen::Index i = 0;
  while (i < ev.size()) {
    double sum = ev[i];
    int count = 1;
    while (i + count < ev.size() && std::abs(ev[i + count] - ev[i + count - 1]) <= cluster_tol) {
      sum += ev[i + count];
      ++count;
    }
    out.push_back({sum / count, count});
    i += count;
  }
  return out;
}

/// Dense-eigensolve route for any box; degenerate levels are clustered at
/// cluster_tol (defaults to 1e-8 * beta).
template <typename Scalar = double>
SpectrumMultiset spectrum_dense(const HoppingMatrixT<Scalar>& t, double cluster_tol = -1.0) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> es(t.entries,
                                                                                          Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("spectrum_dense: eigensolver failed");
  if (cluster_tol < 0.0) cluster_tol = 1e-8 * static_cast<double>(t.beta);
  return cluster_spectrum(es.eigenvalues().template cast<double>(), cluster_tol);
}

/// Ground eigenvector of the 2^d-well hopping matrix: uniform with entries
/// 2^{-d/2}; its eigenvalue is lambda_d - d*beta.
inline Eigen::VectorXd ground_state_vector(int d) {
  if (d < 1) throw std::invalid_argument("ground_state_vector: d must be >= 1");
  const Eigen::Index n = Eigen::Index(1) << d;
  return Eigen::VectorXd::Constant(n, std::pow(2.0, -0.5 * d));
}

/// All site permutations induced by box symmetries: per-axis reflections
/// combined with permutations of axes of equal extent. For (0,1)^d this is
/// the full hypercube automorphism group of order 2^d * d!.
inline std::vector<std::vector<Eigen::Index>> symmetry_permutations(const LatticeSpec& spec) {
  const int d = spec.dims();
  const auto& sites = spec.sites();
  std::map<MultiIndex, Eigen::Index> pos;
  for (Eigen::Index i = 0; i < spec.size(); ++i) pos[sites[static_cast<std::size_t>(i)]] = i;

  std::vector<int> extent(static_cast<std::size_t>(d));
  for (int m = 0; m < d; ++m)
    extent[static_cast<std::size_t>(m)] = spec.bounds()[static_cast<std::size_t>(m)].hi -
                                          spec.bounds()[static_cast<std::size_t>(m)].lo;

  std::vector<int> axis_perm(static_cast<std::size_t>(d));
  std::iota(axis_perm.begin(), axis_perm.end(), 0);

  std::vector<std::vector<Eigen::Index>> perms;
  do {
    bool compatible = true;
    for (int m = 0; m < d; ++m)
      if (extent[static_cast<std::size_t>(axis_perm[static_cast<std::size_t>(m)])] !=
          extent[static_cast<std::size_t>(m)])
        compatible = false;
    if (!compatible) continue;
    for (unsigned flips = 0; flips < (1u << d); ++flips) {
      std::vector<Eigen::Index> p(static_cast<std::size_t>(spec.size()));
      for (Eigen::Index i = 0; i < spec.size(); ++i) {
        MultiIndex img(static_cast<std::size_t>(d));
        for (int m = 0; m < d; ++m) {
          const int src = axis_perm[static_cast<std::size_t>(m)];
          // translate to the target axis range; the extents match by the check above
          int rel = sites[static_cast<std::size_t>(i)][static_cast<std::size_t>(src)] -
                    spec.bounds()[static_cast<std::size_t>(src)].lo;
          if (flips & (1u << m)) rel = extent[static_cast<std::size_t>(m)] - rel;
          img[static_cast<std::size_t>(m)] = spec.bounds()[static_cast<std::size_t>(m)].lo + rel;
        }
        p[static_cast<std::size_t>(i)] = pos.at(img);
      }
      perms.push_back(std::move(p));
    }
  } while (std::next_permutation(axis_perm.begin(), axis_perm.end()));
  return perms;
}

/// Minimum over the symmetry group of max |q[p] - r|; zero iff q and r are
/// the same state modulo lattice symmetry.
inline double orbit_distance(const Eigen::VectorXd& q, const Eigen::VectorXd& r,
                             const std::vector<std::vector<Eigen::Index>>& perms) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : perms) {
    double dist = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i)
      dist = std::max(dist, std::abs(q[p[static_cast<std::size_t>(i)]] - r[i]));
    best = std::min(best, dist);
  }
  return best;
}

}  // namespace nmode
