#pragma once

// Tube of radius eps around a closed orbit: spatial index of orbit samples,
// overlap detection and nearest-point projection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "orbitclose/closing.hpp"
#include "orbitclose/errors.hpp"

namespace orbitclose {

/// Pair of orbit parameter intervals whose tube sections intersect. An
/// interval with t1 < t0 wraps through t = 0.
struct OverlapRegion {
  double t_a0 = 0.0, t_a1 = 0.0, t_b0 = 0.0, t_b1 = 0.0;
  double min_distance = 0.0;
};

struct ProjectionBranch {
  double t = 0.0;  // orbit parameter of the foot
  Vec foot;
  double d = 0.0;
};

struct Projection {
  Vec x;
  std::vector<ProjectionBranch> branches;
  bool outside() const { return branches.empty(); }
  bool unique() const { return branches.size() == 1; }
};

namespace detail {

struct CellHash {
  std::size_t operator()(const std::vector<std::int64_t>& k) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (auto v : k) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

inline double cyclic_gap(double a, double b, double T) {
  double d = std::fmod(std::abs(a - b), T);
  return std::min(d, T - d);
}

/// Smallest cyclic index arc covering `idx` on a ring of size N.
inline std::pair<int, int> covering_arc(std::vector<int> idx, int N) {
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  if (idx.size() == 1) return {idx[0], idx[0]};
  int best_gap = -1, best_k = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const int next = k + 1 < idx.size() ? idx[k + 1] : idx[0] + N;
    if (next - idx[k] > best_gap) {
      best_gap = next - idx[k];
      best_k = static_cast<int>(k);
    }
  }
  const int start = idx[(best_k + 1) % idx.size()];
  const int end = idx[best_k];
  return {start, end};
}

}  // namespace detail

class FlowBox {
 public:
  const ClosedOrbit& orbit() const { return *orbit_; }
  double epsilon() const { return eps_; }
  double rc_min() const { return rc_min_; }
  /// Smallest distance between orbit points at least pi * rc_min apart in arc length.
  double self_distance() const { return d_self_; }
  double v_min() const { return v_min_; }
  double v_max() const { return v_max_; }
  const std::vector<OverlapRegion>& overlaps() const { return overlaps_; }
  bool overlap_free() const { return overlaps_.empty(); }
  /// Overlap parameter intervals stay apart after removing the eps/v_max guard band.
  bool guard_bands_ok() const { return guard_ok_; }
  const std::vector<double>& sample_times() const { return ts_; }
  const std::vector<Vec>& samples() const { return xs_; }

  Projection project(std::span<const double> x) const {
    const int n = static_cast<int>(x.size());
    Projection out;
    out.x.assign(x.begin(), x.end());
    const int N = static_cast<int>(ts_.size());
    const double T = orbit_->period();
    const double reach = eps_ + spacing_;

    // candidate samples from the cells around x
    std::vector<int> cand;
    std::vector<std::int64_t> base(n), key(n);
    for (int i = 0; i < n; ++i) base[i] = static_cast<std::int64_t>(std::floor(x[i] / eps_));
    // 5^n cells cover eps plus one sample spacing
    std::vector<int> off(n, -2);
    while (true) {
      for (int i = 0; i < n; ++i) key[i] = base[i] + off[i];
      auto it = grid_.find(key);
      if (it != grid_.end()) {
        for (int k : it->second) {
          if (detail::vec_dist(xs_[k], out.x) < reach) cand.push_back(k);
        }
      }
      int i = 0;
      while (i < n && ++off[i] > 2) off[i++] = -2;
      if (i == n) break;
    }
    if (cand.empty()) return out;
    std::sort(cand.begin(), cand.end());

    // contiguous index runs are separate passes; one foot per run
    std::vector<std::vector<int>> runs;
    for (int k : cand) {
      if (runs.empty() || k != runs.back().back() + 1) runs.push_back({});
      runs.back().push_back(k);
    }
    if (runs.size() > 1 && runs.front().front() == 0 && runs.back().back() == N - 1) {
      runs.front().insert(runs.front().begin(), runs.back().begin(), runs.back().end());
      runs.pop_back();
    }

    std::vector<ProjectionBranch> found;
    for (const auto& run : runs) {
      int best = run[0];
      for (int k : run) {
        if (detail::vec_dist(xs_[k], out.x) < detail::vec_dist(xs_[best], out.x)) best = k;
      }
      auto br = refine_foot(out.x, ts_[best]);
      if (br && br->d < eps_) found.push_back(*br);
    }

    // same geometric foot found twice: keep the closer one
    std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    const double guard = eps_ / v_max_;
    for (const auto& b : found) {
      bool merged = false;
      for (auto& kept : out.branches) {
        if (detail::cyclic_gap(kept.t, b.t, T) <= guard) {
          if (b.d < kept.d) kept = b;
          merged = true;
          break;
        }
      }
      if (!merged) out.branches.push_back(b);
    }
    return out;
  }

 private:
  friend FlowBox build_flowbox(const ClosedOrbit&, double);

  std::optional<ProjectionBranch> refine_foot(const Vec& x, double t0) const {
    const double T = orbit_->period();
    const int n = static_cast<int>(x.size());
    const double dt_max = 2.0 * T / static_cast<double>(ts_.size());
    double t = t0;
    bool converged = false;
    for (int it = 0; it < 60; ++it) {
      const auto d = orbit_->derivatives(t, 2);
      double g = 0.0, gp = 0.0;
      for (int i = 0; i < n; ++i) {
        const double r = d[0][i] - x[i];
        g += r * d[1][i];
        gp += d[1][i] * d[1][i] + r * d[2][i];
      }
      if (!(gp > 0.0)) return std::nullopt;  // not a local minimum
      const double step = std::clamp(g / gp, -dt_max, dt_max);
      t -= step;
      if (std::abs(step) <= 1e-12 * std::max(1.0, T)) {
        converged = true;
        break;
      }
    }
    if (!converged) return std::nullopt;
    t = std::fmod(t, T);
    if (t < 0.0) t += T;
    ProjectionBranch b;
    b.t = t;
    b.foot = orbit_->position(t);
    b.d = detail::vec_dist(b.foot, x);
    return b;
  }

  std::shared_ptr<const ClosedOrbit> orbit_;
  double eps_ = 0.0, rc_min_ = 0.0, d_self_ = 0.0, v_min_ = 0.0, v_max_ = 0.0;
  double spacing_ = 0.0;  // largest chord between consecutive samples
  bool guard_ok_ = true;
  std::vector<double> ts_;
  std::vector<Vec> xs_;
  std::unordered_map<std::vector<std::int64_t>, std::vector<int>, detail::CellHash> grid_;
  std::vector<OverlapRegion> overlaps_;
};

namespace detail {

inline std::vector<Vec> sample_curve(const ParametrizedCurve& c, int N, std::vector<double>& ts) {
  ts.resize(N);
  std::vector<Vec> xs(N);
  for (int k = 0; k < N; ++k) {
    ts[k] = c.period() * k / N;
    xs[k] = c.position(ts[k]);
  }
  return xs;
}

/// min distance between samples at least `arc_gap` apart along the curve.
inline double self_distance(const std::vector<Vec>& xs, double arc_gap) {
  const int N = static_cast<int>(xs.size());
  std::vector<double> s(N + 1, 0.0);
  for (int k = 0; k < N; ++k) s[k + 1] = s[k] + vec_dist(xs[k], xs[(k + 1) % N]);
  const double total = s[N];
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < N; ++i) {
    for (int j = i + 1; j < N; ++j) {
      const double a = s[j] - s[i];
      if (std::min(a, total - a) < arc_gap) continue;
      best = std::min(best, vec_dist(xs[i], xs[j]));
    }
  }
  return best;
}

}  // namespace detail

/// Builds the tube of radius eps around `orbit`; eps <= 0 selects
/// min(Rc_min, self_distance / 2) / 2.
inline FlowBox build_flowbox(const ClosedOrbit& orbit, double eps) {
  if (orbit.manifold().kind() != ManifoldKind::euclidean) {
    throw ManifoldUnsupported("flow boxes are built in euclidean charts only");
  }
  FlowBox box;
  box.orbit_ = std::make_shared<const ClosedOrbit>(orbit);
  box.rc_min_ = curvature_radius(orbit).rc_min;
  box.v_min_ = orbit.v_min();
  box.v_max_ = orbit.v_max();
  const double T = orbit.period();

  {
    std::vector<double> ts;
    const auto xs = detail::sample_curve(orbit, 3000, ts);
    box.d_self_ = detail::self_distance(xs, std::numbers::pi * box.rc_min_);
  }
  if (eps <= 0.0) {
    eps = 0.5 * std::min(box.rc_min_, 0.5 * box.d_self_);
  } else if (eps >= box.rc_min_) {
    throw RadiusTooLarge("tube radius " + std::to_string(eps) + " is not below the minimal curvature radius " +
                         std::to_string(box.rc_min_));
  }
  box.eps_ = eps;

  const double length = T * box.v_max_;
  const int N = static_cast<int>(std::clamp(std::ceil(length / (0.25 * eps)), 2000.0, 200000.0));
  box.xs_ = detail::sample_curve(orbit, N, box.ts_);
  const int n = orbit.manifold().dimension();
  for (int k = 0; k < N; ++k) {
    box.spacing_ = std::max(box.spacing_, detail::vec_dist(box.xs_[k], box.xs_[(k + 1) % N]));
    std::vector<std::int64_t> key(n);
    for (int i = 0; i < n; ++i) key[i] = static_cast<std::int64_t>(std::floor(box.xs_[k][i] / eps));
    box.grid_[key].push_back(k);
  }

  // local run of each sample: consecutive samples before the curve leaves the 2 eps ball
  std::vector<int> fwd(N), bwd(N);
  for (int i = 0; i < N; ++i) {
    int k = 0;
    while (k < N - 1 && detail::vec_dist(box.xs_[(i + k + 1) % N], box.xs_[i]) < 2 * eps) ++k;
    fwd[i] = k;
    k = 0;
    while (k < N - 1 && detail::vec_dist(box.xs_[((i - k - 1) % N + N) % N], box.xs_[i]) < 2 * eps) ++k;
    bwd[i] = k;
  }

  const double guard = eps / box.v_max_;
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::int64_t> base(n), key(n);
  for (int i = 0; i < N; ++i) {
    for (int d = 0; d < n; ++d) base[d] = static_cast<std::int64_t>(std::floor(box.xs_[i][d] / eps));
    std::vector<int> off(n, -2);
    while (true) {
      for (int d = 0; d < n; ++d) key[d] = base[d] + off[d];
      auto it = box.grid_.find(key);
      if (it != box.grid_.end()) {
        for (int j : it->second) {
          if (j <= i) continue;
          const int ahead = j - i, behind = N - ahead;
          if (ahead <= fwd[i] || behind <= bwd[i]) continue;
          if (detail::cyclic_gap(box.ts_[i], box.ts_[j], T) <= guard) continue;
          if (detail::vec_dist(box.xs_[i], box.xs_[j]) < 2 * eps) pairs.emplace_back(i, j);
        }
      }
      int d = 0;
      while (d < n && ++off[d] > 2) off[d++] = -2;
      if (d == n) break;
    }
  }

  // cluster neighbouring pairs into regions
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> parent(pairs.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> root = [&](int a) { return parent[a] == a ? a : parent[a] = root(parent[a]); };
  auto index_of = [&](int i, int j) -> int {
    auto it = std::lower_bound(pairs.begin(), pairs.end(), std::make_pair(i, j));
    return it != pairs.end() && *it == std::make_pair(i, j) ? static_cast<int>(it - pairs.begin()) : -1;
  };
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const int q = index_of((pairs[p].first + di + N) % N, (pairs[p].second + dj + N) % N);
        if (q >= 0) parent[root(q)] = root(static_cast<int>(p));
      }
    }
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t p = 0; p < pairs.size(); ++p) groups[root(static_cast<int>(p))].push_back(p);
  for (const auto& [r, members] : groups) {
    std::vector<int> ia, ib;
    double dmin = std::numeric_limits<double>::infinity();
    for (auto p : members) {
      ia.push_back(pairs[p].first);
      ib.push_back(pairs[p].second);
      dmin = std::min(dmin, detail::vec_dist(box.xs_[pairs[p].first], box.xs_[pairs[p].second]));
    }
    const auto a = detail::covering_arc(ia, N);
    const auto b = detail::covering_arc(ib, N);
    OverlapRegion reg{box.ts_[a.first], box.ts_[a.second], box.ts_[b.first], box.ts_[b.second], dmin};
    box.overlaps_.push_back(reg);
  }
  std::sort(box.overlaps_.begin(), box.overlaps_.end(),
            [](const auto& x, const auto& y) { return std::tie(x.t_a0, x.t_b0) < std::tie(y.t_a0, y.t_b0); });

  // guard band check: interval ends of the two sides stay more than eps/v_max apart
  for (const auto& reg : box.overlaps_) {
    for (double ta : {reg.t_a0, reg.t_a1}) {
      for (double tb : {reg.t_b0, reg.t_b1}) {
        if (detail::cyclic_gap(ta, tb, T) <= guard) box.guard_ok_ = false;
      }
    }
  }
  return box;
}

}  // namespace orbitclose
