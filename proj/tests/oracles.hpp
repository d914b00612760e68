#pragma once

// Independent re-derivations used as test oracles. Plain std::vector math,
// no Eigen and no library helpers except the keyed hash primitives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "tof/core_model.hpp"
#include "tof/seed.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec unit(const Vec& v) {
  const double n = std::sqrt(dot(v, v));
  Vec o(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = v[i] / n;
  return o;
}

inline Vec gaussian(std::uint64_t seed, std::uint64_t key, int d) {
  Vec g(d);
  for (int i = 0; i < d; ++i) {
    const std::uint64_t pair = std::uint64_t(i / 2);
    const double u1 = tof::unit_interval(tof::hash64(seed, key, 2 * pair));
    const double u2 = tof::unit_interval(tof::hash64(seed, key, 2 * pair + 1));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    g[i] = (i % 2 == 0) ? r * std::cos(phi) : r * std::sin(phi);
  }
  return g;
}

inline Vec target(const tof::LandscapeParams& p, int stage) {
  return unit(gaussian(tof::hash64(p.key, 0x7461726765747321ULL, std::uint64_t(stage)), p.key, p.dimension));
}

inline Vec slerp(const Vec& a, const Vec& b, double alpha) {
  const double c = std::clamp(dot(a, b), -1.0, 1.0);
  const double th = std::acos(c);
  Vec o(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    o[i] = (std::sin((1 - alpha) * th) * a[i] + std::sin(alpha * th) * b[i]) / std::sin(th);
  }
  return o;
}

inline Vec root_feature(const tof::LandscapeParams& p, std::uint64_t seed) {
  return unit(gaussian(seed, p.key, p.dimension));
}

inline Vec child_feature(const tof::LandscapeParams& p, const Vec& parent, std::uint64_t seed, int stage) {
  Vec m = slerp(parent, target(p, stage), p.pull);
  const Vec g = gaussian(seed, p.key, p.dimension);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] += p.noise_scale / std::sqrt(double(p.dimension)) * g[i];
  return unit(m);
}

inline double frame_quality(const tof::LandscapeParams& p, const Vec& f, const Vec* parent, int stage) {
  double q = dot(f, target(p, stage));
  if (parent) {
    double sq = 0;
    for (std::size_t i = 0; i < f.size(); ++i) sq += (f[i] - (*parent)[i]) * (f[i] - (*parent)[i]);
    q -= p.smoothness_penalty * sq;
  }
  return q;
}

inline int stage_of(int t, const tof::Schedule& s) {
  return t < s.stage_boundaries[0] ? 0 : (t < s.stage_boundaries[1] ? 1 : 2);
}

// Mean frame quality of the path whose i-th frame (i >= 1) is child ordinal
// choice[i-1] of frame i-1, starting from root `root`.
inline double path_quality(const tof::LandscapeParams& p, const tof::Schedule& s, std::uint64_t master,
                           int root, const std::vector<int>& choice) {
  std::uint64_t seed = tof::root_seed(master, std::uint64_t(root));
  Vec f = root_feature(p, seed);
  double total = frame_quality(p, f, nullptr, stage_of(0, s));
  for (int t = 1; t < s.depth; ++t) {
    seed = tof::child_seed(seed, std::uint64_t(choice[t - 1]), t);
    const Vec c = child_feature(p, f, seed, stage_of(t, s));
    total += frame_quality(p, c, &f, stage_of(t, s));
    f = c;
  }
  return total / s.depth;
}

// Best path quality over the unpruned tree, by plain recursion over choices.
inline double exhaustive_best(const tof::LandscapeParams& p, const tof::Schedule& s, std::uint64_t master) {
  double best = -1e300;
  std::vector<int> choice(std::size_t(std::max(0, s.depth - 1)), 0);
  auto branch = [&](int t) {
    return std::find(s.branch_at.begin(), s.branch_at.end(), t) != s.branch_at.end() ? s.branch_limit : 1;
  };
  for (int r = 0; r < s.roots; ++r) {
    auto rec = [&](auto&& self, int t) -> void {
      if (t == s.depth) {
        best = std::max(best, path_quality(p, s, master, r, choice));
        return;
      }
      for (int c = 0; c < branch(t); ++c) {
        choice[t - 1] = c;
        self(self, t + 1);
      }
    };
    rec(rec, 1);
  }
  return best;
}

// Extend calls of a ToF run under the halving rule, by direct simulation.
inline std::int64_t tof_extends_halve(const tof::Schedule& s) {
  std::int64_t k = s.roots;
  std::int64_t total = k;
  for (int t = 1; t < s.depth; ++t) {
    const bool br = std::find(s.branch_at.begin(), s.branch_at.end(), t) != s.branch_at.end();
    const std::int64_t produced = k * (br ? s.branch_limit : 1);
    total += produced;
    k = std::max<std::int64_t>(1, (produced + 1) / 2);
  }
  return total;
}

}  // namespace oracle
