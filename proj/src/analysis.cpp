#include "tof/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "tof/errors.hpp"
#include "tof/seed.hpp"

namespace tof {

std::uint64_t tree_path_count(const Schedule& schedule) {
  std::uint64_t count = static_cast<std::uint64_t>(std::max(0, schedule.roots));
  for (int t = 1; t < schedule.depth; ++t) {
    const auto b = static_cast<std::uint64_t>(branch_factor(t, schedule));
    if (count != 0 && b > std::numeric_limits<std::uint64_t>::max() / count) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    count *= b;
  }
  return count;
}

namespace {

void check_oracle_bounds(const Schedule& schedule) {
  const std::uint64_t paths = tree_path_count(schedule);
  if (paths > kOracleMaxPaths) {
    throw OracleRefused("oracle refused: the schedule has " +
                        (paths == std::numeric_limits<std::uint64_t>::max() ? std::string("more than 2^64")
                                                                            : std::to_string(paths)) +
                        " paths, above the bound of " + std::to_string(kOracleMaxPaths));
  }
}

std::vector<Stage> frame_stages(const Schedule& schedule) {
  std::vector<Stage> stages;
  for (int t = 0; t < schedule.depth; ++t) stages.push_back(stage_of_frame(t, schedule));
  return stages;
}

void offer(OracleResult& best, double score, const std::vector<std::uint64_t>& seeds) {
  ++best.paths;
  const bool better = best.best_seeds.empty() || score > best.best_score ||
                      (score == best.best_score && seeds.back() < best.best_seeds.back());
  if (better) {
    best.best_score = score;
    best.best_seeds = seeds;
  }
}

void recurse(const SyntheticLandscape& landscape, const Schedule& schedule, const std::vector<Stage>& stages,
             std::vector<Eigen::VectorXd>& features, std::vector<std::uint64_t>& seeds, OracleResult& best) {
  const int t = static_cast<int>(features.size());
  if (t == schedule.depth) {
    offer(best, landscape.path_quality(features, stages), seeds);
    return;
  }
  const int b = branch_factor(t, schedule);
  for (int m = 0; m < b; ++m) {
    const std::uint64_t seed = child_seed(seeds.back(), static_cast<std::uint64_t>(m), t);
    features.push_back(landscape.child_feature(features.back(), seed, stages[static_cast<std::size_t>(t)]));
    seeds.push_back(seed);
    recurse(landscape, schedule, stages, features, seeds, best);
    features.pop_back();
    seeds.pop_back();
  }
}

}  // namespace

OracleResult brute_force_oracle(const SyntheticLandscape& landscape, const Schedule& schedule,
                                std::uint64_t master_seed) {
  check_oracle_bounds(schedule);
  const std::vector<Stage> stages = frame_stages(schedule);
  const auto depth = static_cast<std::size_t>(schedule.depth);
  std::vector<int> radix(depth, 1);
  for (std::size_t t = 1; t < depth; ++t) radix[t] = branch_factor(static_cast<int>(t), schedule);

  OracleResult best;
  std::vector<Eigen::VectorXd> features(depth);
  std::vector<std::uint64_t> seeds(depth);
  for (int root = 0; root < schedule.roots; ++root) {
    seeds[0] = root_seed(master_seed, static_cast<std::uint64_t>(root));
    features[0] = landscape.root_feature(seeds[0]);
    std::vector<int> digit(depth, 0);
    std::size_t dirty = 1;  // first frame whose feature must be recomputed
    while (true) {
      for (std::size_t t = dirty; t < depth; ++t) {
        seeds[t] = child_seed(seeds[t - 1], static_cast<std::uint64_t>(digit[t]), static_cast<int>(t));
        features[t] = landscape.child_feature(features[t - 1], seeds[t], stages[t]);
      }
      offer(best, landscape.path_quality(features, stages), seeds);
      // advance the odometer; the deepest frame is the fastest digit
      std::size_t pos = depth;
      while (pos > 1) {
        --pos;
        if (++digit[pos] < radix[pos]) break;
        digit[pos] = 0;
        if (pos == 1) pos = 0;
      }
      if (pos == 0 || depth == 1) break;
      dirty = pos;
    }
  }
  return best;
}

OracleResult brute_force_oracle_recursive(const SyntheticLandscape& landscape, const Schedule& schedule,
                                          std::uint64_t master_seed) {
  check_oracle_bounds(schedule);
  const std::vector<Stage> stages = frame_stages(schedule);
  OracleResult best;
  for (int root = 0; root < schedule.roots; ++root) {
    std::vector<std::uint64_t> seeds{root_seed(master_seed, static_cast<std::uint64_t>(root))};
    std::vector<Eigen::VectorXd> features{landscape.root_feature(seeds[0])};
    recurse(landscape, schedule, stages, features, seeds, best);
  }
  return best;
}

CostPrediction predict_cost(const Schedule& schedule, Algorithm algorithm) {
  CostPrediction p;
  p.algorithm = algorithm;
  p.schedule = schedule;
  const std::int64_t n = schedule.roots;
  if (algorithm == Algorithm::linear) {
    for (int t = 1; t < schedule.depth; ++t) p.levels.push_back({t, n, 1, n, 0.0, n});
    p.total_extends = n * schedule.depth;
    p.asymptotic_class = "O(TN)";
  } else {
    const std::vector<std::int64_t> k = survivor_counts(schedule);
    p.total_extends = k.empty() ? 0 : k[0];
    bool branches_everywhere = schedule.depth > 1;
    for (int t = 1; t < schedule.depth; ++t) {
      const int b = branch_factor(t, schedule);
      if (b != schedule.branch_limit || b == 1) branches_everywhere = false;
      LevelCost level;
      level.t = t;
      level.k_prev = k[static_cast<std::size_t>(t - 1)];
      level.branch = b;
      level.generated = level.k_prev * b;
      level.sort_term = b * std::log2(static_cast<double>(level.generated));
      level.k_out = t == schedule.depth - 1 ? level.generated : k[static_cast<std::size_t>(t)];
      p.total_extends += level.generated;
      p.sort_cost += level.sort_term;
      p.levels.push_back(level);
    }
    p.asymptotic_class =
        (schedule.prune_rule == PruneRule::halve && !branches_everywhere) ? "O(N+T)" : "O(TN)";
  }
  p.nfe = p.total_extends * schedule.denoise_steps_per_frame * schedule.latent_temporal_length;
  return p;
}

nlohmann::json to_json(const CostPrediction& p) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& l : p.levels) {
    levels.push_back({{"t", l.t},
                      {"k_prev", l.k_prev},
                      {"b", l.branch},
                      {"generated", l.generated},
                      {"sort_term", l.sort_term},
                      {"k_out", l.k_out}});
  }
  return {{"algorithm", to_string(p.algorithm)},
          {"schedule", to_json(p.schedule)},
          {"levels", levels},
          {"total_extends", p.total_extends},
          {"nfe", p.nfe},
          {"sort_cost", p.sort_cost},
          {"asymptotic_class", p.asymptotic_class}};
}

nlohmann::json to_json(const ScalingCurve& curve) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& pt : curve.points) {
    points.push_back({{"n", pt.n}, {"best_score", pt.best_score}, {"nfe", pt.nfe}, {"extend_calls", pt.extend_calls}});
  }
  return {{"algorithm", to_string(curve.algorithm)}, {"schedule", to_json(curve.schedule)}, {"points", points}};
}

ScalingCurve curve_from_json(const nlohmann::json& doc) {
  ScalingCurve c;
  try {
    const std::string alg = doc.at("algorithm").get<std::string>();
    c.algorithm = alg == "tof" ? Algorithm::tof : (alg == "linear" ? Algorithm::linear : Algorithm::oracle);
    if (doc.contains("schedule")) c.schedule = schedule_from_json(doc.at("schedule"));
    for (const auto& pt : doc.at("points")) {
      CurvePoint p;
      p.n = pt.at("n").get<int>();
      p.best_score = pt.at("best_score").get<double>();
      p.nfe = pt.value("nfe", std::int64_t{0});
      p.extend_calls = pt.value("extend_calls", std::int64_t{0});
      c.points.push_back(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("curve JSON: ") + e.what());
  }
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    if (c.points[i].n <= c.points[i - 1].n) throw ConfigError("curve JSON: n must be strictly increasing");
  }
  return c;
}

ScalingCurve run_scaling_experiment(Algorithm algorithm, std::span<const int> n_grid, const RunConfig& base,
                                    const SearchFn& search) {
  if (algorithm == Algorithm::oracle) throw ConfigError("scaling experiments run linear or tof search");
  ScalingCurve curve;
  curve.algorithm = algorithm;
  curve.schedule = base.schedule;
  int previous = 0;
  for (int n : n_grid) {
    if (n <= previous) throw ConfigError("scaling grid must be strictly increasing and positive");
    previous = n;
    RunConfig cfg = base;
    cfg.algorithm = algorithm;
    cfg.schedule.roots = n;
    const SearchResult r = search(cfg);
    const LedgerTotals totals = r.ledger.totals();
    curve.points.push_back({n, r.best_score(), totals.nfe, totals.extend_calls});
  }
  return curve;
}

int linear_roots_for_budget(std::int64_t nfe, const Schedule& schedule) {
  const std::int64_t per_path = std::int64_t{schedule.depth} * schedule.denoise_steps_per_frame *
                                schedule.latent_temporal_length;
  return static_cast<int>(std::max<std::int64_t>(1, nfe / per_path));
}

// Geometric fit

namespace {

struct InnerFit {
  double s_inf = 0.0;
  double amplitude = 0.0;
  double rss = std::numeric_limits<double>::infinity();
};

InnerFit fit_at(double r, std::span<const double> n, std::span<const double> s) {
  const auto m = static_cast<double>(n.size());
  std::vector<double> x(n.size());
  double xm = 0.0, sm = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    x[i] = std::pow(r, n[i]);
    xm += x[i];
    sm += s[i];
  }
  xm /= m;
  sm /= m;
  double sxx = 0.0, sxs = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    sxx += (x[i] - xm) * (x[i] - xm);
    sxs += (x[i] - xm) * (s[i] - sm);
  }
  InnerFit f;
  if (sxx <= 0.0) return f;
  // s = s_inf - a x  =>  slope on x is -a
  f.amplitude = -sxs / sxx;
  f.s_inf = sm + f.amplitude * xm;
  f.rss = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double e = s[i] - (f.s_inf - f.amplitude * x[i]);
    f.rss += e * e;
  }
  return f;
}

}  // namespace

GeometricFit fit_geometric_decay(std::span<const double> n, std::span<const double> s) {
  if (n.size() != s.size()) throw PreconditionError("fit: one score per sample count required");
  if (n.size() < 4) throw PreconditionError("fit: at least 4 points required");
  GeometricFit out;
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  const double scale = std::max({1.0, std::abs(*lo), std::abs(*hi)});
  if (*hi - *lo <= 1e-12 * scale) {
    double mean = 0.0;
    for (double v : s) mean += v;
    out.s_inf = mean / static_cast<double>(s.size());
    out.amplitude = 0.0;
    out.degenerate = true;
    double rss = 0.0;
    for (double v : s) rss += (v - out.s_inf) * (v - out.s_inf);
    out.residual_rms = std::sqrt(rss / static_cast<double>(s.size()));
    return out;
  }

  constexpr int kGrid = 512;
  double best_r = 0.0;
  InnerFit best;
  for (int j = 1; j < kGrid; ++j) {
    const double r = static_cast<double>(j) / kGrid;
    const InnerFit f = fit_at(r, n, s);
    if (f.rss < best.rss) {
      best = f;
      best_r = r;
    }
  }
  if (!std::isfinite(best.rss)) {
    out.degenerate = true;
    return out;
  }

  // golden-section refinement on the bracket around the best grid point
  double a = std::max(best_r - 1.0 / kGrid, 1e-9);
  double b = std::min(best_r + 1.0 / kGrid, 1.0 - 1e-9);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  InnerFit fc = fit_at(c, n, s), fd = fit_at(d, n, s);
  for (int it = 0; it < 200 && b - a > 1e-14; ++it) {
    if (fc.rss < fd.rss) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = fit_at(c, n, s);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = fit_at(d, n, s);
    }
  }
  const double r_ref = 0.5 * (a + b);
  const InnerFit refined = fit_at(r_ref, n, s);
  if (refined.rss < best.rss) {
    best = refined;
    best_r = r_ref;
  }
  out.s_inf = best.s_inf;
  out.amplitude = best.amplitude;
  out.ratio = best_r;
  out.residual_rms = std::sqrt(best.rss / static_cast<double>(n.size()));
  return out;
}

GeometricFit fit_geometric_decay(const ScalingCurve& curve) {
  std::vector<double> n, s;
  for (const auto& p : curve.points) {
    n.push_back(p.n);
    s.push_back(p.best_score);
  }
  return fit_geometric_decay(n, s);
}

nlohmann::json to_json(const GeometricFit& f) {
  return {{"s_inf", f.s_inf},
          {"amplitude", f.amplitude},
          {"ratio", f.ratio ? nlohmann::json(*f.ratio) : nlohmann::json(nullptr)},
          {"residual_rms", f.residual_rms},
          {"degenerate", f.degenerate}};
}

Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  if (design.rows() != y.size()) throw PreconditionError("least squares: row count mismatch");
  return design.colPivHouseholderQr().solve(y);
}

// Export

std::string curve_table(std::span<const ScalingCurve> curves) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "algo" << std::right << std::setw(6) << "n" << std::setw(12) << "nfe"
     << std::setw(10) << "extends" << std::setw(16) << "best_score" << "\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      os << std::left << std::setw(8) << to_string(c.algorithm) << std::right << std::setw(6) << p.n
         << std::setw(12) << p.nfe << std::setw(10) << p.extend_calls << std::setw(16) << std::fixed
         << std::setprecision(8) << p.best_score << "\n";
      os.unsetf(std::ios::fixed);
    }
  }
  return os.str();
}

std::string curve_svg(std::span<const ScalingCurve> curves) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 20, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      x0 = std::min(x0, static_cast<double>(p.nfe));
      x1 = std::max(x1, static_cast<double>(p.nfe));
      y0 = std::min(y0, p.best_score);
      y1 = std::max(y1, p.best_score);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (W / 2) << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"13\">NFE</text>\n";
  os << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
     << ")\" text-anchor=\"middle\" font-size=\"13\">best score</text>\n";
  os << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" font-size=\"10\">" << x0 << "</text>\n";
  os << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" text-anchor=\"end\" font-size=\"10\">" << x1
     << "</text>\n";
  os << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"10\">" << y0 << "</text>\n";
  os << "<text x=\"" << L - 4 << "\" y=\"" << T + 10 << "\" text-anchor=\"end\" font-size=\"10\">" << y1
     << "</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = colors[i % 4];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : curves[i].points) os << px(static_cast<double>(p.nfe)) << "," << py(p.best_score) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (i + 1) << "\" text-anchor=\"end\" font-size=\"12\" fill=\""
       << color << "\">" << to_string(curves[i].algorithm) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace tof
