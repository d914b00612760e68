#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tof/core_model.hpp"
#include "tof/search.hpp"
#include "tof/synthetic.hpp"

namespace tof {

// Exhaustive oracle

inline constexpr std::uint64_t kOracleMaxPaths = 1'000'000;

/// Number of root-to-leaf paths of the unpruned tree, N * prod_t b_t,
/// saturating at UINT64_MAX.
std::uint64_t tree_path_count(const Schedule& schedule);

struct OracleResult {
  double best_score = 0.0;
  std::vector<std::uint64_t> best_seeds;  // root to leaf
  std::uint64_t paths = 0;
};

/// Enumerates every root-to-leaf path of the unpruned tree with an explicit
/// odometer over branch choices and scores each with the closed-form path
/// quality. Equal scores are broken by the smaller leaf-seed hash.
/// Throws OracleRefused above kOracleMaxPaths paths.
OracleResult brute_force_oracle(const SyntheticLandscape& landscape, const Schedule& schedule,
                                std::uint64_t master_seed);

/// Same enumeration as a depth-first recursion; used to cross-check the oracle.
OracleResult brute_force_oracle_recursive(const SyntheticLandscape& landscape, const Schedule& schedule,
                                          std::uint64_t master_seed);

// Cost prediction

struct LevelCost {
  int t = 0;
  std::int64_t k_prev = 0;
  int branch = 1;
  std::int64_t generated = 0;  // k_{t-1} * b_t
  double sort_term = 0.0;      // b_t * log2(k_{t-1} * b_t)
  std::int64_t k_out = 0;
};

struct CostPrediction {
  Algorithm algorithm = Algorithm::tof;
  Schedule schedule;
  std::vector<LevelCost> levels;
  std::int64_t total_extends = 0;
  std::int64_t nfe = 0;
  double sort_cost = 0.0;
  std::string asymptotic_class;  // "O(TN)" or "O(N+T)"
};

CostPrediction predict_cost(const Schedule& schedule, Algorithm algorithm);
nlohmann::json to_json(const CostPrediction& prediction);

// Scaling experiments

struct CurvePoint {
  int n = 0;
  double best_score = 0.0;
  std::int64_t nfe = 0;
  std::int64_t extend_calls = 0;
};

struct ScalingCurve {
  Algorithm algorithm = Algorithm::linear;
  Schedule schedule;
  std::vector<CurvePoint> points;
};

nlohmann::json to_json(const ScalingCurve& curve);
ScalingCurve curve_from_json(const nlohmann::json& doc);

/// Runs `search` once per n (n roots, same master seed, so root seed sets are
/// nested). For ToF the default schedule is rebuilt for each n.
using SearchFn = std::function<SearchResult(const RunConfig&)>;
ScalingCurve run_scaling_experiment(Algorithm algorithm, std::span<const int> n_grid, const RunConfig& base,
                                    const SearchFn& search);

/// Largest linear-search root count whose NFE does not exceed `nfe` (at least 1).
int linear_roots_for_budget(std::int64_t nfe, const Schedule& schedule);

// Geometric decay fit s(n) = s_inf - a * r^n

struct GeometricFit {
  double s_inf = 0.0;
  double amplitude = 0.0;
  std::optional<double> ratio;
  double residual_rms = 0.0;
  bool degenerate = false;
};

nlohmann::json to_json(const GeometricFit& fit);

/// Grid search over r = j/512 (j = 1..511) with the closed-form least-squares
/// (s_inf, a) at each r, refined by golden-section search between the
/// neighbours of the best grid point. Needs at least 4 points.
GeometricFit fit_geometric_decay(std::span<const double> n, std::span<const double> score);
GeometricFit fit_geometric_decay(const ScalingCurve& curve);

/// Ordinary least squares coefficients of y on the columns of `design`.
Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y);

// Export

std::string curve_table(std::span<const ScalingCurve> curves);
/// Score-vs-NFE line chart, one polyline per curve.
std::string curve_svg(std::span<const ScalingCurve> curves);

}  // namespace tof
