#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"
#include "tof/core_model.hpp"
#include "tof/generator.hpp"
#include "tof/ledger.hpp"
#include "tof/verifier.hpp"

namespace tof {

/// b_t: branch_limit when t is a branching frame, 1 otherwise.
int branch_factor(int t, const Schedule& schedule);

/// Survivor counts k_0 .. k_{depth-1} produced by the schedule's prune rule
/// when no candidate is lost: k_0 = roots and, for t >= 1, with p = k_{t-1} b_t,
///   halve:   k_t = max(1, ceil(p / 2))
///   fixed-k: k_t = min(fixed_k[t-1], p)
///   none:    k_t = p
std::vector<std::int64_t> survivor_counts(const Schedule& schedule);

/// Strict ordering of the frontier: total score descending, node id ascending.
bool frontier_before(const CandidateNode& a, const CandidateNode& b);

struct PruneOutcome {
  int level = 0;
  std::vector<CandidateNode> retained;   // frontier order
  std::vector<CandidateNode> discarded;  // frontier order
  std::int64_t k_in = 0;
  std::int64_t k_out = 0;
};

/// Keeps the top `k` of `produced` under frontier ordering.
PruneOutcome prune_top_k(std::vector<CandidateNode> produced, std::int64_t k, int level = 0);

/// Surviving nodes of one level, kept in frontier order.
class FrontierQueue {
 public:
  FrontierQueue() = default;
  explicit FrontierQueue(std::vector<CandidateNode> nodes);

  void push(CandidateNode node);
  /// Removes and returns the best node.
  CandidateNode dequeue();
  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<CandidateNode>& nodes() const { return nodes_; }

 private:
  std::vector<CandidateNode> nodes_;
};

/// One entry of the final selection.
struct Finalist {
  NodeId leaf = 0;
  double accumulated_score = 0.0;
  double aggregated_score = 0.0;
  std::optional<double> weighted_raw;
  std::vector<VerifierScore> scores;
};

struct SearchResult {
  Algorithm algorithm = Algorithm::tof;
  /// final_score is the ensemble's weighted raw score of the selected path.
  SearchPath best_path;
  double aggregated_score = 0.0;
  double accumulated_score = 0.0;
  std::vector<Finalist> finalists;
  std::vector<PruneOutcome> prunes;
  std::vector<nlohmann::json> events;
  NfeLedger ledger;
  int faults = 0;
  bool nondeterministic_backends = false;

  double best_score() const { return best_path.final_score; }
};

/// Optional hooks and execution knobs for a search run.
struct SearchOptions {
  int threads = 1;
  /// Replaces the template prompt decomposer.
  PromptDecomposer* decomposer = nullptr;
  /// Replaces the built-in clarity gate (e.g. a worker gate).
  std::function<GateDecision(const PartialFrameState&, double)> clarity;
};

/// Best-of-N: N independent full-budget trajectories, final choice by rank fusion.
SearchResult random_linear_search(const RunConfig& config, Generator& generator, const Ensemble& ensemble,
                                  const SearchOptions& options = {});

/// Tree-of-Frames: level-synchronous expansion with stage-transition branching,
/// optional image-level gates, and top-k pruning on accumulated heuristic score.
SearchResult tof_search(const RunConfig& config, Generator& generator, const Ensemble& ensemble,
                        const SearchOptions& options = {});

/// Dispatches on config.algorithm (linear or tof).
SearchResult run_search(const RunConfig& config, Generator& generator, const Ensemble& ensemble,
                        const SearchOptions& options = {});

/// Runs `fn(i)` for i in [0, n) on up to `threads` threads. The first
/// exception thrown by any task is rethrown after all tasks finish.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace tof
