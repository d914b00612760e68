#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tof/core_model.hpp"
#include "tof/generator.hpp"

namespace tof {

enum class ScoreMode { frame, clip, final };

const char* to_string(ScoreMode mode);
ScoreMode score_mode_from_string(const std::string& name);

/// Scores an artifact against a stage prompt. Implementations must be safe to
/// call concurrently for distinct candidates.
class Verifier {
 public:
  virtual ~Verifier() = default;
  virtual const std::string& id() const = 0;
  virtual bool deterministic() const { return true; }
  virtual double score(const Artifact& artifact, const StagePrompt& prompt, ScoreMode mode) = 0;
};

/// Returns the same value for every input.
class ConstantVerifier final : public Verifier {
 public:
  explicit ConstantVerifier(double value = 0.0, std::string id = "constant")
      : id_(std::move(id)), value_(value) {}
  const std::string& id() const override { return id_; }
  double score(const Artifact&, const StagePrompt&, ScoreMode) override { return value_; }

 private:
  std::string id_;
  double value_;
};

struct VerifierScore {
  std::string verifier_id;
  NodeId node_id = 0;
  double raw_score = 0.0;
  Stage stage = Stage::initial;
  bool scored = false;
};

/// Scores one candidate and converts verifier faults (non-finite values,
/// VerifierFault, TransportError) into an unscored result.
VerifierScore score_candidate(Verifier& verifier, NodeId node_id, const Artifact& artifact,
                              const StagePrompt& prompt, ScoreMode mode);

/// Per-verifier ranking of n candidates; rank n is the best.
struct RankTable {
  std::string verifier_id;
  std::vector<NodeId> ranking;    // best first
  std::map<NodeId, int> rank_of;  // values are a permutation of 1..n

  /// Builds a table from explicit rank values; throws InputError unless the
  /// ranks are a permutation of 1..n.
  static RankTable from_ranks(std::string verifier_id, std::span<const NodeId> candidates,
                              std::span<const int> ranks);
};

/// Ranks raw scores (higher is better). Ties, and unscored candidates (which
/// rank below every scored one), are ordered by ascending node id, the lower
/// id receiving the higher rank.
RankTable rank_scores(const std::string& verifier_id, std::span<const VerifierScore> scores);

struct AggregateResult {
  std::vector<NodeId> candidates;  // ascending node id
  std::vector<double> scores;      // H per candidate, same order
  NodeId best = 0;
  std::size_t best_index = 0;
};

/// Weighted rank fusion H(i) = (1/|M|) * sum_v c_v * rank_v(i); the argmax
/// breaks ties by ascending node id.
AggregateResult aggregate(std::span<const RankTable> tables, std::span<const double> weights);

/// Weighted verifier ensemble.
class Ensemble {
 public:
  struct Member {
    std::shared_ptr<Verifier> verifier;
    double weight = 1.0;
  };

  Ensemble() = default;
  explicit Ensemble(std::vector<Member> members);

  void add(std::shared_ptr<Verifier> verifier, double weight);
  const std::vector<Member>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  bool deterministic() const;

  struct Heuristic {
    std::optional<double> value;  // nullopt when every member faulted
    std::vector<VerifierScore> scores;
  };

  /// Local reward of one candidate: the weighted mean of the raw scores of the
  /// members that produced one.
  Heuristic heuristic(NodeId node_id, const Artifact& artifact, const StagePrompt& prompt,
                      ScoreMode mode) const;

  struct Selection {
    AggregateResult aggregate;
    std::vector<std::vector<VerifierScore>> scores;  // [candidate][member]
    std::vector<RankTable> tables;
  };

  /// Ranks every candidate with every member and fuses the ranks.
  Selection select(std::span<const std::vector<VerifierScore>> per_candidate_scores) const;

  /// Weighted mean of scored raw values; nullopt if nothing was scored.
  std::optional<double> weighted_raw(std::span<const VerifierScore> scores) const;

 private:
  std::vector<Member> members_;
};

// Hierarchical prompts.

class PromptDecomposer {
 public:
  virtual ~PromptDecomposer() = default;
  virtual StagedPrompts decompose(const TextPrompt& prompt) = 0;
};

/// Deterministic suffix-template decomposition.
class TemplateDecomposer final : public PromptDecomposer {
 public:
  StagedPrompts decompose(const TextPrompt& prompt) override;
};

StagedPrompts decompose_prompt(const TextPrompt& prompt);

/// Staged prompts from an externally produced list; throws ProtocolError
/// unless it holds exactly three entries.
StagedPrompts staged_from_list(const TextPrompt& base, std::span<const std::string> entries);

// Image-level gates.

enum class GateKind { clarity, potential };

struct GateDecision {
  GateKind gate = GateKind::clarity;
  bool verdict = false;
  double threshold = 0.0;
};

const char* to_string(GateKind gate);

/// verdict = denoise_progress >= threshold.
GateDecision clarity_gate(const PartialFrameState& state, double threshold);

/// verdict = score >= threshold; a missing score (verifier fault) passes.
/// Throws PreconditionError unless `clarity` is a passed clarity decision.
GateDecision potential_gate(const GateDecision& clarity, std::optional<double> score, double threshold);

GateDecision potential_gate(const GateDecision& clarity, Verifier& verifier, const Artifact& preview,
                            const StagePrompt& prompt, double threshold);

/// Median of the values (mean of the two middle values for even counts).
double median(std::vector<double> values);

}  // namespace tof
