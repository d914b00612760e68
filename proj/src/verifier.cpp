#include "tof/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tof/errors.hpp"

namespace tof {

const char* to_string(ScoreMode mode) {
  switch (mode) {
    case ScoreMode::frame: return "frame";
    case ScoreMode::clip: return "clip";
    case ScoreMode::final: return "final";
  }
  return "?";
}

ScoreMode score_mode_from_string(const std::string& name) {
  if (name == "frame") return ScoreMode::frame;
  if (name == "clip") return ScoreMode::clip;
  if (name == "final") return ScoreMode::final;
  throw ProtocolError("unknown score mode '" + name + "'");
}

const char* to_string(GateKind gate) { return gate == GateKind::clarity ? "clarity" : "potential"; }

VerifierScore score_candidate(Verifier& verifier, NodeId node_id, const Artifact& artifact,
                              const StagePrompt& prompt, ScoreMode mode) {
  VerifierScore out{verifier.id(), node_id, 0.0, prompt.stage, false};
  try {
    const double raw = verifier.score(artifact, prompt, mode);
    if (std::isfinite(raw)) {
      out.raw_score = raw;
      out.scored = true;
    }
  } catch (const VerifierFault&) {
  } catch (const TransportError&) {
  }
  return out;
}

RankTable RankTable::from_ranks(std::string verifier_id, std::span<const NodeId> candidates,
                                std::span<const int> ranks) {
  if (candidates.size() != ranks.size()) throw InputError("one rank per candidate required");
  const int n = static_cast<int>(candidates.size());
  std::vector<int> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < n; ++i) {
    if (sorted[i] != i + 1) throw InputError("ranks must be a permutation of 1..n");
  }
  RankTable table;
  table.verifier_id = std::move(verifier_id);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranks[a] > ranks[b]; });
  for (std::size_t i : order) {
    table.ranking.push_back(candidates[i]);
    if (!table.rank_of.emplace(candidates[i], ranks[i]).second) throw InputError("duplicate candidate");
  }
  return table;
}

RankTable rank_scores(const std::string& verifier_id, std::span<const VerifierScore> scores) {
  std::vector<const VerifierScore*> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const VerifierScore* a, const VerifierScore* b) {
    if (a->scored != b->scored) return a->scored;
    if (a->scored && a->raw_score != b->raw_score) return a->raw_score > b->raw_score;
    return a->node_id < b->node_id;
  });
  RankTable table;
  table.verifier_id = verifier_id;
  const int n = static_cast<int>(order.size());
  for (int i = 0; i < n; ++i) {
    table.ranking.push_back(order[i]->node_id);
    if (!table.rank_of.emplace(order[i]->node_id, n - i).second) {
      throw InputError("candidate " + std::to_string(order[i]->node_id) + " scored twice by one verifier");
    }
  }
  return table;
}

AggregateResult aggregate(std::span<const RankTable> tables, std::span<const double> weights) {
  if (tables.empty()) throw InputError("aggregation needs at least one rank table");
  if (weights.size() != tables.size()) throw InputError("one weight per rank table required");
  AggregateResult out;
  for (const auto& [id, rank] : tables.front().rank_of) out.candidates.push_back(id);
  const int n = static_cast<int>(out.candidates.size());
  if (n == 0) throw InputError("aggregation over an empty candidate set");

  for (const auto& table : tables) {
    if (table.rank_of.size() != out.candidates.size()) throw InputError("rank tables cover different candidates");
    std::vector<int> seen;
    for (const auto& [id, rank] : table.rank_of) {
      if (!tables.front().rank_of.contains(id)) throw InputError("rank tables cover different candidates");
      seen.push_back(rank);
    }
    std::sort(seen.begin(), seen.end());
    for (int i = 0; i < n; ++i) {
      if (seen[i] != i + 1) throw InputError("rank table of '" + table.verifier_id + "' is not a permutation");
    }
  }

  const double inv_m = 1.0 / static_cast<double>(tables.size());
  out.scores.assign(out.candidates.size(), 0.0);
  for (std::size_t i = 0; i < out.candidates.size(); ++i) {
    double sum = 0.0;
    for (std::size_t v = 0; v < tables.size(); ++v) {
      sum += weights[v] * tables[v].rank_of.at(out.candidates[i]);
    }
    out.scores[i] = inv_m * sum;
  }
  // candidates are in ascending id order, so the first maximum wins ties
  out.best_index = 0;
  for (std::size_t i = 1; i < out.scores.size(); ++i) {
    if (out.scores[i] > out.scores[out.best_index]) out.best_index = i;
  }
  out.best = out.candidates[out.best_index];
  return out;
}

// Ensemble

Ensemble::Ensemble(std::vector<Member> members) : members_(std::move(members)) {}

void Ensemble::add(std::shared_ptr<Verifier> verifier, double weight) {
  members_.push_back({std::move(verifier), weight});
}

bool Ensemble::deterministic() const {
  return std::all_of(members_.begin(), members_.end(), [](const Member& m) { return m.verifier->deterministic(); });
}

std::optional<double> Ensemble::weighted_raw(std::span<const VerifierScore> scores) const {
  double sum = 0.0;
  int used = 0;
  for (std::size_t v = 0; v < scores.size() && v < members_.size(); ++v) {
    if (!scores[v].scored) continue;
    sum += members_[v].weight * scores[v].raw_score;
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / used;
}

Ensemble::Heuristic Ensemble::heuristic(NodeId node_id, const Artifact& artifact, const StagePrompt& prompt,
                                        ScoreMode mode) const {
  Heuristic h;
  h.scores.reserve(members_.size());
  for (const auto& m : members_) h.scores.push_back(score_candidate(*m.verifier, node_id, artifact, prompt, mode));
  h.value = weighted_raw(h.scores);
  return h;
}

Ensemble::Selection Ensemble::select(std::span<const std::vector<VerifierScore>> per_candidate) const {
  if (members_.empty()) throw InputError("empty verifier ensemble");
  Selection sel;
  sel.scores.assign(per_candidate.begin(), per_candidate.end());
  std::vector<double> weights;
  for (std::size_t v = 0; v < members_.size(); ++v) {
    std::vector<VerifierScore> column;
    column.reserve(per_candidate.size());
    for (const auto& row : per_candidate) {
      if (row.size() != members_.size()) throw InputError("one score per ensemble member required");
      column.push_back(row[v]);
    }
    sel.tables.push_back(rank_scores(members_[v].verifier->id(), column));
    weights.push_back(members_[v].weight);
  }
  sel.aggregate = aggregate(sel.tables, weights);
  return sel;
}

// Hierarchical prompts

StagedPrompts TemplateDecomposer::decompose(const TextPrompt& prompt) {
  return decompose_prompt(prompt);
}

StagedPrompts decompose_prompt(const TextPrompt& prompt) {
  if (prompt.text.empty()) throw PreconditionError("cannot decompose an empty prompt");
  StagedPrompts out;
  out.initial = {prompt.text + ". Static scene: the opening frame, with its subjects, colors, count and layout.",
                 prompt.id + "/initial"};
  out.intermediate = {prompt.text + ". Motion: how the subjects move and act as the scene unfolds.",
                      prompt.id + "/intermediate"};
  out.final = {prompt.text + ". Ending state: how the scene looks once the action completes.",
               prompt.id + "/final"};
  out.source = StagedPrompts::Source::template_decomposed;
  return out;
}

StagedPrompts staged_from_list(const TextPrompt& base, std::span<const std::string> entries) {
  if (entries.size() != 3) {
    throw ProtocolError("prompt decomposer returned " + std::to_string(entries.size()) +
                        " entries; expected an ordered list of three");
  }
  StagedPrompts out;
  out.initial = {entries[0], base.id + "/initial"};
  out.intermediate = {entries[1], base.id + "/intermediate"};
  out.final = {entries[2], base.id + "/final"};
  out.source = StagedPrompts::Source::externally_supplied;
  return out;
}

// Gates

GateDecision clarity_gate(const PartialFrameState& state, double threshold) {
  return {GateKind::clarity, state.denoise_progress() >= threshold, threshold};
}

GateDecision potential_gate(const GateDecision& clarity, std::optional<double> score, double threshold) {
  if (clarity.gate != GateKind::clarity || !clarity.verdict) {
    throw PreconditionError("potential gate requires a passed clarity gate");
  }
  return {GateKind::potential, !score || *score >= threshold, threshold};
}

GateDecision potential_gate(const GateDecision& clarity, Verifier& verifier, const Artifact& preview,
                            const StagePrompt& prompt, double threshold) {
  if (clarity.gate != GateKind::clarity || !clarity.verdict) {
    throw PreconditionError("potential gate requires a passed clarity gate");
  }
  const VerifierScore s = score_candidate(verifier, 0, preview, prompt, ScoreMode::frame);
  return potential_gate(clarity, s.scored ? std::optional<double>(s.raw_score) : std::nullopt, threshold);
}

double median(std::vector<double> values) {
  if (values.empty()) throw PreconditionError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace tof
