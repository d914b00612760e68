#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace tof {

using NodeId = std::int64_t;

enum class Stage { initial, intermediate, final };

const char* to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct TextPrompt {
  std::string text;
  std::string id;

  bool operator==(const TextPrompt&) const = default;
};

/// A prompt routed to one generation stage.
struct StagePrompt {
  Stage stage = Stage::initial;
  TextPrompt prompt;

  bool operator==(const StagePrompt&) const = default;
};

struct StagedPrompts {
  enum class Source { template_decomposed, externally_supplied };

  TextPrompt initial;
  TextPrompt intermediate;
  TextPrompt final;
  Source source = Source::template_decomposed;

  const TextPrompt& for_stage(Stage stage) const;
  StagePrompt routed(Stage stage) const { return {stage, for_stage(stage)}; }

  bool operator==(const StagedPrompts&) const = default;
};

enum class PruneRule { halve, fixed_k, none };

const char* to_string(PruneRule rule);

/// Branching, pruning and stage layout of one search run.
///
/// Frames [0, b1) form the initial stage, [b1, b2) the intermediate stage and
/// [b2, depth) the final stage, where {b1, b2} = stage_boundaries.
struct Schedule {
  int roots = 8;
  int depth = 16;
  int branch_limit = 2;
  std::vector<int> stage_boundaries;
  std::vector<int> branch_at;
  PruneRule prune_rule = PruneRule::halve;
  // k_1 .. k_{depth-1}; only read when prune_rule == fixed_k.
  std::vector<int> fixed_k;
  int denoise_steps_per_frame = 10;
  int latent_temporal_length = 1;

  bool operator==(const Schedule&) const = default;
};

/// Schedule with the default stage boundaries {1, ceil(0.8 T)} and branching at
/// both stage transitions. Requires depth >= 3.
Schedule default_schedule(int roots, int depth);

/// Opaque reference to generator-side frame state. Worker backends fill only
/// `handle`; the in-process synthetic generator also carries the feature point.
struct LatentRef {
  std::string handle;
  Eigen::VectorXd state;

  bool operator==(const LatentRef& other) const {
    return handle == other.handle && state.size() == other.state.size() && state == other.state;
  }
};

struct CandidateNode {
  NodeId node_id = 0;
  std::optional<NodeId> parent_id;
  int frame_index = 0;
  std::uint64_t seed = 0;
  LatentRef latent;
  Stage stage = Stage::initial;
  double local_reward = 0.0;
  double total_score = 0.0;
};

struct SearchPath {
  std::vector<CandidateNode> nodes;
  double final_score = 0.0;
};

enum class Algorithm { linear, tof, oracle };

const char* to_string(Algorithm algorithm);

/// Parameters of the synthetic landscape backing the in-process generator.
struct LandscapeParams {
  int dimension = 8;
  double smoothness_penalty = 0.5;
  double pull = 0.1;
  double noise_scale = 0.2;
  std::uint64_t key = 0x5eed5eed5eedULL;

  bool operator==(const LandscapeParams&) const = default;
};

/// Image-level gates. They only take effect when the generator supports
/// partial denoising.
struct GateOptions {
  bool enabled = true;
  double clarity_threshold = 0.4;
  // nullopt selects the median of the partial scores produced at each level.
  std::optional<double> potential_threshold;

  bool operator==(const GateOptions&) const = default;
};

struct RunConfig {
  Algorithm algorithm = Algorithm::tof;
  Schedule schedule;
  TextPrompt prompt{"a red ball rolls across a wooden table", "prompt-0"};
  std::map<std::string, double> verifier_weights{{"synthetic", 1.0}};
  std::uint64_t master_seed = 0;
  std::vector<std::string> worker_endpoints;
  LandscapeParams landscape;
  GateOptions gates;

  bool operator==(const RunConfig&) const = default;
};

/// Default configuration: ToF over the default schedule with N = 8, T = 16.
RunConfig default_config();

/// Stage containing frame `t`. Throws RangeError when t is outside [0, depth).
Stage stage_of_frame(int t, const Schedule& schedule);

/// Every violated invariant of `config`; empty when the configuration is valid.
std::vector<std::string> validate_config(const RunConfig& config);

/// Returns `config` unchanged, or throws ConfigError listing every violation.
const RunConfig& require_valid(const RunConfig& config);

// JSON mapping. Field names are the snake_case member names; unknown fields
// are rejected with ConfigError.
nlohmann::json to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Schedule& schedule);
Schedule schedule_from_json(const nlohmann::json& doc);

}  // namespace tof
