#include "tof/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "tof/errors.hpp"

namespace tof {

namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += "; ";
    out += p;
  }
  return out;
}

void reject_unknown(const nlohmann::json& doc, std::initializer_list<const char*> known,
                    const std::string& where) {
  if (!doc.is_object()) throw ConfigError(where + ": expected a JSON object");
  std::vector<std::string> unknown;
  for (const auto& item : doc.items()) {
    if (std::none_of(known.begin(), known.end(),
                     [&](const char* k) { return item.key() == k; })) {
      unknown.push_back(where + ": unknown field '" + item.key() + "'");
    }
  }
  if (!unknown.empty()) throw ConfigError(unknown);
}

template <typename T>
T field(const nlohmann::json& doc, const char* name, const std::string& where) {
  try {
    return doc.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + name + ": " + e.what());
  }
}

template <typename T>
void optional_field(const nlohmann::json& doc, const char* name, const std::string& where, T& out) {
  if (doc.contains(name)) out = field<T>(doc, name, where);
}

PruneRule prune_rule_from_string(const std::string& name) {
  if (name == "halve") return PruneRule::halve;
  if (name == "fixed-k") return PruneRule::fixed_k;
  if (name == "none") return PruneRule::none;
  throw ConfigError("schedule.prune_rule: unknown rule '" + name + "'");
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "linear") return Algorithm::linear;
  if (name == "tof") return Algorithm::tof;
  if (name == "oracle") return Algorithm::oracle;
  throw ConfigError("algorithm: unknown algorithm '" + name + "'");
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : Error(join(violations)), violations_(std::move(violations)) {}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::initial: return "initial";
    case Stage::intermediate: return "intermediate";
    case Stage::final: return "final";
  }
  return "?";
}

Stage stage_from_string(const std::string& name) {
  if (name == "initial") return Stage::initial;
  if (name == "intermediate") return Stage::intermediate;
  if (name == "final") return Stage::final;
  throw ProtocolError("unknown stage '" + name + "'");
}

const char* to_string(PruneRule rule) {
  switch (rule) {
    case PruneRule::halve: return "halve";
    case PruneRule::fixed_k: return "fixed-k";
    case PruneRule::none: return "none";
  }
  return "?";
}

const char* to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::linear: return "linear";
    case Algorithm::tof: return "tof";
    case Algorithm::oracle: return "oracle";
  }
  return "?";
}

const TextPrompt& StagedPrompts::for_stage(Stage stage) const {
  switch (stage) {
    case Stage::initial: return initial;
    case Stage::intermediate: return intermediate;
    case Stage::final: return final;
  }
  return initial;
}

Schedule default_schedule(int roots, int depth) {
  Schedule s;
  s.roots = roots;
  s.depth = depth;
  const int last = static_cast<int>(std::ceil(0.8 * depth));
  s.stage_boundaries = {1, std::clamp(last, 2, std::max(2, depth - 1))};
  s.branch_at = s.stage_boundaries;
  return s;
}

RunConfig default_config() {
  RunConfig c;
  c.schedule = default_schedule(8, 16);
  return c;
}

Stage stage_of_frame(int t, const Schedule& schedule) {
  if (t < 0 || t >= schedule.depth) {
    throw RangeError("frame index " + std::to_string(t) + " outside [0, " +
                     std::to_string(schedule.depth) + ")");
  }
  if (schedule.stage_boundaries.size() != 2) {
    throw ConfigError("stage_boundaries must hold exactly two indices");
  }
  if (t < schedule.stage_boundaries[0]) return Stage::initial;
  if (t < schedule.stage_boundaries[1]) return Stage::intermediate;
  return Stage::final;
}

std::vector<std::string> validate_config(const RunConfig& config) {
  std::vector<std::string> v;
  const Schedule& s = config.schedule;
  if (s.roots <= 0) v.push_back("schedule.roots must be positive");
  if (s.depth <= 0) {
    v.push_back("schedule.depth must be positive");
  } else if (s.depth < 2) {
    v.push_back("schedule.depth must be at least 2");
  }
  if (s.branch_limit <= 0) v.push_back("schedule.branch_limit must be positive");
  if (s.denoise_steps_per_frame <= 0) v.push_back("schedule.denoise_steps_per_frame must be positive");
  if (s.latent_temporal_length <= 0) v.push_back("schedule.latent_temporal_length must be positive");

  const auto& b = s.stage_boundaries;
  if (b.size() != 2 || !(0 < b[0] && b[0] < b[1] && b[1] < s.depth)) {
    v.push_back("stage_boundaries must yield 3 non-empty stages (need 0 < b1 < b2 < depth)");
  }
  std::set<int> seen;
  for (int t : s.branch_at) {
    if (t < 1 || t >= s.depth) {
      v.push_back("branch_at index " + std::to_string(t) + " outside [1, depth-1]");
    }
    if (!seen.insert(t).second) v.push_back("branch_at index " + std::to_string(t) + " repeated");
  }
  if (s.prune_rule == PruneRule::fixed_k) {
    if (static_cast<int>(s.fixed_k.size()) != std::max(0, s.depth - 1)) {
      v.push_back("fixed_k must list k_1..k_{depth-1}");
    }
    for (int k : s.fixed_k) {
      if (k <= 0) {
        v.push_back("fixed_k entries must be >= 1 (k_t = 0 requested)");
        break;
      }
    }
  }

  if (config.prompt.text.empty()) v.push_back("prompt.text must be non-empty");
  if (config.verifier_weights.empty()) v.push_back("verifier_weights must name at least one verifier");
  for (const auto& [id, w] : config.verifier_weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      v.push_back("verifier weight for '" + id + "' must be strictly positive");
    }
  }
  const auto& l = config.landscape;
  if (l.dimension <= 0) v.push_back("landscape.dimension must be positive");
  if (l.smoothness_penalty < 0.0) v.push_back("landscape.smoothness_penalty must be non-negative");
  if (!(l.pull >= 0.0 && l.pull <= 1.0)) v.push_back("landscape.pull must lie in [0, 1]");
  if (l.noise_scale < 0.0) v.push_back("landscape.noise_scale must be non-negative");
  if (!(config.gates.clarity_threshold >= 0.0 && config.gates.clarity_threshold <= 1.0)) {
    v.push_back("gates.clarity_threshold must lie in [0, 1]");
  }
  return v;
}

const RunConfig& require_valid(const RunConfig& config) {
  auto violations = validate_config(config);
  if (!violations.empty()) throw ConfigError(std::move(violations));
  return config;
}

nlohmann::json to_json(const Schedule& s) {
  return {
      {"roots", s.roots},
      {"depth", s.depth},
      {"branch_limit", s.branch_limit},
      {"stage_boundaries", s.stage_boundaries},
      {"branch_at", s.branch_at},
      {"prune_rule", to_string(s.prune_rule)},
      {"fixed_k", s.fixed_k},
      {"denoise_steps_per_frame", s.denoise_steps_per_frame},
      {"latent_temporal_length", s.latent_temporal_length},
  };
}

Schedule schedule_from_json(const nlohmann::json& doc) {
  const std::string where = "schedule";
  reject_unknown(doc,
                 {"roots", "depth", "branch_limit", "stage_boundaries", "branch_at", "prune_rule",
                  "fixed_k", "denoise_steps_per_frame", "latent_temporal_length"},
                 where);
  const int roots = field<int>(doc, "roots", where);
  const int depth = field<int>(doc, "depth", where);
  Schedule s = depth >= 3 ? default_schedule(roots, depth) : Schedule{};
  s.roots = roots;
  s.depth = depth;
  if (depth < 3) {
    s.stage_boundaries.clear();
    s.branch_at.clear();
  }
  optional_field(doc, "branch_limit", where, s.branch_limit);
  optional_field(doc, "stage_boundaries", where, s.stage_boundaries);
  if (doc.contains("stage_boundaries") && !doc.contains("branch_at")) s.branch_at = s.stage_boundaries;
  optional_field(doc, "branch_at", where, s.branch_at);
  if (doc.contains("prune_rule")) s.prune_rule = prune_rule_from_string(field<std::string>(doc, "prune_rule", where));
  optional_field(doc, "fixed_k", where, s.fixed_k);
  optional_field(doc, "denoise_steps_per_frame", where, s.denoise_steps_per_frame);
  optional_field(doc, "latent_temporal_length", where, s.latent_temporal_length);
  return s;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json weights = nlohmann::json::object();
  for (const auto& [id, w] : c.verifier_weights) weights[id] = w;
  nlohmann::json gates = {{"enabled", c.gates.enabled}, {"clarity_threshold", c.gates.clarity_threshold}};
  gates["potential_threshold"] =
      c.gates.potential_threshold ? nlohmann::json(*c.gates.potential_threshold) : nlohmann::json(nullptr);
  return {
      {"algorithm", to_string(c.algorithm)},
      {"schedule", to_json(c.schedule)},
      {"prompt", {{"text", c.prompt.text}, {"id", c.prompt.id}}},
      {"verifier_weights", weights},
      {"master_seed", c.master_seed},
      {"worker_endpoints", c.worker_endpoints},
      {"landscape",
       {{"dimension", c.landscape.dimension},
        {"smoothness_penalty", c.landscape.smoothness_penalty},
        {"pull", c.landscape.pull},
        {"noise_scale", c.landscape.noise_scale},
        {"key", c.landscape.key}}},
      {"gates", gates},
  };
}

RunConfig config_from_json(const nlohmann::json& doc) {
  const std::string where = "config";
  reject_unknown(doc,
                 {"algorithm", "schedule", "prompt", "verifier_weights", "master_seed",
                  "worker_endpoints", "landscape", "gates"},
                 where);
  RunConfig c = default_config();
  if (doc.contains("algorithm")) c.algorithm = algorithm_from_string(field<std::string>(doc, "algorithm", where));
  if (doc.contains("schedule")) c.schedule = schedule_from_json(doc.at("schedule"));
  if (doc.contains("prompt")) {
    const auto& p = doc.at("prompt");
    reject_unknown(p, {"text", "id"}, "prompt");
    c.prompt.text = field<std::string>(p, "text", "prompt");
    c.prompt.id = p.contains("id") ? field<std::string>(p, "id", "prompt") : "prompt-0";
  }
  if (doc.contains("verifier_weights")) {
    c.verifier_weights = field<std::map<std::string, double>>(doc, "verifier_weights", where);
  }
  optional_field(doc, "master_seed", where, c.master_seed);
  optional_field(doc, "worker_endpoints", where, c.worker_endpoints);
  if (doc.contains("landscape")) {
    const auto& l = doc.at("landscape");
    const std::string lw = "landscape";
    reject_unknown(l, {"dimension", "smoothness_penalty", "pull", "noise_scale", "key"}, lw);
    optional_field(l, "dimension", lw, c.landscape.dimension);
    optional_field(l, "smoothness_penalty", lw, c.landscape.smoothness_penalty);
    optional_field(l, "pull", lw, c.landscape.pull);
    optional_field(l, "noise_scale", lw, c.landscape.noise_scale);
    optional_field(l, "key", lw, c.landscape.key);
  }
  if (doc.contains("gates")) {
    const auto& g = doc.at("gates");
    const std::string gw = "gates";
    reject_unknown(g, {"enabled", "clarity_threshold", "potential_threshold"}, gw);
    optional_field(g, "enabled", gw, c.gates.enabled);
    optional_field(g, "clarity_threshold", gw, c.gates.clarity_threshold);
    if (g.contains("potential_threshold") && !g.at("potential_threshold").is_null()) {
      c.gates.potential_threshold = field<double>(g, "potential_threshold", gw);
    }
  }
  return c;
}

}  // namespace tof
