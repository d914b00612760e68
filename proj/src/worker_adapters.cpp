#include "tof/worker_adapters.hpp"

#include "tof/errors.hpp"
#include "tof/synthetic.hpp"

namespace tof {

nlohmann::json prompt_json(const StagePrompt& prompt) {
  return {{"stage", to_string(prompt.stage)}, {"text", prompt.prompt.text}, {"id", prompt.prompt.id}};
}

namespace {

template <typename T>
T reply_field(const nlohmann::json& reply, const char* name, const std::string& kind) {
  try {
    return reply.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw TransportError(kind + ": response lacks a valid '" + name + "'");
  }
}

}  // namespace

WorkerGenerator::WorkerGenerator(std::shared_ptr<WorkerSession> session, const Schedule& schedule)
    : session_(std::move(session)),
      steps_per_frame_(schedule.denoise_steps_per_frame),
      temporal_length_(schedule.latent_temporal_length),
      depth_(schedule.depth) {
  if (!session_->capabilities().has_role("generator")) {
    throw CapabilityError("worker '" + session_->capabilities().name + "' does not provide a generator");
  }
}

GeneratorCapabilities WorkerGenerator::capabilities() const {
  const auto& c = session_->capabilities();
  return {c.supports_partial_denoise, c.supports_branching, c.deterministic};
}

PartialFrameState WorkerGenerator::read_state(const nlohmann::json& reply, PartialFrameState base) const {
  base.latent = LatentRef{reply_field<std::string>(reply, "latent_ref", "generate"), {}};
  base.steps_done = reply_field<int>(reply, "steps_done", "generate");
  base.steps_total = reply.value("steps_total", steps_per_frame_);
  return base;
}

FrameResult WorkerGenerator::sample_root(std::uint64_t seed, const StagePrompt& prompt) {
  const nlohmann::json reply = session_->request(
      "generate_request",
      {{"parent", nullptr}, {"t", 0}, {"seed", seed}, {"prompt", prompt_json(prompt)}, {"steps", steps_per_frame_}});
  PartialFrameState st;
  st.seed = seed;
  st.prompt = prompt;
  st.steps_total = steps_per_frame_;
  return {read_state(reply, std::move(st)), generate_event(steps_per_frame_, temporal_length_)};
}

FrameResult WorkerGenerator::extend(const CandidateNode& parent, int t, std::uint64_t seed,
                                    const StagePrompt& prompt, int steps) {
  check_extend_args(*this, parent, t, steps);
  const nlohmann::json reply = session_->request("generate_request", {{"parent", parent.latent.handle},
                                                                      {"t", t},
                                                                      {"seed", seed},
                                                                      {"prompt", prompt_json(prompt)},
                                                                      {"steps", steps}});
  PartialFrameState st;
  st.parent = parent.latent;
  st.frame_index = t;
  st.seed = seed;
  st.prompt = prompt;
  st.steps_total = steps_per_frame_;
  return {read_state(reply, std::move(st)), generate_event(steps, temporal_length_)};
}

PartialFrameState WorkerGenerator::begin_frame(const CandidateNode& parent, int t, std::uint64_t seed,
                                               const StagePrompt& prompt) {
  if (!capabilities().supports_partial_denoise) {
    throw CapabilityError("worker generator does not support partial denoising");
  }
  check_extend_args(*this, parent, t, 1);
  PartialFrameState st;
  st.parent = parent.latent;
  st.frame_index = t;
  st.seed = seed;
  st.prompt = prompt;
  st.steps_total = steps_per_frame_;
  st.steps_done = 0;
  return st;
}

FrameResult WorkerGenerator::partial_denoise(const PartialFrameState& state, int steps) {
  if (!capabilities().supports_partial_denoise) {
    throw CapabilityError("worker generator does not support partial denoising");
  }
  if (steps < 0 || state.steps_done + steps > state.steps_total) {
    throw PreconditionError("partial_denoise: step count outside the remaining budget");
  }
  const bool continuation = state.steps_done > 0;
  if (steps == 0) return {state, generate_event(0, temporal_length_, continuation)};
  const nlohmann::json reply = session_->request(
      "partial_denoise_request",
      {{"parent", state.parent ? nlohmann::json(state.parent->handle) : nlohmann::json(nullptr)},
       {"t", state.frame_index},
       {"seed", state.seed},
       {"prompt", prompt_json(state.prompt)},
       {"latent_ref", state.steps_done > 0 ? nlohmann::json(state.latent.handle) : nlohmann::json(nullptr)},
       {"steps_done", state.steps_done},
       {"steps", steps}});
  return {read_state(reply, state), generate_event(steps, temporal_length_, continuation)};
}

Artifact WorkerGenerator::decode(std::span<const LatentRef> frames) {
  Artifact a;
  std::string joined;
  for (const auto& f : frames) {
    a.frames.push_back(f);
    joined += f.handle;
    joined += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(joined)));
  a.handle = std::string("worker-video-") + buf;
  return a;
}

WorkerVerifier::WorkerVerifier(std::shared_ptr<WorkerSession> session, std::string verifier_id)
    : session_(std::move(session)), id_(std::move(verifier_id)) {
  if (!session_->capabilities().has_role("verifier")) {
    throw CapabilityError("worker '" + session_->capabilities().name + "' does not provide a verifier");
  }
}

bool WorkerVerifier::deterministic() const { return session_->capabilities().deterministic; }

double WorkerVerifier::score(const Artifact& artifact, const StagePrompt& prompt, ScoreMode mode) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : artifact.frames) frames.push_back(f.handle);
  nlohmann::json stages = nlohmann::json::array();
  for (Stage s : artifact.stages) stages.push_back(to_string(s));
  const nlohmann::json reply = session_->request("verify_request", {{"verifier_id", id_},
                                                                    {"frames", frames},
                                                                    {"stages", stages},
                                                                    {"prompt", prompt_json(prompt)},
                                                                    {"mode", to_string(mode)}});
  if (!reply.contains("score") || !reply["score"].is_number()) {
    throw VerifierFault("worker verifier '" + id_ + "' returned no score");
  }
  return reply["score"].get<double>();
}

StagedPrompts WorkerDecomposer::decompose(const TextPrompt& prompt) {
  const nlohmann::json reply = session_->request("decompose_request", {{"prompt", prompt.text}, {"id", prompt.id}});
  if (!reply.contains("prompts") || !reply["prompts"].is_array()) {
    throw ProtocolError("decompose_response lacks a prompts list");
  }
  std::vector<std::string> entries;
  for (const auto& e : reply["prompts"]) {
    if (!e.is_string()) throw ProtocolError("decompose_response entries must be strings");
    entries.push_back(e.get<std::string>());
  }
  return staged_from_list(prompt, entries);
}

GateDecision worker_clarity_gate(WorkerSession& session, const PartialFrameState& state, double threshold) {
  try {
    const nlohmann::json reply = session.request("gate_request", {{"gate", "clarity"},
                                                                  {"latent_ref", state.latent.handle},
                                                                  {"progress", state.denoise_progress()},
                                                                  {"threshold", threshold},
                                                                  {"prompt", prompt_json(state.prompt)}});
    if (reply.contains("verdict") && reply["verdict"].is_boolean()) {
      return {GateKind::clarity, reply["verdict"].get<bool>(), threshold};
    }
  } catch (const TransportError&) {
  }
  return {GateKind::clarity, true, threshold};
}

}  // namespace tof
