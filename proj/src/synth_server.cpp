#include "tof/synth_server.hpp"

#include <thread>

#include "tof/errors.hpp"
#include "tof/verifier.hpp"

namespace tof {

namespace {

StagePrompt prompt_from_json(const nlohmann::json& p) {
  const auto& j = p.at("prompt");
  return {stage_from_string(j.at("stage").get<std::string>()),
          {j.at("text").get<std::string>(), j.value("id", std::string{})}};
}

}  // namespace

nlohmann::json landscape_constants(const SyntheticLandscape& landscape) {
  const LandscapeParams& p = landscape.params();
  nlohmann::json targets = nlohmann::json::object();
  for (Stage s : {Stage::initial, Stage::intermediate, Stage::final}) {
    const Eigen::VectorXd& t = landscape.target(s);
    targets[to_string(s)] = std::vector<double>(t.data(), t.data() + t.size());
  }
  return {{"key", p.key},
          {"dimension", p.dimension},
          {"smoothness_penalty", p.smoothness_penalty},
          {"pull", p.pull},
          {"noise_scale", p.noise_scale},
          {"targets", targets}};
}

SyntheticWorkerServer::SyntheticWorkerServer(const RunConfig& config, ServerOptions options)
    : config_(config),
      options_(std::move(options)),
      generator_(SyntheticLandscape(config.landscape), config.schedule) {
  const SyntheticLandscape& land = generator_.landscape();
  verifiers_.emplace("synthetic", SyntheticVerifier(land, SyntheticTerm::full, "synthetic"));
  verifiers_.emplace("alignment", SyntheticVerifier(land, SyntheticTerm::alignment, "alignment"));
  verifiers_.emplace("smoothness", SyntheticVerifier(land, SyntheticTerm::smoothness, "smoothness"));
}

std::size_t SyntheticWorkerServer::stored_latents() const {
  std::lock_guard lock(mutex_);
  return latents_.size();
}

LatentRef SyntheticWorkerServer::lookup(const std::string& handle) const {
  std::lock_guard lock(mutex_);
  auto it = latents_.find(handle);
  if (it == latents_.end()) throw InputError("unknown latent_ref '" + handle + "'");
  return it->second;
}

void SyntheticWorkerServer::store(const LatentRef& latent) {
  std::lock_guard lock(mutex_);
  latents_.emplace(latent.handle, latent);
}

nlohmann::json SyntheticWorkerServer::generate(const nlohmann::json& p, bool partial) {
  const StagePrompt prompt = prompt_from_json(p);
  const auto seed = p.at("seed").get<std::uint64_t>();
  const int t = p.at("t").get<int>();
  const int steps = p.at("steps").get<int>();
  const int total = generator_.steps_per_frame();
  std::optional<LatentRef> parent;
  if (!p.at("parent").is_null()) parent = lookup(p.at("parent").get<std::string>());
  if (!parent && t != 0) throw InputError("frame " + std::to_string(t) + " needs a parent");

  int done = steps;
  if (partial) {
    const int before = p.at("steps_done").get<int>();
    if (before > 0) lookup(p.at("latent_ref").get<std::string>());
    done = before + steps;
  }
  if (steps < 0 || done < 0 || done > total) throw InputError("step count outside the per-frame budget");
  if (!parent && done != total) throw InputError("root frames are generated at the full budget");

  const LatentRef out = generator_.frame_latent(parent, seed, prompt.stage, done);
  store(out);
  return {{"latent_ref", out.handle}, {"steps_done", done}, {"steps_total", total}};
}

nlohmann::json SyntheticWorkerServer::verify(const nlohmann::json& p) {
  if (options_.verify_delay.count() > 0) std::this_thread::sleep_for(options_.verify_delay);
  const std::string id = p.at("verifier_id").get<std::string>();
  Artifact art;
  for (const auto& h : p.at("frames")) art.frames.push_back(lookup(h.get<std::string>()));
  for (const auto& s : p.value("stages", nlohmann::json::array())) {
    art.stages.push_back(stage_from_string(s.get<std::string>()));
  }
  const StagePrompt prompt = prompt_from_json(p);
  const ScoreMode mode = score_mode_from_string(p.at("mode").get<std::string>());
  if (id == "constant") return {{"score", 0.0}};
  auto it = verifiers_.find(id);
  if (it == verifiers_.end()) throw InputError("unknown verifier '" + id + "'");
  try {
    return {{"score", it->second.score(art, prompt, mode)}};
  } catch (const VerifierFault&) {
    return {{"score", nullptr}};
  }
}

nlohmann::json SyntheticWorkerServer::gate(const nlohmann::json& p) {
  if (p.at("gate").get<std::string>() != "clarity") throw InputError("only the clarity gate is served");
  return {{"verdict", p.at("progress").get<double>() >= p.at("threshold").get<double>()}};
}

nlohmann::json SyntheticWorkerServer::decompose(const nlohmann::json& p) {
  const StagedPrompts sp = decompose_prompt({p.at("prompt").get<std::string>(), p.value("id", std::string{})});
  return {{"prompts", {sp.initial.text, sp.intermediate.text, sp.final.text}}};
}

WorkerMessage SyntheticWorkerServer::handle(const WorkerMessage& request) {
  WorkerMessage reply;
  reply.msg_id = request.msg_id;
  try {
    const std::string& k = request.kind;
    if (k == "generate_request") {
      reply.payload = generate(request.payload, false);
    } else if (k == "partial_denoise_request") {
      reply.payload = generate(request.payload, true);
    } else if (k == "verify_request") {
      reply.payload = verify(request.payload);
    } else if (k == "gate_request") {
      reply.payload = gate(request.payload);
    } else if (k == "decompose_request") {
      reply.payload = decompose(request.payload);
    } else if (k == "shutdown_request") {
      reply.payload = nlohmann::json::object();
    } else {
      throw InputError("unknown request kind '" + k + "'");
    }
    reply.kind = response_kind(k);
  } catch (const std::exception& e) {
    reply.kind = "error";
    reply.payload = {{"message", e.what()}};
  }
  return reply;
}

void SyntheticWorkerServer::serve(Transport& transport) {
  transport.write_line(encode_message({0, "hello", {{"protocol_version", options_.protocol_version},
                                                     {"name", options_.name}}}));
  transport.write_line(encode_message(
      {0, "capabilities", {{"supports_partial_denoise", true},
                           {"supports_branching", true},
                           {"deterministic", options_.deterministic},
                           {"roles", {"generator", "verifier", "decomposer", "gate"}},
                           {"verifier_ids", {"synthetic", "alignment", "smoothness", "constant"}}}}));
  while (auto line = transport.read_line()) {
    WorkerMessage request;
    try {
      request = parse_message(*line);
    } catch (const ProtocolError& e) {
      transport.write_line(encode_message({0, "error", {{"message", e.what()}}}));
      continue;
    }
    const WorkerMessage reply = handle(request);
    transport.write_line(encode_message(reply));
    if (request.kind == "shutdown_request") break;
  }
  transport.close();
}

}  // namespace tof
