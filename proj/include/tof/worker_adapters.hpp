#pragma once

#include <memory>
#include <string>

#include "tof/generator.hpp"
#include "tof/protocol.hpp"
#include "tof/verifier.hpp"

namespace tof {

/// Generator backed by a worker session. Latent handles are minted by the
/// worker and passed back verbatim; the engine never interprets them.
///
/// Payloads:
///   generate_request        {parent, t, seed, stage, prompt, steps}
///   generate_response       {latent_ref, steps_done, steps_total}
///   partial_denoise_request {parent, t, seed, stage, prompt, latent_ref, steps_done, steps}
///   partial_denoise_response{latent_ref, steps_done, steps_total}
/// `parent` is null for root frames.
class WorkerGenerator final : public Generator {
 public:
  WorkerGenerator(std::shared_ptr<WorkerSession> session, const Schedule& schedule);

  GeneratorCapabilities capabilities() const override;
  int steps_per_frame() const override { return steps_per_frame_; }
  int temporal_length() const override { return temporal_length_; }
  int depth() const override { return depth_; }

  FrameResult sample_root(std::uint64_t seed, const StagePrompt& prompt) override;
  FrameResult extend(const CandidateNode& parent, int t, std::uint64_t seed, const StagePrompt& prompt,
                     int steps) override;
  PartialFrameState begin_frame(const CandidateNode& parent, int t, std::uint64_t seed,
                                const StagePrompt& prompt) override;
  FrameResult partial_denoise(const PartialFrameState& state, int steps) override;
  Artifact decode(std::span<const LatentRef> frames) override;

 private:
  PartialFrameState read_state(const nlohmann::json& reply, PartialFrameState base) const;

  std::shared_ptr<WorkerSession> session_;
  int steps_per_frame_;
  int temporal_length_;
  int depth_;
};

/// Verifier backed by a worker session.
///   verify_request  {verifier_id, frames, stages, stage, prompt, mode}
///   verify_response {score}   (null score is a verifier fault)
class WorkerVerifier final : public Verifier {
 public:
  WorkerVerifier(std::shared_ptr<WorkerSession> session, std::string verifier_id);

  const std::string& id() const override { return id_; }
  bool deterministic() const override;
  double score(const Artifact& artifact, const StagePrompt& prompt, ScoreMode mode) override;

 private:
  std::shared_ptr<WorkerSession> session_;
  std::string id_;
};

/// External prompt decomposer.
///   decompose_request  {prompt, id}
///   decompose_response {prompts: [initial, intermediate, final]}
class WorkerDecomposer final : public PromptDecomposer {
 public:
  explicit WorkerDecomposer(std::shared_ptr<WorkerSession> session) : session_(std::move(session)) {}
  StagedPrompts decompose(const TextPrompt& prompt) override;

 private:
  std::shared_ptr<WorkerSession> session_;
};

/// Worker-side clarity gate.
///   gate_request  {gate: "clarity", latent_ref, progress, threshold, stage, prompt}
///   gate_response {verdict}
/// A worker fault yields a passing verdict.
GateDecision worker_clarity_gate(WorkerSession& session, const PartialFrameState& state, double threshold);

nlohmann::json prompt_json(const StagePrompt& prompt);

}  // namespace tof
