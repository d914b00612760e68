#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tof/core_model.hpp"
#include "tof/ledger.hpp"

namespace tof {

struct GeneratorCapabilities {
  bool supports_partial_denoise = false;
  bool supports_branching = true;
  bool deterministic = true;
};

/// A frame in the middle of denoising, together with everything needed to
/// resume it: the parent frame, the frame index, the seed and the stage prompt.
struct PartialFrameState {
  std::optional<LatentRef> parent;
  int frame_index = 0;
  std::uint64_t seed = 0;
  StagePrompt prompt;
  LatentRef latent;
  int steps_done = 0;
  int steps_total = 1;

  double denoise_progress() const { return static_cast<double>(steps_done) / steps_total; }
  bool complete() const { return steps_done >= steps_total; }
};

/// Generator output plus the cost it incurred.
struct FrameResult {
  PartialFrameState state;
  CostEvent cost;
};

/// Decoded (prefix of a) trajectory. For the synthetic generator `frames` holds
/// the feature points; `stages` is filled by the caller from the schedule.
struct Artifact {
  std::string handle;
  std::vector<LatentRef> frames;
  std::vector<Stage> stages;
};

/// Frame-sequential generator. Implementations are pure functions of their
/// declared inputs and may be called concurrently for distinct nodes.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual GeneratorCapabilities capabilities() const = 0;
  virtual int steps_per_frame() const = 0;
  virtual int temporal_length() const = 0;
  virtual int depth() const = 0;

  /// Frame 0 at the full step budget.
  virtual FrameResult sample_root(std::uint64_t seed, const StagePrompt& prompt) = 0;

  /// Child of `parent` at frame `t` denoised for `steps` steps (1..steps_per_frame).
  virtual FrameResult extend(const CandidateNode& parent, int t, std::uint64_t seed,
                             const StagePrompt& prompt, int steps) = 0;

  /// A fresh frame at zero denoising steps. Requires partial-denoise support.
  virtual PartialFrameState begin_frame(const CandidateNode& parent, int t, std::uint64_t seed,
                                        const StagePrompt& prompt) = 0;

  /// Advances `state` by `steps` further denoising steps.
  virtual FrameResult partial_denoise(const PartialFrameState& state, int steps) = 0;

  virtual Artifact decode(std::span<const LatentRef> frames) = 0;
};

/// Checks the extend() preconditions shared by every backend.
void check_extend_args(const Generator& generator, const CandidateNode& parent, int t, int steps);

/// Decodes a complete path; throws PreconditionError unless it has exactly
/// `schedule.depth` nodes linked by parent ids.
Artifact decode_path(Generator& generator, const SearchPath& path, const Schedule& schedule);

}  // namespace tof
