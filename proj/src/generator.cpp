#include "tof/generator.hpp"

#include "tof/errors.hpp"

namespace tof {

void check_extend_args(const Generator& generator, const CandidateNode& parent, int t, int steps) {
  if (t != parent.frame_index + 1) {
    throw PreconditionError("extend: frame " + std::to_string(t) + " does not follow parent frame " +
                            std::to_string(parent.frame_index));
  }
  if (t >= generator.depth()) {
    throw RangeError("extend: depth overflow (frame " + std::to_string(t) + " >= depth " +
                     std::to_string(generator.depth()) + ")");
  }
  if (steps <= 0) throw PreconditionError("extend: step budget must be at least one step");
  if (steps > generator.steps_per_frame()) {
    throw PreconditionError("extend: step budget exceeds denoise_steps_per_frame");
  }
}

Artifact decode_path(Generator& generator, const SearchPath& path, const Schedule& schedule) {
  const auto& nodes = path.nodes;
  if (static_cast<int>(nodes.size()) != schedule.depth) {
    throw PreconditionError("decode: path has " + std::to_string(nodes.size()) + " frames, expected " +
                            std::to_string(schedule.depth));
  }
  std::vector<LatentRef> frames;
  frames.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].frame_index != static_cast<int>(i)) throw PreconditionError("decode: frame indices out of order");
    if (i > 0 && nodes[i].parent_id != nodes[i - 1].node_id) {
      throw PreconditionError("decode: path nodes are not linked by parent ids");
    }
    frames.push_back(nodes[i].latent);
  }
  Artifact a = generator.decode(frames);
  a.stages.clear();
  for (int t = 0; t < schedule.depth; ++t) a.stages.push_back(stage_of_frame(t, schedule));
  return a;
}

}  // namespace tof
