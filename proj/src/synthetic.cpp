#include "tof/synthetic.hpp"

#include <cstdio>
#include <numbers>

#include "tof/errors.hpp"
#include "tof/seed.hpp"

namespace tof {

namespace {

constexpr std::uint64_t kTargetTag = 0x7461726765747321ULL;

int stage_index(Stage s) { return static_cast<int>(s); }

Eigen::VectorXd normalized_or(const Eigen::VectorXd& v, const Eigen::VectorXd& fallback) {
  const double n = v.norm();
  return n > 1e-300 ? Eigen::VectorXd(v / n) : fallback;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string synthetic_handle(const std::string& parent_handle, std::uint64_t seed, int steps_done,
                             int steps_total) {
  const std::uint64_t h = hash64(fnv1a64(parent_handle), seed);
  std::string out = "syn-" + hex64(h);
  if (steps_done != steps_total) out += "@" + std::to_string(steps_done) + "/" + std::to_string(steps_total);
  return out;
}

SyntheticLandscape::SyntheticLandscape(LandscapeParams params) : params_(params) {
  if (params_.dimension <= 0) throw ConfigError("landscape.dimension must be positive");
  for (int s = 0; s < 3; ++s) {
    const Eigen::VectorXd g = gaussian(hash64(params_.key, kTargetTag, static_cast<std::uint64_t>(s)));
    targets_[s] = g / g.norm();
  }
}

const Eigen::VectorXd& SyntheticLandscape::target(Stage stage) const { return targets_[stage_index(stage)]; }

Eigen::VectorXd SyntheticLandscape::gaussian(std::uint64_t seed) const {
  const int d = params_.dimension;
  Eigen::VectorXd g(d);
  for (int i = 0; i < d; i += 2) {
    const auto pair = static_cast<std::uint64_t>(i / 2);
    const double u1 = unit_interval(hash64(seed, params_.key, 2 * pair));
    const double u2 = unit_interval(hash64(seed, params_.key, 2 * pair + 1));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    g[i] = r * std::cos(phi);
    if (i + 1 < d) g[i + 1] = r * std::sin(phi);
  }
  return g;
}

Eigen::VectorXd SyntheticLandscape::root_feature(std::uint64_t seed) const {
  const Eigen::VectorXd g = gaussian(seed);
  return normalized_or(g, targets_[0]);
}

Eigen::VectorXd SyntheticLandscape::child_feature(const Eigen::VectorXd& parent, std::uint64_t seed,
                                                  Stage stage) const {
  const Eigen::VectorXd pulled = slerp(parent, target(stage), params_.pull);
  const double scale = params_.noise_scale / std::sqrt(static_cast<double>(params_.dimension));
  const Eigen::VectorXd moved = pulled + scale * gaussian(seed);
  return normalized_or(moved, target(stage));
}

double SyntheticLandscape::frame_quality(const Eigen::VectorXd& feature, const Eigen::VectorXd* parent,
                                         Stage stage) const {
  double q = feature.dot(target(stage));
  if (parent != nullptr) q -= params_.smoothness_penalty * (feature - *parent).squaredNorm();
  return q;
}

double SyntheticLandscape::path_quality(std::span<const Eigen::VectorXd> features,
                                        std::span<const Stage> stages) const {
  if (features.empty()) throw PreconditionError("path quality of an empty path");
  if (features.size() != stages.size()) throw PreconditionError("one stage per frame required");
  double total = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    total += frame_quality(features[i], i == 0 ? nullptr : &features[i - 1], stages[i]);
  }
  return total / static_cast<double>(features.size());
}

// SyntheticGenerator

SyntheticGenerator::SyntheticGenerator(SyntheticLandscape landscape, const Schedule& schedule)
    : landscape_(std::move(landscape)),
      steps_per_frame_(schedule.denoise_steps_per_frame),
      temporal_length_(schedule.latent_temporal_length),
      depth_(schedule.depth) {}

LatentRef SyntheticGenerator::frame_latent(const std::optional<LatentRef>& parent, std::uint64_t seed,
                                           Stage stage, int steps_done) const {
  LatentRef out;
  out.handle = synthetic_handle(parent ? parent->handle : std::string{}, seed, steps_done, steps_per_frame_);
  if (!parent) {
    out.state = landscape_.root_feature(seed);
    return out;
  }
  const Eigen::VectorXd& start = parent->state;
  if (start.size() != landscape_.dimension()) {
    throw PreconditionError("synthetic generator given a latent it did not produce");
  }
  if (steps_done <= 0) {
    out.state = start;
    return out;
  }
  const Eigen::VectorXd final_frame = landscape_.child_feature(start, seed, stage);
  if (steps_done >= steps_per_frame_) {
    out.state = final_frame;
    return out;
  }
  const double p = static_cast<double>(steps_done) / steps_per_frame_;
  out.state = normalized_or((1.0 - p) * start + p * final_frame, final_frame);
  return out;
}

FrameResult SyntheticGenerator::sample_root(std::uint64_t seed, const StagePrompt& prompt) {
  PartialFrameState st;
  st.frame_index = 0;
  st.seed = seed;
  st.prompt = prompt;
  st.steps_total = steps_per_frame_;
  st.steps_done = steps_per_frame_;
  st.latent = frame_latent(std::nullopt, seed, prompt.stage, st.steps_done);
  return {std::move(st), generate_event(steps_per_frame_, temporal_length_)};
}

FrameResult SyntheticGenerator::extend(const CandidateNode& parent, int t, std::uint64_t seed,
                                       const StagePrompt& prompt, int steps) {
  check_extend_args(*this, parent, t, steps);
  PartialFrameState st;
  st.parent = parent.latent;
  st.frame_index = t;
  st.seed = seed;
  st.prompt = prompt;
  st.steps_total = steps_per_frame_;
  st.steps_done = steps;
  st.latent = frame_latent(st.parent, seed, prompt.stage, steps);
  return {std::move(st), generate_event(steps, temporal_length_)};
}

PartialFrameState SyntheticGenerator::begin_frame(const CandidateNode& parent, int t, std::uint64_t seed,
                                                  const StagePrompt& prompt) {
  check_extend_args(*this, parent, t, 1);
  PartialFrameState st;
  st.parent = parent.latent;
  st.frame_index = t;
  st.seed = seed;
  st.prompt = prompt;
  st.steps_total = steps_per_frame_;
  st.steps_done = 0;
  st.latent = frame_latent(st.parent, seed, prompt.stage, 0);
  return st;
}

FrameResult SyntheticGenerator::partial_denoise(const PartialFrameState& state, int steps) {
  if (steps < 0) throw PreconditionError("negative denoising step count");
  if (state.steps_done + steps > state.steps_total) {
    throw PreconditionError("denoising past the per-frame step budget");
  }
  PartialFrameState next = state;
  next.steps_done = state.steps_done + steps;
  if (steps > 0) next.latent = frame_latent(state.parent, state.seed, state.prompt.stage, next.steps_done);
  const bool continuation = state.steps_done > 0;
  return {std::move(next), generate_event(steps, temporal_length_, continuation)};
}

Artifact SyntheticGenerator::decode(std::span<const LatentRef> frames) {
  Artifact a;
  std::uint64_t h = 0x6465636f64656421ULL;
  for (const auto& f : frames) {
    h = hash64(h, fnv1a64(f.handle));
    a.frames.push_back(f);
  }
  a.handle = "syn-video-" + hex64(h);
  return a;
}

// SyntheticVerifier

SyntheticVerifier::SyntheticVerifier(SyntheticLandscape landscape, SyntheticTerm term, std::string id)
    : landscape_(std::move(landscape)), term_(term), id_(std::move(id)) {}

double SyntheticVerifier::frame_term(const Eigen::VectorXd& f, const Eigen::VectorXd* parent,
                                     Stage stage) const {
  switch (term_) {
    case SyntheticTerm::full:
      return landscape_.frame_quality(f, parent, stage);
    case SyntheticTerm::alignment:
      return f.dot(landscape_.target(stage));
    case SyntheticTerm::smoothness:
      return parent ? -landscape_.params().smoothness_penalty * (f - *parent).squaredNorm() : 0.0;
  }
  return 0.0;
}

double SyntheticVerifier::score(const Artifact& artifact, const StagePrompt& prompt, ScoreMode mode) {
  if (artifact.frames.empty()) throw VerifierFault("synthetic verifier given an empty artifact");
  for (const auto& f : artifact.frames) {
    if (f.state.size() != landscape_.dimension()) {
      throw VerifierFault("synthetic verifier given a latent without a feature point");
    }
  }
  const auto& fr = artifact.frames;
  if (mode == ScoreMode::frame) {
    const std::size_t last = fr.size() - 1;
    return frame_term(fr[last].state, last == 0 ? nullptr : &fr[last - 1].state, prompt.stage);
  }
  if (artifact.stages.size() != fr.size()) throw VerifierFault("artifact lacks per-frame stages");
  if (term_ == SyntheticTerm::full) {
    std::vector<Eigen::VectorXd> features;
    features.reserve(fr.size());
    for (const auto& f : fr) features.push_back(f.state);
    return landscape_.path_quality(features, artifact.stages);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < fr.size(); ++i) {
    total += frame_term(fr[i].state, i == 0 ? nullptr : &fr[i - 1].state, artifact.stages[i]);
  }
  return total / static_cast<double>(fr.size());
}

}  // namespace tof
