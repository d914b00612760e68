#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "tof/core_model.hpp"
#include "tof/generator.hpp"
#include "tof/verifier.hpp"

namespace tof {

/// Spherical interpolation between unit vectors `from` and `to`.
/// Falls back to normalized linear interpolation when they are (anti)parallel.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> slerp(const Eigen::MatrixBase<DerivedA>& from,
                                                                  const Eigen::MatrixBase<DerivedB>& to,
                                                                  typename DerivedA::Scalar alpha) {
  using Scalar = typename DerivedA::Scalar;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Scalar cos_theta = std::clamp(from.dot(to), Scalar(-1), Scalar(1));
  const Scalar theta = std::acos(cos_theta);
  const Scalar sin_theta = std::sin(theta);
  if (sin_theta < Scalar(1e-9)) {
    Vec mixed = (Scalar(1) - alpha) * from + alpha * to;
    const Scalar n = mixed.norm();
    return n > Scalar(0) ? Vec(mixed / n) : Vec(to);
  }
  const Scalar wa = std::sin((Scalar(1) - alpha) * theta) / sin_theta;
  const Scalar wb = std::sin(alpha * theta) / sin_theta;
  return wa * from + wb * to;
}

/// Closed-form stand-in for a video model.
///
/// Every frame is a point on the unit sphere in R^d. A root frame is the
/// normalized Gaussian vector keyed by its seed; a child frame is
///
///   normalize(slerp(parent, target(stage), pull) + noise_scale * g(seed) / sqrt(d))
///
/// with g(seed) a keyed Gaussian vector. Per-frame quality rewards alignment
/// with the stage target and penalizes jumps from the parent:
///
///   q = <f, target(stage)> - smoothness_penalty * |f - parent|^2
///
/// and path quality is the mean of q over frames (the root has no penalty).
class SyntheticLandscape {
 public:
  explicit SyntheticLandscape(LandscapeParams params = {});

  const LandscapeParams& params() const { return params_; }
  int dimension() const { return params_.dimension; }
  const Eigen::VectorXd& target(Stage stage) const;

  /// Keyed standard-normal vector (Box-Muller over counter-based hashes).
  Eigen::VectorXd gaussian(std::uint64_t seed) const;

  Eigen::VectorXd root_feature(std::uint64_t seed) const;
  Eigen::VectorXd child_feature(const Eigen::VectorXd& parent, std::uint64_t seed, Stage stage) const;

  double frame_quality(const Eigen::VectorXd& feature, const Eigen::VectorXd* parent, Stage stage) const;
  double path_quality(std::span<const Eigen::VectorXd> features, std::span<const Stage> stages) const;

 private:
  LandscapeParams params_;
  Eigen::VectorXd targets_[3];
};

/// In-process generator over a SyntheticLandscape. Partially denoised frames
/// interpolate from the parent frame toward the final frame in proportion to
/// denoise progress; the final frame never depends on how steps were split.
class SyntheticGenerator final : public Generator {
 public:
  SyntheticGenerator(SyntheticLandscape landscape, const Schedule& schedule);

  GeneratorCapabilities capabilities() const override { return {true, true, true}; }
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

  const SyntheticLandscape& landscape() const { return landscape_; }

  /// Latent of a frame denoised for `steps_done` of `steps_total` steps.
  LatentRef frame_latent(const std::optional<LatentRef>& parent, std::uint64_t seed, Stage stage,
                         int steps_done) const;

 private:
  SyntheticLandscape landscape_;
  int steps_per_frame_;
  int temporal_length_;
  int depth_;
};

/// Which terms of the closed-form quality a synthetic verifier reports.
enum class SyntheticTerm { full, alignment, smoothness };

/// Verifier reporting the closed-form synthetic quality.
///
/// frame mode scores the last frame of the artifact against the prompt's
/// stage target; clip and final modes return the mean quality over all frames
/// using each frame's own stage.
class SyntheticVerifier final : public Verifier {
 public:
  SyntheticVerifier(SyntheticLandscape landscape, SyntheticTerm term = SyntheticTerm::full,
                    std::string id = "synthetic");

  const std::string& id() const override { return id_; }
  double score(const Artifact& artifact, const StagePrompt& prompt, ScoreMode mode) override;

 private:
  double frame_term(const Eigen::VectorXd& f, const Eigen::VectorXd* parent, Stage stage) const;

  SyntheticLandscape landscape_;
  SyntheticTerm term_;
  std::string id_;
};

/// Stable FNV-1a hash of a string.
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Handle of a synthetic latent: identifies parent handle, seed and progress.
std::string synthetic_handle(const std::string& parent_handle, std::uint64_t seed, int steps_done,
                             int steps_total);

}  // namespace tof
