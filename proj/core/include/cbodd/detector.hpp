#pragma once

#include <span>
#include <string>
#include <vector>

#include "cbodd/nn.hpp"
#include "cbodd/ofdm.hpp"

namespace cbodd {

enum class Label { Real = 0, Fake = 1 };
enum class TieRule { Fake, Real };
enum class VideoScore { MeanConfidence, VoteFraction };

std::string_view to_string(Label label);
std::string_view to_string(TieRule rule);
std::string_view to_string(VideoScore score);
Label parse_label(std::string_view text);
TieRule parse_tie_rule(std::string_view text);
VideoScore parse_video_score(std::string_view text);

struct DetectorConfig {
  double threshold = 0.5;  // fake iff probability > threshold
  TieRule tie_rule = TieRule::Fake;
  VideoScore video_score = VideoScore::MeanConfidence;

  void validate() const;
};

/// [B, |branches| * (d_s + d_d)] in branch order LS, MG, CE, each as
/// [shared; disentangled].
struct FusedFeature {
  Tensor values;
  std::vector<BranchId> order;

  std::size_t dim() const { return values.dim(1); }
};

/// Concatenates the pairs of `expected` branches (in canonical LS, MG, CE
/// order, regardless of the order in `pairs`). Throws CompletenessError when
/// an expected branch is missing.
FusedFeature fuse(std::span<const DisentangledPair> pairs, std::span<const BranchId> expected);
FusedFeature fuse(std::span<const DisentangledPair> pairs);

/// Single affine layer + sigmoid.
class Classifier {
 public:
  Classifier() = default;
  Classifier(std::size_t in_features, Rng& rng);

  /// [B] pre-sigmoid logits.
  Tensor logits(const FusedFeature& fused) const;
  /// [B] probabilities of "fake".
  Tensor probabilities(const FusedFeature& fused) const;
  void collect(NamedParams& out, const std::string& prefix) const;

  std::size_t in_features() const { return layer_.in_features(); }
  Tensor& weight() { return layer_.weight(); }
  const Tensor& bias() const { return layer_.bias(); }

 private:
  Linear layer_;
};

struct FrameVerdict {
  double probability = 0.5;
  Label label = Label::Real;
  std::size_t frame_index = 0;
};

FrameVerdict make_frame_verdict(double probability, std::size_t frame_index, double threshold = 0.5);

/// Classifies a single fused vector ([D_f] or [1, D_f]).
FrameVerdict classify_frame(const Classifier& classifier, const FusedFeature& fused, std::size_t frame_index = 0,
                            double threshold = 0.5);

struct VideoVerdict {
  std::string clip_id;
  std::size_t fake_votes = 0;
  std::size_t real_votes = 0;
  Label decision = Label::Real;
  double mean_confidence = 0.0;
  double vote_fraction = 0.0;  // fake_votes / frames

  double score(VideoScore mode) const {
    return mode == VideoScore::MeanConfidence ? mean_confidence : vote_fraction;
  }
};

/// Majority vote over frame labels; ties resolved by `tie_rule`. Throws
/// InputError on an empty list.
VideoVerdict video_verdict(std::span<const FrameVerdict> frames, std::string clip_id = {},
                           TieRule tie_rule = TieRule::Fake);

struct LossBreakdown {
  double l_cls = 0.0;
  double l_branch_ortho = 0.0;
  double l_cross_ortho = 0.0;
  double total = 0.0;
  double lambda_branch = 0.0;
  double lambda_cross = 0.0;
};

struct LossTerms {
  Tensor l_cls;
  Tensor l_branch_ortho;
  Tensor l_cross_ortho;
  Tensor total;
  double lambda_branch = 0.0;
  double lambda_cross = 0.0;

  LossBreakdown breakdown() const;
};

/// total = BCE(probs, labels) + lambda_branch * branch + lambda_cross * cross.
/// Throws LabelError for labels outside {0, 1}.
LossTerms total_loss(const Tensor& probs, std::span<const int> labels, const Tensor& branch_ortho,
                     const Tensor& cross_ortho, double lambda_branch, double lambda_cross);

}  // namespace cbodd
