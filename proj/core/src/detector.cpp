#include "cbodd/detector.hpp"

#include <algorithm>

#include "cbodd/errors.hpp"

namespace cbodd {

std::string_view to_string(Label label) { return label == Label::Fake ? "fake" : "real"; }
std::string_view to_string(TieRule rule) { return rule == TieRule::Fake ? "fake" : "real"; }
std::string_view to_string(VideoScore score) {
  return score == VideoScore::MeanConfidence ? "mean-confidence" : "vote-fraction";
}

Label parse_label(std::string_view text) {
  if (text == "fake" || text == "1") return Label::Fake;
  if (text == "real" || text == "0") return Label::Real;
  throw LabelError("unknown label '" + std::string(text) + "'");
}

TieRule parse_tie_rule(std::string_view text) {
  if (text == "fake") return TieRule::Fake;
  if (text == "real") return TieRule::Real;
  throw ConfigError("unknown tie rule '" + std::string(text) + "'");
}

VideoScore parse_video_score(std::string_view text) {
  if (text == "mean-confidence") return VideoScore::MeanConfidence;
  if (text == "vote-fraction") return VideoScore::VoteFraction;
  throw ConfigError("unknown video score '" + std::string(text) + "'");
}

void DetectorConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("decision threshold must lie in (0,1)");
}

FusedFeature fuse(std::span<const DisentangledPair> pairs, std::span<const BranchId> expected) {
  if (expected.empty()) throw CompletenessError("fusion needs at least one branch");
  FusedFeature out;
  std::vector<Tensor> parts;
  for (auto id : kAllBranches) {
    if (std::find(expected.begin(), expected.end(), id) == expected.end()) continue;
    auto it = std::find_if(pairs.begin(), pairs.end(), [id](const auto& p) { return p.branch == id; });
    if (it == pairs.end())
      throw CompletenessError("fusion input lacks branch " + std::string(branch_name(id)));
    parts.push_back(it->shared);
    parts.push_back(it->disentangled);
    out.order.push_back(id);
  }
  out.values = concat_last(parts);
  return out;
}

FusedFeature fuse(std::span<const DisentangledPair> pairs) {
  std::vector<BranchId> ids(kAllBranches.begin(), kAllBranches.end());
  return fuse(pairs, ids);
}

Classifier::Classifier(std::size_t in_features, Rng& rng) : layer_(in_features, 1, true, rng) {}

Tensor Classifier::logits(const FusedFeature& fused) const {
  Tensor x = fused.values.rank() == 1 ? reshape(fused.values, {1, fused.values.dim(0)}) : fused.values;
  if (x.rank() != 2 || x.dim(1) != layer_.in_features())
    throw DimensionError("classifier expects " + std::to_string(layer_.in_features()) + " features, got " +
                         shape_str(fused.values.shape()));
  return reshape(layer_.forward(x), {x.dim(0)});
}

Tensor Classifier::probabilities(const FusedFeature& fused) const { return sigmoid(logits(fused)); }

void Classifier::collect(NamedParams& out, const std::string& prefix) const { layer_.collect(out, prefix); }

FrameVerdict make_frame_verdict(double probability, std::size_t frame_index, double threshold) {
  return FrameVerdict{probability, probability > threshold ? Label::Fake : Label::Real, frame_index};
}

FrameVerdict classify_frame(const Classifier& classifier, const FusedFeature& fused, std::size_t frame_index,
                            double threshold) {
  NoGradGuard guard;
  Tensor p = classifier.probabilities(fused);
  if (p.numel() != 1) throw DimensionError("classify_frame expects a single fused vector");
  return make_frame_verdict(p.item(), frame_index, threshold);
}

VideoVerdict video_verdict(std::span<const FrameVerdict> frames, std::string clip_id, TieRule tie_rule) {
  if (frames.empty()) throw InputError("video_verdict: no frames for clip '" + clip_id + "'");
  VideoVerdict v;
  v.clip_id = std::move(clip_id);
  double acc = 0.0;
  // Sum in frame-index order so the mean does not depend on input order.
  std::vector<const FrameVerdict*> sorted;
  for (const auto& f : frames) sorted.push_back(&f);
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return a->frame_index != b->frame_index ? a->frame_index < b->frame_index : a->probability < b->probability;
  });
  for (const auto* f : sorted) {
    (f->label == Label::Fake ? v.fake_votes : v.real_votes) += 1;
    acc += f->probability;
  }
  const double n = static_cast<double>(frames.size());
  v.mean_confidence = acc / n;
  v.vote_fraction = static_cast<double>(v.fake_votes) / n;
  if (v.fake_votes != v.real_votes)
    v.decision = v.fake_votes > v.real_votes ? Label::Fake : Label::Real;
  else
    v.decision = tie_rule == TieRule::Fake ? Label::Fake : Label::Real;
  return v;
}

LossBreakdown LossTerms::breakdown() const {
  LossBreakdown b;
  b.l_cls = l_cls.item();
  b.l_branch_ortho = l_branch_ortho.item();
  b.l_cross_ortho = l_cross_ortho.item();
  b.total = total.item();
  b.lambda_branch = lambda_branch;
  b.lambda_cross = lambda_cross;
  return b;
}

LossTerms total_loss(const Tensor& probs, std::span<const int> labels, const Tensor& branch_ortho,
                     const Tensor& cross_ortho, double lambda_branch, double lambda_cross) {
  if (!(lambda_branch >= 0.0) || !(lambda_cross >= 0.0)) throw ConfigError("lambdas must be non-negative");
  if (probs.rank() != 1 || probs.dim(0) != labels.size())
    throw DimensionError("total_loss: " + std::to_string(labels.size()) + " labels for probabilities " +
                         shape_str(probs.shape()));
  std::vector<double> targets;
  targets.reserve(labels.size());
  for (int y : labels) {
    if (y != 0 && y != 1) throw LabelError("label " + std::to_string(y) + " outside {0,1}");
    targets.push_back(static_cast<double>(y));
  }
  LossTerms t;
  t.l_cls = binary_cross_entropy(probs, Tensor(probs.shape(), std::move(targets)));
  t.l_branch_ortho = branch_ortho;
  t.l_cross_ortho = cross_ortho;
  t.lambda_branch = lambda_branch;
  t.lambda_cross = lambda_cross;
  t.total = add(add(t.l_cls, scale(branch_ortho, lambda_branch)), scale(cross_ortho, lambda_cross));
  return t;
}

}  // namespace cbodd
