#pragma once

// Training loop, scoring and the within/cross-domain evaluation protocols.
//
// The training set is always the seed-stable train part of the configured
// train domain. "within" tests on the held-out part of that domain; "cross"
// tests on every clip of the other domain.

#include <functional>
#include <string>
#include <vector>

#include "cbodd/datagen.hpp"
#include "cbodd/model.hpp"
#include "cbodd/optim.hpp"

namespace cbodd {

enum class Protocol { Within, Cross };

std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view text);

struct ClipSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// Splits the clips of `domain` by clip id, stratified by label. Each label
/// group is shuffled with a stream derived from `seed` and its first
/// round(fraction * n) clips (at least one when n >= 2) go to the test side.
ClipSplit split_domain(const std::vector<SyntheticClip>& clips, char domain, double test_fraction,
                       std::uint64_t seed);

/// Throws LeakageError naming the first clip id present on both sides.
void check_no_leakage(const std::vector<std::string>& train_ids, const std::vector<std::string>& test_ids);

/// Clip ids read by the trainer, in order of first access.
struct AccessLog {
  std::vector<std::string> clip_ids;

  void record(const std::string& id);
  bool touched_domain(char domain) const;
};

struct EpochLoss {
  std::size_t epoch = 0;  // 1-based
  double l_cls = 0.0;
  double l_branch_ortho = 0.0;
  double l_cross_ortho = 0.0;
  double total = 0.0;
};

/// Called after every epoch; the model is in its post-epoch state.
using EpochCallback = std::function<void(const EpochLoss&, const CbodModel&)>;

/// Mini-batch Adam over every (clip, frame) pair of `train`, reshuffled
/// each epoch from the config seed. Throws NumericError as soon as a batch
/// objective is non-finite, before any parameter is touched by it.
std::vector<EpochLoss> train_model(CbodModel& model, const std::vector<const SyntheticClip*>& train,
                                   const EpochCallback& on_epoch = {}, AccessLog* log = nullptr);

struct ClipScores {
  std::string clip_id;
  Label label = Label::Real;
  std::vector<FrameVerdict> frames;
  VideoVerdict video;
};

/// Inference over every frame_stride-th frame of each clip.
std::vector<ClipScores> score_clips(const CbodModel& model, const std::vector<const SyntheticClip*>& clips);

struct VideoEntry {
  std::string clip_id;
  Label decision = Label::Real;
  double mean_confidence = 0.0;
};

struct EvalReport {
  Protocol protocol = Protocol::Within;
  double frame_auc = 0.0;
  double video_auc = 0.0;
  std::string variant;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<VideoEntry> per_video;

  std::string to_json() const;
};

EvalReport make_report(Protocol protocol, const CbodModel& model, const std::vector<ClipScores>& scores);

/// Clips the protocol trains on and tests on for `config`. Throws
/// ConfigError when the test side is empty (for example a cross protocol on
/// a single-domain corpus) and LeakageError when the sides overlap.
struct ProtocolSets {
  std::vector<const SyntheticClip*> train;
  std::vector<const SyntheticClip*> test;
};
ProtocolSets protocol_sets(Protocol protocol, const RunConfig& config, const std::vector<SyntheticClip>& corpus);

/// Evaluates an already trained model on the protocol's test side.
EvalReport evaluate(Protocol protocol, const CbodModel& model, const std::vector<SyntheticClip>& corpus);

struct ProtocolRun {
  EvalReport report;
  std::vector<EpochLoss> trace;
  AccessLog access;
};

/// Trains a fresh model from `config` and evaluates it.
ProtocolRun run_protocol(Protocol protocol, const RunConfig& config, const std::vector<SyntheticClip>& corpus);

/// run_protocol with the config's variant replaced by `variant`.
ProtocolRun run_ablation(Variant variant, const RunConfig& config, Protocol protocol,
                         const std::vector<SyntheticClip>& corpus);

}  // namespace cbodd
