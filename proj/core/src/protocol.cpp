#include "cbodd/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <json.hpp>
#include <set>

#include "cbodd/errors.hpp"
#include "cbodd/metrics.hpp"

namespace cbodd {

namespace {

enum Stream : std::uint64_t { kSplitStream = 600, kShuffleStream = 700 };

template <typename T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.below(i)]);
}

}  // namespace

std::string_view to_string(Protocol p) { return p == Protocol::Within ? "within" : "cross"; }

Protocol parse_protocol(std::string_view text) {
  if (text == "within") return Protocol::Within;
  if (text == "cross") return Protocol::Cross;
  throw ConfigError("protocol must be within or cross, got '" + std::string(text) + "'");
}

ClipSplit split_domain(const std::vector<SyntheticClip>& clips, char domain, double test_fraction,
                       std::uint64_t seed) {
  std::map<Label, std::vector<std::string>> groups;
  for (const auto& c : clips)
    if (c.domain == domain) groups[c.label].push_back(c.clip_id);
  ClipSplit split;
  const Rng root(Rng::mix(seed, kSplitStream));
  for (auto& [label, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    Rng rng = root.fork(static_cast<std::uint64_t>(label));
    shuffle_in_place(ids, rng);
    std::size_t n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(ids.size())));
    if (ids.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
    split.test_ids.insert(split.test_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train_ids.insert(split.train_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  }
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  return split;
}

void check_no_leakage(const std::vector<std::string>& train_ids, const std::vector<std::string>& test_ids) {
  const std::set<std::string> train(train_ids.begin(), train_ids.end());
  for (const auto& id : test_ids)
    if (train.count(id)) throw LeakageError("clip " + id + " appears in both the train and test sets");
}

void AccessLog::record(const std::string& id) {
  if (std::find(clip_ids.begin(), clip_ids.end(), id) == clip_ids.end()) clip_ids.push_back(id);
}

bool AccessLog::touched_domain(char domain) const {
  return std::any_of(clip_ids.begin(), clip_ids.end(), [domain](const std::string& id) { return id.front() == domain; });
}

std::vector<EpochLoss> train_model(CbodModel& model, const std::vector<const SyntheticClip*>& train,
                                   const EpochCallback& on_epoch, AccessLog* log) {
  const RunConfig& cfg = model.config();
  if (train.empty()) throw DataError("no training clips");
  struct Sample {
    const SyntheticClip* clip;
    std::size_t frame;
  };
  std::vector<Sample> samples;
  for (const auto* clip : train) {
    if (log) log->record(clip->clip_id);
    for (std::size_t t = 0; t < clip->frames.size(); t += cfg.train.frame_stride) samples.push_back({clip, t});
  }

  Adam optimizer(tensors_of(model.parameters()), cfg.optim);
  const Rng shuffle_root(Rng::mix(cfg.train.seed, kShuffleStream));
  std::vector<EpochLoss> trace;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    Rng rng = shuffle_root.fork(epoch);
    shuffle_in_place(samples, rng);
    EpochLoss acc{epoch};
    for (std::size_t start = 0; start < samples.size(); start += cfg.train.batch_size) {
      const std::size_t end = std::min(samples.size(), start + cfg.train.batch_size);
      std::vector<Frame> frames;
      std::vector<int> labels;
      std::vector<double> expressions;
      for (std::size_t i = start; i < end; ++i) {
        frames.push_back(samples[i].clip->frames[samples[i].frame]);
        labels.push_back(static_cast<int>(samples[i].clip->label));
        expressions.push_back(samples[i].clip->expression[samples[i].frame]);
      }
      const auto fwd = model.forward(stack_frames(frames));
      const auto terms = model.objective(fwd, labels, expressions);
      const double objective = terms.objective.item();
      if (!std::isfinite(objective))
        throw NumericError("non-finite objective in epoch " + std::to_string(epoch) + " at sample " +
                           std::to_string(start));
      optimizer.zero_grad();
      terms.objective.backward();
      optimizer.step();
      const auto bd = terms.loss.breakdown();
      const double w = static_cast<double>(end - start);
      acc.l_cls += w * bd.l_cls;
      acc.l_branch_ortho += w * bd.l_branch_ortho;
      acc.l_cross_ortho += w * bd.l_cross_ortho;
      acc.total += w * bd.total;
    }
    const double n = static_cast<double>(samples.size());
    acc.l_cls /= n;
    acc.l_branch_ortho /= n;
    acc.l_cross_ortho /= n;
    acc.total /= n;
    optimizer.end_epoch();
    trace.push_back(acc);
    if (on_epoch) on_epoch(acc, model);
  }
  return trace;
}

std::vector<ClipScores> score_clips(const CbodModel& model, const std::vector<const SyntheticClip*>& clips) {
  const RunConfig& cfg = model.config();
  NoGradGuard no_grad;
  std::vector<ClipScores> out;
  for (const auto* clip : clips) {
    ClipScores cs{clip->clip_id, clip->label, {}, {}};
    std::vector<Frame> chunk;
    auto flush = [&] {
      if (chunk.empty()) return;
      const auto probs = model.forward(stack_frames(chunk)).probs;
      for (std::size_t i = 0; i < chunk.size(); ++i)
        cs.frames.push_back(make_frame_verdict(probs.value(i), chunk[i].frame_index, cfg.detector.threshold));
      chunk.clear();
    };
    for (std::size_t t = 0; t < clip->frames.size(); t += cfg.train.frame_stride) {
      chunk.push_back(clip->frames[t]);
      if (chunk.size() == cfg.train.batch_size) flush();
    }
    flush();
    cs.video = video_verdict(cs.frames, clip->clip_id, cfg.detector.tie_rule);
    out.push_back(std::move(cs));
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["protocol"] = std::string(cbodd::to_string(protocol));
  j["frame_auc"] = frame_auc;
  j["video_auc"] = video_auc;
  j["variant"] = variant;
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  auto videos = nlohmann::ordered_json::array();
  for (const auto& v : per_video) {
    nlohmann::ordered_json e;
    e["clip_id"] = v.clip_id;
    e["decision"] = std::string(cbodd::to_string(v.decision));
    e["mean_confidence"] = v.mean_confidence;
    videos.push_back(std::move(e));
  }
  j["per_video"] = std::move(videos);
  return j.dump(2) + "\n";
}

EvalReport make_report(Protocol protocol, const CbodModel& model, const std::vector<ClipScores>& scores) {
  const RunConfig& cfg = model.config();
  std::vector<double> frame_scores, video_scores;
  std::vector<int> frame_labels, video_labels;
  EvalReport r;
  for (const auto& cs : scores) {
    for (const auto& f : cs.frames) {
      frame_scores.push_back(f.probability);
      frame_labels.push_back(static_cast<int>(cs.label));
    }
    video_scores.push_back(cs.video.score(cfg.detector.video_score));
    video_labels.push_back(static_cast<int>(cs.label));
    r.per_video.push_back({cs.clip_id, cs.video.decision, cs.video.mean_confidence});
  }
  r.protocol = protocol;
  r.frame_auc = auc(frame_scores, frame_labels);
  r.video_auc = auc(video_scores, video_labels);
  r.variant = std::string(to_string(cfg.variant));
  r.seed = cfg.train.seed;
  r.config_digest = cfg.digest();
  return r;
}

ProtocolSets protocol_sets(Protocol protocol, const RunConfig& config, const std::vector<SyntheticClip>& corpus) {
  const char train_domain = config.train.train_domain;
  const ClipSplit split = split_domain(corpus, train_domain, config.train.val_fraction, config.train.seed);
  if (split.train_ids.empty())
    throw ConfigError(std::string("corpus has no clips of train domain ") + train_domain);

  std::vector<std::string> test_ids;
  if (protocol == Protocol::Within) {
    test_ids = split.test_ids;
  } else {
    const char other = train_domain == 'A' ? 'B' : 'A';
    for (const auto& c : corpus)
      if (c.domain == other) test_ids.push_back(c.clip_id);
  }
  if (test_ids.empty())
    throw ConfigError(std::string(to_string(protocol)) + " protocol has no test clips in this corpus");
  check_no_leakage(split.train_ids, test_ids);

  std::map<std::string, const SyntheticClip*> by_id;
  for (const auto& c : corpus) by_id.emplace(c.clip_id, &c);
  ProtocolSets sets;
  for (const auto& id : split.train_ids) sets.train.push_back(by_id.at(id));
  for (const auto& id : test_ids) sets.test.push_back(by_id.at(id));
  return sets;
}

EvalReport evaluate(Protocol protocol, const CbodModel& model, const std::vector<SyntheticClip>& corpus) {
  const auto sets = protocol_sets(protocol, model.config(), corpus);
  return make_report(protocol, model, score_clips(model, sets.test));
}

ProtocolRun run_protocol(Protocol protocol, const RunConfig& config, const std::vector<SyntheticClip>& corpus) {
  const auto sets = protocol_sets(protocol, config, corpus);
  CbodModel model(config);
  ProtocolRun run;
  run.trace = train_model(model, sets.train, {}, &run.access);
  run.report = make_report(protocol, model, score_clips(model, sets.test));
  return run;
}

ProtocolRun run_ablation(Variant variant, const RunConfig& config, Protocol protocol,
                         const std::vector<SyntheticClip>& corpus) {
  RunConfig c = config;
  c.variant = variant;
  return run_protocol(protocol, c, corpus);
}

}  // namespace cbodd
