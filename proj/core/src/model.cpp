#include "cbodd/model.hpp"

#include <algorithm>

#include "cbodd/errors.hpp"

namespace cbodd {

namespace {

// Seed streams per component.
enum Stream : std::uint64_t { kBranchStream = 100, kAttentionStream = 200, kHeadStream = 300, kClassifierStream = 400 };

}  // namespace

CbodModel::CbodModel(const RunConfig& config) : config_(config), branches_(config.active_branches()) {
  config_.validate();
  const Rng root(config_.train.seed);
  for (auto id : branches_) {
    Rng rng = root.fork(kBranchStream + static_cast<std::uint64_t>(id));
    auto enc = make_branch(id, config_.input, config_.ls, config_.mg, config_.ce, rng);
    Rng arng = root.fork(kAttentionStream + static_cast<std::uint64_t>(id));
    attention_.emplace(id, SegmentAttention(enc->out_channels(), config_.attention, arng));
    encoders_.emplace(id, std::move(enc));
  }
  Rng hrng = root.fork(kHeadStream);
  heads_ = ProjectionHeads(config_.attention.embed_dim, config_.ofdm, branches_, hrng);
  Rng crng = root.fork(kClassifierStream);
  classifier_ = Classifier(fused_dim(), crng);
}

std::size_t fused_dimension(const RunConfig& config) {
  return config.active_branches().size() * (config.ofdm.d_shared + config.ofdm.d_disentangled);
}

std::size_t CbodModel::fused_dim() const { return fused_dimension(config_); }

const Branch& CbodModel::branch(BranchId id) const {
  auto it = encoders_.find(id);
  if (it == encoders_.end()) throw CompletenessError("branch " + std::string(branch_name(id)) + " is disabled");
  return *it->second;
}

ForwardResult CbodModel::forward(const Tensor& frames) const {
  ForwardResult out;
  const Tensor x = scale(add_scalar(frames, -config_.input.pixel_mean), 1.0 / config_.input.pixel_std);
  for (auto id : branches_) {
    const Branch& enc = *encoders_.at(id);
    FeatureMap map = enc.feature_map(x);
    if (id == BranchId::CE) out.expression = static_cast<const EmotionBranch&>(enc).expression(map);
    SegmentGrid grid = adaptive_avg_pool(map, enc.grid_h(), enc.grid_w());
    out.embeddings.push_back(attention_.at(id).forward(grid));
    out.pairs.push_back(heads_.project(out.embeddings.back()));
  }
  out.fused = fuse(out.pairs, branches_);
  out.logits = classifier_.logits(out.fused);
  out.probs = sigmoid(out.logits);
  return out;
}

ObjectiveTerms CbodModel::objective(const ForwardResult& fwd, std::span<const int> labels,
                                    std::span<const double> expressions) const {
  const double lb = config_.effective_lambda_branch();
  const double lc = config_.effective_lambda_cross();
  const bool centering = config_.ofdm.centering;
  Tensor branch = lb > 0.0 ? branch_ortho_loss(fwd.pairs, centering) : Tensor::scalar(0.0);
  Tensor cross = lc > 0.0 ? cross_ortho_loss(fwd.pairs, centering, config_.ofdm.cross_mode) : Tensor::scalar(0.0);
  ObjectiveTerms t;
  t.loss = total_loss(fwd.probs, labels, branch, cross, lb, lc);
  t.aux_weight = fwd.expression.defined() ? config_.ce.aux_weight : 0.0;
  if (fwd.expression.defined() && t.aux_weight > 0.0) {
    if (expressions.size() != fwd.expression.numel())
      throw DimensionError("expected " + std::to_string(fwd.expression.numel()) + " expression labels");
    t.aux = mse(fwd.expression, Tensor({expressions.size()}, {expressions.begin(), expressions.end()}));
    t.objective = add(t.loss.total, scale(t.aux, t.aux_weight));
  } else {
    t.aux = Tensor::scalar(0.0);
    t.objective = t.loss.total;
  }
  return t;
}

NamedParams CbodModel::parameters() const {
  NamedParams out;
  for (auto id : branches_) {
    const std::string name(branch_name(id));
    encoders_.at(id)->collect(out, name + ".backbone");
    attention_.at(id).collect(out, name + ".segment_attention");
  }
  heads_.collect(out, "heads");
  classifier_.collect(out, "classifier");
  return out;
}

std::vector<ModuleParamCount> CbodModel::parameter_report() const {
  std::vector<ModuleParamCount> out;
  for (auto id : branches_) {
    const std::string name(branch_name(id));
    NamedParams p;
    encoders_.at(id)->collect(p, name);
    out.push_back({name + " backbone", count_parameters(p)});
    p.clear();
    attention_.at(id).collect(p, name);
    out.push_back({name + " segment attention", count_parameters(p)});
  }
  NamedParams h;
  heads_.collect(h, "heads");
  out.push_back({"projection heads", count_parameters(h)});
  NamedParams c;
  classifier_.collect(c, "classifier");
  out.push_back({"classifier", count_parameters(c)});
  return out;
}

std::vector<CheckpointRecord> model_records(const CbodModel& model) {
  auto records = records_from(model.parameters());
  records.push_back({std::string(kDigestRecordPrefix) + model.config().digest(), {}, {0.0}});
  return records;
}

void save_model(const std::filesystem::path& path, const CbodModel& model) {
  write_checkpoint(path, model_records(model));
}

std::string checkpoint_digest(const std::vector<CheckpointRecord>& records) {
  for (const auto& r : records)
    if (r.name.starts_with(kDigestRecordPrefix)) return r.name.substr(kDigestRecordPrefix.size());
  return {};
}

}  // namespace cbodd
