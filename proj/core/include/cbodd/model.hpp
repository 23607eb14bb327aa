#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cbodd/checkpoint.hpp"
#include "cbodd/config.hpp"
#include "cbodd/detector.hpp"
#include "cbodd/encoders.hpp"
#include "cbodd/ofdm.hpp"

namespace cbodd {

/// |active branches| * (d_s + d_d), without building the model.
std::size_t fused_dimension(const RunConfig& config);

struct ForwardResult {
  std::vector<BranchEmbedding> embeddings;  // one per active branch, LS/MG/CE order
  std::vector<DisentangledPair> pairs;
  FusedFeature fused;
  Tensor logits;      // [N]
  Tensor probs;       // [N]
  Tensor expression;  // [N] auxiliary CE prediction; undefined without CE
};

struct ObjectiveTerms {
  LossTerms loss;   // the classification + orthogonality objective
  Tensor aux;       // expression MSE (0 without CE)
  double aux_weight = 0.0;
  Tensor objective;  // loss.total + aux_weight * aux; what the optimizer minimizes
};

struct ModuleParamCount {
  std::string module;
  std::size_t count = 0;
};

/// The full detector for one RunConfig: active branches, their segment
/// attention, projection heads and the classifier. Initialization draws
/// every component from its own seed stream, so dropping a branch leaves
/// the others' initial weights untouched.
class CbodModel {
 public:
  explicit CbodModel(const RunConfig& config);

  ForwardResult forward(const Tensor& frames) const;
  ObjectiveTerms objective(const ForwardResult& fwd, std::span<const int> labels,
                           std::span<const double> expressions) const;

  const RunConfig& config() const { return config_; }
  const std::vector<BranchId>& branches() const { return branches_; }
  const Branch& branch(BranchId id) const;
  ProjectionHeads& heads() { return heads_; }
  const ProjectionHeads& heads() const { return heads_; }
  const Classifier& classifier() const { return classifier_; }
  std::size_t fused_dim() const;

  NamedParams parameters() const;
  std::vector<ModuleParamCount> parameter_report() const;

 private:
  RunConfig config_;
  std::vector<BranchId> branches_;
  std::map<BranchId, std::unique_ptr<Branch>> encoders_;
  std::map<BranchId, SegmentAttention> attention_;
  ProjectionHeads heads_;
  Classifier classifier_;
};

inline constexpr std::string_view kDigestRecordPrefix = "meta/config_digest/";

/// Checkpoint records for the model plus a rank-0 record whose name carries
/// the config digest.
std::vector<CheckpointRecord> model_records(const CbodModel& model);
void save_model(const std::filesystem::path& path, const CbodModel& model);
/// Digest stored in a checkpoint, or empty when absent.
std::string checkpoint_digest(const std::vector<CheckpointRecord>& records);

}  // namespace cbodd
