#pragma once

// Orthogonal feature disentanglement: each branch embedding F (batch B x D)
// is split by bias-free linear heads into a shared part S = F P_s (B x d_s)
// and a disentangled part U = F P_d (B x d_d). Penalties are squared
// Frobenius norms of batched cross-Gram matrices, normalized by B^2:
//   branch: sum_b ||S_b^T U_b||_F^2 / B^2
//   cross:  sum_{i<j} ||S_i^T S_j||_F^2 / B^2

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cbodd/encoders.hpp"
#include "cbodd/nn.hpp"

namespace cbodd {

enum class HeadSharing { Shared, PerBranch };
enum class CrossMode { Batched, PerSample };

std::string_view to_string(HeadSharing mode);
std::string_view to_string(CrossMode mode);
HeadSharing parse_head_sharing(std::string_view text);
CrossMode parse_cross_mode(std::string_view text);

struct OfdmConfig {
  std::size_t d_shared = 128;
  std::size_t d_disentangled = 512;
  double lambda_branch = 0.4;
  double lambda_cross = 0.25;
  HeadSharing sharing = HeadSharing::Shared;
  /// Subtract the batch mean from each projection before forming the Gram.
  bool centering = false;
  CrossMode cross_mode = CrossMode::Batched;

  void validate() const;
};

struct DisentangledPair {
  BranchId branch = BranchId::LS;
  Tensor shared;        // [B, d_s]
  Tensor disentangled;  // [B, d_d]
};

class ProjectionHeads {
 public:
  ProjectionHeads() = default;
  /// In shared mode one head pair serves every branch in `branches`.
  ProjectionHeads(std::size_t embed_dim, const OfdmConfig& config, std::span<const BranchId> branches,
                  Rng& rng);

  DisentangledPair project(const BranchEmbedding& embedding) const;
  void collect(NamedParams& out, const std::string& prefix) const;

  std::size_t embed_dim() const { return embed_dim_; }
  std::size_t d_shared() const { return d_shared_; }
  std::size_t d_disentangled() const { return d_disentangled_; }
  HeadSharing sharing() const { return sharing_; }

  /// Direct access for tests and the head-only optimization check.
  Tensor& shared_weight(BranchId id);
  Tensor& disentangled_weight(BranchId id);

 private:
  struct HeadPair {
    Linear shared;
    Linear disentangled;
  };
  HeadPair& pair_for(BranchId id);
  const HeadPair& pair_for(BranchId id) const;

  std::size_t embed_dim_ = 0;
  std::size_t d_shared_ = 0;
  std::size_t d_disentangled_ = 0;
  HeadSharing sharing_ = HeadSharing::Shared;
  std::map<BranchId, HeadPair> heads_;
};

/// Throws BatchError on an empty set, an empty batch or unequal batch sizes.
Tensor branch_ortho_loss(std::span<const DisentangledPair> pairs, bool centering = false);
/// Zero (rank-0 constant) when fewer than two branches are present.
Tensor cross_ortho_loss(std::span<const DisentangledPair> pairs, bool centering = false,
                        CrossMode mode = CrossMode::Batched);

}  // namespace cbodd
