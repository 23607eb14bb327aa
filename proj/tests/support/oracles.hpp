#pragma once

// Reference computations shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <span>
#include <vector>

#include "cbodd/ofdm.hpp"
#include "cbodd/optim.hpp"
#include "cbodd/rng.hpp"

namespace cbodd::oracle {

/// Pairwise count over every (positive, negative) pair; ties score one half.
inline double brute_force_auc(std::span<const double> scores, std::span<const int> labels) {
  double hits = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) hits += 1.0;
      else if (scores[i] == scores[j]) hits += 0.5;
    }
  }
  return hits / static_cast<double>(pairs);
}

struct HeadDescent {
  double initial_branch = 0.0;
  double initial_cross = 0.0;
  double final_branch = 0.0;
  double final_cross = 0.0;
};

/// Frozen random branch features; only the projection heads are trained on
/// the sum of both orthogonality losses.
inline HeadDescent head_only_descent(std::uint64_t seed, std::size_t steps = 500, double lr = 1e-2,
                                     std::size_t batch = 32, std::size_t embed_dim = 64,
                                     HeadSharing sharing = HeadSharing::Shared) {
  Rng rng(seed);
  OfdmConfig cfg;
  cfg.d_shared = 8;
  cfg.d_disentangled = 16;
  cfg.sharing = sharing;
  const std::vector<BranchId> branches(kAllBranches.begin(), kAllBranches.end());
  ProjectionHeads heads(embed_dim, cfg, branches, rng);
  std::vector<BranchEmbedding> features;
  for (BranchId id : branches) {
    std::vector<double> v(batch * embed_dim);
    for (auto& x : v) x = rng.normal();
    features.push_back({id, Tensor({batch, embed_dim}, v)});
  }
  NamedParams params;
  heads.collect(params, "heads");
  AdamConfig opt_cfg;
  opt_cfg.learning_rate = lr;
  opt_cfg.weight_decay = 0.0;
  opt_cfg.step_size = static_cast<std::uint32_t>(steps + 1);
  Adam opt(tensors_of(params), opt_cfg);

  auto losses = [&] {
    std::vector<DisentangledPair> pairs;
    for (const auto& f : features) pairs.push_back(heads.project(f));
    return std::pair{branch_ortho_loss(pairs), cross_ortho_loss(pairs)};
  };
  HeadDescent out;
  {
    auto [b, c] = losses();
    out.initial_branch = b.item();
    out.initial_cross = c.item();
  }
  for (std::size_t s = 0; s < steps; ++s) {
    opt.zero_grad();
    auto [b, c] = losses();
    add(b, c).backward();
    opt.step();
  }
  auto [b, c] = losses();
  out.final_branch = b.item();
  out.final_cross = c.item();
  return out;
}

}  // namespace cbodd::oracle
