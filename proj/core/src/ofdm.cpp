#include "cbodd/ofdm.hpp"

#include <utility>

#include "cbodd/errors.hpp"

namespace cbodd {

std::string_view to_string(HeadSharing mode) {
  return mode == HeadSharing::Shared ? "shared" : "per-branch";
}

std::string_view to_string(CrossMode mode) { return mode == CrossMode::Batched ? "batched" : "per-sample"; }

HeadSharing parse_head_sharing(std::string_view text) {
  if (text == "shared") return HeadSharing::Shared;
  if (text == "per-branch") return HeadSharing::PerBranch;
  throw ConfigError("unknown head sharing mode '" + std::string(text) + "'");
}

CrossMode parse_cross_mode(std::string_view text) {
  if (text == "batched") return CrossMode::Batched;
  if (text == "per-sample") return CrossMode::PerSample;
  throw ConfigError("unknown cross mode '" + std::string(text) + "'");
}

void OfdmConfig::validate() const {
  if (d_shared == 0 || d_disentangled == 0) throw ConfigError("projection widths must be at least 1");
  if (!(lambda_branch >= 0.0) || !(lambda_cross >= 0.0)) throw ConfigError("lambdas must be non-negative");
}

ProjectionHeads::ProjectionHeads(std::size_t embed_dim, const OfdmConfig& config,
                                 std::span<const BranchId> branches, Rng& rng)
    : embed_dim_(embed_dim),
      d_shared_(config.d_shared),
      d_disentangled_(config.d_disentangled),
      sharing_(config.sharing) {
  config.validate();
  if (branches.empty()) throw ConfigError("projection heads need at least one branch");
  if (sharing_ == HeadSharing::Shared) {
    heads_.emplace(BranchId::LS, HeadPair{Linear(embed_dim, d_shared_, false, rng),
                                          Linear(embed_dim, d_disentangled_, false, rng)});
  } else {
    for (auto id : branches)
      heads_.emplace(id, HeadPair{Linear(embed_dim, d_shared_, false, rng),
                                  Linear(embed_dim, d_disentangled_, false, rng)});
  }
}

ProjectionHeads::HeadPair& ProjectionHeads::pair_for(BranchId id) {
  return const_cast<HeadPair&>(std::as_const(*this).pair_for(id));
}

const ProjectionHeads::HeadPair& ProjectionHeads::pair_for(BranchId id) const {
  auto it = heads_.find(sharing_ == HeadSharing::Shared ? BranchId::LS : id);
  if (it == heads_.end())
    throw CompletenessError("no projection heads for branch " + std::string(branch_name(id)));
  return it->second;
}

Tensor& ProjectionHeads::shared_weight(BranchId id) { return pair_for(id).shared.weight(); }
Tensor& ProjectionHeads::disentangled_weight(BranchId id) { return pair_for(id).disentangled.weight(); }

DisentangledPair ProjectionHeads::project(const BranchEmbedding& embedding) const {
  const Tensor& f = embedding.vectors;
  if (f.rank() != 2 || f.dim(1) != embed_dim_)
    throw DimensionError("projection heads expect [B," + std::to_string(embed_dim_) + "], got " +
                         shape_str(f.shape()));
  const auto& pair = pair_for(embedding.branch);
  return DisentangledPair{embedding.branch, pair.shared.forward(f), pair.disentangled.forward(f)};
}

void ProjectionHeads::collect(NamedParams& out, const std::string& prefix) const {
  for (const auto& [id, pair] : heads_) {
    const std::string p =
        sharing_ == HeadSharing::Shared ? prefix : prefix + "." + std::string(branch_name(id));
    pair.shared.collect(out, p + ".shared");
    pair.disentangled.collect(out, p + ".disentangled");
  }
}

namespace {

std::size_t check_batch(std::span<const DisentangledPair> pairs) {
  if (pairs.empty()) throw BatchError("orthogonality loss needs at least one branch");
  const std::size_t b = pairs[0].shared.dim(0);
  for (const auto& p : pairs) {
    if (p.shared.rank() != 2 || p.disentangled.rank() != 2)
      throw DimensionError("disentangled pairs must be [B, d]");
    if (p.shared.dim(0) != b || p.disentangled.dim(0) != b)
      throw BatchError("inconsistent batch sizes across disentangled pairs");
  }
  return b;
}

// X - 1 mean(X) over the batch axis.
Tensor center_rows(const Tensor& x) {
  const std::size_t B = x.dim(0), d = x.dim(1);
  Tensor mu = mean_axis(x, 0);  // [d]
  Tensor ones = Tensor::full({B, 1}, 1.0);
  return sub(x, matmul(ones, reshape(mu, {1, d})));
}

}  // namespace

Tensor branch_ortho_loss(std::span<const DisentangledPair> pairs, bool centering) {
  const std::size_t B = check_batch(pairs);
  const double norm = 1.0 / static_cast<double>(B * B);
  Tensor total;
  for (const auto& p : pairs) {
    Tensor s = centering ? center_rows(p.shared) : p.shared;
    Tensor u = centering ? center_rows(p.disentangled) : p.disentangled;
    Tensor term = frobenius_sq(matmul(transpose(s), u));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, norm);
}

Tensor cross_ortho_loss(std::span<const DisentangledPair> pairs, bool centering, CrossMode mode) {
  const std::size_t B = check_batch(pairs);
  if (pairs.size() < 2) return Tensor::scalar(0.0);
  std::vector<Tensor> shared;
  for (const auto& p : pairs) shared.push_back(centering ? center_rows(p.shared) : p.shared);
  Tensor total;
  for (std::size_t i = 0; i < shared.size(); ++i)
    for (std::size_t j = i + 1; j < shared.size(); ++j) {
      Tensor term;
      if (mode == CrossMode::Batched) {
        term = scale(frobenius_sq(matmul(transpose(shared[i]), shared[j])), 1.0 / static_cast<double>(B * B));
      } else {
        if (shared[i].dim(1) != shared[j].dim(1))
          throw DimensionError("per-sample cross mode needs equal shared widths");
        // Squared per-sample inner products, averaged over the batch.
        Tensor prod = mul(shared[i], shared[j]);
        Tensor dots = matmul(prod, Tensor::full({prod.dim(1), 1}, 1.0));  // [B,1]
        term = scale(frobenius_sq(dots), 1.0 / static_cast<double>(B));
      }
      total = total.defined() ? add(total, term) : term;
    }
  return total;
}

}  // namespace cbodd
