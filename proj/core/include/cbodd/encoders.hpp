#pragma once

// The three per-frame encoder branches and the shared segment stage:
//   frames [N,C,H,W] -> branch backbone -> FeatureMap [N,C',H',W']
//   -> adaptive average pooling -> SegmentGrid [N, k_h*k_w, C']
//   -> linear projection to D + multi-head self-attention + mean over
//      segments -> BranchEmbedding [N, D]

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cbodd/nn.hpp"
#include "cbodd/rng.hpp"
#include "cbodd/tensor.hpp"

namespace cbodd {

enum class BranchId : std::uint8_t { LS = 0, MG = 1, CE = 2 };

inline constexpr std::array<BranchId, 3> kAllBranches{BranchId::LS, BranchId::MG, BranchId::CE};

std::string_view branch_name(BranchId id);
BranchId parse_branch(std::string_view name);

/// One video frame, pixels [C,H,W] in [0,1].
struct Frame {
  Tensor pixels;
  std::size_t frame_index = 0;
  std::string clip_id;

  void validate() const;
};

/// Stacks frames of identical extents into a batch [N,C,H,W].
Tensor stack_frames(std::span<const Frame> frames);

struct FeatureMap {
  BranchId branch = BranchId::LS;
  Tensor values;  // [N,C,H,W]

  std::size_t channels() const { return values.dim(1); }
  std::size_t height() const { return values.dim(2); }
  std::size_t width() const { return values.dim(3); }
};

struct SegmentGrid {
  BranchId branch = BranchId::LS;
  Tensor segments;  // [N, grid_h*grid_w, C], segment index i*grid_w + j
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  // Nominal pooling strides floor(H/grid_h), floor(W/grid_w).
  std::size_t stride_h = 0;
  std::size_t stride_w = 0;

  std::size_t count() const { return grid_h * grid_w; }
  std::size_t channels() const { return segments.dim(2); }
};

struct BranchEmbedding {
  BranchId branch = BranchId::LS;
  Tensor vectors;  // [N, D]
};

/// Partitions each map into a grid_h x grid_w set of non-overlapping windows
/// and averages each one. Throws DimensionError when the grid exceeds the map.
SegmentGrid adaptive_avg_pool(const FeatureMap& map, std::size_t grid_h, std::size_t grid_w);

// --- shifted windows -----------------------------------------------------------

struct WindowConfig {
  std::size_t window = 4;  // M
  std::size_t shift = 2;   // cyclic displacement for shifted stages, < M
  std::size_t heads = 2;
  std::size_t depth = 2;   // stages; a 2x2 merge sits between consecutive stages

  void validate() const;
};

/// Index tables for tiling an H x W map into M x M windows. The map is
/// zero-padded up to multiples of M. When shifted, the padded map is first
/// rolled cyclically by -shift along both axes: rolled position (R, C) holds
/// cell ((R + shift) mod H', (C + shift) mod W') of the padded extents H', W'.
struct WindowLayout {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t window = 0;
  std::size_t shift = 0;
  std::size_t windows_h = 0;
  std::size_t windows_w = 0;
  /// For each (window, row-in-window, col-in-window): the flat source cell
  /// r*width + c, or kZeroIndex for padding.
  std::shared_ptr<const std::vector<std::size_t>> source;
  /// For each source cell r*width + c: its flat position in `source`.
  std::shared_ptr<const std::vector<std::size_t>> inverse;

  std::size_t window_count() const { return windows_h * windows_w; }
  std::size_t tokens_per_window() const { return window * window; }
};

WindowLayout make_window_layout(std::size_t height, std::size_t width, std::size_t window,
                                std::size_t shift, bool shifted);

struct WindowPartition {
  Tensor windows;  // [N * windows, C, M, M]
  WindowLayout layout;
  BranchId branch = BranchId::MG;
  std::size_t batch = 0;
  std::size_t channels = 0;
};

/// Throws ConfigError when shift >= M.
WindowPartition window_partition_shift(const FeatureMap& map, const WindowConfig& config, bool shifted);
/// Inverse of window_partition_shift; restores the original layout exactly.
FeatureMap window_reverse(const WindowPartition& partition);

// Token-layout variants used inside attention: tokens [N,H,W,C] <-> [N*nW, M*M, C].
Tensor tokens_to_windows(const Tensor& tokens, const WindowLayout& layout);
Tensor windows_to_tokens(const Tensor& windows, const WindowLayout& layout, std::size_t batch);

// --- attention -----------------------------------------------------------------

/// Scaled dot-product multi-head self-attention with per-head scale
/// 1/sqrt(E/heads). x is [G, L, E]. If `weights` is non-null it receives the
/// attention probabilities [G*heads, L, L].
struct MultiHeadAttention {
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t embed_dim, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& x, Tensor* weights = nullptr) const;
  void collect(NamedParams& out, const std::string& prefix) const;

  std::size_t embed_dim = 0;
  std::size_t heads = 1;
  Linear query;
  Linear key;
  Linear value;
  Linear output;
};

// --- branch configs ---------------------------------------------------------------

struct InputConfig {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  /// Pixels are standardized as (x - pixel_mean) / pixel_std before the branches.
  double pixel_mean = 0.5;
  double pixel_std = 0.25;

  void validate() const;
};

struct ConvStackConfig {
  std::vector<std::size_t> channels{16, 32};
  std::vector<std::size_t> strides{2, 2};
  std::size_t kernel = 3;
  std::size_t grid_h = 2;
  std::size_t grid_w = 2;

  void validate(std::string_view branch) const;
};

struct MgConfig {
  std::size_t patch = 4;
  std::size_t embed_dim = 16;
  std::size_t mlp_ratio = 2;
  WindowConfig window;
  std::size_t grid_h = 2;
  std::size_t grid_w = 2;

  void validate() const;
};

struct CeConfig {
  ConvStackConfig conv{{16, 32}, {2, 2}, 5, 2, 2};
  /// Weight of the auxiliary expression-regression loss.
  double aux_weight = 0.1;

  void validate() const;
};

struct AttentionConfig {
  std::size_t embed_dim = 64;  // D
  std::size_t heads = 4;

  void validate() const;
};

// --- branches ----------------------------------------------------------------------

class Branch {
 public:
  virtual ~Branch() = default;
  virtual BranchId id() const = 0;
  /// frames [N,C,H,W] -> tapped feature map. Throws DimensionError if the
  /// frame extents differ from the configured input.
  virtual FeatureMap feature_map(const Tensor& frames) const = 0;
  virtual void collect(NamedParams& out, const std::string& prefix) const = 0;
  /// Channel count of the tapped feature map.
  virtual std::size_t out_channels() const = 0;

  SegmentGrid forward(const Tensor& frames) const;
  std::size_t grid_h() const { return grid_h_; }
  std::size_t grid_w() const { return grid_w_; }

 protected:
  Branch(InputConfig input, std::size_t grid_h, std::size_t grid_w)
      : input_(input), grid_h_(grid_h), grid_w_(grid_w) {}
  void check_input(const Tensor& frames) const;

  InputConfig input_;
  std::size_t grid_h_;
  std::size_t grid_w_;
};

/// Strided conv + ReLU stack, padding kernel/2.
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(std::size_t in_channels, const ConvStackConfig& config, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
  const std::vector<Conv2d>& layers() const { return layers_; }
  std::size_t out_channels() const { return out_channels_; }

 private:
  std::vector<Conv2d> layers_;
  std::size_t out_channels_ = 0;
};

class LocalSpatialBranch final : public Branch {
 public:
  LocalSpatialBranch(const InputConfig& input, const ConvStackConfig& config, Rng& rng);

  BranchId id() const override { return BranchId::LS; }
  FeatureMap feature_map(const Tensor& frames) const override;
  void collect(NamedParams& out, const std::string& prefix) const override;
  std::size_t out_channels() const override;
  const ConvStack& stack() const { return stack_; }

 private:
  ConvStack stack_;
};

/// Swin-style block on tokens [N,H,W,C]: pre-norm window attention with a
/// residual, then a pre-norm two-layer ReLU MLP with a residual.
class WindowAttentionBlock {
 public:
  WindowAttentionBlock() = default;
  WindowAttentionBlock(std::size_t channels, std::size_t heads, std::size_t mlp_ratio, Rng& rng);

  Tensor forward(const Tensor& tokens, std::size_t window, std::size_t shift, bool shifted) const;
  void collect(NamedParams& out, const std::string& prefix) const;

 private:
  MultiHeadAttention attention_;
  Linear mlp_in_;
  Linear mlp_out_;
};

/// 2x2 neighbour concatenation (4C) followed by a bias-free linear map to 2C.
/// Odd extents are zero-padded.
class WindowMerge {
 public:
  WindowMerge() = default;
  WindowMerge(std::size_t channels, Rng& rng);

  Tensor forward(const Tensor& tokens) const;
  void collect(NamedParams& out, const std::string& prefix) const;

 private:
  Linear reduce_;
};

class GlobalContextBranch final : public Branch {
 public:
  GlobalContextBranch(const InputConfig& input, const MgConfig& config, Rng& rng);

  BranchId id() const override { return BranchId::MG; }
  FeatureMap feature_map(const Tensor& frames) const override;
  void collect(NamedParams& out, const std::string& prefix) const override;
  std::size_t out_channels() const override;

  /// Output of the stage stack before any merge when depth == 1; exposed for
  /// window-isolation checks. Tokens [N,H,W,C].
  Tensor stage_tokens(const Tensor& frames) const;

 private:
  MgConfig config_;
  Conv2d patch_embed_;
  std::vector<std::array<WindowAttentionBlock, 2>> stages_;
  std::vector<WindowMerge> merges_;
};

class EmotionBranch final : public Branch {
 public:
  EmotionBranch(const InputConfig& input, const CeConfig& config, Rng& rng);

  BranchId id() const override { return BranchId::CE; }
  FeatureMap feature_map(const Tensor& frames) const override;
  void collect(NamedParams& out, const std::string& prefix) const override;
  std::size_t out_channels() const override;

  /// Auxiliary head: spatial mean of the feature map -> linear -> sigmoid.
  /// Returns [N] expression predictions in (0,1).
  Tensor expression(const FeatureMap& map) const;

 private:
  ConvStack stack_;
  Linear aux_head_;
};

/// Linear projection of each segment to D, one multi-head self-attention
/// block with a residual (F_trans = X + MSA(X)), then the mean over segments.
class SegmentAttention {
 public:
  SegmentAttention() = default;
  SegmentAttention(std::size_t in_channels, const AttentionConfig& config, Rng& rng);

  struct Trace {
    Tensor transformed;  // F_trans [N, K, D]
    Tensor weights;      // [N*heads, K, K]
  };

  BranchEmbedding forward(const SegmentGrid& grid, Trace* trace = nullptr) const;
  void collect(NamedParams& out, const std::string& prefix) const;

 private:
  std::size_t in_channels_ = 0;
  Linear projection_;
  MultiHeadAttention attention_;
};

std::unique_ptr<Branch> make_branch(BranchId id, const InputConfig& input, const ConvStackConfig& ls,
                                    const MgConfig& mg, const CeConfig& ce, Rng& rng);

}  // namespace cbodd
