#include "cbodd/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "cbodd/errors.hpp"

namespace cbodd {

using IndexVec = std::vector<std::size_t>;

std::string_view branch_name(BranchId id) {
  switch (id) {
    case BranchId::LS: return "LS";
    case BranchId::MG: return "MG";
    case BranchId::CE: return "CE";
  }
  return "?";
}

BranchId parse_branch(std::string_view name) {
  for (auto id : kAllBranches)
    if (branch_name(id) == name) return id;
  throw ConfigError("unknown branch '" + std::string(name) + "'");
}

void Frame::validate() const {
  if (!pixels.defined() || pixels.rank() != 3)
    throw DimensionError("frame pixels must be [C,H,W]");
  if (pixels.dim(1) < 8 || pixels.dim(2) < 8)
    throw DimensionError("frame extents must be at least 8x8, got " + shape_str(pixels.shape()));
  for (double v : pixels.values())
    if (!(v >= 0.0 && v <= 1.0)) throw NumericError("frame pixel outside [0,1]");
}

Tensor stack_frames(std::span<const Frame> frames) {
  if (frames.empty()) throw InputError("stack_frames: no frames");
  const Shape& s = frames[0].pixels.shape();
  std::vector<double> values;
  values.reserve(frames.size() * frames[0].pixels.numel());
  for (const auto& f : frames) {
    if (f.pixels.shape() != s)
      throw DimensionError("stack_frames: " + shape_str(s) + " vs " + shape_str(f.pixels.shape()));
    values.insert(values.end(), f.pixels.values().begin(), f.pixels.values().end());
  }
  Shape out{frames.size()};
  out.insert(out.end(), s.begin(), s.end());
  return Tensor(std::move(out), std::move(values));
}

SegmentGrid adaptive_avg_pool(const FeatureMap& map, std::size_t grid_h, std::size_t grid_w) {
  if (map.values.rank() != 4) throw RankError("adaptive_avg_pool expects a [N,C,H,W] map");
  const std::size_t N = map.values.dim(0), C = map.channels();
  Tensor pooled = adaptive_avg_pool2d(map.values, grid_h, grid_w);  // [N,C,kh,kw]
  Tensor flat = reshape(pooled, {N, C, grid_h * grid_w});
  SegmentGrid grid;
  grid.branch = map.branch;
  grid.segments = permute(flat, {0, 2, 1});
  grid.grid_h = grid_h;
  grid.grid_w = grid_w;
  grid.stride_h = map.height() / grid_h;
  grid.stride_w = map.width() / grid_w;
  return grid;
}

// --- windows ---------------------------------------------------------------------

void WindowConfig::validate() const {
  if (window == 0) throw ConfigError("window size must be positive");
  if (shift >= window)
    throw ConfigError("window shift " + std::to_string(shift) + " must be smaller than window " +
                      std::to_string(window));
  if (heads == 0) throw ConfigError("window attention heads must be positive");
  if (depth == 0) throw ConfigError("window attention depth must be positive");
}

WindowLayout make_window_layout(std::size_t height, std::size_t width, std::size_t window,
                                std::size_t shift, bool shifted) {
  if (window == 0 || height == 0 || width == 0) throw ConfigError("window layout: zero extent");
  if (shift >= window) throw ConfigError("window shift must be smaller than the window");
  WindowLayout layout;
  layout.height = height;
  layout.width = width;
  layout.window = window;
  layout.shift = shifted ? shift : 0;
  layout.windows_h = (height + window - 1) / window;
  layout.windows_w = (width + window - 1) / window;
  const std::size_t ph = layout.windows_h * window, pw = layout.windows_w * window;
  const std::size_t s = layout.shift;

  auto source = std::make_shared<IndexVec>(ph * pw);
  auto inverse = std::make_shared<IndexVec>(height * width, kZeroIndex);
  std::size_t pos = 0;
  for (std::size_t wi = 0; wi < layout.windows_h; ++wi)
    for (std::size_t wj = 0; wj < layout.windows_w; ++wj)
      for (std::size_t a = 0; a < window; ++a)
        for (std::size_t b = 0; b < window; ++b, ++pos) {
          // Rolled position (R, C) holds padded cell (R + s, C + s) mod extents.
          const std::size_t r = (wi * window + a + s) % ph;
          const std::size_t c = (wj * window + b + s) % pw;
          if (r < height && c < width) {
            (*source)[pos] = r * width + c;
            (*inverse)[r * width + c] = pos;
          } else {
            (*source)[pos] = kZeroIndex;
          }
        }
  layout.source = std::move(source);
  layout.inverse = std::move(inverse);
  return layout;
}

WindowPartition window_partition_shift(const FeatureMap& map, const WindowConfig& config, bool shifted) {
  config.validate();
  const Tensor& x = map.values;
  if (x.rank() != 4) throw RankError("window_partition_shift expects a [N,C,H,W] map");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  WindowPartition out;
  out.layout = make_window_layout(H, W, config.window, config.shift, shifted);
  out.branch = map.branch;
  out.batch = N;
  out.channels = C;
  const std::size_t nw = out.layout.window_count(), mm = out.layout.tokens_per_window();
  const auto& src = *out.layout.source;
  auto idx = std::make_shared<IndexVec>(N * nw * C * mm);
  std::size_t k = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t w = 0; w < nw; ++w)
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t p = 0; p < mm; ++p) {
          const std::size_t cell = src[w * mm + p];
          (*idx)[k++] = cell == kZeroIndex ? kZeroIndex : (n * C + ch) * H * W + cell;
        }
  const std::size_t m = out.layout.window;
  out.windows = gather(x, std::move(idx), {N * nw, C, m, m});
  return out;
}

FeatureMap window_reverse(const WindowPartition& partition) {
  const auto& L = partition.layout;
  const std::size_t N = partition.batch, C = partition.channels, H = L.height, W = L.width;
  const std::size_t nw = L.window_count(), mm = L.tokens_per_window();
  const auto& inv = *L.inverse;
  auto idx = std::make_shared<IndexVec>(N * C * H * W);
  std::size_t k = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t cell = 0; cell < H * W; ++cell) {
        const std::size_t pos = inv[cell];
        (*idx)[k++] = ((n * nw + pos / mm) * C + ch) * mm + pos % mm;
      }
  return FeatureMap{partition.branch, gather(partition.windows, std::move(idx), {N, C, H, W})};
}

Tensor tokens_to_windows(const Tensor& tokens, const WindowLayout& layout) {
  if (tokens.rank() != 4 || tokens.dim(1) != layout.height || tokens.dim(2) != layout.width)
    throw DimensionError("tokens_to_windows: tokens " + shape_str(tokens.shape()) +
                         " do not match the layout");
  const std::size_t N = tokens.dim(0), C = tokens.dim(3), HW = layout.height * layout.width;
  const std::size_t nw = layout.window_count(), mm = layout.tokens_per_window();
  const auto& src = *layout.source;
  auto idx = std::make_shared<IndexVec>(N * nw * mm * C);
  std::size_t k = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < nw * mm; ++p)
      for (std::size_t ch = 0; ch < C; ++ch)
        (*idx)[k++] = src[p] == kZeroIndex ? kZeroIndex : (n * HW + src[p]) * C + ch;
  return gather(tokens, std::move(idx), {N * nw, mm, C});
}

Tensor windows_to_tokens(const Tensor& windows, const WindowLayout& layout, std::size_t batch) {
  const std::size_t nw = layout.window_count(), mm = layout.tokens_per_window();
  if (windows.rank() != 3 || windows.dim(0) != batch * nw || windows.dim(1) != mm)
    throw DimensionError("windows_to_tokens: windows " + shape_str(windows.shape()) +
                         " do not match the layout");
  const std::size_t C = windows.dim(2), HW = layout.height * layout.width;
  const auto& inv = *layout.inverse;
  auto idx = std::make_shared<IndexVec>(batch * HW * C);
  std::size_t k = 0;
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t cell = 0; cell < HW; ++cell)
      for (std::size_t ch = 0; ch < C; ++ch) (*idx)[k++] = (n * nw * mm + inv[cell]) * C + ch;
  return gather(windows, std::move(idx), {batch, layout.height, layout.width, C});
}

// --- attention -------------------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(std::size_t embed_dim_, std::size_t heads_, Rng& rng)
    : embed_dim(embed_dim_), heads(heads_) {
  if (heads == 0 || embed_dim % heads != 0)
    throw ConfigError("attention width " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  query = Linear(embed_dim, embed_dim, true, rng);
  key = Linear(embed_dim, embed_dim, true, rng);
  value = Linear(embed_dim, embed_dim, true, rng);
  output = Linear(embed_dim, embed_dim, true, rng);
}

Tensor MultiHeadAttention::forward(const Tensor& x, Tensor* weights) const {
  if (x.rank() != 3 || x.dim(2) != embed_dim)
    throw DimensionError("attention input " + shape_str(x.shape()) + " does not have width " +
                         std::to_string(embed_dim));
  const std::size_t G = x.dim(0), L = x.dim(1), hd = embed_dim / heads;
  auto split = [&](const Tensor& t) {
    return reshape(permute(reshape(t, {G, L, heads, hd}), {0, 2, 1, 3}), {G * heads, L, hd});
  };
  Tensor q = split(query.forward(x));
  Tensor k = split(key.forward(x));
  Tensor v = split(value.forward(x));
  Tensor attn = softmax_rows(scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(hd))));
  if (weights) *weights = attn;
  Tensor ctx = bmm(attn, v);  // [G*h, L, hd]
  Tensor merged = reshape(permute(reshape(ctx, {G, heads, L, hd}), {0, 2, 1, 3}), {G, L, embed_dim});
  return output.forward(merged);
}

void MultiHeadAttention::collect(NamedParams& out, const std::string& prefix) const {
  query.collect(out, prefix + ".query");
  key.collect(out, prefix + ".key");
  value.collect(out, prefix + ".value");
  output.collect(out, prefix + ".output");
}

// --- configs -----------------------------------------------------------------------

void InputConfig::validate() const {
  if (channels == 0) throw ConfigError("input channels must be positive");
  if (height < 8 || width < 8) throw ConfigError("input extents must be at least 8x8");
  if (!(pixel_std > 0.0) || !std::isfinite(pixel_mean)) throw ConfigError("input pixel_std must be positive");
}

void ConvStackConfig::validate(std::string_view branch) const {
  const std::string b(branch);
  if (channels.empty()) throw ConfigError(b + ": at least one conv stage required");
  if (channels.size() != strides.size())
    throw ConfigError(b + ": channels and strides must have the same length");
  for (auto c : channels)
    if (c == 0) throw ConfigError(b + ": zero channel count");
  for (auto s : strides)
    if (s == 0) throw ConfigError(b + ": zero stride");
  if (kernel == 0) throw ConfigError(b + ": zero kernel");
  if (grid_h == 0 || grid_w == 0) throw ConfigError(b + ": zero segment grid");
}

void MgConfig::validate() const {
  if (patch == 0 || embed_dim == 0 || mlp_ratio == 0) throw ConfigError("MG: zero patch/width/mlp ratio");
  window.validate();
  if (embed_dim % window.heads != 0)
    throw ConfigError("MG: embed_dim not divisible by window heads");
  if (grid_h == 0 || grid_w == 0) throw ConfigError("MG: zero segment grid");
}

void CeConfig::validate() const {
  conv.validate("CE");
  if (!(aux_weight >= 0.0)) throw ConfigError("CE: aux_weight must be non-negative");
}

void AttentionConfig::validate() const {
  if (embed_dim == 0 || heads == 0) throw ConfigError("segment attention: zero width or heads");
  if (embed_dim % heads != 0)
    throw ConfigError("segment attention: D=" + std::to_string(embed_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
}

// --- branches ------------------------------------------------------------------------

void Branch::check_input(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(1) != input_.channels || frames.dim(2) != input_.height ||
      frames.dim(3) != input_.width)
    throw DimensionError("branch " + std::string(branch_name(id())) + " expects [N," +
                         std::to_string(input_.channels) + "," + std::to_string(input_.height) + "," +
                         std::to_string(input_.width) + "], got " + shape_str(frames.shape()));
}

SegmentGrid Branch::forward(const Tensor& frames) const {
  return adaptive_avg_pool(feature_map(frames), grid_h_, grid_w_);
}

ConvStack::ConvStack(std::size_t in_channels, const ConvStackConfig& config, Rng& rng) {
  std::size_t c = in_channels;
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    layers_.emplace_back(c, config.channels[i], config.kernel, config.strides[i], config.kernel / 2, rng);
    c = config.channels[i];
  }
  out_channels_ = c;
}

Tensor ConvStack::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = relu(layer.forward(h));
  return h;
}

void ConvStack::collect(NamedParams& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".conv" + std::to_string(i));
}

namespace {

// Spatial extent after the conv stack, checked against the pooling grid.
void check_stack_extent(const InputConfig& input, const ConvStack& stack, std::size_t gh, std::size_t gw,
                        std::string_view branch) {
  std::size_t h = input.height, w = input.width;
  for (const auto& layer : stack.layers()) {
    if (h + 2 * layer.padding() < layer.kernel() || w + 2 * layer.padding() < layer.kernel())
      throw ConfigError(std::string(branch) + ": conv stack shrinks the map below the kernel");
    h = layer.out_extent(h);
    w = layer.out_extent(w);
  }
  if (gh > h || gw > w)
    throw ConfigError(std::string(branch) + ": segment grid exceeds the " + std::to_string(h) + "x" +
                      std::to_string(w) + " feature map");
}

}  // namespace

LocalSpatialBranch::LocalSpatialBranch(const InputConfig& input, const ConvStackConfig& config, Rng& rng)
    : Branch(input, config.grid_h, config.grid_w) {
  input.validate();
  config.validate("LS");
  stack_ = ConvStack(input.channels, config, rng);
  check_stack_extent(input, stack_, grid_h_, grid_w_, "LS");
}

FeatureMap LocalSpatialBranch::feature_map(const Tensor& frames) const {
  check_input(frames);
  return FeatureMap{BranchId::LS, stack_.forward(frames)};
}

void LocalSpatialBranch::collect(NamedParams& out, const std::string& prefix) const {
  stack_.collect(out, prefix);
}

std::size_t LocalSpatialBranch::out_channels() const { return stack_.out_channels(); }

WindowAttentionBlock::WindowAttentionBlock(std::size_t channels, std::size_t heads, std::size_t mlp_ratio,
                                           Rng& rng)
    : attention_(channels, heads, rng),
      mlp_in_(channels, channels * mlp_ratio, true, rng),
      mlp_out_(channels * mlp_ratio, channels, true, rng) {}

Tensor WindowAttentionBlock::forward(const Tensor& tokens, std::size_t window, std::size_t shift,
                                     bool shifted) const {
  const std::size_t N = tokens.dim(0), H = tokens.dim(1), W = tokens.dim(2);
  const WindowLayout layout = make_window_layout(H, W, window, shift, shifted);
  Tensor windows = tokens_to_windows(layer_norm_last(tokens), layout);
  Tensor attended = windows_to_tokens(attention_.forward(windows), layout, N);
  Tensor x = add(tokens, attended);
  Tensor hidden = relu(mlp_in_.forward(layer_norm_last(x)));
  return add(x, mlp_out_.forward(hidden));
}

void WindowAttentionBlock::collect(NamedParams& out, const std::string& prefix) const {
  attention_.collect(out, prefix + ".attn");
  mlp_in_.collect(out, prefix + ".mlp_in");
  mlp_out_.collect(out, prefix + ".mlp_out");
}

WindowMerge::WindowMerge(std::size_t channels, Rng& rng) : reduce_(4 * channels, 2 * channels, false, rng) {}

Tensor WindowMerge::forward(const Tensor& tokens) const {
  const std::size_t N = tokens.dim(0), H = tokens.dim(1), W = tokens.dim(2), C = tokens.dim(3);
  const std::size_t H2 = (H + 1) / 2, W2 = (W + 1) / 2;
  // Neighbour order (2i,2j), (2i+1,2j), (2i,2j+1), (2i+1,2j+1).
  constexpr std::size_t dr[4] = {0, 1, 0, 1};
  constexpr std::size_t dc[4] = {0, 0, 1, 1};
  auto idx = std::make_shared<IndexVec>(N * H2 * W2 * 4 * C);
  std::size_t k = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H2; ++i)
      for (std::size_t j = 0; j < W2; ++j)
        for (std::size_t q = 0; q < 4; ++q) {
          const std::size_t r = 2 * i + dr[q], c = 2 * j + dc[q];
          for (std::size_t ch = 0; ch < C; ++ch)
            (*idx)[k++] = (r < H && c < W) ? ((n * H + r) * W + c) * C + ch : kZeroIndex;
        }
  Tensor merged = gather(tokens, std::move(idx), {N, H2, W2, 4 * C});
  return reduce_.forward(layer_norm_last(merged));
}

void WindowMerge::collect(NamedParams& out, const std::string& prefix) const {
  reduce_.collect(out, prefix + ".reduce");
}

GlobalContextBranch::GlobalContextBranch(const InputConfig& input, const MgConfig& config, Rng& rng)
    : Branch(input, config.grid_h, config.grid_w), config_(config) {
  input.validate();
  config.validate();
  if (config.patch > input.height || config.patch > input.width)
    throw ConfigError("MG: patch larger than the input frame");
  patch_embed_ = Conv2d(input.channels, config.embed_dim, config.patch, config.patch, 0, rng);
  std::size_t c = config.embed_dim;
  std::size_t h = input.height / config.patch, w = input.width / config.patch;
  for (std::size_t s = 0; s < config.window.depth; ++s) {
    if (c % config.window.heads != 0) throw ConfigError("MG: stage width not divisible by heads");
    stages_.push_back({WindowAttentionBlock(c, config.window.heads, config.mlp_ratio, rng),
                       WindowAttentionBlock(c, config.window.heads, config.mlp_ratio, rng)});
    if (s + 1 < config.window.depth) {
      merges_.emplace_back(c, rng);
      c *= 2;
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
  }
  if (grid_h_ > h || grid_w_ > w)
    throw ConfigError("MG: segment grid exceeds the " + std::to_string(h) + "x" + std::to_string(w) +
                      " feature map");
}

Tensor GlobalContextBranch::stage_tokens(const Tensor& frames) const {
  check_input(frames);
  Tensor tokens = permute(patch_embed_.forward(frames), {0, 2, 3, 1});  // [N,H,W,C]
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::size_t h = tokens.dim(1), w = tokens.dim(2);
    // A map that fits inside one window is attended globally and never shifted.
    std::size_t window = config_.window.window, shift = config_.window.shift;
    if (std::min(h, w) <= window) {
      window = std::min(h, w);
      shift = 0;
    }
    tokens = stages_[s][0].forward(tokens, window, shift, false);
    tokens = stages_[s][1].forward(tokens, window, shift, shift > 0);
    if (s < merges_.size()) tokens = merges_[s].forward(tokens);
  }
  return tokens;
}

FeatureMap GlobalContextBranch::feature_map(const Tensor& frames) const {
  return FeatureMap{BranchId::MG, permute(stage_tokens(frames), {0, 3, 1, 2})};
}

void GlobalContextBranch::collect(NamedParams& out, const std::string& prefix) const {
  patch_embed_.collect(out, prefix + ".patch_embed");
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    stages_[s][0].collect(out, prefix + ".stage" + std::to_string(s) + ".block0");
    stages_[s][1].collect(out, prefix + ".stage" + std::to_string(s) + ".block1");
    if (s < merges_.size()) merges_[s].collect(out, prefix + ".merge" + std::to_string(s));
  }
}

std::size_t GlobalContextBranch::out_channels() const {
  return config_.embed_dim << (config_.window.depth - 1);
}

EmotionBranch::EmotionBranch(const InputConfig& input, const CeConfig& config, Rng& rng)
    : Branch(input, config.conv.grid_h, config.conv.grid_w) {
  input.validate();
  config.validate();
  stack_ = ConvStack(input.channels, config.conv, rng);
  check_stack_extent(input, stack_, grid_h_, grid_w_, "CE");
  aux_head_ = Linear(stack_.out_channels(), 1, true, rng);
}

FeatureMap EmotionBranch::feature_map(const Tensor& frames) const {
  check_input(frames);
  return FeatureMap{BranchId::CE, stack_.forward(frames)};
}

Tensor EmotionBranch::expression(const FeatureMap& map) const {
  const std::size_t N = map.values.dim(0), C = map.channels();
  Tensor pooled = mean_axis(reshape(map.values, {N, C, map.height() * map.width()}), 2);  // [N,C]
  return reshape(sigmoid(aux_head_.forward(pooled)), {N});
}

void EmotionBranch::collect(NamedParams& out, const std::string& prefix) const {
  stack_.collect(out, prefix);
  aux_head_.collect(out, prefix + ".aux_head");
}

std::size_t EmotionBranch::out_channels() const { return stack_.out_channels(); }

SegmentAttention::SegmentAttention(std::size_t in_channels, const AttentionConfig& config, Rng& rng)
    : in_channels_(in_channels) {
  config.validate();
  projection_ = Linear(in_channels, config.embed_dim, true, rng);
  attention_ = MultiHeadAttention(config.embed_dim, config.heads, rng);
}

BranchEmbedding SegmentAttention::forward(const SegmentGrid& grid, Trace* trace) const {
  if (grid.segments.rank() != 3 || grid.count() == 0) throw InputError("segment grid is empty");
  if (grid.channels() != in_channels_)
    throw DimensionError("segment attention expects " + std::to_string(in_channels_) + " channels, got " +
                         std::to_string(grid.channels()));
  Tensor x = projection_.forward(grid.segments);  // [N,K,D]
  Tensor weights;
  Tensor transformed = add(x, attention_.forward(x, trace ? &weights : nullptr));
  if (trace) {
    trace->transformed = transformed;
    trace->weights = weights;
  }
  return BranchEmbedding{grid.branch, mean_axis(transformed, 1)};
}

void SegmentAttention::collect(NamedParams& out, const std::string& prefix) const {
  projection_.collect(out, prefix + ".projection");
  attention_.collect(out, prefix + ".msa");
}

std::unique_ptr<Branch> make_branch(BranchId id, const InputConfig& input, const ConvStackConfig& ls,
                                    const MgConfig& mg, const CeConfig& ce, Rng& rng) {
  switch (id) {
    case BranchId::LS: return std::make_unique<LocalSpatialBranch>(input, ls, rng);
    case BranchId::MG: return std::make_unique<GlobalContextBranch>(input, mg, rng);
    case BranchId::CE: return std::make_unique<EmotionBranch>(input, ce, rng);
  }
  throw ConfigError("unknown branch id");
}

}  // namespace cbodd
