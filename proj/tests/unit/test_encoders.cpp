#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cbodd/datagen.hpp"
#include "cbodd/encoders.hpp"
#include "cbodd/errors.hpp"
#include "cbodd/gradcheck.hpp"
#include "cbodd/optim.hpp"

namespace cbodd {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

// --- adaptive average pooling ------------------------------------------------------

TEST(AdaptivePool, WorkedExample) {
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i + 1);
  const SegmentGrid g = adaptive_avg_pool(FeatureMap{BranchId::LS, Tensor({1, 1, 4, 4}, v)}, 2, 2);
  EXPECT_EQ(g.segments.shape(), (Shape{1, 4, 1}));
  const std::vector<double> expected{3.5, 5.5, 11.5, 13.5};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.segments.value(i), expected[i]);
  EXPECT_EQ(g.stride_h, 2u);
  EXPECT_EQ(g.stride_w, 2u);
}

TEST(AdaptivePool, ConstantMapGivesConstantSegments) {
  const SegmentGrid g = adaptive_avg_pool(FeatureMap{BranchId::CE, Tensor::full({2, 3, 7, 5}, 7.0)}, 3, 2);
  for (double v : g.segments.values()) EXPECT_DOUBLE_EQ(v, 7.0);
}

TEST(AdaptivePool, FullGridIsIdentity) {
  Rng rng(2);
  const Tensor x = random_tensor({1, 2, 3, 4}, rng);
  const SegmentGrid g = adaptive_avg_pool(FeatureMap{BranchId::LS, x}, 3, 4);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(g.segments.value(k * 2 + c), x.value(c * 12 + k));
}

TEST(AdaptivePool, GridLargerThanMapIsDimensionError) {
  EXPECT_THROW(adaptive_avg_pool(FeatureMap{BranchId::LS, Tensor::zeros({1, 1, 2, 2})}, 3, 1), DimensionError);
}

// Direct evaluation with floor bounds on 100 random maps, including non-divisible extents.
TEST(AdaptivePool, MatchesDirectWindowMeansOnRandomMaps) {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 1 + rng.below(3), H = 1 + rng.below(12), W = 1 + rng.below(12);
    const std::size_t kh = 1 + rng.below(H), kw = 1 + rng.below(W);
    const Tensor x = random_tensor({1, C, H, W}, rng, -5.0, 5.0);
    const SegmentGrid g = adaptive_avg_pool(FeatureMap{BranchId::MG, x}, kh, kw);
    double pooled_mass = 0.0, map_mass = 0.0;
    for (double v : x.values()) map_mass += v;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          const std::size_t r0 = i * H / kh, r1 = (i + 1) * H / kh;
          const std::size_t c0 = j * W / kw, c1 = (j + 1) * W / kw;
          double s = 0.0;
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t q = c0; q < c1; ++q) s += x.value((c * H + r) * W + q);
          const double area = static_cast<double>((r1 - r0) * (c1 - c0));
          const double got = g.segments.value((i * kw + j) * C + c);
          EXPECT_NEAR(got, s / area, 1e-12) << "trial " << trial;
          pooled_mass += got * area;
        }
    EXPECT_NEAR(pooled_mass, map_mass, 1e-9);
  }
}

// --- window partition ----------------------------------------------------------------

FeatureMap index_map(std::size_t N, std::size_t C, std::size_t H, std::size_t W) {
  std::vector<double> v(N * C * H * W);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  return FeatureMap{BranchId::MG, Tensor({N, C, H, W}, v)};
}

TEST(WindowPartition, UnshiftedTilesPartitionTheMap) {
  const WindowLayout L = make_window_layout(4, 4, 2, 1, false);
  EXPECT_EQ(L.window_count(), 4u);
  std::multiset<std::size_t> seen(L.source->begin(), L.source->end());
  EXPECT_EQ(seen.size(), 16u);
  for (std::size_t cell = 0; cell < 16; ++cell) EXPECT_EQ(seen.count(cell), 1u);
  // Tile 0 is the top-left 2x2 block.
  EXPECT_EQ((std::vector<std::size_t>(L.source->begin(), L.source->begin() + 4)),
            (std::vector<std::size_t>{0, 1, 4, 5}));
}

TEST(WindowPartition, ShiftedRollEnumeration) {
  WindowConfig cfg;
  cfg.window = 2;
  cfg.shift = 1;
  // Value at (r, c) is 4r + c.
  const WindowPartition p = window_partition_shift(index_map(1, 1, 4, 4), cfg, true);
  ASSERT_EQ(p.windows.shape(), (Shape{4, 1, 2, 2}));
  // Tile 0 begins with pre-roll pixel (1,1) and holds the block (1..2, 1..2).
  const std::vector<double> tile0(p.windows.values().begin(), p.windows.values().begin() + 4);
  EXPECT_EQ(tile0, (std::vector<double>{5, 6, 9, 10}));
  // The wrapped corner tile gathers the four map corners; pixel (0,0) sits at its (1,1).
  const std::vector<double> tile3(p.windows.values().begin() + 12, p.windows.values().end());
  EXPECT_EQ(tile3, (std::vector<double>{15, 12, 3, 0}));
}

TEST(WindowPartition, ShiftNotBelowWindowIsConfigError) {
  WindowConfig cfg;
  cfg.window = 2;
  cfg.shift = 2;
  EXPECT_THROW(window_partition_shift(index_map(1, 1, 4, 4), cfg, true), ConfigError);
}

TEST(WindowPartition, RoundTripsExactlyShiftedAndUnshifted) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t N = 1 + rng.below(2), C = 1 + rng.below(3), H = 1 + rng.below(9), W = 1 + rng.below(9);
    WindowConfig cfg;
    cfg.window = 1 + rng.below(4);
    cfg.shift = rng.below(cfg.window);
    const FeatureMap map{BranchId::MG, random_tensor({N, C, H, W}, rng, -1.0, 1.0)};
    for (bool shifted : {false, true}) {
      const FeatureMap back = window_reverse(window_partition_shift(map, cfg, shifted));
      ASSERT_EQ(back.values.shape(), map.values.shape());
      for (std::size_t i = 0; i < map.values.numel(); ++i) ASSERT_EQ(back.values.value(i), map.values.value(i));
    }
  }
}

TEST(WindowPartition, TokenLayoutRoundTrips) {
  Rng rng(12);
  const Tensor tokens = random_tensor({2, 5, 6, 3}, rng);
  const WindowLayout L = make_window_layout(5, 6, 4, 2, true);
  const Tensor back = windows_to_tokens(tokens_to_windows(tokens, L), L, 2);
  for (std::size_t i = 0; i < tokens.numel(); ++i) ASSERT_EQ(back.value(i), tokens.value(i));
}

// --- localized spatial branch ------------------------------------------------------

InputConfig input32() { return InputConfig{}; }

ConvStackConfig ls_8_16() {
  ConvStackConfig c;
  c.channels = {8, 16};
  c.strides = {2, 2};
  c.kernel = 3;
  c.grid_h = 2;
  c.grid_w = 2;
  return c;
}

TEST(LocalSpatial, ShapeContract) {
  Rng rng(1);
  const LocalSpatialBranch ls(input32(), ls_8_16(), rng);
  const SegmentGrid g = ls.forward(Tensor::zeros({1, 3, 32, 32}));
  EXPECT_EQ(g.segments.shape(), (Shape{1, 4, 16}));
  for (double v : g.segments.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(LocalSpatial, WrongExtentIsDimensionError) {
  Rng rng(1);
  const LocalSpatialBranch ls(input32(), ls_8_16(), rng);
  EXPECT_THROW(ls.forward(Tensor::zeros({1, 3, 16, 32})), DimensionError);
}

// Enumerates the input rows (or columns) that can influence output cell `o`
// of a stride/kernel/padding conv stack.
std::pair<long, long> receptive_span(long lo, long hi, const std::vector<Conv2d>& layers) {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    const long s = static_cast<long>(it->stride()), p = static_cast<long>(it->padding()),
               k = static_cast<long>(it->kernel());
    lo = lo * s - p;
    hi = hi * s - p + k - 1;
  }
  return {lo, hi};
}

TEST(LocalSpatial, PatchChangesOnlySegmentsCoveringIt) {
  Rng rng(4);
  const LocalSpatialBranch ls(input32(), ls_8_16(), rng);
  const auto& layers = ls.stack().layers();
  const std::size_t map = 8, grid = 2;
  Rng data(5);
  const Tensor base = random_tensor({1, 3, 32, 32}, data);
  const SegmentGrid g0 = ls.forward(base);
  std::size_t changed_total = 0;
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t r0 = data.below(30), c0 = data.below(30);
    Tensor edited = base.detach();
    auto px = edited.data();
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t r = r0; r < r0 + 3; ++r)
        for (std::size_t c = c0; c < c0 + 3; ++c) px[(ch * 32 + r) * 32 + c] = data.uniform();
    const SegmentGrid g1 = ls.forward(edited);
    for (std::size_t i = 0; i < grid; ++i)
      for (std::size_t j = 0; j < grid; ++j) {
        const long m = static_cast<long>(map / grid);
        const auto rows = receptive_span(static_cast<long>(i) * m, static_cast<long>(i + 1) * m - 1, layers);
        const auto cols = receptive_span(static_cast<long>(j) * m, static_cast<long>(j + 1) * m - 1, layers);
        const bool covers = rows.first <= static_cast<long>(r0 + 2) && static_cast<long>(r0) <= rows.second &&
                            cols.first <= static_cast<long>(c0 + 2) && static_cast<long>(c0) <= cols.second;
        const std::size_t k = i * grid + j;
        bool differs = false;
        for (std::size_t c = 0; c < 16; ++c)
          differs |= g0.segments.value(k * 16 + c) != g1.segments.value(k * 16 + c);
        if (!covers) {
          EXPECT_FALSE(differs) << "segment " << k << " outside the receptive field changed";
        }
        changed_total += differs;
      }
  }
  EXPECT_GT(changed_total, 0u);
}

// --- multi-scale global context branch -----------------------------------------

MgConfig mg_config(std::size_t depth, std::size_t window, std::size_t shift, std::size_t patch) {
  MgConfig c;
  c.patch = patch;
  c.embed_dim = 8;
  c.window.window = window;
  c.window.shift = shift;
  c.window.heads = 2;
  c.window.depth = depth;
  return c;
}

InputConfig input16() {
  InputConfig in;
  in.height = in.width = 16;
  return in;
}

TEST(GlobalContext, ExtentHalvesPerMerge) {
  for (std::size_t depth : {1u, 2u, 3u}) {
    Rng rng(3);
    MgConfig cfg = mg_config(depth, 2, 1, 2);
    cfg.grid_h = cfg.grid_w = 1;
    const GlobalContextBranch mg(input16(), cfg, rng);
    const FeatureMap fm = mg.feature_map(Tensor::full({1, 3, 16, 16}, 0.3));
    const std::size_t extent = 8 >> (depth - 1);
    EXPECT_EQ(fm.height(), extent);
    EXPECT_EQ(fm.width(), extent);
    EXPECT_EQ(fm.channels(), 8u << (depth - 1));
    EXPECT_EQ(mg.out_channels(), fm.channels());
  }
}

TEST(GlobalContext, FinalGridMatchesConfiguredSegments) {
  Rng rng(3);
  const GlobalContextBranch mg(input16(), mg_config(2, 2, 1, 2), rng);
  const SegmentGrid g = mg.forward(Tensor::full({2, 3, 16, 16}, 0.3));
  EXPECT_EQ(g.segments.shape(), (Shape{2, 4, 16}));
}

TEST(GlobalContext, UnshiftedWindowsAreIsolated) {
  Rng rng(6);
  // 16x16 frame, 4x4 patches -> 4x4 tokens in four 2x2 windows.
  const GlobalContextBranch mg(input16(), mg_config(1, 2, 0, 4), rng);
  Rng data(7);
  const Tensor base = random_tensor({1, 3, 16, 16}, data);
  const Tensor t0 = mg.stage_tokens(base);
  ASSERT_EQ(t0.shape(), (Shape{1, 4, 4, 8}));

  // Permute the four patches of the top-right window and refill the bottom half.
  Tensor edited = base.detach();
  auto px = edited.data();
  const auto src = base.values();
  const std::size_t order[4] = {3, 2, 0, 1};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t t = 0; t < 4; ++t) {
      const std::size_t dr = (t / 2) * 4, dc = 8 + (t % 2) * 4;
      const std::size_t sr = (order[t] / 2) * 4, sc = 8 + (order[t] % 2) * 4;
      for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b)
          px[(ch * 16 + dr + a) * 16 + dc + b] = src[(ch * 16 + sr + a) * 16 + sc + b];
    }
    for (std::size_t r = 8; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) px[(ch * 16 + r) * 16 + c] = data.uniform();
  }
  const Tensor t1 = mg.stage_tokens(edited);
  // Tokens of the top-left window (rows 0..1, cols 0..1) are untouched.
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < 8; ++k) {
        const std::size_t i = (r * 4 + c) * 8 + k;
        EXPECT_EQ(t0.value(i), t1.value(i));
      }
  bool other_changed = false;
  for (std::size_t i = 0; i < t0.numel(); ++i) other_changed |= t0.value(i) != t1.value(i);
  EXPECT_TRUE(other_changed);
}

TEST(GlobalContext, ShiftedWindowsMixAcrossBoundaries) {
  Rng rng(6);
  const GlobalContextBranch mg(input16(), mg_config(1, 2, 1, 4), rng);
  Rng data(7);
  const Tensor base = random_tensor({1, 3, 16, 16}, data);
  Tensor edited = base.detach();
  auto px = edited.data();
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t r = 8; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) px[(ch * 16 + r) * 16 + c] = data.uniform();
  const Tensor t0 = mg.stage_tokens(base), t1 = mg.stage_tokens(edited);
  bool top_left_changed = false;
  for (std::size_t i = 0; i < 8 * 2; ++i) top_left_changed |= t0.value(i) != t1.value(i);
  EXPECT_TRUE(top_left_changed);
}

TEST(GlobalContext, IdenticalFramesGiveIdenticalOutputs) {
  Rng rng(9);
  const GlobalContextBranch mg(input16(), mg_config(2, 2, 1, 2), rng);
  Rng data(10);
  const Tensor one = random_tensor({1, 3, 16, 16}, data);
  std::vector<double> two(one.values().begin(), one.values().end());
  two.insert(two.end(), one.values().begin(), one.values().end());
  const SegmentGrid g = mg.forward(Tensor({2, 3, 16, 16}, two));
  const std::size_t half = g.segments.numel() / 2;
  for (std::size_t i = 0; i < half; ++i) EXPECT_EQ(g.segments.value(i), g.segments.value(half + i));
  const SegmentGrid again = mg.forward(one);
  for (std::size_t i = 0; i < half; ++i) EXPECT_EQ(again.segments.value(i), g.segments.value(i));
}

// --- complementary emotion branch --------------------------------------------------

TEST(Emotion, ShapeMatchesConvContractAndZeroFrameIsFinite) {
  Rng rng(1);
  CeConfig cfg;
  cfg.conv = ls_8_16();
  const EmotionBranch ce(input32(), cfg, rng);
  const SegmentGrid g = ce.forward(Tensor::zeros({1, 3, 32, 32}));
  EXPECT_EQ(g.segments.shape(), (Shape{1, 4, 16}));
  for (double v : g.segments.values()) EXPECT_TRUE(std::isfinite(v));
  const Tensor e = ce.expression(ce.feature_map(Tensor::zeros({1, 3, 32, 32})));
  EXPECT_EQ(e.shape(), (Shape{1}));
  EXPECT_TRUE(std::isfinite(e.value(0)));
}

// The auxiliary head alone learns the generated expression labels.
TEST(Emotion, AuxiliaryHeadReachesExpressionCriterion) {
  CorpusConfig corpus;
  corpus.seed = 21;
  corpus.clips = 48;
  corpus.frames = 6;
  corpus.mix = DomainMix::A;
  const auto clips = generate_corpus(corpus);
  std::vector<Frame> train_frames, test_frames;
  std::vector<double> train_y, test_y;
  for (std::size_t i = 0; i < clips.size(); ++i)
    for (std::size_t t = 0; t < clips[i].frames.size(); ++t) {
      const bool test = i % 4 == 3;
      (test ? test_frames : train_frames).push_back(clips[i].frames[t]);
      (test ? test_y : train_y).push_back(clips[i].expression[t]);
    }
  auto standardize = [](const Tensor& x) { return scale(add_scalar(x, -0.5), 4.0); };

  Rng rng(22);
  const EmotionBranch ce(input32(), CeConfig{}, rng);
  NamedParams params;
  ce.collect(params, "ce");
  AdamConfig opt_cfg;
  opt_cfg.learning_rate = 3e-3;
  opt_cfg.step_size = 100;
  Adam opt(tensors_of(params), opt_cfg);
  const std::size_t B = 24;
  for (std::size_t epoch = 0; epoch < 40; ++epoch)
    for (std::size_t s = 0; s + B <= train_frames.size(); s += B) {
      const std::span<const Frame> batch(train_frames.data() + s, B);
      const Tensor pred = ce.expression(ce.feature_map(standardize(stack_frames(batch))));
      const Tensor target({B}, std::vector<double>(train_y.begin() + s, train_y.begin() + s + B));
      opt.zero_grad();
      mse(pred, target).backward();
      opt.step();
    }

  NoGradGuard no_grad;
  auto mse_and_variance = [&](const std::vector<Frame>& frames, const std::vector<double>& y) {
    const Tensor pred = ce.expression(ce.feature_map(standardize(stack_frames(frames))));
    double mean = 0.0, var = 0.0;
    for (double v : y) mean += v / y.size();
    for (double v : y) var += (v - mean) * (v - mean) / y.size();
    return std::pair{mse(pred, Tensor({y.size()}, y)).item(), var};
  };
  EXPECT_LT(mse_and_variance(test_frames, test_y).first, 0.05);
  // The head fits its own labels well below the best constant predictor.
  const auto [train_err, train_var] = mse_and_variance(train_frames, train_y);
  EXPECT_LT(train_err, 0.5 * train_var) << "mse " << train_err << " variance " << train_var;
}

// --- segment attention ---------------------------------------------------------------

TEST(SegmentAttention, SingleSegmentAttendsToItself) {
  Rng rng(13);
  const SegmentAttention sa(5, AttentionConfig{8, 2}, rng);
  SegmentGrid grid;
  grid.segments = random_tensor({3, 1, 5}, rng);
  grid.grid_h = grid.grid_w = 1;
  SegmentAttention::Trace trace;
  const BranchEmbedding e = sa.forward(grid, &trace);
  EXPECT_EQ(e.vectors.shape(), (Shape{3, 8}));
  for (double w : trace.weights.values()) EXPECT_DOUBLE_EQ(w, 1.0);
  for (std::size_t i = 0; i < e.vectors.numel(); ++i) EXPECT_EQ(e.vectors.value(i), trace.transformed.value(i));
}

TEST(SegmentAttention, IdenticalSegmentsGiveUniformWeights) {
  Rng rng(14);
  const SegmentAttention sa(4, AttentionConfig{8, 4}, rng);
  std::vector<double> row{0.3, -1.2, 0.7, 2.0};
  std::vector<double> v;
  for (int k = 0; k < 6; ++k) v.insert(v.end(), row.begin(), row.end());
  SegmentGrid grid;
  grid.segments = Tensor({1, 6, 4}, v);
  grid.grid_h = 2;
  grid.grid_w = 3;
  SegmentAttention::Trace trace;
  sa.forward(grid, &trace);
  for (double w : trace.weights.values()) EXPECT_NEAR(w, 1.0 / 6.0, 1e-15);
}

TEST(SegmentAttention, EmbeddingIsMeanOfTransformedRows) {
  Rng rng(15);
  const SegmentAttention sa(6, AttentionConfig{8, 2}, rng);
  SegmentGrid grid;
  grid.segments = random_tensor({2, 3, 6}, rng, -1.0, 1.0);
  grid.grid_h = 1;
  grid.grid_w = 3;
  SegmentAttention::Trace trace;
  const BranchEmbedding e = sa.forward(grid, &trace);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t d = 0; d < 8; ++d) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += trace.transformed.value((n * 3 + k) * 8 + d);
      EXPECT_NEAR(e.vectors.value(n * 8 + d), s / 3.0, 1e-15);
    }
}

TEST(SegmentAttention, EmbedDimNotDivisibleByHeadsIsConfigError) {
  Rng rng(1);
  EXPECT_THROW(SegmentAttention(4, AttentionConfig{10, 4}, rng), ConfigError);
}

TEST(Branches, AllEmitTheSameEmbeddingDimension) {
  Rng rng(16);
  const AttentionConfig att{16, 4};
  const Tensor frames = Tensor::full({2, 3, 32, 32}, 0.5);
  for (BranchId id : kAllBranches) {
    Rng branch_rng = rng.fork(static_cast<std::uint64_t>(id));
    const auto branch = make_branch(id, input32(), ConvStackConfig{}, MgConfig{}, CeConfig{}, branch_rng);
    const SegmentAttention sa(branch->out_channels(), att, branch_rng);
    EXPECT_EQ(sa.forward(branch->forward(frames)).vectors.shape(), (Shape{2, 16})) << branch_name(id);
  }
}

// --- gradients through each branch ------------------------------------------------

TEST(Branches, GradientsMatchFiniteDifferencesOnToyFrame) {
  InputConfig in;
  in.height = in.width = 8;
  ConvStackConfig conv;
  conv.channels = {4, 4};
  MgConfig mg;
  mg.patch = 2;
  mg.embed_dim = 4;
  mg.window = WindowConfig{2, 1, 2, 2};
  CeConfig ce;
  ce.conv = conv;
  for (BranchId id : kAllBranches) {
    Rng rng(30 + static_cast<int>(id));
    const auto branch = make_branch(id, in, conv, mg, ce, rng);
    const SegmentAttention sa(branch->out_channels(), AttentionConfig{8, 2}, rng);
    const Tensor frames = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0, true);
    const Tensor weights = random_tensor({2, 8}, rng, -1.0, 1.0);
    NamedParams params;
    branch->collect(params, "b");
    sa.collect(params, "sa");
    // A key bias shifts every logit of a softmax row equally, so its true
    // gradient is zero and the central difference is pure roundoff.
    std::vector<Tensor> inputs{frames}, key_biases;
    for (auto& [name, t] : params)
      (name.find("key.bias") != std::string::npos ? key_biases : inputs).push_back(t);
    auto loss = [&] { return sum(mul(sa.forward(branch->forward(frames)).vectors, weights)); };
    FiniteDiffOptions fd;
    fd.max_probes = 12;
    EXPECT_LT(max_relative_error(loss, inputs, fd), 1e-4) << branch_name(id);
    for (auto& t : key_biases) t.zero_grad();
    loss().backward();
    for (const auto& t : key_biases)
      for (double g : t.grad()) EXPECT_LT(std::abs(g), 1e-12) << branch_name(id);
  }
}

}  // namespace
}  // namespace cbodd
