#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "cbodd/config.hpp"
#include "cbodd/errors.hpp"
#include "cbodd/model.hpp"

namespace cbodd {
namespace {

std::map<std::string, std::size_t> report_of(const CbodModel& m) {
  std::map<std::string, std::size_t> out;
  for (const auto& e : m.parameter_report()) out[e.module] = e.count;
  return out;
}

TEST(Config, DeskIsTheDefaultProfile) {
  const RunConfig c = RunConfig::desk();
  EXPECT_EQ(c.canonical_text(), RunConfig{}.canonical_text());
  EXPECT_EQ(c.attention.embed_dim, 64u);
  EXPECT_EQ(c.ofdm.d_shared, 8u);
  EXPECT_EQ(c.ofdm.d_disentangled, 16u);
  EXPECT_EQ(c.input.height, 32u);
  EXPECT_LE(c.train.epochs, 30u);
  EXPECT_EQ(c.variant, Variant::Full);
}

TEST(Config, FullScaleProfileValues) {
  const RunConfig c = RunConfig::full_scale();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.attention.embed_dim, 2048u);
  EXPECT_EQ(c.optim.learning_rate, 1e-2);
  EXPECT_EQ(c.train.epochs, 100u);
  EXPECT_EQ(c.ofdm.lambda_branch, 0.4);
  EXPECT_EQ(c.ofdm.lambda_cross, 0.25);
}

TEST(Config, CanonicalTextRoundTrips) {
  for (const RunConfig& c : {RunConfig::desk(), RunConfig::full_scale()}) {
    const RunConfig back = parse_config(c.canonical_text());
    EXPECT_EQ(back.canonical_text(), c.canonical_text());
    EXPECT_EQ(back.digest(), c.digest());
  }
}

TEST(Config, PartialTextKeepsDefaultsAndIgnoresComments) {
  const RunConfig c = parse_config("# comment\n[ofdm]\nlambda_cross = 0.5  ; trailing\n\n[train]\nvariant = CBO-wo-CE\n");
  EXPECT_EQ(c.ofdm.lambda_cross, 0.5);
  EXPECT_EQ(c.variant, Variant::CboWoCe);
  EXPECT_EQ(c.ofdm.lambda_branch, 0.4);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("[ofdm]\nlambda_crosss = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[ofdm]\nlambda_cross = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("[ofdm]\nlambda_cross = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[ofdm\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nvariant = FULLER\n"), ConfigError);
  EXPECT_THROW(parse_config("[attention]\nembed_dim = 10\nheads = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[mg]\nwindow = 2\nshift = 2\n"), ConfigError);
}

TEST(Config, DigestIsStableAndTracksLambdaCross) {
  const RunConfig a, b;
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(a.digest().size(), 16u);
  RunConfig c;
  c.ofdm.lambda_cross = 0.26;
  EXPECT_NE(c.digest(), a.digest());
}

TEST(Config, FnvMatchesKnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Config, SaveLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "cbodd_test_config.cfg";
  RunConfig c;
  c.train.seed = 99;
  c.ofdm.sharing = HeadSharing::PerBranch;
  save_config(path, c);
  EXPECT_EQ(load_config(path).digest(), c.digest());
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), ConfigError);
}

TEST(Variants, IdsRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("BO-wo-XX"), ConfigError);
}

TEST(Variants, DisentanglementAblationZeroesBothLambdas) {
  RunConfig c;
  c.variant = parse_variant("MB-wo-BO-CBO");
  EXPECT_EQ(c.active_branches().size(), 3u);
  EXPECT_EQ(c.effective_lambda_branch(), 0.0);
  EXPECT_EQ(c.effective_lambda_cross(), 0.0);
  c.variant = Variant::MbWoCbo;
  EXPECT_EQ(c.effective_lambda_branch(), 0.4);
  EXPECT_EQ(c.effective_lambda_cross(), 0.0);
  c.variant = Variant::MbWoBo;
  EXPECT_EQ(c.effective_lambda_branch(), 0.0);
  EXPECT_EQ(c.effective_lambda_cross(), 0.25);
}

TEST(Variants, SingleBranchForcesCrossToZero) {
  RunConfig c;
  c.variant = parse_variant("BO-wo-MG-CE");
  EXPECT_EQ(c.active_branches(), (std::vector<BranchId>{BranchId::LS}));
  EXPECT_EQ(c.effective_lambda_cross(), 0.0);
  EXPECT_EQ(c.effective_lambda_branch(), 0.4);
}

TEST(Variants, FusedDimensionShrinksPerRemovedBranch) {
  EXPECT_EQ(fused_dimension(RunConfig::full_scale()), 1920u);
  const RunConfig base;
  const std::size_t per_branch = base.ofdm.d_shared + base.ofdm.d_disentangled;
  const Tensor frames = Tensor::full({2, 3, 32, 32}, 0.5);
  for (Variant v : kAllVariants) {
    RunConfig c = base;
    c.variant = v;
    const std::size_t removed = 3 - c.active_branches().size();
    EXPECT_EQ(fused_dimension(c), 3 * per_branch - removed * per_branch) << to_string(v);
    const CbodModel model(c);
    EXPECT_EQ(model.forward(frames).fused.dim(), fused_dimension(c)) << to_string(v);
  }
}

TEST(ParamReport, DoublingEmbedDimDoublesProjectionHeads) {
  RunConfig c;
  const auto a = report_of(CbodModel(c));
  c.attention.embed_dim *= 2;
  const auto b = report_of(CbodModel(c));
  EXPECT_EQ(b.at("projection heads"), 2 * a.at("projection heads"));
}

TEST(ParamReport, DroppingCeRemovesItsBranchAndClassifierShare) {
  RunConfig full;
  RunConfig no_ce;
  no_ce.variant = Variant::CboWoCe;
  const CbodModel a(full), b(no_ce);
  const auto ra = report_of(a), rb = report_of(b);
  const std::size_t ce = ra.at("CE backbone") + ra.at("CE segment attention");
  EXPECT_EQ(rb.count("CE backbone"), 0u);
  EXPECT_EQ(count_parameters(a.parameters()) - count_parameters(b.parameters()),
            ce + full.ofdm.d_shared + full.ofdm.d_disentangled);
  EXPECT_EQ(ra.at("projection heads"), rb.at("projection heads"));
}

TEST(Model, DroppingABranchKeepsOtherInitialWeights) {
  RunConfig full;
  RunConfig no_mg;
  no_mg.variant = Variant::CboWoMg;
  const CbodModel a(full), b(no_mg);
  std::map<std::string, Tensor> pa;
  for (const auto& [n, t] : a.parameters()) pa[n] = t;
  std::size_t compared = 0;
  for (const auto& [n, t] : b.parameters()) {
    if (n.rfind("classifier", 0) == 0) continue;
    ASSERT_TRUE(pa.count(n)) << n;
    for (std::size_t i = 0; i < t.numel(); ++i) ASSERT_EQ(t.value(i), pa[n].value(i)) << n;
    ++compared;
  }
  EXPECT_GT(compared, 10u);
}

}  // namespace
}  // namespace cbodd
