#pragma once

// Run configuration: every hyperparameter of the pipeline, a sectioned
// `key = value` text format, and a stable digest of the canonical text.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cbodd/detector.hpp"
#include "cbodd/encoders.hpp"
#include "cbodd/ofdm.hpp"
#include "cbodd/optim.hpp"

namespace cbodd {

/// Ablation variants. Names follow the multi-branch (BO/CBO) and
/// disentanglement (MB) ablation tables.
enum class Variant {
  BoWoMgCe,
  BoWoLsCe,
  BoWoLsMg,
  CboWoLs,
  CboWoMg,
  CboWoCe,
  MbWoBoCbo,
  MbWoCbo,
  MbWoBo,
  Full,
};

inline constexpr std::array<Variant, 10> kAllVariants{
    Variant::BoWoMgCe, Variant::BoWoLsCe, Variant::BoWoLsMg, Variant::CboWoLs,   Variant::CboWoMg,
    Variant::CboWoCe,  Variant::MbWoBoCbo, Variant::MbWoCbo, Variant::MbWoBo, Variant::Full};

std::string_view to_string(Variant v);
/// Throws ConfigError for unknown ids.
Variant parse_variant(std::string_view id);

struct VariantSpec {
  std::vector<BranchId> branches;
  bool branch_ortho = true;
  bool cross_ortho = true;
};

VariantSpec variant_spec(Variant v);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  char train_domain = 'A';
  /// Score/train every frame_stride-th frame of a clip.
  std::size_t frame_stride = 1;
  /// Held-out clip fraction of the training domain (within-domain test set).
  double val_fraction = 0.2;

  void validate() const;
};

struct RunConfig {
  InputConfig input;
  ConvStackConfig ls;
  MgConfig mg;
  CeConfig ce;
  AttentionConfig attention{64, 4};
  OfdmConfig ofdm{8, 16};
  DetectorConfig detector;
  /// The desk profile trains from scratch and uses a lower learning rate
  /// than the optimizer default.
  AdamConfig optim{3e-3};
  TrainConfig train;
  Variant variant = Variant::Full;

  /// Desk-scale profile; identical to a default-constructed config.
  static RunConfig desk();
  /// Full-scale dimensions (D=2048, d_s=128, d_d=512, 100 epochs, 224px).
  /// Untested at this scale.
  static RunConfig full_scale();

  void validate() const;
  /// Branch set after applying the variant.
  std::vector<BranchId> active_branches() const;
  /// Lambdas after applying the variant (zeroed terms are exactly 0).
  double effective_lambda_branch() const;
  double effective_lambda_cross() const;

  std::string canonical_text() const;
  /// 16 hex digits of FNV-1a 64 over canonical_text().
  std::string digest() const;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

std::string fnv1a_hex(std::string_view bytes);

}  // namespace cbodd
