#pragma once

// Procedural two-domain face-like corpus. Real clips: smooth background, a
// soft skin ellipse, two dark eye blobs and a mouth arc whose curvature
// follows the per-frame expression value, with mild per-frame jitter and
// pixel noise. Fake clips are a real base plus one artifact:
//   domain A: a rectangular patch blended in with a colour shift and a
//             soft seam (low-frequency);
//   domain B: a checkerboard overlay on a facial sub-region (high-frequency)
//             and an expression track that jumps inconsistently per frame.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cbodd/detector.hpp"
#include "cbodd/encoders.hpp"

namespace cbodd {

enum class DomainMix { A, B, Both };

DomainMix parse_domain_mix(std::string_view text);

struct ArtifactDescriptor {
  std::string family;  // "blend" (domain A) or "checker" (domain B)
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double strength = 0.0;
};

struct SyntheticClip {
  std::string clip_id;
  std::vector<Frame> frames;
  Label label = Label::Real;
  char domain = 'A';
  std::vector<double> expression;  // per frame, in [0,1]
  std::optional<ArtifactDescriptor> artifact;

  double expression_mean() const;
};

struct CorpusConfig {
  std::uint64_t seed = 1;
  std::size_t clips = 20;
  std::size_t frames = 8;
  std::size_t size = 32;
  DomainMix mix = DomainMix::Both;

  /// Throws ConfigError for size < 16, frames == 0, or a mix that cannot
  /// give every requested domain both labels.
  void validate() const;
};

/// Clips are assigned to domains (A first for Both) and alternate real/fake
/// within a domain. Pure function of the config.
std::vector<SyntheticClip> generate_corpus(const CorpusConfig& config);

/// One clip; with apply_artifact=false a fake clip is rendered as its real
/// base (same jitter, noise and expression track before perturbation).
SyntheticClip generate_clip(const CorpusConfig& config, char domain, std::size_t index, Label label,
                            bool apply_artifact = true);

std::string clip_id_for(char domain, std::size_t index);

// --- on-disk corpus ---------------------------------------------------------------

/// Binary PPM (P6, 8-bit). Pixels [3,H,W] in [0,1] are scaled by 255 and rounded.
void write_ppm(const std::filesystem::path& path, const Tensor& pixels);
Tensor read_ppm(const std::filesystem::path& path);

/// Writes <dir>/manifest.csv (clip_id,label,domain,T,expression_mean), one
/// directory per clip with frame_NNN.ppm files, and a per-clip
/// expression.csv (frame,expression).
void write_corpus(const std::filesystem::path& dir, const std::vector<SyntheticClip>& clips);
/// Throws DataError on any missing or malformed file.
std::vector<SyntheticClip> read_corpus(const std::filesystem::path& dir);

}  // namespace cbodd
