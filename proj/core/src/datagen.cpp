#include "cbodd/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cbodd/errors.hpp"
#include "cbodd/rng.hpp"

namespace cbodd {

namespace fs = std::filesystem;

DomainMix parse_domain_mix(std::string_view text) {
  if (text == "A") return DomainMix::A;
  if (text == "B") return DomainMix::B;
  if (text == "both") return DomainMix::Both;
  throw ConfigError("domain must be A, B or both, got '" + std::string(text) + "'");
}

double SyntheticClip::expression_mean() const {
  if (expression.empty()) return 0.0;
  double acc = 0.0;
  for (double e : expression) acc += e;
  return acc / static_cast<double>(expression.size());
}

void CorpusConfig::validate() const {
  if (size < 16) throw ConfigError("frame size must be at least 16, got " + std::to_string(size));
  if (frames == 0) throw ConfigError("clips need at least one frame");
  const std::size_t per_domain = mix == DomainMix::Both ? clips / 2 : clips;
  if (per_domain < 2) throw ConfigError("each domain needs at least 2 clips so both labels are present");
}

std::string clip_id_for(char domain, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%04zu", domain, index);
  return buf;
}

namespace {

constexpr std::size_t kChannels = 3;

struct Rgb {
  double v[3];
};

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Per-clip constants of the face.
struct FaceParams {
  Rgb bg0, bg1;
  double bg_angle;
  Rgb skin;
  double cx, cy, rx, ry;
  double eye_dx, eye_dy, eye_sigma, eye_dark;
  double mouth_dy, mouth_half, mouth_sigma;
  double expression_base, expression_phase;
};

FaceParams sample_face(Rng& rng, double S) {
  FaceParams f;
  for (int c = 0; c < 3; ++c) {
    f.bg0.v[c] = rng.uniform(0.1, 0.5);
    f.bg1.v[c] = rng.uniform(0.1, 0.5);
  }
  f.bg_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double tone = rng.uniform(-0.1, 0.1);
  f.skin = {{0.8 + tone, 0.62 + tone, 0.5 + tone}};
  f.cx = S / 2.0 + rng.uniform(-0.05, 0.05) * S;
  f.cy = S / 2.0 + rng.uniform(-0.05, 0.05) * S;
  f.rx = S * rng.uniform(0.29, 0.35);
  f.ry = S * rng.uniform(0.36, 0.43);
  f.eye_dx = S * rng.uniform(0.11, 0.15);
  f.eye_dy = S * rng.uniform(0.07, 0.11);
  f.eye_sigma = S * 0.045;
  f.eye_dark = rng.uniform(0.5, 0.7);
  f.mouth_dy = S * rng.uniform(0.14, 0.18);
  f.mouth_half = S * rng.uniform(0.1, 0.14);
  f.mouth_sigma = S * 0.025;
  f.expression_base = rng.uniform(0.15, 0.85);
  f.expression_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return f;
}

// Renders one frame [3,S,S]; (jx, jy) is the per-frame face displacement.
std::vector<double> render_face(const FaceParams& f, std::size_t S, double expression, double jx, double jy,
                                Rng& noise_rng) {
  std::vector<double> px(kChannels * S * S);
  const double ca = std::cos(f.bg_angle), sa = std::sin(f.bg_angle);
  const double cx = f.cx + jx, cy = f.cy + jy;
  // Mouth curvature: positive smiles (corners up), negative frowns.
  const double curvature = (expression - 0.5) * 2.0;
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t c = 0; c < S; ++c) {
      const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
      const double t = std::clamp(((x / S - 0.5) * ca + (y / S - 0.5) * sa) + 0.5, 0.0, 1.0);
      double pix[3];
      for (int k = 0; k < 3; ++k) pix[k] = (1.0 - t) * f.bg0.v[k] + t * f.bg1.v[k];

      const double ex = (x - cx) / f.rx, ey = (y - cy) / f.ry;
      const double face = 1.0 - smoothstep(0.9, 1.05, std::sqrt(ex * ex + ey * ey));
      for (int k = 0; k < 3; ++k) pix[k] = (1.0 - face) * pix[k] + face * f.skin.v[k];

      double dark = 0.0;
      for (double side : {-1.0, 1.0}) {
        const double dx = x - (cx + side * f.eye_dx), dy = y - (cy - f.eye_dy);
        dark += f.eye_dark * std::exp(-(dx * dx + dy * dy) / (2.0 * f.eye_sigma * f.eye_sigma));
      }
      const double u = (x - cx) / f.mouth_half;
      if (std::abs(u) <= 1.2) {
        const double arc_y = cy + f.mouth_dy - curvature * (u * u) * f.mouth_half * 0.5;
        const double d = y - arc_y;
        const double fade = 1.0 - smoothstep(0.9, 1.2, std::abs(u));
        dark += 0.6 * fade * std::exp(-(d * d) / (2.0 * f.mouth_sigma * f.mouth_sigma));
      }
      dark = std::min(dark, 0.9) * face;
      for (int k = 0; k < 3; ++k) {
        const double v = pix[k] * (1.0 - dark) + noise_rng.normal(0.0, 0.01);
        px[(k * S + r) * S + c] = std::clamp(v, 0.0, 1.0);
      }
    }
  return px;
}

// Soft rectangular mask: 1 inside, ramping to 0 over `seam` pixels at the
// border, exactly 0 outside the rectangle.
double rect_alpha(const ArtifactDescriptor& a, std::size_t r, std::size_t c, double seam) {
  if (r < a.row0 || r >= a.row0 + a.rows || c < a.col0 || c >= a.col0 + a.cols) return 0.0;
  const double dr = std::min(static_cast<double>(r - a.row0), static_cast<double>(a.row0 + a.rows - 1 - r));
  const double dc = std::min(static_cast<double>(c - a.col0), static_cast<double>(a.col0 + a.cols - 1 - c));
  return std::min(1.0, (std::min(dr, dc) + 1.0) / (seam + 1.0));
}

ArtifactDescriptor place_region(Rng& rng, std::size_t S, const FaceParams& f, const char* family, double min_frac,
                                double max_frac, double strength) {
  ArtifactDescriptor a;
  a.family = family;
  a.rows = std::max<std::size_t>(4, static_cast<std::size_t>(S * rng.uniform(min_frac, max_frac)));
  a.cols = std::max<std::size_t>(4, static_cast<std::size_t>(S * rng.uniform(min_frac, max_frac)));
  const double cr = f.cy + rng.uniform(-0.12, 0.12) * S, cc = f.cx + rng.uniform(-0.12, 0.12) * S;
  const auto clamp_start = [S](double centre, std::size_t len) {
    const double s = std::round(centre - len / 2.0);
    return static_cast<std::size_t>(std::clamp(s, 0.0, static_cast<double>(S - len)));
  };
  a.row0 = clamp_start(cr, a.rows);
  a.col0 = clamp_start(cc, a.cols);
  a.strength = strength;
  return a;
}

void apply_blend(std::vector<double>& px, std::size_t S, const ArtifactDescriptor& a, const Rgb& shift) {
  const std::vector<double> base = px;
  for (std::size_t k = 0; k < kChannels; ++k)
    for (std::size_t r = a.row0; r < a.row0 + a.rows; ++r)
      for (std::size_t c = a.col0; c < a.col0 + a.cols; ++c) {
        const double alpha = rect_alpha(a, r, c, 2.0);
        // 3x3 box blur of the base, clipped at the image border.
        double acc = 0.0;
        int n = 0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(S) || cc >= static_cast<long>(S)) continue;
            acc += base[(k * S + rr) * S + cc];
            ++n;
          }
        const double patch = acc / n + shift.v[k];
        double& v = px[(k * S + r) * S + c];
        v = std::clamp((1.0 - alpha) * v + alpha * patch, 0.0, 1.0);
      }
}

void apply_checker(std::vector<double>& px, std::size_t S, const ArtifactDescriptor& a) {
  for (std::size_t k = 0; k < kChannels; ++k)
    for (std::size_t r = a.row0; r < a.row0 + a.rows; ++r)
      for (std::size_t c = a.col0; c < a.col0 + a.cols; ++c) {
        const double alpha = rect_alpha(a, r, c, 1.0);
        const double sign = ((r + c) % 2 == 0) ? 1.0 : -1.0;
        double& v = px[(k * S + r) * S + c];
        v = std::clamp(v + alpha * sign * a.strength, 0.0, 1.0);
      }
}

}  // namespace

SyntheticClip generate_clip(const CorpusConfig& config, char domain, std::size_t index, Label label,
                            bool apply_artifact) {
  if (domain != 'A' && domain != 'B') throw ConfigError("domain must be A or B");
  const std::size_t S = config.size, T = config.frames;
  const double Sd = static_cast<double>(S);
  const Rng clip_rng(Rng::mix(config.seed, (static_cast<std::uint64_t>(domain) << 32) | index));
  Rng face_rng = clip_rng.fork(1);
  Rng jitter_rng = clip_rng.fork(2);
  Rng noise_rng = clip_rng.fork(3);
  Rng artifact_rng = clip_rng.fork(4);

  const FaceParams face = sample_face(face_rng, Sd);
  SyntheticClip clip;
  clip.clip_id = clip_id_for(domain, index);
  clip.label = label;
  clip.domain = domain;

  std::vector<double> expr(T);
  for (std::size_t t = 0; t < T; ++t)
    expr[t] = std::clamp(face.expression_base +
                             0.05 * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(T) +
                                             face.expression_phase),
                         0.0, 1.0);
  std::vector<std::pair<double, double>> jitter(T);
  for (auto& j : jitter) j = {jitter_rng.normal(0.0, 0.3), jitter_rng.normal(0.0, 0.3)};

  const bool fake = label == Label::Fake && apply_artifact;
  Rgb shift{};
  if (label == Label::Fake) {
    // Drawn even when the artifact is not applied, so the base stays aligned.
    if (domain == 'A') {
      const double strength = artifact_rng.uniform(0.15, 0.3);
      for (auto& s : shift.v) s = (artifact_rng.uniform() < 0.5 ? -1.0 : 1.0) * strength * artifact_rng.uniform(0.5, 1.0);
      clip.artifact = place_region(artifact_rng, S, face, "blend", 0.25, 0.4, strength);
    } else {
      const double strength = artifact_rng.uniform(0.04, 0.09);
      clip.artifact = place_region(artifact_rng, S, face, "checker", 0.2, 0.35, strength);
      for (std::size_t t = 0; t < T; ++t) {
        const double jump = artifact_rng.uniform(-0.25, 0.25);
        if (fake) expr[t] = std::clamp(face.expression_base + jump, 0.0, 1.0);
      }
    }
    if (!fake) clip.artifact.reset();
  }

  for (std::size_t t = 0; t < T; ++t) {
    auto px = render_face(face, S, expr[t], jitter[t].first, jitter[t].second, noise_rng);
    if (fake) {
      if (domain == 'A')
        apply_blend(px, S, *clip.artifact, shift);
      else
        apply_checker(px, S, *clip.artifact);
    }
    clip.frames.push_back(Frame{Tensor({kChannels, S, S}, std::move(px)), t, clip.clip_id});
  }
  clip.expression = std::move(expr);
  return clip;
}

std::vector<SyntheticClip> generate_corpus(const CorpusConfig& config) {
  config.validate();
  std::vector<std::pair<char, std::size_t>> plan;  // (domain, count)
  switch (config.mix) {
    case DomainMix::A: plan = {{'A', config.clips}}; break;
    case DomainMix::B: plan = {{'B', config.clips}}; break;
    case DomainMix::Both: plan = {{'A', config.clips - config.clips / 2}, {'B', config.clips / 2}}; break;
  }
  std::vector<SyntheticClip> out;
  out.reserve(config.clips);
  for (auto [domain, count] : plan)
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(generate_clip(config, domain, i, i % 2 == 0 ? Label::Real : Label::Fake));
  return out;
}

// --- disk -------------------------------------------------------------------------

void write_ppm(const fs::path& path, const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3)
    throw DimensionError("PPM frames must be [3,H,W], got " + shape_str(pixels.shape()));
  const std::size_t H = pixels.dim(1), W = pixels.dim(2);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P6\n" << W << ' ' << H << "\n255\n";
  auto v = pixels.values();
  std::vector<char> bytes(3 * H * W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      for (std::size_t k = 0; k < 3; ++k) {
        const double x = std::clamp(v[(k * H + r) * W + c], 0.0, 1.0);
        bytes[(r * W + c) * 3 + k] = static_cast<char>(static_cast<unsigned char>(std::lround(x * 255.0)));
      }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read frame " + path.string());
  std::string magic;
  std::size_t W = 0, H = 0, maxval = 0;
  is >> magic >> W >> H >> maxval;
  if (!is || magic != "P6" || maxval != 255 || W == 0 || H == 0 || W > 65536 || H > 65536)
    throw DataError("malformed PPM header in " + path.string());
  is.get();  // single whitespace before the raster
  std::vector<unsigned char> bytes(3 * H * W);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError("truncated PPM " + path.string());
  std::vector<double> v(3 * H * W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      for (std::size_t k = 0; k < 3; ++k) v[(k * H + r) * W + c] = bytes[(r * W + c) * 3 + k] / 255.0;
  return Tensor({3, H, W}, std::move(v));
}

namespace {

std::string frame_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03zu.ppm", t);
  return buf;
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_corpus(const fs::path& dir, const std::vector<SyntheticClip>& clips) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  manifest << "clip_id,label,domain,T,expression_mean\n";
  for (const auto& clip : clips) {
    const fs::path cdir = dir / clip.clip_id;
    fs::create_directories(cdir, ec);
    if (ec) throw DataError("cannot create " + cdir.string() + ": " + ec.message());
    for (std::size_t t = 0; t < clip.frames.size(); ++t) write_ppm(cdir / frame_name(t), clip.frames[t].pixels);
    std::ofstream ex(cdir / "expression.csv", std::ios::trunc);
    ex << "frame,expression\n";
    for (std::size_t t = 0; t < clip.expression.size(); ++t) ex << t << ',' << fmt_real(clip.expression[t]) << '\n';
    manifest << clip.clip_id << ',' << to_string(clip.label) << ',' << clip.domain << ',' << clip.frames.size() << ','
             << fmt_real(clip.expression_mean()) << '\n';
  }
  if (!manifest) throw DataError("failed writing manifest in " + dir.string());
}

std::vector<SyntheticClip> read_corpus(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("no manifest.csv in " + dir.string());
  std::string line;
  if (!std::getline(manifest, line) || line != "clip_id,label,domain,T,expression_mean")
    throw DataError("unexpected manifest header in " + dir.string());
  std::vector<SyntheticClip> clips;
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw DataError("manifest line " + std::to_string(line_no) + ": expected 5 columns");
    SyntheticClip clip;
    clip.clip_id = cells[0];
    try {
      clip.label = parse_label(cells[1]);
    } catch (const Error&) {
      throw DataError("manifest line " + std::to_string(line_no) + ": bad label '" + cells[1] + "'");
    }
    if (cells[2] != "A" && cells[2] != "B")
      throw DataError("manifest line " + std::to_string(line_no) + ": bad domain '" + cells[2] + "'");
    clip.domain = cells[2][0];
    std::size_t T = 0;
    double mean_expr = 0.0;
    try {
      T = std::stoul(cells[3]);
      mean_expr = std::stod(cells[4]);
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(line_no) + ": bad T or expression_mean");
    }
    if (T == 0) throw DataError("manifest line " + std::to_string(line_no) + ": T must be positive");
    const fs::path cdir = dir / clip.clip_id;
    for (std::size_t t = 0; t < T; ++t) {
      Frame f{read_ppm(cdir / frame_name(t)), t, clip.clip_id};
      try {
        f.validate();
      } catch (const Error& e) {
        throw DataError(clip.clip_id + ": " + e.what());
      }
      clip.frames.push_back(std::move(f));
    }
    clip.expression.assign(T, mean_expr);
    std::ifstream ex(cdir / "expression.csv");
    if (ex) {
      std::string row;
      std::getline(ex, row);
      while (std::getline(ex, row)) {
        const auto c = split_csv(row);
        try {
          const std::size_t t = std::stoul(c.at(0));
          if (t < T) clip.expression[t] = std::stod(c.at(1));
        } catch (const std::exception&) {
          throw DataError(clip.clip_id + ": malformed expression.csv");
        }
      }
    }
    clips.push_back(std::move(clip));
  }
  if (clips.empty()) throw DataError("manifest in " + dir.string() + " lists no clips");
  return clips;
}

}  // namespace cbodd
