#include "cbodd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cbodd/errors.hpp"

namespace cbodd {

namespace {

struct VariantName {
  Variant variant;
  std::string_view id;
};

constexpr VariantName kVariantNames[] = {
    {Variant::BoWoMgCe, "BO-wo-MG-CE"}, {Variant::BoWoLsCe, "BO-wo-LS-CE"}, {Variant::BoWoLsMg, "BO-wo-LS-MG"},
    {Variant::CboWoLs, "CBO-wo-LS"},    {Variant::CboWoMg, "CBO-wo-MG"},    {Variant::CboWoCe, "CBO-wo-CE"},
    {Variant::MbWoBoCbo, "MB-wo-BO-CBO"}, {Variant::MbWoCbo, "MB-wo-CBO"},  {Variant::MbWoBo, "MB-wo-BO"},
    {Variant::Full, "FULL"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return std::string(buf, end);
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + text + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + text + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw ConfigError("'" + key + "' expects a comma-separated list");
  return out;
}

// One entry per key in canonical order: a printer and a parser bound to a field.
struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> print;
  std::function<void(RunConfig&, const std::string&)> parse;
};

template <typename T>
Field uint_field(std::string section, std::string key, T RunConfig::*group, std::size_t T::*member) {
  const std::string name = section + "." + key;
  return {section, key, [=](const RunConfig& c) { return std::to_string(c.*group.*member); },
          [=](RunConfig& c, const std::string& v) { c.*group.*member = parse_uint(name, v); }};
}

template <typename T>
Field double_field(std::string section, std::string key, T RunConfig::*group, double T::*member) {
  const std::string name = section + "." + key;
  return {section, key, [=](const RunConfig& c) { return fmt_double(c.*group.*member); },
          [=](RunConfig& c, const std::string& v) { c.*group.*member = parse_double(name, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    using RC = RunConfig;
    f.push_back(uint_field("input", "channels", &RC::input, &InputConfig::channels));
    f.push_back(uint_field("input", "height", &RC::input, &InputConfig::height));
    f.push_back(uint_field("input", "width", &RC::input, &InputConfig::width));
    f.push_back(double_field("input", "pixel_mean", &RC::input, &InputConfig::pixel_mean));
    f.push_back(double_field("input", "pixel_std", &RC::input, &InputConfig::pixel_std));

    auto conv_fields = [&f](const std::string& sec, std::function<ConvStackConfig&(RunConfig&)> get,
                            std::function<const ConvStackConfig&(const RunConfig&)> cget) {
      f.push_back({sec, "channels", [=](const RC& c) { return fmt_list(cget(c).channels); },
                   [=](RC& c, const std::string& v) { get(c).channels = parse_list(sec + ".channels", v); }});
      f.push_back({sec, "strides", [=](const RC& c) { return fmt_list(cget(c).strides); },
                   [=](RC& c, const std::string& v) { get(c).strides = parse_list(sec + ".strides", v); }});
      f.push_back({sec, "kernel", [=](const RC& c) { return std::to_string(cget(c).kernel); },
                   [=](RC& c, const std::string& v) { get(c).kernel = parse_uint(sec + ".kernel", v); }});
      f.push_back({sec, "grid_h", [=](const RC& c) { return std::to_string(cget(c).grid_h); },
                   [=](RC& c, const std::string& v) { get(c).grid_h = parse_uint(sec + ".grid_h", v); }});
      f.push_back({sec, "grid_w", [=](const RC& c) { return std::to_string(cget(c).grid_w); },
                   [=](RC& c, const std::string& v) { get(c).grid_w = parse_uint(sec + ".grid_w", v); }});
    };
    conv_fields("ls", [](RC& c) -> ConvStackConfig& { return c.ls; },
                [](const RC& c) -> const ConvStackConfig& { return c.ls; });

    f.push_back(uint_field("mg", "patch", &RC::mg, &MgConfig::patch));
    f.push_back(uint_field("mg", "embed_dim", &RC::mg, &MgConfig::embed_dim));
    f.push_back(uint_field("mg", "mlp_ratio", &RC::mg, &MgConfig::mlp_ratio));
    auto win = [&f](const std::string& key, std::size_t WindowConfig::*m) {
      f.push_back({"mg", key, [=](const RC& c) { return std::to_string(c.mg.window.*m); },
                   [=](RC& c, const std::string& v) { c.mg.window.*m = parse_uint("mg." + key, v); }});
    };
    win("window", &WindowConfig::window);
    win("shift", &WindowConfig::shift);
    win("heads", &WindowConfig::heads);
    win("depth", &WindowConfig::depth);
    f.push_back(uint_field("mg", "grid_h", &RC::mg, &MgConfig::grid_h));
    f.push_back(uint_field("mg", "grid_w", &RC::mg, &MgConfig::grid_w));

    conv_fields("ce", [](RC& c) -> ConvStackConfig& { return c.ce.conv; },
                [](const RC& c) -> const ConvStackConfig& { return c.ce.conv; });
    f.push_back(double_field("ce", "aux_weight", &RC::ce, &CeConfig::aux_weight));

    f.push_back(uint_field("attention", "embed_dim", &RC::attention, &AttentionConfig::embed_dim));
    f.push_back(uint_field("attention", "heads", &RC::attention, &AttentionConfig::heads));

    f.push_back(uint_field("ofdm", "d_shared", &RC::ofdm, &OfdmConfig::d_shared));
    f.push_back(uint_field("ofdm", "d_disentangled", &RC::ofdm, &OfdmConfig::d_disentangled));
    f.push_back(double_field("ofdm", "lambda_branch", &RC::ofdm, &OfdmConfig::lambda_branch));
    f.push_back(double_field("ofdm", "lambda_cross", &RC::ofdm, &OfdmConfig::lambda_cross));
    f.push_back({"ofdm", "sharing", [](const RC& c) { return std::string(to_string(c.ofdm.sharing)); },
                 [](RC& c, const std::string& v) { c.ofdm.sharing = parse_head_sharing(v); }});
    f.push_back({"ofdm", "centering", [](const RC& c) { return std::string(c.ofdm.centering ? "true" : "false"); },
                 [](RC& c, const std::string& v) { c.ofdm.centering = parse_bool("ofdm.centering", v); }});
    f.push_back({"ofdm", "cross_mode", [](const RC& c) { return std::string(to_string(c.ofdm.cross_mode)); },
                 [](RC& c, const std::string& v) { c.ofdm.cross_mode = parse_cross_mode(v); }});

    f.push_back(double_field("detector", "threshold", &RC::detector, &DetectorConfig::threshold));
    f.push_back({"detector", "tie_rule", [](const RC& c) { return std::string(to_string(c.detector.tie_rule)); },
                 [](RC& c, const std::string& v) { c.detector.tie_rule = parse_tie_rule(v); }});
    f.push_back({"detector", "video_score",
                 [](const RC& c) { return std::string(to_string(c.detector.video_score)); },
                 [](RC& c, const std::string& v) { c.detector.video_score = parse_video_score(v); }});

    f.push_back(double_field("optim", "learning_rate", &RC::optim, &AdamConfig::learning_rate));
    f.push_back(double_field("optim", "weight_decay", &RC::optim, &AdamConfig::weight_decay));
    f.push_back({"optim", "step_size", [](const RC& c) { return std::to_string(c.optim.step_size); },
                 [](RC& c, const std::string& v) {
                   c.optim.step_size = static_cast<std::uint32_t>(parse_uint("optim.step_size", v));
                 }});
    f.push_back(double_field("optim", "decay_factor", &RC::optim, &AdamConfig::decay_factor));
    f.push_back(double_field("optim", "beta1", &RC::optim, &AdamConfig::beta1));
    f.push_back(double_field("optim", "beta2", &RC::optim, &AdamConfig::beta2));
    f.push_back(double_field("optim", "eps", &RC::optim, &AdamConfig::eps));

    f.push_back(uint_field("train", "epochs", &RC::train, &TrainConfig::epochs));
    f.push_back(uint_field("train", "batch_size", &RC::train, &TrainConfig::batch_size));
    f.push_back({"train", "seed", [](const RC& c) { return std::to_string(c.train.seed); },
                 [](RC& c, const std::string& v) { c.train.seed = parse_uint("train.seed", v); }});
    f.push_back({"train", "train_domain", [](const RC& c) { return std::string(1, c.train.train_domain); },
                 [](RC& c, const std::string& v) {
                   if (v != "A" && v != "B") throw ConfigError("train.train_domain must be A or B");
                   c.train.train_domain = v[0];
                 }});
    f.push_back(uint_field("train", "frame_stride", &RC::train, &TrainConfig::frame_stride));
    f.push_back(double_field("train", "val_fraction", &RC::train, &TrainConfig::val_fraction));
    f.push_back({"train", "variant", [](const RC& c) { return std::string(to_string(c.variant)); },
                 [](RC& c, const std::string& v) { c.variant = parse_variant(v); }});
    return f;
  }();
  return table;
}

}  // namespace

std::string_view to_string(Variant v) {
  for (const auto& n : kVariantNames)
    if (n.variant == v) return n.id;
  return "?";
}

Variant parse_variant(std::string_view id) {
  for (const auto& n : kVariantNames)
    if (n.id == id) return n.variant;
  throw ConfigError("unknown ablation variant '" + std::string(id) + "'");
}

VariantSpec variant_spec(Variant v) {
  using B = BranchId;
  switch (v) {
    case Variant::BoWoMgCe: return {{B::LS}, true, false};
    case Variant::BoWoLsCe: return {{B::MG}, true, false};
    case Variant::BoWoLsMg: return {{B::CE}, true, false};
    case Variant::CboWoLs: return {{B::MG, B::CE}, true, true};
    case Variant::CboWoMg: return {{B::LS, B::CE}, true, true};
    case Variant::CboWoCe: return {{B::LS, B::MG}, true, true};
    case Variant::MbWoBoCbo: return {{B::LS, B::MG, B::CE}, false, false};
    case Variant::MbWoCbo: return {{B::LS, B::MG, B::CE}, true, false};
    case Variant::MbWoBo: return {{B::LS, B::MG, B::CE}, false, true};
    case Variant::Full: return {{B::LS, B::MG, B::CE}, true, true};
  }
  throw ConfigError("unknown variant");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (frame_stride == 0) throw ConfigError("train.frame_stride must be positive");
  if (train_domain != 'A' && train_domain != 'B') throw ConfigError("train.train_domain must be A or B");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in (0,1)");
}

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::full_scale() {
  RunConfig c;
  c.input.height = c.input.width = 224;
  c.ls = {{32, 64, 128, 256}, {2, 2, 2, 2}, 3, 7, 7};
  c.mg.patch = 4;
  c.mg.embed_dim = 96;
  c.mg.mlp_ratio = 4;
  c.mg.window = {7, 3, 3, 4};
  c.mg.grid_h = c.mg.grid_w = 7;
  c.ce.conv = {{32, 64, 128, 256}, {2, 2, 2, 2}, 5, 7, 7};
  c.attention = {2048, 8};
  c.ofdm.d_shared = 128;
  c.ofdm.d_disentangled = 512;
  c.optim.learning_rate = 1e-2;
  c.train.epochs = 100;
  return c;
}

void RunConfig::validate() const {
  input.validate();
  ls.validate("LS");
  mg.validate();
  ce.validate();
  attention.validate();
  ofdm.validate();
  detector.validate();
  optim.validate();
  train.validate();
}

std::vector<BranchId> RunConfig::active_branches() const { return variant_spec(variant).branches; }

double RunConfig::effective_lambda_branch() const {
  return variant_spec(variant).branch_ortho ? ofdm.lambda_branch : 0.0;
}

double RunConfig::effective_lambda_cross() const {
  const auto spec = variant_spec(variant);
  return spec.cross_ortho && spec.branches.size() >= 2 ? ofdm.lambda_cross : 0.0;
}

std::string RunConfig::canonical_text() const {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.print(*this) + "\n";
  }
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::digest() const { return fnv1a_hex(canonical_text()); }

RunConfig parse_config(std::string_view text) {
  std::map<std::pair<std::string, std::string>, const Field*> index;
  for (const auto& f : fields()) index[{f.section, f.key}] = &f;

  RunConfig config;
  std::string section;
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = index.find({section, key});
    if (it == index.end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + section + "." + key + "'");
    it->second->parse(config, value);
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write config " + path.string());
  os << config.canonical_text();
}

}  // namespace cbodd
