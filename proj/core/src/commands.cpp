#include "cbodd/commands.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "cbodd/errors.hpp"
#include "cbodd/gradcheck.hpp"
#include "cbodd/model.hpp"
#include "cbodd/protocol.hpp"

namespace cbodd::cli {

namespace fs = std::filesystem;

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const LeakageError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const InputError*>(&e) || dynamic_cast<const LabelError*>(&e))
    return kData;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const ArtifactMismatchError*>(&e)) return kArtifactMismatch;
  if (dynamic_cast<const MetricError*>(&e)) return kData;
  return kInternal;
}

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "error: " << e.what() << "\n";
    return code;
  }
}

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string digest_line(const std::string& digest) { return "# config_digest=" + digest + "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

// Write-then-rename so an interrupted write never clobbers the previous file.
void write_checkpoint_atomic(const fs::path& path, const CbodModel& model) {
  const fs::path tmp = path.string() + ".tmp";
  save_model(tmp, model);
  fs::rename(tmp, path);
}

std::string trace_csv(const std::string& digest, const std::vector<EpochLoss>& trace) {
  std::string s = digest_line(digest) + "epoch,l_cls,l_branch_ortho,l_cross_ortho,total\n";
  for (const auto& e : trace)
    s += std::to_string(e.epoch) + "," + fmt_real(e.l_cls) + "," + fmt_real(e.l_branch_ortho) + "," +
         fmt_real(e.l_cross_ortho) + "," + fmt_real(e.total) + "\n";
  return s;
}

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<CbodModel> model;
};

// Resolves a run directory or checkpoint path, checks the stored digest
// against the sibling config and loads the weights.
LoadedModel load_model(const fs::path& model_path) {
  const bool is_dir = fs::is_directory(model_path);
  const fs::path ckpt = is_dir ? model_path / kCheckpointFile : model_path;
  const fs::path cfg_path = (is_dir ? model_path : model_path.parent_path()) / kConfigFile;
  if (!fs::exists(ckpt)) throw ArtifactMismatchError("no checkpoint at " + ckpt.string());
  if (!fs::exists(cfg_path)) throw ArtifactMismatchError("no " + std::string(kConfigFile) + " next to " + ckpt.string());

  LoadedModel out;
  out.config = load_config(cfg_path);
  const auto records = read_checkpoint(ckpt);
  const std::string stored = checkpoint_digest(records);
  if (stored != out.config.digest())
    throw ArtifactMismatchError("checkpoint digest '" + stored + "' does not match config digest '" +
                                out.config.digest() + "'");
  out.model = std::make_unique<CbodModel>(out.config);
  auto params = out.model->parameters();
  load_into(records, params);
  return out;
}

}  // namespace

int cmd_datagen(const DatagenArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto clips = generate_corpus(args.corpus);
    try {
      write_corpus(args.out, clips);
    } catch (const DataError& e) {
      throw ConfigError(std::string("output directory not writable: ") + e.what());
    }
    out << "wrote " << clips.size() << " clips to " << args.out.string() << "\n";
    return kOk;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_config(args.config);
    config.validate();
    const auto corpus = read_corpus(args.data);
    const auto sets = protocol_sets(Protocol::Within, config, corpus);

    std::error_code ec;
    fs::create_directories(args.out, ec);
    if (ec) throw ConfigError("cannot create " + args.out.string() + ": " + ec.message());
    const std::string digest = config.digest();
    save_config(args.out / kConfigFile, config);

    CbodModel model(config);
    const fs::path ckpt = args.out / kCheckpointFile;
    write_checkpoint_atomic(ckpt, model);
    std::vector<EpochLoss> trace;
    write_text(args.out / kLossTraceFile, trace_csv(digest, trace));

    out << "training " << to_string(config.variant) << " on " << sets.train.size() << " clips, digest " << digest
        << "\n";
    try {
      train_model(model, sets.train, [&](const EpochLoss& e, const CbodModel& m) {
        trace.push_back(e);
        write_checkpoint_atomic(ckpt, m);
        write_text(args.out / kLossTraceFile, trace_csv(digest, trace));
        out << "epoch " << e.epoch << " total " << fmt_real(e.total) << "\n";
      });
    } catch (const NumericError& e) {
      err << "training stopped after epoch " << trace.size() << "; last good checkpoint kept at " << ckpt.string()
          << "\n";
      throw;
    }
    return kOk;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Protocol protocol = parse_protocol(args.protocol);
    const Variant requested = parse_variant(args.variant.value_or("FULL"));
    const auto loaded = load_model(args.model);
    if (requested != loaded.config.variant)
      throw ArtifactMismatchError("model was trained as variant " + std::string(to_string(loaded.config.variant)) +
                                  ", requested " + std::string(to_string(requested)));
    const auto corpus = read_corpus(args.data);
    const EvalReport report = evaluate(protocol, *loaded.model, corpus);
    write_text(args.report, report.to_json());
    out << to_string(protocol) << " frame_auc " << fmt_real(report.frame_auc) << " video_auc "
        << fmt_real(report.video_auc) << "\n";
    return kOk;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    GradCheckOptions opts;
    opts.seed = args.seed;
    opts.inject_fault = args.inject_fault;
    const auto report = run_gradcheck(opts);
    for (const auto& e : report.entries) {
      char line[128];
      std::snprintf(line, sizeof(line), "%-24s max_rel_error=%.3e %s\n", e.term.c_str(), e.max_rel_error,
                    e.passed ? "ok" : "FAIL");
      out << line;
    }
    if (report.passed()) return kOk;
    err << "gradient check failed (tolerance " << report.tolerance << "):";
    for (const auto& t : report.failing_terms()) err << " " << t;
    err << "\n";
    return kVerification;
  });
}

int cmd_export_embeddings(const ExportArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto loaded = load_model(args.model);
    const CbodModel& model = *loaded.model;
    const auto corpus = read_corpus(args.data);
    const std::size_t ds = loaded.config.ofdm.d_shared, dd = loaded.config.ofdm.d_disentangled;
    const std::size_t width = std::max(ds, dd);

    std::ostringstream csv;
    csv << digest_line(loaded.config.digest()) << "clip_id,frame,branch,component,label,domain";
    for (std::size_t i = 0; i < width; ++i) csv << ",v_" << i;
    csv << "\n";
    auto emit = [&](const SyntheticClip& clip, std::size_t frame, BranchId branch, const char* component,
                    const Tensor& values, std::size_t row, std::size_t dim) {
      csv << clip.clip_id << ',' << frame << ',' << branch_name(branch) << ',' << component << ','
          << to_string(clip.label) << ',' << clip.domain;
      for (std::size_t i = 0; i < width; ++i) {
        csv << ',';
        if (i < dim) csv << fmt_real(values.value(row * dim + i));
      }
      csv << '\n';
    };
    NoGradGuard no_grad;
    std::size_t rows = 0;
    for (const auto& clip : corpus) {
      const auto fwd = model.forward(stack_frames(clip.frames));
      for (std::size_t t = 0; t < clip.frames.size(); ++t)
        for (const auto& pair : fwd.pairs) {
          emit(clip, clip.frames[t].frame_index, pair.branch, "shared", pair.shared, t, ds);
          emit(clip, clip.frames[t].frame_index, pair.branch, "disentangled", pair.disentangled, t, dd);
          rows += 2;
        }
    }
    write_text(args.out, csv.str());
    out << "wrote " << rows << " embedding rows to " << args.out.string() << "\n";
    return kOk;
  });
}

int cmd_report_params(const ReportParamsArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig config = args.config ? load_config(*args.config) : RunConfig::desk();
    if (args.variant) config.variant = parse_variant(*args.variant);
    const CbodModel model(config);
    std::size_t total = 0;
    out << "variant " << to_string(config.variant) << "\n";
    for (const auto& m : model.parameter_report()) {
      out << m.module << ": " << m.count << "\n";
      total += m.count;
    }
    out << "total: " << total << "\n";
    return kOk;
  });
}

}  // namespace cbodd::cli
