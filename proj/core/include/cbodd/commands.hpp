#pragma once

// Command implementations behind the `cbodd` executable. Each returns a
// process exit code and writes human-readable progress to `out` and
// diagnostics to `err`.
//
// Exit codes: 0 ok, 2 config/validation, 3 data, 4 numeric,
// 5 artifact mismatch, 6 verification failure.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "cbodd/datagen.hpp"

namespace cbodd::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kArtifactMismatch = 5,
  kVerification = 6,
};

struct DatagenArgs {
  std::filesystem::path out;
  CorpusConfig corpus;
};
int cmd_datagen(const DatagenArgs& args, std::ostream& out, std::ostream& err);

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path data;
  std::filesystem::path out;
};
/// Writes <out>/model.ckpt, <out>/config.cfg and <out>/loss_trace.csv. The
/// checkpoint is rewritten after every completed epoch, so a numeric failure
/// leaves the last good one in place.
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  /// A run directory or a checkpoint file with a sibling config.cfg.
  std::filesystem::path model;
  std::filesystem::path data;
  std::string protocol = "within";
  std::filesystem::path report;
  /// Omitted means FULL.
  std::optional<std::string> variant;
};
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct GradcheckArgs {
  std::uint64_t seed = 7;
  bool inject_fault = false;
};
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);

struct ExportArgs {
  std::filesystem::path model;
  std::filesystem::path data;
  std::filesystem::path out;
};
int cmd_export_embeddings(const ExportArgs& args, std::ostream& out, std::ostream& err);

struct ReportParamsArgs {
  std::optional<std::filesystem::path> config;  // desk profile when absent
  std::optional<std::string> variant;
};
int cmd_report_params(const ReportParamsArgs& args, std::ostream& out, std::ostream& err);

/// File names inside a training run directory.
inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kConfigFile = "config.cfg";
inline constexpr const char* kLossTraceFile = "loss_trace.csv";

}  // namespace cbodd::cli
