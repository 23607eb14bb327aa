#include <CLI11.hpp>
#include <iostream>

#include "cbodd/commands.hpp"

namespace cli = cbodd::cli;

int main(int argc, char** argv) {
  CLI::App app{"Multi-branch orthogonal deepfake detector: data generation, training and evaluation"};
  app.require_subcommand(1);

  cli::DatagenArgs datagen;
  std::string domain = "both";
  auto* gen = app.add_subcommand("datagen", "Generate a synthetic two-domain corpus");
  gen->add_option("--out", datagen.out, "Output directory")->required();
  gen->add_option("--seed", datagen.corpus.seed, "Corpus seed")->capture_default_str();
  gen->add_option("--clips", datagen.corpus.clips, "Number of clips")->capture_default_str();
  gen->add_option("--frames", datagen.corpus.frames, "Frames per clip")->capture_default_str();
  gen->add_option("--size", datagen.corpus.size, "Frame height and width in pixels")->capture_default_str();
  gen->add_option("--domain", domain, "A, B or both")->capture_default_str();

  cli::TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train a model; writes a checkpoint and loss trace");
  tr->add_option("--config", train.config, "Run config file")->required();
  tr->add_option("--data", train.data, "Corpus directory")->required();
  tr->add_option("--out", train.out, "Run output directory")->required();

  cli::EvalArgs eval;
  std::string variant;
  auto* ev = app.add_subcommand("eval", "Evaluate a trained model under a protocol");
  ev->add_option("--model", eval.model, "Run directory or checkpoint file")->required();
  ev->add_option("--data", eval.data, "Corpus directory")->required();
  ev->add_option("--protocol", eval.protocol, "within or cross")->capture_default_str();
  ev->add_option("--report", eval.report, "Report JSON path")->required();
  auto* variant_opt = ev->add_option("--variant", variant, "Ablation variant id (default FULL)");

  cli::GradcheckArgs grad;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss term and operator");
  gc->add_option("--seed", grad.seed, "Seed for the random suite")->capture_default_str();
  gc->add_flag("--inject-fault", grad.inject_fault, "Corrupt one analytic gradient (negative control)");

  cli::ExportArgs exp;
  auto* ex = app.add_subcommand("export-embeddings", "Export shared/disentangled vectors as CSV");
  ex->add_option("--model", exp.model, "Run directory or checkpoint file")->required();
  ex->add_option("--data", exp.data, "Corpus directory")->required();
  ex->add_option("--out", exp.out, "Output CSV path")->required();

  cli::ReportParamsArgs params;
  std::string params_config, params_variant;
  auto* rp = app.add_subcommand("report-params", "Print parameter counts per module");
  auto* rp_config = rp->add_option("--config", params_config, "Run config file (desk profile when omitted)");
  auto* rp_variant = rp->add_option("--variant", params_variant, "Override the config's variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfig;
  }

  if (gen->parsed()) {
    try {
      datagen.corpus.mix = cbodd::parse_domain_mix(domain);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return cli::kConfig;
    }
    return cli::cmd_datagen(datagen, std::cout, std::cerr);
  }
  if (tr->parsed()) return cli::cmd_train(train, std::cout, std::cerr);
  if (ev->parsed()) {
    if (*variant_opt) eval.variant = variant;
    return cli::cmd_eval(eval, std::cout, std::cerr);
  }
  if (gc->parsed()) return cli::cmd_gradcheck(grad, std::cout, std::cerr);
  if (ex->parsed()) return cli::cmd_export_embeddings(exp, std::cout, std::cerr);
  if (rp->parsed()) {
    if (*rp_config) params.config = params_config;
    if (*rp_variant) params.variant = params_variant;
    return cli::cmd_report_params(params, std::cout, std::cerr);
  }
  return cli::kConfig;
}
