#pragma once

// Central finite-difference verification of analytic gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbodd/tensor.hpp"

namespace cbodd {

struct FiniteDiffOptions {
  double step = 1e-4;
  /// Probe at most this many coordinates per input (0 = all). Picks are
  /// spread deterministically over the tensor.
  std::size_t max_probes = 0;
  /// Test hook: perturbs the analytic gradient before comparison.
  bool corrupt_analytic = false;
};

/// max over probed coordinates of |a - n| / max(|a|, |n|, 1e-8), where a is
/// the backward() gradient of `loss` and n the central difference. Every
/// input must require grad; their values are restored afterwards.
double max_relative_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                          const FiniteDiffOptions& options = {});

struct GradCheckEntry {
  std::string term;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 7;
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Include the per-operator suite in addition to the loss terms.
  bool include_ops = true;
  /// Negative control: corrupt the analytic gradient of l_branch_ortho.
  bool inject_fault = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-4;

  bool passed() const;
  std::vector<std::string> failing_terms() const;
};

/// Loss-term suite: random branch embeddings (B=6, D=16), shared heads
/// (d_s=4, d_d=8) and a classifier, checking l_cls, l_branch_ortho,
/// l_cross_ortho and the weighted total. Optionally followed by one entry
/// per differentiable operator ("op:<name>").
GradCheckReport run_gradcheck(const GradCheckOptions& options = {});

}  // namespace cbodd
