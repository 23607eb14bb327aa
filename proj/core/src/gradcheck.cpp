#include "cbodd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cbodd/detector.hpp"
#include "cbodd/errors.hpp"
#include "cbodd/ofdm.hpp"
#include "cbodd/rng.hpp"

namespace cbodd {

double max_relative_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                          const FiniteDiffOptions& options) {
  for (const auto& t : inputs)
    if (!t.requires_grad()) throw StateError("finite-difference inputs must require grad");
  std::vector<Tensor> probe = inputs;
  for (auto& t : probe) t.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : probe) analytic.emplace_back(t.grad().begin(), t.grad().end());
  if (options.corrupt_analytic)
    for (auto& g : analytic)
      for (auto& v : g) v = v * 1.5 + 1e-3;

  const double h = options.step;
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    auto values = probe[k].data();
    const std::size_t n = values.size();
    const std::size_t count = options.max_probes == 0 ? n : std::min(n, options.max_probes);
    for (std::size_t p = 0; p < count; ++p) {
      const std::size_t i = count == n ? p : (p * n) / count;
      const double saved = values[i];
      double fp = 0.0, fm = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        fp = loss().item();
        values[i] = saved - h;
        fm = loss().item();
      }
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  for (auto& t : probe) t.zero_grad();
  return worst;
}

bool GradCheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> GradCheckReport::failing_terms() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!e.passed) out.push_back(e.term);
  return out;
}

namespace {

Tensor leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

// Values bounded away from zero so ReLU kinks are never straddled.
Tensor leaf_off_zero(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return Tensor(std::move(shape), std::move(v), true);
}

struct OpCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> op;
};

std::vector<OpCase> op_cases(Rng& rng) {
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> in, std::function<Tensor(const std::vector<Tensor>&)> f) {
    cases.push_back({std::move(name), std::move(in), std::move(f)});
  };
  using V = std::vector<Tensor>;
  add_case("add", {leaf({3, 4}, rng), leaf({3, 4}, rng)}, [](const V& x) { return add(x[0], x[1]); });
  add_case("sub", {leaf({3, 4}, rng), leaf({3, 4}, rng)}, [](const V& x) { return sub(x[0], x[1]); });
  add_case("mul", {leaf({3, 4}, rng), leaf({3, 4}, rng)}, [](const V& x) { return mul(x[0], x[1]); });
  add_case("scale", {leaf({5}, rng)}, [](const V& x) { return scale(x[0], -2.5); });
  add_case("add_scalar", {leaf({5}, rng)}, [](const V& x) { return add_scalar(x[0], 0.75); });
  add_case("add_bias", {leaf({2, 3, 4}, rng), leaf({4}, rng)}, [](const V& x) { return add_bias(x[0], x[1]); });
  add_case("relu", {leaf_off_zero({4, 5}, rng)}, [](const V& x) { return relu(x[0]); });
  add_case("sigmoid", {leaf({4, 5}, rng, -4.0, 4.0)}, [](const V& x) { return sigmoid(x[0]); });
  add_case("matmul", {leaf({3, 5}, rng), leaf({5, 2}, rng)}, [](const V& x) { return matmul(x[0], x[1]); });
  add_case("bmm", {leaf({2, 3, 4}, rng), leaf({2, 4, 5}, rng)}, [](const V& x) { return bmm(x[0], x[1]); });
  add_case("bmm_transposed", {leaf({2, 3, 4}, rng), leaf({2, 5, 4}, rng)},
           [](const V& x) { return bmm(x[0], x[1], true); });
  add_case("transpose", {leaf({3, 5}, rng)}, [](const V& x) { return transpose(x[0]); });
  add_case("reshape", {leaf({2, 6}, rng)}, [](const V& x) { return reshape(x[0], {3, 4}); });
  {
    auto idx = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{0, 3, 3, kZeroIndex, 7, 1, 0, 5});
    add_case("gather", {leaf({8}, rng)}, [idx](const V& x) { return gather(x[0], idx, {2, 4}); });
  }
  add_case("permute", {leaf({2, 3, 4}, rng)}, [](const V& x) { return permute(x[0], {2, 0, 1}); });
  add_case("narrow", {leaf({3, 6}, rng)}, [](const V& x) { return narrow(x[0], 1, 2, 3); });
  add_case("concat_last", {leaf({2, 3}, rng), leaf({2, 4}, rng)}, [](const V& x) { return concat_last({x[0], x[1]}); });
  add_case("sum", {leaf({3, 4}, rng)}, [](const V& x) { return scale(sum(x[0]), 1.3); });
  add_case("mean", {leaf({3, 4}, rng)}, [](const V& x) { return scale(mean(x[0]), 1.3); });
  add_case("mean_axis", {leaf({2, 3, 4}, rng)}, [](const V& x) { return mean_axis(x[0], 1); });
  add_case("frobenius_sq", {leaf({3, 4}, rng)}, [](const V& x) { return frobenius_sq(x[0]); });
  add_case("softmax_rows", {leaf({3, 5}, rng, -2.0, 2.0)}, [](const V& x) { return softmax_rows(x[0]); });
  add_case("layer_norm_last", {leaf({3, 6}, rng, -2.0, 2.0)}, [](const V& x) { return layer_norm_last(x[0]); });
  add_case("conv2d", {leaf({2, 2, 5, 5}, rng), leaf({3, 2, 3, 3}, rng), leaf({3}, rng)},
           [](const V& x) { return conv2d(x[0], x[1], x[2], 2, 1); });
  add_case("adaptive_avg_pool2d", {leaf({1, 2, 5, 7}, rng)},
           [](const V& x) { return adaptive_avg_pool2d(x[0], 3, 2); });
  {
    std::vector<double> t{1, 0, 0, 1, 1, 0};
    const Tensor targets({6}, t);
    add_case("binary_cross_entropy", {leaf({6}, rng, 0.05, 0.95)},
             [targets](const V& x) { return binary_cross_entropy(x[0], targets); });
  }
  add_case("mse", {leaf({6}, rng), leaf({6}, rng)}, [](const V& x) { return mse(x[0], x[1]); });
  return cases;
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;
  const Rng root(options.seed);
  Rng rng = root.fork(1);

  constexpr std::size_t B = 6, D = 16;
  OfdmConfig ofdm;
  ofdm.d_shared = 4;
  ofdm.d_disentangled = 8;
  const std::vector<BranchId> branches(kAllBranches.begin(), kAllBranches.end());
  ProjectionHeads heads(D, ofdm, branches, rng);
  Classifier classifier(branches.size() * (ofdm.d_shared + ofdm.d_disentangled), rng);
  std::vector<Tensor> embeddings;
  for (std::size_t b = 0; b < branches.size(); ++b) embeddings.push_back(leaf({B, D}, rng));
  std::vector<int> labels(B);
  for (std::size_t i = 0; i < B; ++i) labels[i] = static_cast<int>(i % 2);

  NamedParams params;
  heads.collect(params, "heads");
  classifier.collect(params, "classifier");
  std::vector<Tensor> inputs = embeddings;
  for (auto& [name, t] : params) inputs.push_back(t);

  auto pairs = [&] {
    std::vector<DisentangledPair> out;
    for (std::size_t b = 0; b < branches.size(); ++b)
      out.push_back(heads.project(BranchEmbedding{branches[b], embeddings[b]}));
    return out;
  };
  auto terms = [&] {
    auto p = pairs();
    const Tensor probs = classifier.probabilities(fuse(p, branches));
    return total_loss(probs, labels, branch_ortho_loss(p), cross_ortho_loss(p), ofdm.lambda_branch,
                      ofdm.lambda_cross);
  };

  const std::vector<std::pair<std::string, std::function<Tensor()>>> suite{
      {"l_cls", [&] { return terms().l_cls; }},
      {"l_branch_ortho", [&] { return terms().l_branch_ortho; }},
      {"l_cross_ortho", [&] { return terms().l_cross_ortho; }},
      {"total", [&] { return terms().total; }},
  };
  for (const auto& [name, fn] : suite) {
    FiniteDiffOptions fd;
    fd.step = options.step;
    fd.corrupt_analytic = options.inject_fault && name == "l_branch_ortho";
    const double err = max_relative_error(fn, inputs, fd);
    report.entries.push_back({name, err, err < options.tolerance});
  }

  if (options.include_ops) {
    Rng op_rng = root.fork(2);
    for (auto& c : op_cases(op_rng)) {
      Rng weight_rng = op_rng.fork(c.inputs.size());
      const Tensor probe = c.op(c.inputs);
      std::vector<double> w(probe.numel());
      for (auto& x : w) x = weight_rng.uniform(-1.0, 1.0);
      const Tensor weights(probe.shape(), std::move(w));
      auto fn = [&] { return sum(mul(c.op(c.inputs), weights)); };
      FiniteDiffOptions fd;
      fd.step = options.step;
      const double err = max_relative_error(fn, c.inputs, fd);
      report.entries.push_back({"op:" + c.name, err, err < options.tolerance});
    }
  }
  return report;
}

}  // namespace cbodd
