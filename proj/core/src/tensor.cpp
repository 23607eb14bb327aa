#include "cbodd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cbodd/errors.hpp"

namespace cbodd {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' grad buffers.
  std::function<void(Node& self)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

struct TensorAccess {
  static const NodePtr& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
};

namespace {

thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
}

const NodePtr& node_of(const Tensor& t) {
  if (!t.defined()) throw StateError("operation on an undefined tensor");
  return TensorAccess::node(t);
}

// Builds an op result. The graph edge is only recorded when grad mode is on
// and at least one parent requires grad.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return TensorAccess::wrap(std::move(n));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// --- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size())
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  set_requires_grad(requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_of(*this)->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw RankError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this)->value.size(); }

std::span<const double> Tensor::values() const { return node_of(*this)->value; }

std::span<double> Tensor::data() { return node_of(*this)->value; }

double Tensor::item() const {
  if (numel() != 1) throw RankError("item() on tensor of shape " + shape_str(shape()));
  return values()[0];
}

bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& n = *node_of(*this);
  if (!n.is_leaf()) throw StateError("set_requires_grad on a non-leaf tensor");
  n.requires_grad = flag;
  if (flag)
    n.ensure_grad();
  else
    n.grad.clear();
}

std::span<const double> Tensor::grad() const { return node_of(*this)->grad; }

std::span<double> Tensor::mutable_grad() { return node_of(*this)->grad; }

void Tensor::zero_grad() {
  auto& g = node_of(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = *node_of(*this);
  return Tensor(n.shape, n.value, false);
}

BackwardResult Tensor::backward() const {
  const auto& root = node_of(*this);
  if (!root->shape.empty())
    throw RankError("backward requires a rank-0 loss, got " + shape_str(root->shape));
  BackwardResult result;
  if (!root->requires_grad) {
    result.graph_connected = false;
    return result;
  }

  // Iterative post-order DFS; `order` ends up topologically sorted.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    for (auto& p : n->parents)
      if (p->requires_grad) p->ensure_grad();
    n->backward_fn(*n);
  }
  for (Node* n : order)
    if (!n->is_leaf()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  result.nodes_visited = order.size();
  return result;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad)
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {node_of(a)}, [factor](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v += offset;
  return make_result(a.shape(), std::move(out), {node_of(a)}, [](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() == 0 || bias.rank() != 1 || bias.dim(0) != a.shape().back())
    throw DimensionError("add_bias: " + shape_str(a.shape()) + " vs bias " + shape_str(bias.shape()));
  const std::size_t n = bias.dim(0);
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return make_result(a.shape(), std::move(out), {node_of(a), node_of(bias)}, [n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i % n] += self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(a.shape(), std::move(out), {node_of(a)}, [](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    // Branches keep exp() from overflowing.
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return make_result(a.shape(), std::move(out), {node_of(a)}, [](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value[i];
      p.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

// --- linear algebra ------------------------------------------------------------

namespace {

// c[m,n] += a[m,k] * b[k,n], plain row-major triple loop in fixed order.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_acc_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] += acc;
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_acc_at(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + i * n;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {node_of(a), node_of(b)}, [m, k, n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    // dA = dC B^T ; dB = A^T dC
    if (pa.requires_grad) gemm_acc_bt(self.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
    if (pb.requires_grad) gemm_acc_at(pa.value.data(), self.grad.data(), pb.grad.data(), m, k, n);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
    throw DimensionError("bmm: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k)
    throw DimensionError("bmm: inner extents differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::vector<double> out(g * m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < g; ++i) {
    if (transpose_b)
      gemm_acc_bt(av + i * m * k, bv + i * n * k, out.data() + i * m * n, m, k, n);
    else
      gemm_acc(av + i * m * k, bv + i * k * n, out.data() + i * m * n, m, k, n);
  }
  return make_result({g, m, n}, std::move(out), {node_of(a), node_of(b)},
                     [g, m, k, n, transpose_b](Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       for (std::size_t i = 0; i < g; ++i) {
                         const double* dc = self.grad.data() + i * m * n;
                         const double* ai = pa.value.data() + i * m * k;
                         if (!transpose_b) {
                           const double* bi = pb.value.data() + i * k * n;
                           if (pa.requires_grad) gemm_acc_bt(dc, bi, pa.grad.data() + i * m * k, m, n, k);
                           if (pb.requires_grad) gemm_acc_at(ai, dc, pb.grad.data() + i * k * n, m, k, n);
                         } else {
                           // C = A B^T with B [n,k]: dA = dC B ; dB = dC^T A
                           const double* bi = pb.value.data() + i * n * k;
                           if (pa.requires_grad) gemm_acc(dc, bi, pa.grad.data() + i * m * k, m, n, k);
                           if (pb.requires_grad) gemm_acc_at(dc, ai, pb.grad.data() + i * n * k, m, n, k);
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw RankError("transpose expects rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

// --- layout ----------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  validate_shape(shape);
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {node_of(a)}, [](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> indices,
              Shape out_shape) {
  validate_shape(out_shape);
  if (!indices || indices->size() != shape_numel(out_shape))
    throw DimensionError("gather: index count does not match " + shape_str(out_shape));
  const std::size_t src_n = a.numel();
  auto av = a.values();
  std::vector<double> out(indices->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t s = (*indices)[i];
    if (s == kZeroIndex) {
      out[i] = 0.0;
    } else {
      if (s >= src_n) throw DimensionError("gather: index out of range");
      out[i] = av[s];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {node_of(a)},
                     [indices = std::move(indices)](Node& self) {
                       auto& p = *self.parents[0];
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         const std::size_t s = (*indices)[i];
                         if (s != kZeroIndex) p.grad[s] += self.grad[i];
                       }
                     });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto& in = a.shape();
  if (axes.size() != in.size()) throw RankError("permute: axes do not match rank");
  std::vector<bool> used(in.size(), false);
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= in.size() || used[axes[i]]) throw RankError("permute: invalid axes");
    used[axes[i]] = true;
    out_shape[i] = in[axes[i]];
  }
  const Shape in_strides = strides_of(in);
  const std::size_t n = a.numel();
  auto idx = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> coord(in.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < axes.size(); ++d) src += coord[d] * in_strides[axes[d]];
    (*idx)[i] = src;
    for (std::size_t d = coord.size(); d-- > 0;) {
      if (++coord[d] < out_shape[d]) break;
      coord[d] = 0;
    }
  }
  return gather(a, std::move(idx), std::move(out_shape));
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& in = a.shape();
  if (axis >= in.size() || length == 0 || start + length > in[axis])
    throw DimensionError("narrow: invalid range on " + shape_str(in));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  Shape out_shape = in;
  out_shape[axis] = length;
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < length; ++l)
      for (std::size_t i = 0; i < inner; ++i) idx->push_back((o * in[axis] + start + l) * inner + i);
  return gather(a, std::move(idx), std::move(out_shape));
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InputError("concat_last: no inputs");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw RankError("concat_last: rank-0 input");
  Shape lead(first.begin(), first.end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
      throw DimensionError("concat_last: " + shape_str(first) + " vs " + shape_str(s));
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::vector<NodePtr> parents;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    offset += widths[k];
    parents.push_back(node_of(parts[k]));
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  return make_result(std::move(out_shape), std::move(out), std::move(parents),
                     [widths, rows, total](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         auto& p = *self.parents[k];
                         if (p.requires_grad)
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < widths[k]; ++c)
                               p.grad[r * widths[k] + c] += self.grad[r * total + off + c];
                         off += widths[k];
                       }
                     });
}

// --- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return make_result({}, {acc}, {node_of(a)}, [](Node& self) {
    auto& p = *self.parents[0];
    const double g = self.grad[0];
    for (auto& v : p.grad) v += g;
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  const auto& in = a.shape();
  if (axis >= in.size()) throw RankError("mean_axis: axis out of range for " + shape_str(in));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t len = in[axis];
  Shape out_shape;
  for (std::size_t d = 0; d < in.size(); ++d)
    if (d != axis) out_shape.push_back(in[d]);
  std::vector<double> out(outer * inner, 0.0);
  auto av = a.values();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * len + l) * inner + i];
  for (auto& v : out) v *= inv;
  return make_result(std::move(out_shape), std::move(out), {node_of(a)},
                     [outer, inner, len, inv](Node& self) {
                       auto& p = *self.parents[0];
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t l = 0; l < len; ++l)
                           for (std::size_t i = 0; i < inner; ++i)
                             p.grad[(o * len + l) * inner + i] += inv * self.grad[o * inner + i];
                     });
}

Tensor frobenius_sq(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return make_result({}, {acc}, {node_of(a)}, [](Node& self) {
    auto& p = *self.parents[0];
    const double g = 2.0 * self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g * p.value[i];
  });
}

// --- neural ops ------------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() == 0) throw RankError("softmax_rows on a scalar");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  auto av = a.values();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    double mx = x[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(x[j])) throw NumericError("softmax_rows: non-finite input");
      mx = std::max(mx, x[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return make_result(a.shape(), std::move(out), {node_of(a)}, [rows, n](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) p.grad[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm_last(const Tensor& a, double eps) {
  if (a.rank() == 0) throw RankError("layer_norm_last on a scalar");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  auto av = a.values();
  std::vector<double> out(a.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (x[j] - mu) * is;
  }
  return make_result(a.shape(), std::move(out), {node_of(a)}, [rows, n, inv_std](Node& self) {
    auto& p = *self.parents[0];
    const double dn = static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double gsum = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        gsum += g[j];
        gy += g[j] * y[j];
      }
      const double is = (*inv_std)[r];
      for (std::size_t j = 0; j < n; ++j)
        p.grad[r * n + j] += is * (g[j] - gsum / dn - y[j] * gy / dn);
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1))
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  if (H + 2 * padding < KH || W + 2 * padding < KW)
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != O))
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(O) +
                         " output channels");
  const std::size_t OH = (H + 2 * padding - KH) / stride + 1;
  const std::size_t OW = (W + 2 * padding - KW) / stride + 1;
  const long pad = static_cast<long>(padding);

  // Per output pixel, the flat input offsets of its receptive field (or
  // kZeroIndex for padding) in (c, kh, kw) order. Shared by forward/backward.
  const std::size_t patch = C * KH * KW;
  auto cols = std::make_shared<std::vector<std::size_t>>(OH * OW * patch);
  for (std::size_t oh = 0; oh < OH; ++oh)
    for (std::size_t ow = 0; ow < OW; ++ow) {
      std::size_t* col = cols->data() + (oh * OW + ow) * patch;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t kh = 0; kh < KH; ++kh)
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const long ih = static_cast<long>(oh * stride + kh) - pad;
            const long iw = static_cast<long>(ow * stride + kw) - pad;
            *col++ = (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W))
                         ? kZeroIndex
                         : (c * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw);
          }
    }

  auto xv = x.values();
  auto wv = weight.values();
  std::vector<double> out(N * O * OH * OW, 0.0);
  std::vector<double> buf(patch);
  for (std::size_t n = 0; n < N; ++n) {
    const double* xn = xv.data() + n * C * H * W;
    for (std::size_t pix = 0; pix < OH * OW; ++pix) {
      const std::size_t* col = cols->data() + pix * patch;
      for (std::size_t q = 0; q < patch; ++q) buf[q] = col[q] == kZeroIndex ? 0.0 : xn[col[q]];
      for (std::size_t o = 0; o < O; ++o) {
        const double* w = wv.data() + o * patch;
        double acc = has_bias ? bias.values()[o] : 0.0;
        for (std::size_t q = 0; q < patch; ++q) acc += w[q] * buf[q];
        out[((n * O + o) * OH * OW) + pix] = acc;
      }
    }
  }

  std::vector<NodePtr> parents{node_of(x), node_of(weight)};
  if (has_bias) parents.push_back(node_of(bias));
  return make_result({N, O, OH, OW}, std::move(out), std::move(parents),
                     [=](Node& self) {
                       auto& px = *self.parents[0];
                       auto& pw = *self.parents[1];
                       Node* pb = has_bias ? self.parents[2].get() : nullptr;
                       const std::size_t npix = OH * OW;
                       std::vector<double> xbuf(patch), gbuf(patch);
                       for (std::size_t n = 0; n < N; ++n) {
                         const double* xn = px.value.data() + n * C * H * W;
                         double* gxn = px.requires_grad ? px.grad.data() + n * C * H * W : nullptr;
                         for (std::size_t pix = 0; pix < npix; ++pix) {
                           const std::size_t* col = cols->data() + pix * patch;
                           if (pw.requires_grad)
                             for (std::size_t q = 0; q < patch; ++q)
                               xbuf[q] = col[q] == kZeroIndex ? 0.0 : xn[col[q]];
                           std::fill(gbuf.begin(), gbuf.end(), 0.0);
                           for (std::size_t o = 0; o < O; ++o) {
                             const double g = self.grad[(n * O + o) * npix + pix];
                             if (g == 0.0) continue;
                             if (pb && pb->requires_grad) pb->grad[o] += g;
                             if (pw.requires_grad) {
                               double* gw = pw.grad.data() + o * patch;
                               for (std::size_t q = 0; q < patch; ++q) gw[q] += g * xbuf[q];
                             }
                             if (gxn) {
                               const double* w = pw.value.data() + o * patch;
                               for (std::size_t q = 0; q < patch; ++q) gbuf[q] += g * w[q];
                             }
                           }
                           if (gxn)
                             for (std::size_t q = 0; q < patch; ++q)
                               if (col[q] != kZeroIndex) gxn[col[q]] += gbuf[q];
                         }
                       }
                     });
}

Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 4) throw RankError("adaptive_avg_pool2d expects [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h == 0 || out_w == 0 || out_h > H || out_w > W)
    throw DimensionError("adaptive_avg_pool2d: grid " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " exceeds map " + std::to_string(H) + "x" +
                         std::to_string(W));
  auto bounds = [](std::size_t i, std::size_t extent, std::size_t k) {
    return std::pair{i * extent / k, (i + 1) * extent / k};
  };
  auto xv = x.values();
  std::vector<double> out(N * C * out_h * out_w);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* plane = xv.data() + nc * H * W;
    for (std::size_t i = 0; i < out_h; ++i) {
      auto [r0, r1] = bounds(i, H, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        auto [c0, c1] = bounds(j, W, out_w);
        double acc = 0.0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) acc += plane[r * W + c];
        out[(nc * out_h + i) * out_w + j] = acc / static_cast<double>((r1 - r0) * (c1 - c0));
      }
    }
  }
  return make_result({N, C, out_h, out_w}, std::move(out), {node_of(x)},
                     [=](Node& self) {
                       auto& p = *self.parents[0];
                       for (std::size_t nc = 0; nc < N * C; ++nc) {
                         double* plane = p.grad.data() + nc * H * W;
                         for (std::size_t i = 0; i < out_h; ++i) {
                           auto [r0, r1] = bounds(i, H, out_h);
                           for (std::size_t j = 0; j < out_w; ++j) {
                             auto [c0, c1] = bounds(j, W, out_w);
                             const double g = self.grad[(nc * out_h + i) * out_w + j] /
                                              static_cast<double>((r1 - r0) * (c1 - c0));
                             for (std::size_t r = r0; r < r1; ++r)
                               for (std::size_t c = c0; c < c1; ++c) plane[r * W + c] += g;
                           }
                         }
                       }
                     });
}

namespace {
constexpr double kProbClamp = 1e-12;
}

Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets) {
  require_same_shape(probs, targets, "binary_cross_entropy");
  auto pv = probs.values(), tv = targets.values();
  const double inv_n = 1.0 / static_cast<double>(probs.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
    acc -= tv[i] * std::log(p) + (1.0 - tv[i]) * std::log(1.0 - p);
  }
  return make_result({}, {acc * inv_n}, {node_of(probs)}, [inv_n, tv = std::vector<double>(tv.begin(), tv.end())](Node& self) {
    auto& p = *self.parents[0];
    const double g = self.grad[0] * inv_n;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double x = p.value[i];
      if (x < kProbClamp || x > 1.0 - kProbClamp) continue;
      p.grad[i] += g * (-tv[i] / x + (1.0 - tv[i]) / (1.0 - x));
    }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  auto d = sub(a, b);
  return scale(frobenius_sq(d), 1.0 / static_cast<double>(a.numel()));
}

}  // namespace cbodd
