#include "cbodd/nn.hpp"

#include <cmath>

#include "cbodd/errors.hpp"

namespace cbodd {

Tensor init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

std::size_t count_parameters(const NamedParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

std::vector<Tensor> tensors_of(const NamedParams& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

Linear::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) : in_(in), out_(out) {
  if (in == 0 || out == 0) throw ConfigError("Linear: zero feature count");
  weight_ = init_uniform_fan_in({in, out}, in, rng);
  if (with_bias) bias_ = init_uniform_fan_in({out}, in, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() == 0 || x.shape().back() != in_)
    throw DimensionError("Linear: expected last extent " + std::to_string(in_) + ", got " +
                         shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = out_;
  Tensor flat = x.rank() == 2 ? x : reshape(x, {x.numel() / in_, in_});
  Tensor y = matmul(flat, weight_);
  if (bias_.defined()) y = add_bias(y, bias_);
  return x.rank() == 2 ? y : reshape(y, std::move(out_shape));
}

void Linear::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight_);
  if (bias_.defined()) out.emplace_back(prefix + ".bias", bias_);
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding, Rng& rng)
    : kernel_(kernel), stride_(stride), padding_(padding) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0)
    throw ConfigError("Conv2d: channels, kernel and stride must be positive");
  const std::size_t fan_in = in_channels * kernel * kernel;
  weight_ = init_uniform_fan_in({out_channels, in_channels, kernel, kernel}, fan_in, rng);
  bias_ = init_uniform_fan_in({out_channels}, fan_in, rng);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

void Conv2d::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

}  // namespace cbodd
