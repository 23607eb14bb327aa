#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cbodd/rng.hpp"
#include "cbodd/tensor.hpp"

namespace cbodd {

/// Ordered (name, parameter) list; the order is the checkpoint record order.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

std::size_t count_parameters(const NamedParams& params);
std::vector<Tensor> tensors_of(const NamedParams& params);

/// y = x W (+ b). x is [rows, in] or any rank with last extent `in`.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const Tensor& weight() const { return weight_; }
  Tensor& weight() { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Tensor weight_;  // [in, out]
  Tensor bias_;    // [out] or undefined
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
  std::size_t out_extent(std::size_t in_extent) const {
    return (in_extent + 2 * padding_ - kernel_) / stride_ + 1;
  }
  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }

 private:
  std::size_t kernel_ = 0;
  std::size_t stride_ = 1;
  std::size_t padding_ = 0;
  Tensor weight_;
  Tensor bias_;
};

}  // namespace cbodd
