#pragma once

// Parameterized building blocks shared by the backbone and the projectors.

#include "acda/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace acda {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Kaiming-normal initialized parameter, std = sqrt(2 / fan_in).
Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng);

struct Conv2dLayer {
  Tensor weight;  // (out, in, k, k)
  Tensor bias;    // (out) or undefined
  int stride = 1;
  int padding = 0;

  static Conv2dLayer make(int in, int out, int kernel, int stride, std::mt19937_64& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
};

struct LinearLayer {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)

  static LinearLayer make(int in, int out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
};

}  // namespace acda
