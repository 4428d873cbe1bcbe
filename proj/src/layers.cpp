#include "acda/layers.hpp"

#include <cmath>

namespace acda {

Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(fan_in, 1)));
  Vector v(static_cast<Eigen::Index>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Conv2dLayer Conv2dLayer::make(int in, int out, int kernel, int stride, std::mt19937_64& rng, bool with_bias) {
  if (in < 1 || out < 1 || kernel < 1 || stride < 1) throw ShapeError("Conv2dLayer: invalid geometry");
  Conv2dLayer c;
  c.weight = he_normal({out, in, kernel, kernel}, in * kernel * kernel, rng);
  if (with_bias) c.bias = Tensor::parameter({out}, Vector::Zero(out));
  c.stride = stride;
  c.padding = kernel / 2;
  return c;
}

void Conv2dLayer::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LinearLayer LinearLayer::make(int in, int out, std::mt19937_64& rng) {
  if (in < 1 || out < 1) throw ShapeError("LinearLayer: invalid geometry");
  return {he_normal({out, in}, in, rng), Tensor::parameter({out}, Vector::Zero(out))};
}

void LinearLayer::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

}  // namespace acda
