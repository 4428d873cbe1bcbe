#pragma once

// Learnable projectors that bring every tapped layer to one common
// c x h x w shape. Each (layer, domain) pair owns an independent projector.

#include "acda/layers.hpp"
#include "acda/tensor.hpp"

#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace acda::projection {

enum class Variant {
  PoolOnly,       // adaptive average pooling, no parameters
  Conv1,          // one strided 1x1 convolution
  Conv3,          // three 3x3 convolutions, the first strided
  Conv3Pool,      // adaptive pooling then three 3x3 convolutions
  Conv3Residual,  // three residual blocks, the first strided
};

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);
const std::vector<Variant>& all_variants();

struct FeatureShape {
  int c = 0, h = 0, w = 0;
  bool operator==(const FeatureShape&) const = default;
  std::string str() const;
};

enum class Domain { Source, Target };

// conv -> relu -> conv, plus a 1x1 shortcut when the shape changes.
struct ResidualBlock {
  Conv2dLayer conv1, conv2;
  std::optional<Conv2dLayer> shortcut;

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
};

class Projector {
 public:
  Projector(Variant variant, FeatureShape input, FeatureShape output, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const;

  Variant variant() const { return variant_; }
  const FeatureShape& input_shape() const { return input_; }
  const FeatureShape& output_shape() const { return output_; }

  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
  std::vector<NamedParameter> parameters() const;
  std::size_t num_parameters() const;

  // Mutable access used by tests to install hand-chosen kernels.
  std::vector<Conv2dLayer>& convs() { return convs_; }

 private:
  Variant variant_;
  FeatureShape input_, output_;
  std::vector<Conv2dLayer> convs_;
  std::vector<ResidualBlock> blocks_;
};

// One source and one target projector per tapped layer.
class ProjectionSet {
 public:
  ProjectionSet(Variant variant, const std::vector<FeatureShape>& tap_shapes, FeatureShape target,
                std::mt19937_64& rng);

  // raw: (b, c_i, h_i, w_i) -> (b, c, h, w)
  Tensor project(const Tensor& raw, std::size_t layer, Domain domain) const;

  Variant variant() const { return variant_; }
  const FeatureShape& target_shape() const { return target_shape_; }
  std::size_t num_layers() const { return source_proj_.size(); }
  std::size_t num_projectors() const { return source_proj_.size() + target_proj_.size(); }
  const Projector& projector(std::size_t layer, Domain domain) const;
  Projector& projector(std::size_t layer, Domain domain);

  std::vector<NamedParameter> parameters() const;
  std::size_t num_parameters() const;

 private:
  Variant variant_;
  FeatureShape target_shape_;
  std::vector<Projector> source_proj_, target_proj_;
};

// Residual projectors (three blocks) for every tap.
ProjectionSet make_default_projection(const std::vector<FeatureShape>& tap_shapes, FeatureShape target,
                                      std::mt19937_64& rng);

}  // namespace acda::projection
