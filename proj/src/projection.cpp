#include "acda/projection.hpp"

#include <array>

namespace acda::projection {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 5> kNames{{
    {Variant::PoolOnly, "pool-only"},
    {Variant::Conv1, "conv-1"},
    {Variant::Conv3, "conv-3"},
    {Variant::Conv3Pool, "conv-3-pool"},
    {Variant::Conv3Residual, "conv-3-residual"},
}};

// Integer stride mapping input spatial size onto output size with a
// padded 3x3 or unpadded 1x1 convolution.
int exact_stride(const FeatureShape& in, const FeatureShape& out) {
  if (in.h % out.h != 0 || in.w % out.w != 0 || in.h / out.h != in.w / out.w)
    throw ConfigError("projection: cannot map spatial size " + in.str() + " onto " + out.str() +
                      " with a single integer stride");
  return in.h / out.h;
}

}  // namespace

Variant parse_variant(std::string_view name) {
  for (const auto& [v, n] : kNames)
    if (n == name) return v;
  throw ConfigError("unknown projection variant '" + std::string(name) + "'");
}

std::string_view variant_name(Variant v) {
  for (const auto& [k, n] : kNames)
    if (k == v) return n;
  throw ConfigError("unknown projection variant");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::PoolOnly, Variant::Conv1, Variant::Conv3, Variant::Conv3Pool,
                                      Variant::Conv3Residual};
  return v;
}

std::string FeatureShape::str() const {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

Tensor ResidualBlock::operator()(const Tensor& x) const {
  Tensor y = conv2(relu(conv1(x)));
  return relu(add(y, shortcut ? (*shortcut)(x) : x));
}

void ResidualBlock::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
  if (shortcut) shortcut->collect(prefix + ".shortcut", out);
}

Projector::Projector(Variant variant, FeatureShape input, FeatureShape output, std::mt19937_64& rng)
    : variant_(variant), input_(input), output_(output) {
  if (output.c < 1 || output.h < 1 || output.w < 1)
    throw ConfigError("projection: target shape " + output.str() + " must be positive");
  if (input.c < 1 || input.h < 1 || input.w < 1)
    throw ConfigError("projection: input shape " + input.str() + " must be positive");

  switch (variant) {
    case Variant::PoolOnly:
      if (input.c != output.c)
        throw ConfigError("projection: pool-only cannot change channels " + input.str() + " -> " + output.str());
      if (input.h < output.h || input.w < output.w)
        throw ConfigError("projection: pooling cannot enlarge " + input.str() + " -> " + output.str());
      break;
    case Variant::Conv1:
      convs_.push_back(Conv2dLayer::make(input.c, output.c, 1, exact_stride(input, output), rng));
      break;
    case Variant::Conv3: {
      const int s = exact_stride(input, output);
      convs_.push_back(Conv2dLayer::make(input.c, output.c, 3, s, rng));
      convs_.push_back(Conv2dLayer::make(output.c, output.c, 3, 1, rng));
      convs_.push_back(Conv2dLayer::make(output.c, output.c, 3, 1, rng));
      break;
    }
    case Variant::Conv3Pool:
      if (input.h < output.h || input.w < output.w)
        throw ConfigError("projection: pooling cannot enlarge " + input.str() + " -> " + output.str());
      convs_.push_back(Conv2dLayer::make(input.c, output.c, 3, 1, rng));
      convs_.push_back(Conv2dLayer::make(output.c, output.c, 3, 1, rng));
      convs_.push_back(Conv2dLayer::make(output.c, output.c, 3, 1, rng));
      break;
    case Variant::Conv3Residual: {
      const int s = exact_stride(input, output);
      int in_c = input.c;
      for (int b = 0; b < 3; ++b) {
        const int stride = b == 0 ? s : 1;
        ResidualBlock block{Conv2dLayer::make(in_c, output.c, 3, stride, rng),
                            Conv2dLayer::make(output.c, output.c, 3, 1, rng), std::nullopt};
        if (in_c != output.c || stride != 1) block.shortcut = Conv2dLayer::make(in_c, output.c, 1, stride, rng);
        blocks_.push_back(std::move(block));
        in_c = output.c;
      }
      break;
    }
  }
}

Tensor Projector::operator()(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != input_.c || x.dim(2) != input_.h || x.dim(3) != input_.w)
    throw ShapeError("projector expects (b, " + input_.str() + "), got " + shape_string(x.shape()));
  switch (variant_) {
    case Variant::PoolOnly:
      return adaptive_avg_pool2d(x, output_.h, output_.w);
    case Variant::Conv1:
      return convs_[0](x);
    case Variant::Conv3:
      return convs_[2](relu(convs_[1](relu(convs_[0](x)))));
    case Variant::Conv3Pool: {
      const Tensor p = adaptive_avg_pool2d(x, output_.h, output_.w);
      return convs_[2](relu(convs_[1](relu(convs_[0](p)))));
    }
    case Variant::Conv3Residual: {
      Tensor y = x;
      for (const auto& b : blocks_) y = b(y);
      return y;
    }
  }
  throw ConfigError("unknown projection variant");
}

void Projector::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
}

std::vector<NamedParameter> Projector::parameters() const {
  std::vector<NamedParameter> out;
  collect("proj", out);
  return out;
}

std::size_t Projector::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

ProjectionSet::ProjectionSet(Variant variant, const std::vector<FeatureShape>& tap_shapes, FeatureShape target,
                             std::mt19937_64& rng)
    : variant_(variant), target_shape_(target) {
  if (tap_shapes.empty()) throw ConfigError("projection: need at least one tapped layer");
  for (const auto& shape : tap_shapes) {
    source_proj_.emplace_back(variant, shape, target, rng);
    target_proj_.emplace_back(variant, shape, target, rng);
  }
}

const Projector& ProjectionSet::projector(std::size_t layer, Domain domain) const {
  if (layer >= source_proj_.size()) throw ShapeError("projection: layer index out of range");
  return domain == Domain::Source ? source_proj_[layer] : target_proj_[layer];
}

Projector& ProjectionSet::projector(std::size_t layer, Domain domain) {
  if (layer >= source_proj_.size()) throw ShapeError("projection: layer index out of range");
  return domain == Domain::Source ? source_proj_[layer] : target_proj_[layer];
}

Tensor ProjectionSet::project(const Tensor& raw, std::size_t layer, Domain domain) const {
  return projector(layer, domain)(raw);
}

std::vector<NamedParameter> ProjectionSet::parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t i = 0; i < source_proj_.size(); ++i) {
    source_proj_[i].collect("proj.source" + std::to_string(i), out);
    target_proj_[i].collect("proj.target" + std::to_string(i), out);
  }
  return out;
}

std::size_t ProjectionSet::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

ProjectionSet make_default_projection(const std::vector<FeatureShape>& tap_shapes, FeatureShape target,
                                      std::mt19937_64& rng) {
  return ProjectionSet(Variant::Conv3Residual, tap_shapes, target, rng);
}

}  // namespace acda::projection
