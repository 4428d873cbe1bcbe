#pragma once

// Desk-scale feature extractor G (a conv stack with tapped blocks followed by
// an embedding layer) and classifier C.

#include "acda/layers.hpp"
#include "acda/projection.hpp"
#include "acda/tensor.hpp"

#include <random>
#include <span>
#include <vector>

namespace acda::backbone {

using projection::FeatureShape;

struct ConvBlockSpec {
  int out_channels = 0;
  int kernel_size = 3;
  int stride = 1;
  bool operator==(const ConvBlockSpec&) const = default;
};

struct BackboneSpec {
  FeatureShape input{1, 16, 16};
  std::vector<ConvBlockSpec> blocks;
  std::vector<int> taps;  // block indices, strictly increasing
  int embed_dim = 64;
  int num_classes = 4;

  // Throws ConfigError.
  void validate() const;
  // Output shape of every block, in order.
  std::vector<FeatureShape> block_shapes() const;
  std::vector<FeatureShape> tap_shapes() const;
  std::size_t num_taps() const { return taps.size(); }

  bool operator==(const BackboneSpec&) const = default;

  // 8-16-32-32 channels of 3x3 convolutions, stride 2 on blocks 2 and 3,
  // taps on the last three blocks, for 1x16x16 inputs.
  static BackboneSpec default_shapes(int num_classes = 4);
  // Stack of 1x1 convolutions over a 2x1x1 input, i.e. a small MLP.
  static BackboneSpec default_twomoons();
};

struct ForwardOutput {
  std::vector<Tensor> taps;  // (n, c_i, h_i, w_i)
  Tensor embedding;          // (n, embed_dim)
  Tensor logits;             // (n, K)
};

class Backbone {
 public:
  Backbone(BackboneSpec spec, std::mt19937_64& rng);

  // x: (n, c, h, w) matching spec().input.
  ForwardOutput forward(const Tensor& x) const;

  const BackboneSpec& spec() const { return spec_; }
  std::vector<NamedParameter> parameters() const;

  // Sets the classifier weights and bias to zero.
  void zero_classifier();

 private:
  BackboneSpec spec_;
  std::vector<Conv2dLayer> blocks_;
  LinearLayer embed_;
  LinearLayer classifier_;
};

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace acda::backbone
