#include "acda/backbone.hpp"

#include <cmath>
#include <memory>
#include <string>

namespace acda::backbone {

void BackboneSpec::validate() const {
  if (input.c < 1 || input.h < 1 || input.w < 1) throw ConfigError("backbone: input shape must be positive");
  if (blocks.empty()) throw ConfigError("backbone: at least one conv block required");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.out_channels < 1 || blk.kernel_size < 1 || blk.kernel_size % 2 == 0 || blk.stride < 1)
      throw ConfigError("backbone: block " + std::to_string(b) +
                        " needs positive channels, odd kernel size and positive stride");
  }
  if (taps.empty()) throw ConfigError("backbone: at least one tap required");
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] < 0 || taps[i] >= static_cast<int>(blocks.size()))
      throw ConfigError("backbone: tap index " + std::to_string(taps[i]) + " out of range");
    if (i > 0 && taps[i] <= taps[i - 1]) throw ConfigError("backbone: tap indices must be strictly increasing");
  }
  if (embed_dim < 1) throw ConfigError("backbone: embed_dim must be positive");
  if (num_classes < 2) throw ConfigError("backbone: need at least two classes");
  block_shapes();
}

std::vector<FeatureShape> BackboneSpec::block_shapes() const {
  std::vector<FeatureShape> shapes;
  FeatureShape cur = input;
  for (const auto& blk : blocks) {
    const int pad = blk.kernel_size / 2;
    cur = {blk.out_channels, (cur.h + 2 * pad - blk.kernel_size) / blk.stride + 1,
           (cur.w + 2 * pad - blk.kernel_size) / blk.stride + 1};
    if (cur.h < 1 || cur.w < 1) throw ConfigError("backbone: spatial size collapses to zero");
    shapes.push_back(cur);
  }
  return shapes;
}

std::vector<FeatureShape> BackboneSpec::tap_shapes() const {
  const auto all = block_shapes();
  std::vector<FeatureShape> out;
  for (int t : taps) out.push_back(all.at(static_cast<std::size_t>(t)));
  return out;
}

BackboneSpec BackboneSpec::default_shapes(int num_classes) {
  BackboneSpec s;
  s.input = {1, 16, 16};
  s.blocks = {{8, 3, 1}, {16, 3, 2}, {32, 3, 2}, {32, 3, 1}};
  s.taps = {1, 2, 3};
  s.embed_dim = 64;
  s.num_classes = num_classes;
  return s;
}

BackboneSpec BackboneSpec::default_twomoons() {
  BackboneSpec s;
  s.input = {2, 1, 1};
  s.blocks = {{32, 1, 1}, {32, 1, 1}, {32, 1, 1}};
  s.taps = {0, 1, 2};
  s.embed_dim = 16;
  s.num_classes = 2;
  return s;
}

Backbone::Backbone(BackboneSpec spec, std::mt19937_64& rng) : spec_(std::move(spec)) {
  spec_.validate();
  int in_c = spec_.input.c;
  for (const auto& blk : spec_.blocks) {
    blocks_.push_back(Conv2dLayer::make(in_c, blk.out_channels, blk.kernel_size, blk.stride, rng));
    in_c = blk.out_channels;
  }
  const auto last = spec_.block_shapes().back();
  embed_ = LinearLayer::make(last.c * last.h * last.w, spec_.embed_dim, rng);
  classifier_ = LinearLayer::make(spec_.embed_dim, spec_.num_classes, rng);
}

ForwardOutput Backbone::forward(const Tensor& x) const {
  const auto& in = spec_.input;
  if (x.rank() != 4 || x.dim(1) != in.c || x.dim(2) != in.h || x.dim(3) != in.w)
    throw ShapeError("backbone expects (n, " + in.str() + "), got " + shape_string(x.shape()));
  ForwardOutput out;
  Tensor h = x;
  std::size_t next_tap = 0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    h = relu(blocks_[b](h));
    if (next_tap < spec_.taps.size() && spec_.taps[next_tap] == static_cast<int>(b)) {
      out.taps.push_back(h);
      ++next_tap;
    }
  }
  out.embedding = relu(embed_(flatten_rows(h)));
  out.logits = classifier_(out.embedding);
  return out;
}

std::vector<NamedParameter> Backbone::parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect("backbone.block" + std::to_string(b), out);
  embed_.collect("backbone.embed", out);
  classifier_.collect("backbone.classifier", out);
  return out;
}

void Backbone::zero_classifier() {
  classifier_.weight.mutable_value().setZero();
  classifier_.bias.mutable_value().setZero();
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be (n, K)");
  const int n = logits.dim(0), k = logits.dim(1);
  if (n < 1) throw ShapeError("cross_entropy: empty batch");
  if (labels.size() != static_cast<std::size_t>(n)) throw ShapeError("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");

  ConstMatrixMap z(logits.value().data(), n, k);
  auto probs = std::make_shared<Matrix>(n, k);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double mx = z.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(i).array() - mx).exp().matrix();
    const double s = e.sum();
    probs->row(i) = e / s;
    loss += -(z(i, labels[i]) - mx - std::log(s));
  }
  loss /= n;

  auto pz = logits.node();
  std::vector<int> y(labels.begin(), labels.end());
  return Tensor::make_result({1}, Vector::Constant(1, loss), {logits}, [pz, probs, y, n, k](detail::Node& out) {
    Matrix g = *probs;
    for (int i = 0; i < n; ++i) g(i, y[i]) -= 1.0;
    g *= out.grad[0] / n;
    pz->grad_buffer() += Eigen::Map<const Vector>(g.data(), g.size());
  });
}

}  // namespace acda::backbone
