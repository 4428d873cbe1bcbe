#pragma once

// Seeded procedural domain-shift datasets and optional image-folder ingestion.
//
// Target-domain labels are stored with the dataset but can only be read
// through trainer::Evaluator, so training code never sees them.

#include "acda/projection.hpp"
#include "acda/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace acda::trainer {
class Evaluator;
}

namespace acda::data {

using projection::FeatureShape;

struct DomainPairDataset;
void save_dataset(const std::filesystem::path& path, const DomainPairDataset& dataset);

class LabeledSet {
 public:
  LabeledSet() = default;
  LabeledSet(FeatureShape shape, Matrix inputs, std::vector<int> labels);

  const FeatureShape& shape() const { return shape_; }
  const Matrix& inputs() const { return inputs_; }  // n x (c*h*w), row-major per sample
  const std::vector<int>& labels() const { return labels_; }
  int size() const { return static_cast<int>(inputs_.rows()); }

  // (rows.size(), c, h, w) constant tensor.
  Tensor batch(std::span<const int> rows) const;
  Tensor all() const;

 private:
  FeatureShape shape_;
  Matrix inputs_;
  std::vector<int> labels_;
};

class UnlabeledSet {
 public:
  UnlabeledSet() = default;
  UnlabeledSet(FeatureShape shape, Matrix inputs, std::vector<int> hidden_labels);

  const FeatureShape& shape() const { return shape_; }
  const Matrix& inputs() const { return inputs_; }
  int size() const { return static_cast<int>(inputs_.rows()); }
  Tensor batch(std::span<const int> rows) const;
  Tensor all() const;

 private:
  friend class trainer::Evaluator;
  friend void save_dataset(const std::filesystem::path& path, const DomainPairDataset& dataset);
  const std::vector<int>& hidden_labels() const { return hidden_labels_; }

  FeatureShape shape_;
  Matrix inputs_;
  std::vector<int> hidden_labels_;
};

struct DomainPairDataset {
  LabeledSet source;
  UnlabeledSet target;
  int num_classes = 0;
  FeatureShape input_shape;
  std::vector<std::string> class_names;
};

// Target-domain perturbation on top of the source rendering.
struct ShiftSpec {
  double brightness = 0.0;  // additive offset, |b| <= 1
  double noise = 0.0;       // extra Gaussian noise std, [0, 1]
  double thickness = 0.0;   // extra stroke width in pixels, [0, 3]

  void validate() const;
  bool is_zero() const { return brightness == 0.0 && noise == 0.0 && thickness == 0.0; }
  static ShiftSpec default_shift();
};

inline constexpr int kShapeClasses = 4;

// 16x16 grayscale outlines of rectangle / ellipse / cross / triangle with
// randomized position and size. Requires n_s, n_t divisible by 4 and >= 16.
DomainPairDataset make_shapes_dataset(std::uint64_t seed, int n_source, int n_target, const ShiftSpec& shift);

// Two interleaved half circles (noise 0.1); the target is rotated about the
// data centre by rotation_degrees in [0, 90]. Requires even sizes >= 8.
DomainPairDataset make_twomoons_dataset(std::uint64_t seed, int n_source, int n_target, double rotation_degrees);

// <root>/source/<class>/*.{png,jpg,...} and <root>/target/<class>/*; images are
// converted to the requested channel count and resized to (h, w).
DomainPairDataset load_image_folder(const std::filesystem::path& root, FeatureShape input_shape);

void save_dataset(const std::filesystem::path& path, const DomainPairDataset& dataset);
DomainPairDataset load_dataset(const std::filesystem::path& path);

}  // namespace acda::data
