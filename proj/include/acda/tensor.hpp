#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a cheap handle onto a shared graph node. Leaves created with
// Tensor::parameter() accumulate gradients across backward() calls until
// zero_grad() is called; intermediate nodes are freed once the last handle
// to the loss goes away. Nodes whose inputs do not require gradients keep no
// parents, so evaluation-only forward passes build no graph.

#include "acda/errors.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace acda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Vector value;
  Vector grad;  // empty until first accumulation
  Shape shape;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Vector& g);
  Vector& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, Vector values);
  static Tensor zeros(Shape shape);
  static Tensor parameter(Shape shape, Vector values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return static_cast<std::size_t>(node_->value.size()); }

  const Vector& value() const { return node_->value; }
  // Mutable access for optimizers and checkpoint loading. Never call on a
  // node that participates in a live graph.
  Vector& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Vector& grad() const;
  void zero_grad();

  // Scalar value of a one-element tensor.
  double item() const;

  // Seeds d(self)/d(self) = 1 and propagates. Requires a one-element tensor.
  void backward() const;

  // Same data, cut from the graph.
  Tensor detach() const;

  // Row-major view as (dim0, numel/dim0).
  ConstMatrixMap as_rows() const;

  // Internal: used by op implementations.
  static Tensor make_result(Shape shape, Vector values, std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// ---- differentiable ops --------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);

// Sum of scalar tensors with constant coefficients.
Tensor weighted_sum(std::span<const Tensor> scalars, std::span<const double> coeffs);

// Same data under a new shape with identical element count.
Tensor reshape(const Tensor& x, Shape shape);

// (N, ...) -> (N, prod(...)).
Tensor flatten_rows(const Tensor& x);

// Gather along dimension 0.
Tensor select_rows(const Tensor& x, std::span<const int> rows);

// x: (N, D), weight: (O, D), bias: (O) -> (N, O).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x: (N, C, H, W), weight: (O, C, k, k), bias: (O) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

// Average pooling into an out_h x out_w grid using PyTorch-style adaptive bins.
Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w);

// Stops glibc from returning large freed blocks to the kernel after every
// training step. Training allocates and frees the same buffer sizes each step,
// and without this most of the run is spent in page faults. No-op elsewhere.
void configure_allocator();

}  // namespace acda
