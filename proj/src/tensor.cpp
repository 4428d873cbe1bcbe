#include "acda/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace acda {

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

Vector& Node::grad_buffer() {
  if (grad.size() == 0) grad = Vector::Zero(value.size());
  return grad;
}

void Node::accumulate(const Vector& g) { grad_buffer() += g; }

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> make_node(Shape shape, Vector values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::size_t>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_string(shape));
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::constant(Shape shape, Vector values) {
  return Tensor(make_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = static_cast<Eigen::Index>(shape_numel(shape));
  return constant(std::move(shape), Vector::Zero(n));
}

Tensor Tensor::parameter(Shape shape, Vector values) {
  return Tensor(make_node(std::move(shape), std::move(values), true));
}

const Vector& Tensor::grad() const {
  if (!has_grad()) node_->grad_buffer();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) node_->grad.setZero();
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return constant(shape(), value()); }

ConstMatrixMap Tensor::as_rows() const {
  const int rows = shape().empty() ? 1 : shape()[0];
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(numel()) / rows;
  return ConstMatrixMap(node_->value.data(), rows, cols);
}

Tensor Tensor::make_result(Shape shape, Vector values, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  auto node = make_node(std::move(shape), std::move(values), needs);
  if (needs) {
    for (auto& t : inputs)
      if (t.defined()) node->parents.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_string(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients belong to this pass only; leaves keep accumulating.
  for (detail::Node* n : order)
    if (n->backward) n->grad.resize(0);
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

// ---- ops -----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  auto pa = a.node(), pb = b.node();
  return Tensor::make_result(a.shape(), a.value() + b.value(), {a, b}, [pa, pb](detail::Node& out) {
    if (pa->requires_grad) pa->accumulate(out.grad);
    if (pb->requires_grad) pb->accumulate(out.grad);
  });
}

Tensor scale(const Tensor& a, double s) {
  auto pa = a.node();
  return Tensor::make_result(a.shape(), a.value() * s, {a}, [pa, s](detail::Node& out) {
    pa->accumulate(out.grad * s);
  });
}

Tensor relu(const Tensor& x) {
  auto px = x.node();
  Vector y = x.value().cwiseMax(0.0);
  return Tensor::make_result(x.shape(), std::move(y), {x}, [px](detail::Node& out) {
    Vector g = (px->value.array() > 0.0).select(out.grad.array(), 0.0).matrix();
    px->accumulate(g);
  });
}

Tensor weighted_sum(std::span<const Tensor> scalars, std::span<const double> coeffs) {
  if (scalars.size() != coeffs.size()) throw ShapeError("weighted_sum: size mismatch");
  double total = 0.0;
  std::vector<Tensor> inputs;
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    total += coeffs[i] * scalars[i].item();
    inputs.push_back(scalars[i]);
    nodes.push_back(scalars[i].node());
  }
  std::vector<double> c(coeffs.begin(), coeffs.end());
  return Tensor::make_result({1}, Vector::Constant(1, total), std::move(inputs),
                             [nodes, c](detail::Node& out) {
                               for (std::size_t i = 0; i < nodes.size(); ++i)
                                 if (nodes[i]->requires_grad) nodes[i]->grad_buffer()[0] += c[i] * out.grad[0];
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  auto px = x.node();
  return Tensor::make_result(std::move(shape), x.value(), {x},
                             [px](detail::Node& out) { px->accumulate(out.grad); });
}

Tensor flatten_rows(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("flatten_rows: scalar input");
  const int n = x.dim(0);
  const int d = n == 0 ? 0 : static_cast<int>(x.numel() / n);
  return reshape(x, {n, d});
}

Tensor select_rows(const Tensor& x, std::span<const int> rows) {
  if (x.rank() == 0) throw ShapeError("select_rows: scalar input");
  const int n = x.dim(0);
  const Eigen::Index stride = n == 0 ? 0 : static_cast<Eigen::Index>(x.numel()) / n;
  Shape shape = x.shape();
  shape[0] = static_cast<int>(rows.size());
  Vector y(static_cast<Eigen::Index>(rows.size()) * stride);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n) throw ShapeError("select_rows: row index out of range");
    y.segment(static_cast<Eigen::Index>(r) * stride, stride) = x.value().segment(rows[r] * stride, stride);
  }
  auto px = x.node();
  std::vector<int> idx(rows.begin(), rows.end());
  return Tensor::make_result(std::move(shape), std::move(y), {x}, [px, idx, stride](detail::Node& out) {
    Vector& g = px->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r)
      g.segment(idx[r] * stride, stride) += out.grad.segment(static_cast<Eigen::Index>(r) * stride, stride);
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1))
    throw ShapeError("linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  const int n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(o)) throw ShapeError("linear: bias size");

  ConstMatrixMap X(x.value().data(), n, d);
  ConstMatrixMap W(weight.value().data(), o, d);
  Vector y(static_cast<Eigen::Index>(n) * o);
  MatrixMap Y(y.data(), n, o);
  Y.noalias() = X * W.transpose();
  if (bias.defined()) Y.rowwise() += bias.value().transpose();

  auto px = x.node(), pw = weight.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  return Tensor::make_result({n, o}, std::move(y), {x, weight, bias},
                             [px, pw, pb, n, d, o](detail::Node& out) {
                               ConstMatrixMap G(out.grad.data(), n, o);
                               if (px->requires_grad) {
                                 MatrixMap GX(px->grad_buffer().data(), n, d);
                                 GX.noalias() += G * ConstMatrixMap(pw->value.data(), o, d);
                               }
                               if (pw->requires_grad) {
                                 MatrixMap GW(pw->grad_buffer().data(), o, d);
                                 GW.noalias() += G.transpose() * ConstMatrixMap(px->value.data(), n, d);
                               }
                               if (pb && pb->requires_grad) pb->grad_buffer() += G.colwise().sum().transpose();
                             });
}

namespace {

struct ConvGeometry {
  int n, c, h, w, o, k, stride, pad, ho, wo;
  Eigen::Index patch() const { return static_cast<Eigen::Index>(c) * k * k; }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(n) * ho * wo; }
};

// cols(ch*k*k + ky*k + kx, (b*ho + oy)*wo + ox) = x[b, ch, oy*s - p + ky, ox*s - p + kx]
void im2col(const ConvGeometry& g, const double* x, Matrix& cols) {
  cols.setZero(g.patch(), g.cols());
  for (int ch = 0; ch < g.c; ++ch)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols.row((ch * g.k + ky) * g.k + kx).data();
        for (int b = 0; b < g.n; ++b) {
          const double* plane = x + (static_cast<std::size_t>(b) * g.c + ch) * g.h * g.w;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            double* dst = row + (static_cast<std::size_t>(b) * g.ho + oy) * g.wo;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) dst[ox] = plane[iy * g.w + ix];
            }
          }
        }
      }
}

void col2im(const ConvGeometry& g, const Matrix& cols, double* dx) {
  for (int ch = 0; ch < g.c; ++ch)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols.row((ch * g.k + ky) * g.k + kx).data();
        for (int b = 0; b < g.n; ++b) {
          double* plane = dx + (static_cast<std::size_t>(b) * g.c + ch) * g.h * g.w;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            const double* src = row + (static_cast<std::size_t>(b) * g.ho + oy) * g.wo;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) plane[iy * g.w + ix] += src[ox];
            }
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1) || weight.dim(2) != weight.dim(3))
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, padding, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d: kernel larger than padded input " + shape_string(x.shape()));
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(g.o)) throw ShapeError("conv2d: bias size");

  auto cols = std::make_shared<Matrix>();
  im2col(g, x.value().data(), *cols);
  ConstMatrixMap W(weight.value().data(), g.o, g.patch());
  const Matrix out = W * *cols;  // (o, n*ho*wo)

  const Eigen::Index plane = static_cast<Eigen::Index>(g.ho) * g.wo;
  Vector y(static_cast<Eigen::Index>(g.n) * g.o * plane);
  for (int b = 0; b < g.n; ++b)
    for (int oc = 0; oc < g.o; ++oc) {
      auto dst = y.segment((static_cast<Eigen::Index>(b) * g.o + oc) * plane, plane);
      dst = out.row(oc).segment(b * plane, plane).transpose();
      if (bias.defined()) dst.array() += bias.value()[oc];
    }

  auto px = x.node(), pw = weight.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  return Tensor::make_result(
      {g.n, g.o, g.ho, g.wo}, std::move(y), {x, weight, bias}, [px, pw, pb, g, cols, plane](detail::Node& out) {
        Matrix gout(g.o, g.cols());
        for (int b = 0; b < g.n; ++b)
          for (int oc = 0; oc < g.o; ++oc)
            gout.row(oc).segment(b * plane, plane) =
                out.grad.segment((static_cast<Eigen::Index>(b) * g.o + oc) * plane, plane).transpose();
        if (pw->requires_grad) {
          MatrixMap GW(pw->grad_buffer().data(), g.o, g.patch());
          GW.noalias() += gout * cols->transpose();
        }
        if (pb && pb->requires_grad) pb->grad_buffer() += gout.rowwise().sum();
        if (px->requires_grad) {
          const Matrix gcols = ConstMatrixMap(pw->value.data(), g.o, g.patch()).transpose() * gout;
          col2im(g, gcols, px->grad_buffer().data());
        }
      });
}

Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 4) throw ShapeError("adaptive_avg_pool2d: expected (N, C, H, W), got " + shape_string(x.shape()));
  if (out_h < 1 || out_w < 1) throw ShapeError("adaptive_avg_pool2d: output size must be positive");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto bins = [](int in, int out) {
    std::vector<std::pair<int, int>> b(static_cast<std::size_t>(out));
    for (int i = 0; i < out; ++i) b[i] = {(i * in) / out, ((i + 1) * in + out - 1) / out};
    return b;
  };
  const auto by = bins(h, out_h), bx = bins(w, out_w);
  Vector y(static_cast<Eigen::Index>(n) * c * out_h * out_w);
  const double* xv = x.value().data();
  for (int p = 0; p < n * c; ++p)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        double s = 0.0;
        for (int iy = by[oy].first; iy < by[oy].second; ++iy)
          for (int ix = bx[ox].first; ix < bx[ox].second; ++ix) s += xv[(static_cast<std::size_t>(p) * h + iy) * w + ix];
        const int cnt = (by[oy].second - by[oy].first) * (bx[ox].second - bx[ox].first);
        y[(static_cast<Eigen::Index>(p) * out_h + oy) * out_w + ox] = s / cnt;
      }
  auto px = x.node();
  return Tensor::make_result({n, c, out_h, out_w}, std::move(y), {x},
                             [px, by, bx, n, c, h, w, out_h, out_w](detail::Node& out) {
                               double* gx = px->grad_buffer().data();
                               for (int p = 0; p < n * c; ++p)
                                 for (int oy = 0; oy < out_h; ++oy)
                                   for (int ox = 0; ox < out_w; ++ox) {
                                     const int cnt = (by[oy].second - by[oy].first) * (bx[ox].second - bx[ox].first);
                                     const double g = out.grad[(static_cast<Eigen::Index>(p) * out_h + oy) * out_w + ox] / cnt;
                                     for (int iy = by[oy].first; iy < by[oy].second; ++iy)
                                       for (int ix = bx[ox].first; ix < bx[ox].second; ++ix)
                                         gx[(static_cast<std::size_t>(p) * h + iy) * w + ix] += g;
                                   }
                             });
}

}  // namespace acda
