#include "nicreg/diff_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Core>

#include "nicreg/errors.hpp"

namespace nicreg::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMatrix> matrix_view(Tensor& t, std::size_t r, std::size_t c) {
  return {t.values().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

Eigen::Map<const RowMatrix> const_matrix_view(const Tensor& t, std::size_t r, std::size_t c) {
  return {t.values().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  require(shape_.size() <= 2, "tensors are limited to rank 2");
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  require(shape_.size() <= 2, "tensors are limited to rank 2");
  require(data_.size() == shape_size(shape_),
          "value count does not match shape " + shape_string(shape_));
}

std::size_t Tensor::rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  require(data_.size() == 1, "item() needs a single-element tensor");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return graph_->node(id_).value; }
const Tensor& Var::grad() const { return graph_->node(id_).grad; }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(ParamStore& store, const std::string& name, bool trainable) {
  Parameter& p = store.at(name);
  nodes_.push_back(Node{p.value, {}, {}, {}, trainable ? &p : nullptr, trainable});
  return Var(this, nodes_.size() - 1);
}

Var Graph::emit(Tensor value, std::vector<std::size_t> parents, Backward backward) {
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_.at(p).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, std::move(parents),
                        needs ? std::move(backward) : Backward{}, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
  require(&loss.graph() == this, "loss belongs to another graph");
  require(loss.value().size() == 1, "backward() needs a scalar loss");
  for (auto& n : nodes_) {
    if (n.requires_grad) n.grad = Tensor(n.value.shape(), 0.0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      Tensor& g = n.param->grad;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

namespace {

void same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kInvalidArgument, std::string(op) + ": shape mismatch " +
                                          shape_string(a.shape()) + " vs " +
                                          shape_string(b.shape()));
  }
}

bool is_row_bias(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) return false;
  const bool row = (b.rank() == 1 && b.shape()[0] == a.cols()) ||
                   (b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == a.cols());
  return row && a.rows() != 1;
}

// Elementwise unary op with derivative expressed from input x and output y.
template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t pa = a.id();
  return a.graph().emit(std::move(y), {pa}, [pa, dfdx](Graph& g, std::size_t self) {
    Graph::Node& in = g.node(pa);
    if (!in.requires_grad) return;
    const Graph::Node& out = g.node(self);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      in.grad[i] += out.grad[i] * dfdx(in.value[i], out.value[i]);
    }
  });
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  require(x.rank() == 2 && w.rank() == 2, "matmul needs rank-2 operands");
  if (x.cols() != w.rows()) {
    fail(ErrorKind::kInvalidArgument, "matmul: shape mismatch " + shape_string(x.shape()) +
                                          " x " + shape_string(w.shape()));
  }
  const std::size_t n = x.rows(), k = x.cols(), m = w.cols();
  Tensor y({n, m}, 0.0);
  matrix_view(y, n, m).noalias() = const_matrix_view(x, n, k) * const_matrix_view(w, k, m);
  const std::size_t pa = a.id(), pb = b.id();
  return a.graph().emit(std::move(y), {pa, pb}, [pa, pb, n, k, m](Graph& g, std::size_t self) {
    const auto gy = const_matrix_view(g.node(self).grad, n, m);
    Graph::Node& na = g.node(pa);
    Graph::Node& nb = g.node(pb);
    if (na.requires_grad) {
      matrix_view(na.grad, n, k).noalias() += gy * const_matrix_view(nb.value, k, m).transpose();
    }
    if (nb.requires_grad) {
      matrix_view(nb.grad, k, m).noalias() += const_matrix_view(na.value, n, k).transpose() * gy;
    }
  });
}

namespace {

Var add_or_sub(Var a, Var b, double sign, const char* op) {
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const bool bias = is_row_bias(x, z);
  if (!bias) same_shape(a, b, op);
  Tensor y = x;
  const std::size_t cols = x.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += sign * z[bias ? i % cols : i];
  const std::size_t pa = a.id(), pb = b.id();
  return a.graph().emit(std::move(y), {pa, pb},
                        [pa, pb, bias, cols, sign](Graph& g, std::size_t self) {
                          const Tensor& gy = g.node(self).grad;
                          Graph::Node& na = g.node(pa);
                          Graph::Node& nb = g.node(pb);
                          if (na.requires_grad) {
                            for (std::size_t i = 0; i < gy.size(); ++i) na.grad[i] += gy[i];
                          }
                          if (nb.requires_grad) {
                            for (std::size_t i = 0; i < gy.size(); ++i) {
                              nb.grad[bias ? i % cols : i] += sign * gy[i];
                            }
                          }
                        });
}

}  // namespace

Var add(Var a, Var b) { return add_or_sub(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_or_sub(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  const std::size_t pa = a.id(), pb = b.id();
  return a.graph().emit(std::move(y), {pa, pb}, [pa, pb](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    Graph::Node& na = g.node(pa);
    Graph::Node& nb = g.node(pb);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (na.requires_grad) na.grad[i] += gy[i] * nb.value[i];
      if (nb.requires_grad) nb.grad[i] += gy[i] * na.value[i];
    }
  });
}

Var div(Var a, Var b) {
  same_shape(a, b, "div");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] / z[i];
  const std::size_t pa = a.id(), pb = b.id();
  return a.graph().emit(std::move(y), {pa, pb}, [pa, pb](Graph& g, std::size_t self) {
    const Graph::Node& out = g.node(self);
    Graph::Node& na = g.node(pa);
    Graph::Node& nb = g.node(pb);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      const double d = nb.value[i];
      if (na.requires_grad) na.grad[i] += out.grad[i] / d;
      if (nb.requires_grad) nb.grad[i] -= out.grad[i] * out.value[i] / d;
    }
  });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var gaussian_cdf(Var a) {
  return unary(a, normal_cdf, [](double x, double) { return normal_pdf(x); });
}

Var clamp_min(Var a, double floor) {
  return unary(a, [floor](double x) { return x > floor ? x : floor; },
               [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t pa = a.id();
  return a.graph().emit(Tensor::scalar(s), {pa}, [pa](Graph& g, std::size_t self) {
    const double gy = g.node(self).grad[0];
    Graph::Node& in = g.node(pa);
    for (std::size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += gy;
  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var stop_gradient(Var a) { return a.graph().constant(a.value()); }

Var tile_rows(Var a, std::size_t rows) {
  const Tensor& x = a.value();
  require(x.rank() == 1 || (x.rank() == 2 && x.rows() == 1), "tile_rows needs a row vector");
  const std::size_t cols = x.cols();
  Tensor y({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y.at(r, c) = x[c];
  }
  const std::size_t pa = a.id();
  return a.graph().emit(std::move(y), {pa}, [pa, cols](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    Graph::Node& in = g.node(pa);
    for (std::size_t i = 0; i < gy.size(); ++i) in.grad[i % cols] += gy[i];
  });
}

}  // namespace nicreg::ad
