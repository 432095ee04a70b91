#pragma once

// Minimal reverse-mode differentiation over dense float64 arrays.
//
// A Graph is a tape: nodes are appended in evaluation order, so reverse id
// order is a valid topological order for the backward sweep. Var is a cheap
// handle into its Graph and must not outlive it.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nicreg::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  // Matrix view: a rank-1 tensor is a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }
  double item() const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
  std::uint64_t step = 0;
};

// Named trainable tensors plus their Adam state. Iteration is by name.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& entries() noexcept { return params_; }
  const std::map<std::string, Parameter>& entries() const noexcept { return params_; }

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::map<std::string, Parameter> params_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update of every parameter from its accumulated
// gradient. A non-finite gradient aborts before anything is written.
void adam_step(ParamStore& params, const AdamOptions& options);

// Checkpoint: `dir/manifest.json` plus one little-endian float64 blob per
// tensor, each with its shape and an FNV-1a checksum. `header` is stored
// verbatim in the manifest.
void save_checkpoint(const ParamStore& params, const nlohmann::json& header,
                     const std::filesystem::path& dir);
ParamStore load_checkpoint(const std::filesystem::path& dir, nlohmann::json* header = nullptr);

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var constant(Tensor value);
  // Leaf whose gradient can be read back after backward().
  Var variable(Tensor value);
  // Leaf bound to a stored parameter; backward() accumulates into its grad.
  // With trainable=false the parameter enters as a constant.
  Var param(ParamStore& store, const std::string& name, bool trainable = true);

  // Appends an op node. `backward` reads the node's grad and adds into the
  // grads of parents that require them.
  Var emit(Tensor value, std::vector<std::size_t> parents, Backward backward);

  void backward(Var loss);

  Node& node(std::size_t id) { return nodes_.at(id); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
// Same shape, or `b` a row vector added to every row of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var stop_gradient(Var a);
// Standard normal CDF; derivative is the standard normal pdf.
Var gaussian_cdf(Var a);
// max(a, floor); gradient passes only where a > floor.
Var clamp_min(Var a, double floor);
// Repeats a row vector `rows` times.
Var tile_rows(Var a, std::size_t rows);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace nicreg::ad
