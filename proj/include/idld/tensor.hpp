#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace idld {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  std::uint64_t id = 0;
  std::string op;
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 tensor; a handle onto a node of the reverse-mode
/// graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::uint64_t id() const;
  const std::string& op() const;
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> data() const;
  // Leaves only; mutating an interior node would desynchronize its graph.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient after backward; empty span when no pass has reached the node.
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;

  static Tensor make(Shape shape, std::vector<double> values, std::string op,
                     std::vector<Tensor> parents,
                     std::function<void(detail::Node&)> backward);

  detail::Node& node() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend std::vector<Tensor> backward(const Tensor& loss);

  std::shared_ptr<detail::Node> node_;
};

/// Runs reverse-mode differentiation from a scalar loss. Leaf gradients
/// accumulate additively across calls; interior gradients are recomputed.
/// Returns the requires_grad leaves that were reached, in discovery order.
std::vector<Tensor> backward(const Tensor& loss);

/// Max over coordinates of |analytic - central difference| /
/// max(1e-12, |central difference|) for a scalar-valued f.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x0, double eps);

// ---- differentiable primitives ----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);

/// a: R x C, bias: length C (any shape with C elements); adds bias to every row.
Tensor add_rowwise(const Tensor& a, const Tensor& bias);
/// s (one element) times every entry of a.
Tensor scalar_mul(const Tensor& s, const Tensor& a);

/// (m x k)(k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
/// (m x k)(n x k)^T
Tensor matmul_bt(const Tensor& a, const Tensor& b);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// tanh-approximated GELU.
Tensor gelu(const Tensor& a);

/// Row-wise softmax over the first valid_cols columns; remaining columns get
/// probability 0. valid_cols == 0 means all columns.
Tensor softmax_rows(const Tensor& a, std::size_t valid_cols = 0);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  double eps);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means of the first n rows -> 1 x C.
Tensor mean_rows(const Tensor& a, std::size_t n);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Scalar a[index].
Tensor pick(const Tensor& a, std::size_t index);

/// Scalar whose forward value is `value`; backward passes the incoming
/// gradient to a[index] when value != 0 and drops it otherwise.
Tensor straight_through(const Tensor& a, std::size_t index, double value);

/// x: T x D, kernel: C x D x W (W odd), bias: C -> T x C with zero padding.
Tensor conv1d_same(const Tensor& x, const Tensor& kernel, const Tensor& bias);
/// x: T x C -> P x C; bin i covers rows [floor(iT/P), ceil((i+1)T/P)).
Tensor adaptive_avg_pool1d(const Tensor& x, std::size_t out_len);

}  // namespace idld
