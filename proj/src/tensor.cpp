#include "idld/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "idld/errors.hpp"

namespace idld {

namespace {

std::atomic<std::uint64_t> next_node_id{1};

using detail::Node;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values,
                               std::string op) {
  if (shape_numel(shape) != values.size()) {
    throw ContractViolation("tensor: shape " + shape_str(shape) + " needs " +
                            std::to_string(shape_numel(shape)) +
                            " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->data = std::move(values);
  return node;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ContractViolation(std::string(op) + ": expected a 2-D tensor, got " +
                            shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " +
                            shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
  }
}

bool has_nan(const std::vector<double>& v) {
  return std::any_of(v.begin(), v.end(),
                     [](double x) { return std::isnan(x); });
}

// Parent i of self, or nullptr when it does not need a gradient.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const std::vector<double>& parent_data(const Node& self, std::size_t i) {
  return self.parents[i]->data;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::make(a.shape(), std::move(out), op, {a}, [deriv](Node& self) {
    auto* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = parent_data(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      (*ga)[i] += self.grad[i] * deriv(x[i], self.data[i]);
    }
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  auto node = new_node(std::move(shape), std::move(values), "leaf");
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::make(Shape shape, std::vector<double> values, std::string op,
                    std::vector<Tensor> parents,
                    std::function<void(Node&)> backward) {
  auto node = new_node(std::move(shape), std::move(values), std::move(op));
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(),
                  [](const Tensor& p) { return p.requires_grad(); });
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

detail::Node& Tensor::node() const {
  if (!node_) throw ContractViolation("use of an undefined tensor");
  return *node_;
}

std::uint64_t Tensor::id() const { return node().id; }
const std::string& Tensor::op() const { return node().op; }
const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ContractViolation("dim: axis " + std::to_string(axis) +
                            " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node().data.size(); }
std::span<const double> Tensor::data() const { return node().data; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractViolation("mutable_data on a non-leaf tensor");
  return node().data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractViolation("item() on tensor of shape " + shape_str(shape()));
  }
  return node().data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node().data[r * cols() + c];
}

bool Tensor::requires_grad() const { return node().requires_grad; }
bool Tensor::is_leaf() const { return node().is_leaf(); }
bool Tensor::has_grad() const { return !node().grad.empty(); }
std::span<const double> Tensor::grad() const { return node().grad; }

void Tensor::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  return from(shape(), node().data, false);
}

// ---- backward -------------------------------------------------------------

std::vector<Tensor> backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractViolation("backward: loss must be a scalar, got shape " +
                            shape_str(loss.shape()));
  }
  const auto& root = loss.node_;
  if (!root->requires_grad) return {};

  // Iterative post-order DFS -> topological order (parents before children).
  std::vector<Node*> order;
  std::vector<Tensor> leaves;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  if (root->is_leaf()) leaves.push_back(loss);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const auto& p = node->parents[next++];
      if (p->requires_grad && visited.insert(p.get()).second) {
        if (p->is_leaf()) leaves.push_back(Tensor(p));
        stack.emplace_back(p.get(), 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->is_leaf()) {
      n->grad_buffer();
    } else {
      n->grad.assign(n->data.size(), 0.0);
    }
  }
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf() || !n->backward) continue;
    n->backward(*n);
    for (auto& p : n->parents) {
      if (p->requires_grad && has_nan(p->grad)) {
        throw NumericError(n->op, "NaN gradient produced during backward");
      }
    }
  }
  return leaves;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x0, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("finite_diff_check: eps must be > 0");
  const std::vector<double> base(x0.data().begin(), x0.data().end());
  Tensor x = Tensor::from(x0.shape(), base, true);
  Tensor y = f(x);
  if (!std::isfinite(y.item())) {
    throw NumericError("finite_diff_check", "f returned a non-finite value");
  }
  backward(y);
  std::vector<double> analytic(base.size(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  auto eval_at = [&](std::size_t i, double delta) {
    std::vector<double> v = base;
    v[i] += delta;
    const double out = f(Tensor::from(x0.shape(), std::move(v))).item();
    if (std::isnan(out)) {
      throw NumericError("finite_diff_check", "f returned NaN");
    }
    return out;
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double central = (eval_at(i, eps) - eval_at(i, -eps)) / (2.0 * eps);
    const double err =
        std::abs(analytic[i] - central) / std::max(1e-12, std::abs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = parent_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    const auto& x = parent_data(self, 0);
    const auto& y = parent_data(self, 1);
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return Tensor::make(a.shape(), std::move(out), "scale", {a},
                      [factor](Node& self) {
                        auto* g = parent_grad(self, 0);
                        for (std::size_t i = 0; i < g->size(); ++i) {
                          (*g)[i] += self.grad[i] * factor;
                        }
                      });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  require_rank2(a, "add_rowwise");
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.numel() != c) {
    throw ContractViolation("add_rowwise: bias has " +
                            std::to_string(bias.numel()) + " values for " +
                            std::to_string(c) + " columns");
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  }
  return Tensor::make(a.shape(), std::move(out), "add_rowwise", {a, bias},
                      [r, c](Node& self) {
                        if (auto* g = parent_grad(self, 0)) {
                          for (std::size_t i = 0; i < g->size(); ++i) {
                            (*g)[i] += self.grad[i];
                          }
                        }
                        if (auto* g = parent_grad(self, 1)) {
                          for (std::size_t i = 0; i < r; ++i) {
                            for (std::size_t j = 0; j < c; ++j) {
                              (*g)[j] += self.grad[i * c + j];
                            }
                          }
                        }
                      });
}

Tensor scalar_mul(const Tensor& s, const Tensor& a) {
  if (s.numel() != 1) throw ContractViolation("scalar_mul: s must be a scalar");
  const double k = s.item();
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x[i];
  return Tensor::make(a.shape(), std::move(out), "scalar_mul", {s, a},
                      [](Node& self) {
                        const double k = parent_data(self, 0)[0];
                        const auto& x = parent_data(self, 1);
                        if (auto* g = parent_grad(self, 0)) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < x.size(); ++i) {
                            acc += self.grad[i] * x[i];
                          }
                          (*g)[0] += acc;
                        }
                        if (auto* g = parent_grad(self, 1)) {
                          for (std::size_t i = 0; i < x.size(); ++i) {
                            (*g)[i] += k * self.grad[i];
                          }
                        }
                      });
}

// ---- matrix products ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ContractViolation("matmul: inner dimensions differ " +
                            shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* x = a.data().data();
  const double* y = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v = x[i * k + p];
      const double* brow = y + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += v * brow[j];
    }
  }
  return Tensor::make({m, n}, std::move(out), "matmul", {a, b},
                      [m, k, n](Node& self) {
                        const double* x = parent_data(self, 0).data();
                        const double* y = parent_data(self, 1).data();
                        const double* go = self.grad.data();
                        if (auto* ga = parent_grad(self, 0)) {
                          for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t p = 0; p < k; ++p) {
                              double acc = 0.0;
                              const double* brow = y + p * n;
                              const double* grow = go + i * n;
                              for (std::size_t j = 0; j < n; ++j) {
                                acc += grow[j] * brow[j];
                              }
                              (*ga)[i * k + p] += acc;
                            }
                          }
                        }
                        if (auto* gb = parent_grad(self, 1)) {
                          for (std::size_t i = 0; i < m; ++i) {
                            const double* grow = go + i * n;
                            for (std::size_t p = 0; p < k; ++p) {
                              const double v = x[i * k + p];
                              double* dst = gb->data() + p * n;
                              for (std::size_t j = 0; j < n; ++j) {
                                dst[j] += v * grow[j];
                              }
                            }
                          }
                        }
                      });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_bt");
  require_rank2(b, "matmul_bt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ContractViolation("matmul_bt: inner dimensions differ " +
                            shape_str(a.shape()) + " x " +
                            shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  const double* x = a.data().data();
  const double* y = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += x[i * k + p] * y[j * k + p];
      out[i * n + j] = acc;
    }
  }
  return Tensor::make({m, n}, std::move(out), "matmul_bt", {a, b},
                      [m, k, n](Node& self) {
                        const double* x = parent_data(self, 0).data();
                        const double* y = parent_data(self, 1).data();
                        const double* go = self.grad.data();
                        if (auto* ga = parent_grad(self, 0)) {
                          for (std::size_t i = 0; i < m; ++i) {
                            double* dst = ga->data() + i * k;
                            for (std::size_t j = 0; j < n; ++j) {
                              const double g = go[i * n + j];
                              const double* brow = y + j * k;
                              for (std::size_t p = 0; p < k; ++p) {
                                dst[p] += g * brow[p];
                              }
                            }
                          }
                        }
                        if (auto* gb = parent_grad(self, 1)) {
                          for (std::size_t i = 0; i < m; ++i) {
                            const double* arow = x + i * k;
                            for (std::size_t j = 0; j < n; ++j) {
                              const double g = go[i * n + j];
                              double* dst = gb->data() + j * k;
                              for (std::size_t p = 0; p < k; ++p) {
                                dst[p] += g * arow[p];
                              }
                            }
                          }
                        }
                      });
}

// ---- pointwise nonlinearities --------------------------------------------

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, "gelu",
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
      },
      [](double x, double) {
        const double u = kGeluC * (x + kGeluA * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

// ---- normalizations -------------------------------------------------------

Tensor softmax_rows(const Tensor& a, std::size_t valid_cols) {
  require_rank2(a, "softmax_rows");
  const std::size_t r = a.rows(), c = a.cols();
  const std::size_t v = valid_cols == 0 ? c : valid_cols;
  if (v > c) throw ContractViolation("softmax_rows: valid_cols > cols");
  std::vector<double> out(r * c, 0.0);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    double m = row[0];
    for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      out[i * c + j] = std::exp(row[j] - m);
      s += out[i * c + j];
    }
    for (std::size_t j = 0; j < v; ++j) out[i * c + j] /= s;
  }
  return Tensor::make(a.shape(), std::move(out), "softmax_rows", {a},
                      [r, c, v](Node& self) {
                        auto* g = parent_grad(self, 0);
                        const auto& y = self.data;
                        for (std::size_t i = 0; i < r; ++i) {
                          double dot = 0.0;
                          for (std::size_t j = 0; j < v; ++j) {
                            dot += y[i * c + j] * self.grad[i * c + j];
                          }
                          for (std::size_t j = 0; j < v; ++j) {
                            (*g)[i * c + j] +=
                                y[i * c + j] * (self.grad[i * c + j] - dot);
                          }
                        }
                      });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank2(a, "log_softmax_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return Tensor::make(a.shape(), std::move(out), "log_softmax_rows", {a},
                      [r, c](Node& self) {
                        auto* g = parent_grad(self, 0);
                        const auto& y = self.data;
                        for (std::size_t i = 0; i < r; ++i) {
                          double gsum = 0.0;
                          for (std::size_t j = 0; j < c; ++j) {
                            gsum += self.grad[i * c + j];
                          }
                          for (std::size_t j = 0; j < c; ++j) {
                            (*g)[i * c + j] += self.grad[i * c + j] -
                                               std::exp(y[i * c + j]) * gsum;
                          }
                        }
                      });
}

Tensor layer_norm(const Tensor& x, const Tensor& scale_t, const Tensor& shift,
                  double eps) {
  require_rank2(x, "layer_norm");
  if (!(eps > 0.0)) throw ContractViolation("layer_norm: eps must be > 0");
  const std::size_t r = x.rows(), c = x.cols();
  if (scale_t.numel() != c || shift.numel() != c) {
    throw ContractViolation("layer_norm: affine parameters need " +
                            std::to_string(c) + " values");
  }
  std::vector<double> xhat(r * c), inv_std(r), out(r * c);
  auto in = x.data(), g = scale_t.data(), b = shift.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * g[j] + b[j];
    }
  }
  return Tensor::make(
      x.shape(), std::move(out), "layer_norm", {x, scale_t, shift},
      [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gamma = parent_data(self, 1);
        const double* go = self.grad.data();
        if (auto* gx = parent_grad(self, 0)) {
          std::vector<double> dxhat(c);
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              dxhat[j] = go[i * c + j] * gamma[j];
              m1 += dxhat[j];
              m2 += dxhat[j] * xhat[i * c + j];
            }
            m1 /= static_cast<double>(c);
            m2 /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
              (*gx)[i * c + j] +=
                  inv_std[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
            }
          }
        }
        if (auto* gg = parent_grad(self, 1)) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              (*gg)[j] += go[i * c + j] * xhat[i * c + j];
            }
          }
        }
        if (auto* gb = parent_grad(self, 2)) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) (*gb)[j] += go[i * c + j];
          }
        }
      });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make({1}, {s}, "sum", {a}, [](Node& self) {
    auto* g = parent_grad(self, 0);
    for (double& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractViolation("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_rows(const Tensor& a, std::size_t n) {
  require_rank2(a, "mean_rows");
  const std::size_t c = a.cols();
  if (n == 0 || n > a.rows()) {
    throw ContractViolation("mean_rows: row count " + std::to_string(n) +
                            " out of range");
  }
  std::vector<double> out(c, 0.0);
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= inv;
  return Tensor::make({1, c}, std::move(out), "mean_rows", {a},
                      [n, c, inv](Node& self) {
                        auto* g = parent_grad(self, 0);
                        for (std::size_t i = 0; i < n; ++i) {
                          for (std::size_t j = 0; j < c; ++j) {
                            (*g)[i * c + j] += self.grad[j] * inv;
                          }
                        }
                      });
}

// ---- shape manipulation ---------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ContractViolation("reshape: " + shape_str(a.shape()) + " -> " +
                            shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make(std::move(shape), std::move(out), "reshape", {a},
                      [](Node& self) {
                        auto* g = parent_grad(self, 0);
                        for (std::size_t i = 0; i < g->size(); ++i) {
                          (*g)[i] += self.grad[i];
                        }
                      });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2(a, "slice_rows");
  const std::size_t c = a.cols();
  if (start + count > a.rows()) {
    throw ContractViolation("slice_rows: range out of bounds");
  }
  auto x = a.data();
  std::vector<double> out(x.begin() + static_cast<std::ptrdiff_t>(start * c),
                          x.begin() + static_cast<std::ptrdiff_t>((start + count) * c));
  return Tensor::make({count, c}, std::move(out), "slice_rows", {a},
                      [start, c](Node& self) {
                        auto* g = parent_grad(self, 0);
                        for (std::size_t i = 0; i < self.grad.size(); ++i) {
                          (*g)[start * c + i] += self.grad[i];
                        }
                      });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2(a, "slice_cols");
  const std::size_t r = a.rows(), c = a.cols();
  if (start + count > c) throw ContractViolation("slice_cols: range out of bounds");
  std::vector<double> out(r * count);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      out[i * count + j] = x[i * c + start + j];
    }
  }
  return Tensor::make({r, count}, std::move(out), "slice_cols", {a},
                      [r, c, start, count](Node& self) {
                        auto* g = parent_grad(self, 0);
                        for (std::size_t i = 0; i < r; ++i) {
                          for (std::size_t j = 0; j < count; ++j) {
                            (*g)[i * c + start + j] += self.grad[i * count + j];
                          }
                        }
                      });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != r) throw ContractViolation("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto x = parts[k].data();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < widths[k]; ++j) {
        out[i * total + offset + j] = x[i * widths[k] + j];
      }
    }
    offset += widths[k];
  }
  return Tensor::make({r, total}, std::move(out), "concat_cols", parts,
                      [r, total, widths](Node& self) {
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < widths.size(); ++k) {
                          if (auto* g = parent_grad(self, k)) {
                            for (std::size_t i = 0; i < r; ++i) {
                              for (std::size_t j = 0; j < widths[k]; ++j) {
                                (*g)[i * widths[k] + j] +=
                                    self.grad[i * total + offset + j];
                              }
                            }
                          }
                          offset += widths[k];
                        }
                      });
}

Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.numel()) throw ContractViolation("pick: index out of range");
  return Tensor::make({1}, {a.data()[index]}, "pick", {a},
                      [index](Node& self) {
                        (*parent_grad(self, 0))[index] += self.grad[0];
                      });
}

Tensor straight_through(const Tensor& a, std::size_t index, double value) {
  if (index >= a.numel()) {
    throw ContractViolation("straight_through: index out of range");
  }
  return Tensor::make({1}, {value}, "straight_through", {a},
                      [index, value](Node& self) {
                        if (value != 0.0) {
                          (*parent_grad(self, 0))[index] += self.grad[0];
                        }
                      });
}

// ---- convolution / pooling ------------------------------------------------

Tensor conv1d_same(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_rank2(x, "conv1d_same");
  if (kernel.rank() != 3) {
    throw ContractViolation("conv1d_same: kernel must be C x D x W, got " +
                            shape_str(kernel.shape()));
  }
  const std::size_t t_len = x.rows(), d = x.cols();
  const std::size_t c = kernel.dim(0), w = kernel.dim(2);
  if (kernel.dim(1) != d) {
    throw ContractViolation("conv1d_same: kernel input channels " +
                            std::to_string(kernel.dim(1)) + " != " +
                            std::to_string(d));
  }
  if (w % 2 == 0) {
    throw ConfigError("conv1d_same: kernel width must be odd, got " +
                      std::to_string(w));
  }
  if (bias.numel() != c) throw ContractViolation("conv1d_same: bias size");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(w / 2);
  std::vector<double> out(t_len * c);
  auto xs = x.data(), ks = kernel.data(), bs = bias.data();
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t oc = 0; oc < c; ++oc) {
      double acc = bs[oc];
      for (std::size_t o = 0; o < w; ++o) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + o) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
        const double* xrow = xs.data() + static_cast<std::size_t>(src) * d;
        for (std::size_t i = 0; i < d; ++i) {
          acc += ks[(oc * d + i) * w + o] * xrow[i];
        }
      }
      out[t * c + oc] = acc;
    }
  }
  return Tensor::make(
      {t_len, c}, std::move(out), "conv1d_same", {x, kernel, bias},
      [t_len, d, c, w, pad](Node& self) {
        const auto& xs = parent_data(self, 0);
        const auto& ks = parent_data(self, 1);
        auto* gx = parent_grad(self, 0);
        auto* gk = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        for (std::size_t t = 0; t < t_len; ++t) {
          for (std::size_t oc = 0; oc < c; ++oc) {
            const double g = self.grad[t * c + oc];
            if (gb) (*gb)[oc] += g;
            for (std::size_t o = 0; o < w; ++o) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + o) - pad;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
              const std::size_t s = static_cast<std::size_t>(src);
              for (std::size_t i = 0; i < d; ++i) {
                const std::size_t ki = (oc * d + i) * w + o;
                if (gx) (*gx)[s * d + i] += g * ks[ki];
                if (gk) (*gk)[ki] += g * xs[s * d + i];
              }
            }
          }
        }
      });
}

Tensor adaptive_avg_pool1d(const Tensor& x, std::size_t out_len) {
  require_rank2(x, "adaptive_avg_pool1d");
  const std::size_t t_len = x.rows(), c = x.cols();
  if (t_len == 0 || out_len == 0) {
    throw ContractViolation("adaptive_avg_pool1d: lengths must be >= 1");
  }
  std::vector<std::pair<std::size_t, std::size_t>> bins(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t lo = (i * t_len) / out_len;
    const std::size_t hi = ((i + 1) * t_len + out_len - 1) / out_len;
    bins[i] = {lo, hi};
  }
  std::vector<double> out(out_len * c, 0.0);
  auto xs = x.data();
  for (std::size_t i = 0; i < out_len; ++i) {
    const auto [lo, hi] = bins[i];
    for (std::size_t t = lo; t < hi; ++t) {
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += xs[t * c + j];
    }
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= inv;
  }
  return Tensor::make({out_len, c}, std::move(out), "adaptive_avg_pool1d", {x},
                      [c, bins](Node& self) {
                        auto* g = parent_grad(self, 0);
                        for (std::size_t i = 0; i < bins.size(); ++i) {
                          const auto [lo, hi] = bins[i];
                          const double inv = 1.0 / static_cast<double>(hi - lo);
                          for (std::size_t t = lo; t < hi; ++t) {
                            for (std::size_t j = 0; j < c; ++j) {
                              (*g)[t * c + j] += self.grad[i * c + j] * inv;
                            }
                          }
                        }
                      });
}

}  // namespace idld
