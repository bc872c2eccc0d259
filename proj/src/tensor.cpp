#include "of3d/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace of3d {

using detail::Node;

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_mode = true;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value,
                                bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string(op) + ": non-finite output");
    }
  }
}

// Builds the output tensor and records a backward rule when any input is on
// the tape.
Tensor record(const char* op, Shape shape, std::vector<double> value,
              std::initializer_list<const Tensor*> inputs,
              std::function<void(Node&)> backward) {
  check_finite(value, op);
  bool needs_grad = false;
  if (t_grad_mode) {
    for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
  }
  auto node = make_node(std::move(shape), std::move(value), needs_grad);
  if (needs_grad) {
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor record_many(const char* op, Shape shape, std::vector<double> value,
                   std::span<const Tensor> inputs,
                   std::function<void(Node&)> backward) {
  check_finite(value, op);
  bool needs_grad = false;
  if (t_grad_mode) {
    for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  auto node = make_node(std::move(shape), std::move(value), needs_grad);
  if (needs_grad) {
    for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Decomposes a tensor into `groups` runs of `length` elements spaced `stride`
// apart, for reductions along one axis.
struct AxisLayout {
  std::size_t groups;
  std::size_t length;
  std::size_t stride;
  std::size_t base(std::size_t g) const {
    return stride == 1 ? g * length : g;
  }
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis, const char* op) {
  if (shape.size() == 1 && axis == 0) return {1, shape[0], 1};
  if (shape.size() == 2 && axis == 1) return {shape[0], shape[1], 1};
  if (shape.size() == 2 && axis == 0) return {shape[1], shape[0], shape[1]};
  throw DimensionError(std::string(op) + ": invalid axis " +
                       std::to_string(axis) + " for shape " +
                       shape_string(shape));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) {
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_string(shape));
    }
  }
  if (shape.empty() || data.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
  }
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (node_->backward) {
    throw std::logic_error("mutable_data on a recorded interior tensor");
  }
  return node_->value;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_->backward; }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  return Tensor(make_node(node_->shape, node_->value, false));
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(make_node(node_->shape, node_->value, requires_grad));
}

std::size_t Tensor::backward() const {
  if (!node_ || numel() != 1) {
    throw std::logic_error("backward requires a scalar tensor, got " +
                           (node_ ? shape_string(shape()) : "undefined"));
  }
  if (!node_->requires_grad) return 0;

  std::vector<Node*> tape;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    tape.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) {
        stack.push_back(in.get());
      }
    }
  }
  std::sort(tape.begin(), tape.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  for (Node* n : tape) {
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (Node* n : tape) {
    if (n->backward) n->backward(*n);
  }
  return tape.size();
}

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }
bool grad_mode_enabled() { return t_grad_mode; }

// ---- arithmetic -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return record("matmul", {m, n}, std::move(out), {&a, &b},
                [m, k, n](Node& self) {
                  const auto& dc = self.grad;
                  Node& na = *self.inputs[0];
                  Node& nb = *self.inputs[1];
                  if (na.requires_grad) {
                    auto& da = na.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                          acc += dc[i * n + j] * nb.value[p * n + j];
                        da[i * k + p] += acc;
                      }
                  }
                  if (nb.requires_grad) {
                    auto& db = nb.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double s = na.value[i * k + p];
                        for (std::size_t j = 0; j < n; ++j)
                          db[p * n + j] += s * dc[i * n + j];
                      }
                  }
                });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree: " +
                         shape_string(a.shape()) + " · " +
                         shape_string(b.shape()) + "ᵀ");
  }
  std::vector<double> out(m * n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = acc;
    }
  return record("matmul_nt", {m, n}, std::move(out), {&a, &b},
                [m, k, n](Node& self) {
                  const auto& dc = self.grad;
                  Node& na = *self.inputs[0];
                  Node& nb = *self.inputs[1];
                  if (na.requires_grad) {
                    auto& da = na.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        const double g = dc[i * n + j];
                        for (std::size_t p = 0; p < k; ++p)
                          da[i * k + p] += g * nb.value[j * k + p];
                      }
                  }
                  if (nb.requires_grad) {
                    auto& db = nb.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) {
                        const double g = dc[i * n + j];
                        for (std::size_t p = 0; p < k; ++p)
                          db[j * k + p] += g * na.value[i * k + p];
                      }
                  }
                });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto av = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return record("transpose", {n, m}, std::move(out), {&a}, [m, n](Node& self) {
    auto& da = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += self.grad[j * m + i];
  });
}

Tensor sparse_matmul(const SparseMatrix& a, const Tensor& x) {
  require_rank2(x, "sparse_matmul");
  if (x.rows() != a.cols || a.row_offsets.size() != a.rows + 1) {
    throw DimensionError("sparse_matmul: [" + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + "] · " +
                         shape_string(x.shape()));
  }
  const std::size_t c = x.cols();
  std::vector<double> out(a.rows * c, 0.0);
  const auto xv = x.data();
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t e = a.row_offsets[r]; e < a.row_offsets[r + 1]; ++e) {
      const double w = a.values[e];
      const double* src = &xv[a.col_index[e] * c];
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] += w * src[j];
    }
  std::shared_ptr<const SparseMatrix> held;
  if (grad_mode_enabled() && x.requires_grad()) {
    held = std::make_shared<SparseMatrix>(a);
  }
  return record("sparse_matmul", {a.rows, c}, std::move(out), {&x},
                [held, c](Node& self) {
                  auto& dx = self.inputs[0]->grad_buffer();
                  const SparseMatrix& m = *held;
                  for (std::size_t r = 0; r < m.rows; ++r)
                    for (std::size_t e = m.row_offsets[r];
                         e < m.row_offsets[r + 1]; ++e) {
                      const double w = m.values[e];
                      double* dst = &dx[m.col_index[e] * c];
                      for (std::size_t j = 0; j < c; ++j)
                        dst[j] += w * self.grad[r * c + j];
                    }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return record("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& d = in->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return record("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& d = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& d = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return record("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& d = na.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& d = nb.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * na.value[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank2(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.numel() != n) {
    throw DimensionError("add_row: " + shape_string(a.shape()) + " + " +
                         shape_string(row.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto rv = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  return record("add_row", a.shape(), std::move(out), {&a, &row},
                [m, n](Node& self) {
                  if (self.inputs[0]->requires_grad) {
                    auto& d = self.inputs[0]->grad_buffer();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
                  }
                  if (self.inputs[1]->requires_grad) {
                    auto& d = self.inputs[1]->grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j)
                        d[j] += self.grad[i * n + j];
                  }
                });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return record("scale", a.shape(), std::move(out), {&a}, [factor](Node& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v += value;
  return record("add_scalar", a.shape(), std::move(out), {&a}, [](Node& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

// ---- nonlinearities -------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  return record("sigmoid", x.shape(), std::move(out), {&x}, [](Node& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double y = self.value[i];
      d[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor silu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * stable_sigmoid(xv[i]);
  return record("silu", x.shape(), std::move(out), {&x}, [](Node& self) {
    Node& in = *self.inputs[0];
    auto& d = in.grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double s = stable_sigmoid(in.value[i]);
      d[i] += self.grad[i] * (s + in.value[i] * s * (1.0 - s));
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisLayout layout = axis_layout(x.shape(), axis, "softmax");
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t g = 0; g < layout.groups; ++g) {
    const std::size_t base = layout.base(g);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < layout.length; ++t)
      top = std::max(top, xv[base + t * layout.stride]);
    double total = 0.0;
    for (std::size_t t = 0; t < layout.length; ++t) {
      const std::size_t idx = base + t * layout.stride;
      out[idx] = std::exp(xv[idx] - top);
      total += out[idx];
    }
    for (std::size_t t = 0; t < layout.length; ++t)
      out[base + t * layout.stride] /= total;
  }
  return record("softmax", x.shape(), std::move(out), {&x},
                [layout](Node& self) {
                  auto& d = self.inputs[0]->grad_buffer();
                  for (std::size_t g = 0; g < layout.groups; ++g) {
                    const std::size_t base = layout.base(g);
                    double dot = 0.0;
                    for (std::size_t t = 0; t < layout.length; ++t) {
                      const std::size_t idx = base + t * layout.stride;
                      dot += self.grad[idx] * self.value[idx];
                    }
                    for (std::size_t t = 0; t < layout.length; ++t) {
                      const std::size_t idx = base + t * layout.stride;
                      d[idx] += self.value[idx] * (self.grad[idx] - dot);
                    }
                  }
                });
}

Tensor log_softmax(const Tensor& x) {
  const AxisLayout layout = axis_layout(x.shape(), x.rank() - 1, "log_softmax");
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t g = 0; g < layout.groups; ++g) {
    const std::size_t base = layout.base(g);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < layout.length; ++t) top = std::max(top, xv[base + t]);
    double total = 0.0;
    for (std::size_t t = 0; t < layout.length; ++t) total += std::exp(xv[base + t] - top);
    const double lse = top + std::log(total);
    for (std::size_t t = 0; t < layout.length; ++t) out[base + t] = xv[base + t] - lse;
  }
  return record("log_softmax", x.shape(), std::move(out), {&x},
                [layout](Node& self) {
                  auto& d = self.inputs[0]->grad_buffer();
                  for (std::size_t g = 0; g < layout.groups; ++g) {
                    const std::size_t base = layout.base(g);
                    double total = 0.0;
                    for (std::size_t t = 0; t < layout.length; ++t)
                      total += self.grad[base + t];
                    for (std::size_t t = 0; t < layout.length; ++t)
                      d[base + t] += self.grad[base + t] -
                                     std::exp(self.value[base + t]) * total;
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be > 0");
  const AxisLayout layout = axis_layout(x.shape(), x.rank() - 1, "layer_norm");
  const std::size_t rows = layout.groups, n = layout.length;
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) +
                         ", gain " + shape_string(gain.shape()) + ", bias " +
                         shape_string(bias.shape()));
  }
  std::vector<double> normalized(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * n];
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * inv_std[r];
      normalized[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return record(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [rows, n, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        if (ng.requires_grad) {
          auto& dg = ng.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j)
              dg[j] += self.grad[r * n + j] * normalized[r * n + j];
        }
        if (nb.requires_grad) {
          auto& db = nb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) db[j] += self.grad[r * n + j];
        }
        if (nx.requires_grad) {
          auto& dx = nx.grad_buffer();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = self.grad[r * n + j] * ng.value[j];
              mean_dh += dh;
              mean_dh_h += dh * normalized[r * n + j];
            }
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = self.grad[r * n + j] * ng.value[j];
              dx[r * n + j] += inv_std[r] * (dh - mean_dh -
                                             normalized[r * n + j] * mean_dh_h);
            }
          }
        }
      });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return record("sum", {1}, {total}, {&x}, [](Node& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (double& v : d) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---- indexing -------------------------------------------------------------

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "gather_rows");
  const std::size_t n = x.cols();
  if (rows.empty()) throw DimensionError("gather_rows: empty selection");
  std::vector<double> out(rows.size() * n);
  const auto xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) +
                           " out of range for " + shape_string(x.shape()));
    }
    std::copy_n(&xv[rows[i] * n], n, &out[i * n]);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record("gather_rows", {rows.size(), n}, std::move(out), {&x},
                [idx = std::move(idx), n](Node& self) {
                  auto& d = self.inputs[0]->grad_buffer();
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < n; ++j)
                      d[idx[i] * n + j] += self.grad[i * n + j];
                });
}

Tensor gather_cols(const Tensor& x, std::span<const std::size_t> cols) {
  require_rank2(x, "gather_cols");
  const std::size_t m = x.rows(), n = x.cols(), k = cols.size();
  if (cols.empty()) throw DimensionError("gather_cols: empty selection");
  for (std::size_t c : cols) {
    if (c >= n) {
      throw DimensionError("gather_cols: column " + std::to_string(c) +
                           " out of range for " + shape_string(x.shape()));
    }
  }
  std::vector<double> out(m * k);
  const auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = xv[i * n + cols[j]];
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return record("gather_cols", {m, k}, std::move(out), {&x},
                [idx = std::move(idx), m, n, k](Node& self) {
                  auto& d = self.inputs[0]->grad_buffer();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                      d[i * n + idx[j]] += self.grad[i * k + j];
                });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") of " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  const auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(&xv[i * n + begin], w, &out[i * w]);
  return record("slice_cols", {m, w}, std::move(out), {&x},
                [m, n, w, begin](Node& self) {
                  auto& d = self.inputs[0]->grad_buffer();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                      d[i * n + begin + j] += self.grad[i * w + j];
                });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_rows");
  require_rank2(b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t split = a.numel();
  return record("concat_rows", {a.rows() + b.rows(), a.cols()}, std::move(out),
                {&a, &b}, [split](Node& self) {
                  if (self.inputs[0]->requires_grad) {
                    auto& d = self.inputs[0]->grad_buffer();
                    for (std::size_t i = 0; i < split; ++i) d[i] += self.grad[i];
                  }
                  if (self.inputs[1]->requires_grad) {
                    auto& d = self.inputs[1]->grad_buffer();
                    for (std::size_t i = 0; i < d.size(); ++i)
                      d[i] += self.grad[split + i];
                  }
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts differ: " +
                           shape_string(parts[0].shape()) + " and " +
                           shape_string(p.shape()));
    }
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(&pv[i * w], w, &out[i * total + offsets[k]]);
  }
  return record_many("concat_cols", {m, total}, std::move(out), parts,
                     [m, total, offsets = std::move(offsets)](Node& self) {
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         Node& in = *self.inputs[k];
                         if (!in.requires_grad) continue;
                         const std::size_t w = in.shape[1];
                         auto& d = in.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < w; ++j)
                             d[i * w + j] += self.grad[i * total + offsets[k] + j];
                       }
                     });
}

// ---- fused losses ---------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank2(logits, "cross_entropy");
  const std::size_t k = logits.rows(), t = logits.cols();
  if (targets.size() != k) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  }
  std::vector<double> probs(k * t);
  double total = 0.0;
  const auto lv = logits.data();
  for (std::size_t i = 0; i < k; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= t) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) +
                           " out of range [0, " + std::to_string(t) + ")");
    }
    const double* row = &lv[i * t];
    const double top = *std::max_element(row, row + t);
    double z = 0.0;
    for (std::size_t j = 0; j < t; ++j) z += std::exp(row[j] - top);
    const double lse = top + std::log(z);
    for (std::size_t j = 0; j < t; ++j) probs[i * t + j] = std::exp(row[j] - lse);
    total += lse - row[targets[i]];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return record("cross_entropy", {1}, {total / static_cast<double>(k)},
                {&logits},
                [k, t, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                  auto& d = self.inputs[0]->grad_buffer();
                  const double g = self.grad[0] / static_cast<double>(k);
                  for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < t; ++j) {
                      const double onehot = static_cast<int>(j) == tgt[i] ? 1.0 : 0.0;
                      d[i * t + j] += g * (probs[i * t + j] - onehot);
                    }
                });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  const std::size_t n = logits.numel();
  const auto xv = logits.data();
  const auto tv = targets.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = xv[i];
    total += std::max(x, 0.0) - x * tv[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return record("bce_with_logits", {1}, {total / static_cast<double>(n)},
                {&logits, &targets}, [n](Node& self) {
                  Node& nx = *self.inputs[0];
                  Node& nt = *self.inputs[1];
                  const double g = self.grad[0] / static_cast<double>(n);
                  if (nx.requires_grad) {
                    auto& d = nx.grad_buffer();
                    for (std::size_t i = 0; i < n; ++i)
                      d[i] += g * (stable_sigmoid(nx.value[i]) - nt.value[i]);
                  }
                  if (nt.requires_grad) {
                    auto& d = nt.grad_buffer();
                    for (std::size_t i = 0; i < n; ++i) d[i] -= g * nx.value[i];
                  }
                });
}

Tensor dice_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "dice_with_logits");
  require_rank2(logits, "dice_with_logits");
  const std::size_t m = logits.rows(), k = logits.cols();
  const auto xv = logits.data();
  const auto tv = targets.data();
  std::vector<double> probs(m * k);
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = stable_sigmoid(xv[i]);
  std::vector<double> inter(k, 0.0), denom(k, 1.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double p = probs[i * k + j], t = tv[i * k + j];
      inter[j] += p * t;
      denom[j] += p + t;
    }
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) total += 1.0 - 2.0 * (inter[j] + 1.0) / denom[j];
  return record(
      "dice_with_logits", {1}, {total / static_cast<double>(k)},
      {&logits, &targets},
      [m, k, probs = std::move(probs), inter = std::move(inter),
       denom = std::move(denom)](Node& self) {
        if (!self.inputs[0]->requires_grad) return;
        auto& d = self.inputs[0]->grad_buffer();
        const Node& nt = *self.inputs[1];
        const double g = self.grad[0] / static_cast<double>(k);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double p = probs[i * k + j];
            const double t = nt.value[i * k + j];
            const double dp =
                -2.0 * (t * denom[j] - (inter[j] + 1.0)) / (denom[j] * denom[j]);
            d[i * k + j] += g * dp * p * (1.0 - p);
          }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row(matmul(x, weight), bias);
}

// ---- gradient checking ----------------------------------------------------

GradCheckResult check_gradients(const ScalarFunction& f,
                                std::span<const Tensor> point,
                                const GradCheckOptions& options) {
  std::vector<Tensor> leaves;
  leaves.reserve(point.size());
  for (const Tensor& t : point) leaves.push_back(t.clone(true));

  f(leaves).backward();
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : leaves) {
    const auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }

  NoGradGuard no_grad;
  auto eval_at = [&](std::size_t input, std::size_t coord, double offset) {
    auto data = leaves[input].mutable_data();
    const double original = data[coord];
    data[coord] = original + offset;
    const double value = f(leaves).item();
    data[coord] = original;
    return value;
  };

  GradCheckResult result;
  const double h = options.step;
  for (std::size_t input = 0; input < leaves.size(); ++input) {
    std::vector<std::size_t> coords;
    if (input < options.coordinates.size() && !options.coordinates[input].empty()) {
      coords = options.coordinates[input];
    } else {
      coords.resize(leaves[input].numel());
      std::iota(coords.begin(), coords.end(), 0);
    }
    for (std::size_t c : coords) {
      double numeric;
      if (options.order == 4) {
        numeric = (-eval_at(input, c, 2 * h) + 8 * eval_at(input, c, h) -
                   8 * eval_at(input, c, -h) + eval_at(input, c, -2 * h)) /
                  (12 * h);
      } else {
        numeric = (eval_at(input, c, h) - eval_at(input, c, -h)) / (2 * h);
      }
      const double a = analytic[input][c];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (result.checked == 0 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.input = input;
        result.coordinate = c;
        result.analytic = a;
        result.numeric = numeric;
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace of3d
