#pragma once

// Dense double-precision tensors with a dynamic reverse-mode tape.
//
// Every operation that touches a tensor requiring gradients records a node
// holding references to its inputs and a backward rule. Nodes carry a
// monotonically increasing sequence number, so ordering reachable nodes by
// that number yields the tape in topological order. The tape is rebuilt on
// every forward pass; nothing is retained once the last handle goes away.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace of3d {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the node receives a gradient
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Rank-2 accessors; throw DimensionError for other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Writable view for leaf tensors (parameters, finite-difference probes).
  std::span<double> mutable_data();
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  // Zero-length span until backward reaches this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  // Runs reverse accumulation from this scalar. Leaf gradients accumulate
  // across calls; interior gradients are recomputed per call. Returns the
  // number of tape nodes visited.
  std::size_t backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Constant sparse matrix in CSR layout, used for neighborhood aggregation and
// segment pooling.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_offsets;  // size rows + 1
  std::vector<std::size_t> col_index;
  std::vector<double> values;
};

// ---- arithmetic -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor sparse_matmul(const SparseMatrix& a, const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Adds a 1×n row to every row of an m×n matrix.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// ---- nonlinearities -------------------------------------------------------

Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x);  // over the last axis of a matrix
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- indexing -------------------------------------------------------------

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor gather_cols(const Tensor& x, std::span<const std::size_t> cols);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(std::span<const Tensor> parts);

// ---- fused losses ---------------------------------------------------------

// Mean softmax cross-entropy of a K×T matrix of logits against integer targets.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
// Mean over columns of 1 - 2(p·t + 1)/(|p| + |t| + 1), with p = sigmoid(logits).
Tensor dice_with_logits(const Tensor& logits, const Tensor& targets);

// y = x·W + b, W stored as in×out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- gradient checking ----------------------------------------------------

struct GradCheckOptions {
  double step = 1e-6;
  // 2: (f(x+h) - f(x-h)) / 2h. 4: five-point stencil.
  int order = 2;
  // Restrict the comparison to these flat coordinates per input (empty = all).
  std::vector<std::vector<std::size_t>> coordinates;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t input = 0;
  std::size_t coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

// Compares backward() against central differences at `point`. Relative error
// uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckResult check_gradients(const ScalarFunction& f,
                                std::span<const Tensor> point,
                                const GradCheckOptions& options = {});

}  // namespace of3d
