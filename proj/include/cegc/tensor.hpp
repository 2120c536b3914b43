#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cegc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One node of the reverse-mode graph. Values are stored in 64-bit; see
/// quantize_to_float() for how parameters keep 32-bit precision.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad();
};

/// Dense row-major tensor handle. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(int axis) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  const std::string& op() const { return node_->op; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Thread-local switch; when disabled no op records parents.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds a result node. When any parent requires grad (and grad mode is on)
/// the node is wired into the graph with `backward`.
Tensor make_result(Shape shape, std::vector<double> value, std::string op,
                   std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

/// Nodes reachable from `root` that require grad, in topological order
/// (parents before children). Each node appears once.
std::vector<Node*> build_tape(const Tensor& root);

/// Reverse-mode sweep. `loss` must hold exactly one element.
void backward(const Tensor& loss);

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
/// Clamp; gradient passes only where the input lies strictly inside.
Tensor clamp(const Tensor& a, double lo, double hi);

// ----------------------------------------------------------------- structure

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor transpose(const Tensor& a);  // rank-2 only
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Rows of `a` along axis 0 selected by `index`; output shape [index.size(), ...].
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// out[..., k] = a[..., index[..., k]]; `index_shape` matches a except possibly
/// in the last axis.
Tensor gather_last(const Tensor& a, const Shape& index_shape,
                   std::span<const std::size_t> index);
Tensor detach(const Tensor& a);

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

struct MaxResult {
  Tensor values;
  std::vector<std::size_t> indices;  // position along the reduced axis
};
/// Ties resolve to the lowest index. Gradient flows to the selected element only.
MaxResult max(const Tensor& a, int axis, bool keepdim = false);

Tensor softmax(const Tensor& a, int axis);

/// Euclidean norm along the last axis. The gradient at a zero vector is zero.
Tensor norm_last(const Tensor& a);

// -------------------------------------------------------------------- linalg

/// a: [..., n], b: [n, m] -> [..., m]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Pairwise Euclidean distances between rows: a [n, c], b [m, c] -> [n, m].
Tensor pairwise_distance(const Tensor& a, const Tensor& b);

// ------------------------------------------------------------ normalization

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Normalizes x [rows, C] per channel. Training mode uses batch statistics and
/// updates `state`; evaluation mode uses the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training);

}  // namespace cegc
