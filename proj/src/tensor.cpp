#include "cegc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

namespace cegc {

namespace {
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
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

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

namespace {

thread_local bool g_grad_enabled = true;

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Splits a shape around `axis` into (outer, length, inner).
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> aligned_strides(const Shape& shape, std::size_t rank) {
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    const std::size_t src = shape.size() - 1 - k;
    const std::size_t dst = rank - 1 - k;
    strides[dst] = shape[src] == 1 ? 0 : stride;
    stride *= shape[src];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " do not broadcast");
    }
    out[rank - 1 - k] = da == 1 ? db : da;
  }
  return {out, aligned_strides(a, rank), aligned_strides(b, rank)};
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t rank = p.out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t last = p.out[rank - 1];
  const std::size_t sa = p.stride_a[rank - 1];
  const std::size_t sb = p.stride_b[rank - 1];
  const std::size_t rows = shape_numel(p.out) / std::max<std::size_t>(last, 1);
  if (last == 0) return;
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0, o = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < last; ++j) f(o + j, ia + j * sa, ib + j * sb);
    o += last;
    // advance the odometer over the leading axes
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (counter[d] < p.out[d]) break;
      ia -= p.stride_a[d] * counter[d];
      ib -= p.stride_b[d] * counter[d];
      counter[d] = 0;
    }
  }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

template <class Value, class Grad>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Value value_fn,
              Grad grad_fn) {
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<double> out(shape_numel(plan.out));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = value_fn(av[ia], bv[ib]);
  });
  Shape out_shape = plan.out;
  return make_result(
      std::move(out_shape), std::move(out), op, {a, b},
      [plan = std::move(plan), grad_fn](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        const bool ga = na.requires_grad, gb = nb.requires_grad;
        if (ga) na.ensure_grad();
        if (gb) nb.ensure_grad();
        for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
          double da = 0.0, db = 0.0;
          grad_fn(na.value[ia], nb.value[ib], self.value[o], self.grad[o], da, db);
          if (ga) na.grad[ia] += da;
          if (gb) nb.grad[ib] += db;
        });
      });
}

// derivative receives (input, output)
template <class Value, class Deriv>
Tensor unary(const Tensor& a, const char* op, Value value_fn, Deriv deriv_fn) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = value_fn(av[i]);
  return make_result(a.shape(), std::move(out), op, {a},
                     [deriv_fn](Node& self) {
                       Node& na = parent(self, 0);
                       na.ensure_grad();
                       for (std::size_t i = 0; i < self.value.size(); ++i) {
                         na.grad[i] += self.grad[i] * deriv_fn(na.value[i], self.value[i]);
                       }
                     });
}

}  // namespace

// ------------------------------------------------------------------ Tensor

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value.assign(shape_numel(shape), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

std::size_t Tensor::dim(int axis) const {
  return shape()[normalize_axis(axis, rank(), "dim")];
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw ShapeError("at: index rank does not match " + shape_str(shape()));
  }
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape()[axis]) throw std::out_of_range("at: index out of range");
    offset = offset * shape()[axis] + i;
    ++axis;
  }
  return node_->value[offset];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> value, std::string op,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = std::move(op);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

std::vector<Node*> build_tape(const Tensor& root) {
  std::vector<Node*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<Node*> visited;
  // iterative post-order DFS: (node, next parent to visit)
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  const auto tape = build_tape(loss);
  for (Node* n : tape) {
    if (n->backward_fn) n->grad.clear();
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// --------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, "add_scalar", [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ----------------------------------------------------------------- structure

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(shape, std::move(out), "reshape", {a}, [](Node& self) {
    Node& na = parent(self, 0);
    na.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  const auto av = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return make_result({c, r}, std::move(out), "transpose", {a}, [r, c](Node& self) {
    Node& na = parent(self, 0);
    na.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) na.grad[i * c + j] += self.grad[j * r + i];
  });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  BroadcastPlan plan = plan_broadcast(a.shape(), shape, "broadcast_to");
  if (plan.out != shape) {
    throw ShapeError("broadcast_to: " + shape_str(a.shape()) + " cannot expand to " +
                     shape_str(shape));
  }
  std::vector<double> out(shape_numel(shape));
  const auto av = a.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) { out[o] = av[ia]; });
  return make_result(shape, std::move(out), "broadcast_to", {a},
                     [plan = std::move(plan)](Node& self) {
                       Node& na = parent(self, 0);
                       na.ensure_grad();
                       for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) {
                         na.grad[ia] += self.grad[o];
                       });
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      if (d != ax && s[d] != first[d]) ok = false;
    if (!ok) {
      throw ShapeError("concat: shapes " + shape_str(first) + " and " + shape_str(s) +
                       " differ outside axis " + std::to_string(ax));
    }
    out_shape[ax] += s[ax];
  }
  const AxisSplit whole = split_axis(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> lengths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[ax];
    lengths.push_back(len);
    const auto pv = p.data();
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * whole.inner),
                  len * whole.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * whole.length + offset) * whole.inner));
    }
    offset += len;
  }
  return make_result(out_shape, std::move(out), "concat", parts,
                     [whole, lengths](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < lengths.size(); ++k) {
                         Node& np = parent(self, k);
                         const std::size_t len = lengths[k];
                         if (np.requires_grad) {
                           np.ensure_grad();
                           for (std::size_t o = 0; o < whole.outer; ++o) {
                             const double* src =
                                 self.grad.data() + (o * whole.length + offset) * whole.inner;
                             double* dst = np.grad.data() + o * len * whole.inner;
                             for (std::size_t i = 0; i < len * whole.inner; ++i) dst[i] += src[i];
                           }
                         }
                         offset += len;
                       }
                     });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  if (a.rank() == 0) throw ShapeError("gather_rows: scalar input");
  const std::size_t rows = a.shape()[0];
  const std::size_t row_size = rows ? a.numel() / rows : 0;
  Shape out_shape = a.shape();
  out_shape[0] = index.size();
  std::vector<double> out(index.size() * row_size);
  const auto av = a.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(index[r]) +
                              " out of range for " + std::to_string(rows) + " rows");
    }
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(index[r] * row_size), row_size,
                out.begin() + static_cast<std::ptrdiff_t>(r * row_size));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result(out_shape, std::move(out), "gather_rows", {a},
                     [idx = std::move(idx), row_size](Node& self) {
                       Node& na = parent(self, 0);
                       na.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         const double* src = self.grad.data() + r * row_size;
                         double* dst = na.grad.data() + idx[r] * row_size;
                         for (std::size_t i = 0; i < row_size; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor gather_last(const Tensor& a, const Shape& index_shape,
                   std::span<const std::size_t> index) {
  if (a.rank() == 0 || index_shape.size() != a.rank()) {
    throw ShapeError("gather_last: index shape " + shape_str(index_shape) +
                     " incompatible with " + shape_str(a.shape()));
  }
  for (std::size_t d = 0; d + 1 < a.rank(); ++d) {
    if (index_shape[d] != a.shape()[d]) {
      throw ShapeError("gather_last: index shape " + shape_str(index_shape) +
                       " incompatible with " + shape_str(a.shape()));
    }
  }
  if (index.size() != shape_numel(index_shape)) {
    throw ShapeError("gather_last: index size does not match " + shape_str(index_shape));
  }
  const std::size_t len = a.shape().back();
  const std::size_t q = index_shape.back();
  const std::size_t rows = q ? index.size() / q : 0;
  std::vector<double> out(index.size());
  const auto av = a.data();
  std::vector<std::size_t> flat(index.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < q; ++k) {
      const std::size_t j = index[r * q + k];
      if (j >= len) throw std::out_of_range("gather_last: index out of range");
      flat[r * q + k] = r * len + j;
      out[r * q + k] = av[r * len + j];
    }
  }
  return make_result(index_shape, std::move(out), "gather_last", {a},
                     [flat = std::move(flat)](Node& self) {
                       Node& na = parent(self, 0);
                       na.ensure_grad();
                       for (std::size_t i = 0; i < flat.size(); ++i) na.grad[flat[i]] += self.grad[i];
                     });
}

Tensor detach(const Tensor& a) {
  return Tensor::from(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "sum");
  const AxisSplit s = split_axis(a.shape(), ax);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.length; ++l) {
      const double* src = av.data() + (o * s.length + l) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  return make_result(reduced_shape(a.shape(), ax, keepdim), std::move(out), "sum", {a},
                     [s](Node& self) {
                       Node& na = parent(self, 0);
                       na.ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t l = 0; l < s.length; ++l) {
                           const double* src = self.grad.data() + o * s.inner;
                           double* dst = na.grad.data() + (o * s.length + l) * s.inner;
                           for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                         }
                     });
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "mean");
  const std::size_t len = a.shape()[ax];
  if (len == 0) throw ShapeError("mean: empty axis in " + shape_str(a.shape()));
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor sum_all(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, "sum_all", {a}, [](Node& self) {
    Node& na = parent(self, 0);
    na.ensure_grad();
    for (auto& g : na.grad) g += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

MaxResult max(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "max");
  const AxisSplit s = split_axis(a.shape(), ax);
  if (s.length == 0) throw ShapeError("max: empty axis in " + shape_str(a.shape()));
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner, 0);
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double best_v = av[o * s.length * s.inner + i];
      for (std::size_t l = 1; l < s.length; ++l) {
        const double v = av[(o * s.length + l) * s.inner + i];
        if (v > best_v || (std::isnan(v) && !std::isnan(best_v))) {
          best_v = v;
          best = l;
        }
      }
      out[o * s.inner + i] = best_v;
      arg[o * s.inner + i] = best;
    }
  MaxResult result;
  result.indices = arg;
  result.values = make_result(reduced_shape(a.shape(), ax, keepdim), std::move(out), "max",
                              {a}, [s, arg = std::move(arg)](Node& self) {
                                Node& na = parent(self, 0);
                                na.ensure_grad();
                                for (std::size_t o = 0; o < s.outer; ++o)
                                  for (std::size_t i = 0; i < s.inner; ++i) {
                                    const std::size_t k = o * s.inner + i;
                                    na.grad[(o * s.length + arg[k]) * s.inner + i] += self.grad[k];
                                  }
                              });
  return result;
}

Tensor softmax(const Tensor& a, int axis) {
  const std::size_t ax = normalize_axis(axis, a.rank(), "softmax");
  const AxisSplit s = split_axis(a.shape(), ax);
  if (s.length == 0) throw ShapeError("softmax: empty axis in " + shape_str(a.shape()));
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.length * s.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.length; ++l) m = std::max(m, av[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const double e = std::exp(av[base + l * s.inner] - m);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= z;
    }
  return make_result(a.shape(), std::move(out), "softmax", {a}, [s](Node& self) {
    Node& na = parent(self, 0);
    na.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.length * s.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.length; ++l) {
          const std::size_t k = base + l * s.inner;
          dot += self.grad[k] * self.value[k];
        }
        for (std::size_t l = 0; l < s.length; ++l) {
          const std::size_t k = base + l * s.inner;
          na.grad[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
  });
}

Tensor norm_last(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("norm_last: scalar input");
  const std::size_t len = a.shape().back();
  const std::size_t rows = len ? a.numel() / len : 0;
  std::vector<double> out(rows);
  const auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < len; ++c) acc += av[r * len + c] * av[r * len + c];
    out[r] = std::sqrt(acc);
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  return make_result(out_shape, std::move(out), "norm_last", {a}, [len, rows](Node& self) {
    Node& na = parent(self, 0);
    na.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double n = self.value[r];
      if (n <= 0.0) continue;
      const double g = self.grad[r] / n;
      for (std::size_t c = 0; c < len; ++c) na.grad[r * len + c] += g * na.value[r * len + c];
    }
  });
}

// -------------------------------------------------------------------- linalg

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.shape()[0]) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not aligned");
  }
  const auto n = static_cast<Eigen::Index>(b.shape()[0]);
  const auto m = static_cast<Eigen::Index>(b.shape()[1]);
  const Eigen::Index rows = n ? static_cast<Eigen::Index>(a.numel()) / n : 0;
  std::vector<double> out(static_cast<std::size_t>(rows * m), 0.0);
  RowMap(out.data(), rows, m).noalias() =
      ConstRowMap(a.data().data(), rows, n) * ConstRowMap(b.data().data(), n, m);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(static_cast<std::size_t>(m));
  return make_result(out_shape, std::move(out), "matmul", {a, b}, [rows, n, m](Node& self) {
    Node& na = parent(self, 0);
    Node& nb = parent(self, 1);
    ConstRowMap g(self.grad.data(), rows, m);
    if (na.requires_grad) {
      na.ensure_grad();
      RowMap(na.grad.data(), rows, n).noalias() += g * ConstRowMap(nb.value.data(), n, m).transpose();
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      RowMap(nb.grad.data(), n, m).noalias() += ConstRowMap(na.value.data(), rows, n).transpose() * g;
    }
  });
}

Tensor pairwise_distance(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw ShapeError("pairwise_distance: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not compatible");
  }
  const std::size_t n = a.shape()[0], m = b.shape()[0], c = a.shape()[1];
  std::vector<double> out(n * m);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double d = av[i * c + k] - bv[j * c + k];
        acc += d * d;
      }
      out[i * m + j] = std::sqrt(acc);
    }
  return make_result({n, m}, std::move(out), "pairwise_distance", {a, b},
                     [n, m, c](Node& self) {
                       Node& na = parent(self, 0);
                       Node& nb = parent(self, 1);
                       if (na.requires_grad) na.ensure_grad();
                       if (nb.requires_grad) nb.ensure_grad();
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < m; ++j) {
                           const double d = self.value[i * m + j];
                           if (d <= 0.0) continue;
                           const double g = self.grad[i * m + j] / d;
                           if (g == 0.0) continue;
                           for (std::size_t k = 0; k < c; ++k) {
                             const double diff = na.value[i * c + k] - nb.value[j * c + k];
                             if (na.requires_grad) na.grad[i * c + k] += g * diff;
                             if (nb.requires_grad) nb.grad[j * c + k] -= g * diff;
                           }
                         }
                     });
}

// ------------------------------------------------------------ normalization

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training) {
  if (x.rank() != 2 || gamma.numel() != x.shape()[1] || beta.numel() != x.shape()[1]) {
    throw ShapeError("batch_norm: input " + shape_str(x.shape()) + " with affine " +
                     shape_str(gamma.shape()) + "/" + shape_str(beta.shape()));
  }
  const std::size_t rows = x.shape()[0], ch = x.shape()[1];
  if (state.running_mean.size() != ch) {
    state.running_mean.assign(ch, 0.0);
    state.running_var.assign(ch, 1.0);
  }
  if (training && rows < 2) throw ShapeError("batch_norm: training mode needs at least 2 rows");
  std::vector<double> mu(ch, 0.0), inv_std(ch, 0.0);
  const auto xv = x.data();
  if (training) {
    std::vector<double> var(ch, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) mu[c] += xv[r * ch + c];
    for (auto& v : mu) v /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const double d = xv[r * ch + c] - mu[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < ch; ++c) {
      const double biased = var[c] / static_cast<double>(rows);
      inv_std[c] = 1.0 / std::sqrt(biased + state.eps);
      const double unbiased = var[c] / static_cast<double>(rows - 1);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  std::vector<double> xhat(rows * ch), out(rows * ch);
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t k = r * ch + c;
      xhat[k] = (xv[k] - mu[c]) * inv_std[c];
      out[k] = gv[c] * xhat[k] + bv[c];
    }
  return make_result(
      x.shape(), std::move(out), training ? "batch_norm_train" : "batch_norm_eval",
      {x, gamma, beta},
      [rows, ch, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        Node& nx = parent(self, 0);
        Node& ng = parent(self, 1);
        Node& nbeta = parent(self, 2);
        const double* g = self.grad.data();
        if (ng.requires_grad || nbeta.requires_grad) {
          if (ng.requires_grad) ng.ensure_grad();
          if (nbeta.requires_grad) nbeta.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < ch; ++c) {
              const std::size_t k = r * ch + c;
              if (ng.requires_grad) ng.grad[c] += g[k] * xhat[k];
              if (nbeta.requires_grad) nbeta.grad[c] += g[k];
            }
        }
        if (!nx.requires_grad) return;
        nx.ensure_grad();
        if (!training) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < ch; ++c)
              nx.grad[r * ch + c] += g[r * ch + c] * ng.value[c] * inv_std[c];
          return;
        }
        const double n = static_cast<double>(rows);
        for (std::size_t c = 0; c < ch; ++c) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t k = r * ch + c;
            const double d = g[k] * ng.value[c];
            sum_d += d;
            sum_dx += d * xhat[k];
          }
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t k = r * ch + c;
            const double d = g[k] * ng.value[c];
            nx.grad[k] += inv_std[c] / n * (n * d - sum_d - xhat[k] * sum_dx);
          }
        }
      });
}

}  // namespace cegc
