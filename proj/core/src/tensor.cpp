#include "mimic/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mimic/error.hpp"

namespace mimic {

namespace detail {

using GradSlots = std::span<std::vector<double>*>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSlots parent_grads)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> new_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const Node& node_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("tensor: use of an undefined tensor");
  return *t.node();
}

// Builds an op result, validating finiteness and recording the graph edge when
// any input needs gradients.
Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   detail::BackwardFn backward) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in output of shape " + shape_to_string(shape));
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (t_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || node_of(in).requires_grad;
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a) + " and " + shape_to_string(b) +
                           " are not broadcast-compatible");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// For each flat output index, the flat index into an operand broadcast to `out`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    const std::size_t k = i + in.size();
    if (k < rank) continue;
    const std::size_t d = in[k - rank];
    in_stride[i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = pos;
    for (std::size_t i = rank; i-- > 0;) {
      ++counter[i];
      pos += in_stride[i];
      if (counter[i] < out[i]) break;
      pos -= in_stride[i] * counter[i];
      counter[i] = 0;
    }
  }
  return index;
}

template <class Fwd, class GradA, class GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, GradA grad_a, GradB grad_b) {
  const Node& na = node_of(a);
  const Node& nb = node_of(b);
  if (na.shape == nb.shape) {
    const std::size_t n = na.value.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(na.value[i], nb.value[i]);
    return make_result(op, na.shape, std::move(out), {a, b},
                       [pa = a.node(), pb = b.node(), grad_a, grad_b](std::span<const double> g, detail::GradSlots gs) {
                         const auto& av = pa->value;
                         const auto& bv = pb->value;
                         if (gs[0]) {
                           auto& ga = *gs[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += grad_a(g[i], av[i], bv[i]);
                         }
                         if (gs[1]) {
                           auto& gb = *gs[1];
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += grad_b(g[i], av[i], bv[i]);
                         }
                       });
  }
  Shape out_shape = broadcast_shape(op, na.shape, nb.shape);
  auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(na.shape, out_shape));
  auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(nb.shape, out_shape));
  const std::size_t n = ia->size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(na.value[(*ia)[i]], nb.value[(*ib)[i]]);
  return make_result(op, std::move(out_shape), std::move(out), {a, b},
                     [pa = a.node(), pb = b.node(), ia, ib, grad_a, grad_b](std::span<const double> g,
                                                                            detail::GradSlots gs) {
                       const auto& av = pa->value;
                       const auto& bv = pb->value;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double x = av[(*ia)[i]];
                         const double y = bv[(*ib)[i]];
                         if (gs[0]) (*gs[0])[(*ia)[i]] += grad_a(g[i], x, y);
                         if (gs[1]) (*gs[1])[(*ib)[i]] += grad_b(g[i], x, y);
                       }
                     });
}

// `deriv(x, y)` gives dy/dx from input and output values.
template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const Node& nx = node_of(x);
  std::vector<double> out(nx.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(nx.value[i]);
  auto holder = std::make_shared<std::weak_ptr<Node>>();
  Tensor result = make_result(
      op, nx.shape, std::move(out), {x},
      [px = x.node(), holder, deriv](std::span<const double> g, detail::GradSlots gs) {
        auto self = holder->lock();
        auto& gx = *gs[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(px->value[i], self->value[i]);
      });
  *holder = result.node();
  return result;
}

void require_rank(const char* op, const Tensor& x, std::size_t lo, std::size_t hi) {
  const auto r = x.rank();
  if (r < lo || r > hi) {
    throw DimensionError(std::string(op) + ": unsupported rank " + std::to_string(r) + " for shape " +
                         shape_to_string(x.shape()));
  }
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(new_leaf({}, {value}, requires_grad)); }

const Shape& Tensor::shape() const { return node_of(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this).value.size(); }

std::span<const double> Tensor::data() const { return node_of(*this).value; }

std::span<double> Tensor::mutable_data() {
  node_of(*this);
  return node_->value;
}

std::vector<double> Tensor::to_vector() const { return node_of(*this).value; }

double Tensor::item() const {
  const auto& n = node_of(*this);
  if (n.value.size() != 1) throw ContractError("tensor: item() on tensor of shape " + shape_to_string(n.shape));
  return n.value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = node_of(*this);
  if (index.size() != n.shape.size()) throw DimensionError("tensor: index rank mismatch for " + shape_to_string(n.shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= n.shape[axis]) throw DimensionError("tensor: index out of range for " + shape_to_string(n.shape));
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.value[flat];
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  node_of(*this);
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return !node_of(*this).backward; }

Tensor Tensor::detach() const {
  const auto& n = node_of(*this);
  return Tensor(new_leaf(n.shape, n.value, false));
}

Tensor Tensor::clone() const { return detach(); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() noexcept { return t_grad_enabled; }

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator*(const Tensor& x, double factor) { return scale(x, factor); }
Tensor operator*(double factor, const Tensor& x) { return scale(x, factor); }
Tensor operator+(const Tensor& x, double value) { return add_scalar(x, value); }
Tensor operator-(const Tensor& x) { return neg(x); }

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& x) {
  require_rank("softmax", x, 1, 8);
  const Node& nx = node_of(x);
  const std::size_t cols = nx.shape.back();
  if (cols == 0) throw DimensionError("softmax: empty last axis in " + shape_to_string(nx.shape));
  const std::size_t rows = nx.value.size() / cols;
  std::vector<double> out(nx.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = nx.value.data() + r * cols;
    double* o = out.data() + r * cols;
    const double m = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  auto holder = std::make_shared<std::weak_ptr<Node>>();
  Tensor result =
      make_result("softmax", nx.shape, std::move(out), {x}, [holder, rows, cols](std::span<const double> g, detail::GradSlots gs) {
        const auto& y = holder->lock()->value;
        auto& gx = *gs[0];
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
      });
  *holder = result.node();
  return result;
}

// ---- linear algebra & shape ops ---------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, 3);
  require_rank("matmul", b, 2, 3);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched_b = sb.size() == 3;
  if (batched_b && sa.size() != 3) {
    throw DimensionError("matmul: shapes " + shape_to_string(sa) + " and " + shape_to_string(sb) + " are incompatible");
  }
  const std::size_t batch = sa.size() == 3 ? sa[0] : 1;
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb.back();
  if (k != kb || (batched_b && sb[0] != batch)) {
    throw DimensionError("matmul: shapes " + shape_to_string(sa) + " and " + shape_to_string(sb) + " are incompatible");
  }
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(batch * m * n);
  if (!batched_b) {
    // Shared right operand: fold the batch into rows.
    MutMap(out.data(), batch * m, n).noalias() = ConstMap(av.data(), batch * m, k) * ConstMap(bv.data(), k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MutMap(out.data() + i * m * n, m, n).noalias() =
          ConstMap(av.data() + i * m * k, m, k) * ConstMap(bv.data() + i * k * n, k, n);
    }
  }
  Shape out_shape = sa.size() == 3 ? Shape{batch, m, n} : Shape{m, n};
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [pa = a.node(), pb = b.node(), batch, m, k, n, batched_b](std::span<const double> g,
                                                                               detail::GradSlots gs) {
                       const double* A = pa->value.data();
                       const double* B = pb->value.data();
                       if (!batched_b) {
                         ConstMap G(g.data(), batch * m, n);
                         if (gs[0]) MutMap(gs[0]->data(), batch * m, k).noalias() += G * ConstMap(B, k, n).transpose();
                         if (gs[1]) MutMap(gs[1]->data(), k, n).noalias() += ConstMap(A, batch * m, k).transpose() * G;
                         return;
                       }
                       for (std::size_t i = 0; i < batch; ++i) {
                         ConstMap G(g.data() + i * m * n, m, n);
                         if (gs[0]) {
                           MutMap(gs[0]->data() + i * m * k, m, k).noalias() +=
                               G * ConstMap(B + i * k * n, k, n).transpose();
                         }
                         if (gs[1]) {
                           MutMap(gs[1]->data() + i * k * n, k, n).noalias() +=
                               ConstMap(A + i * m * k, m, k).transpose() * G;
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2, 3);
  const Shape& s = x.shape();
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    MutMap(out.data() + b * r * c, c, r) = ConstMap(xv.data() + b * r * c, r, c).transpose();
  }
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  return make_result("transpose", std::move(out_shape), std::move(out), {x},
                     [batch, r, c](std::span<const double> g, detail::GradSlots gs) {
                       for (std::size_t b = 0; b < batch; ++b) {
                         MutMap(gs[0]->data() + b * r * c, r, c) += ConstMap(g.data() + b * r * c, c, r).transpose();
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  return make_result("reshape", std::move(shape), x.to_vector(), {x}, [](std::span<const double> g, detail::GradSlots gs) {
    auto& gx = *gs[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: shapes " + shape_to_string(first) + " and " + shape_to_string(s) +
                           " differ off axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> chunk(parts.size());
  std::size_t row = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    chunk[p] = parts[p].shape()[axis] * inner;
    row += chunk[p];
  }
  std::vector<double> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const double* src = parts[p].data().data() + o * chunk[p];
      std::copy(src, src + chunk[p], out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += chunk[p];
    }
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [outer, row, chunk](std::span<const double> g, detail::GradSlots gs) {
                       for (std::size_t o = 0; o < outer; ++o) {
                         std::size_t offset = o * row;
                         for (std::size_t p = 0; p < chunk.size(); ++p) {
                           if (gs[p]) {
                             double* dst = gs[p]->data() + o * chunk[p];
                             for (std::size_t i = 0; i < chunk[p]; ++i) dst[i] += g[offset + i];
                           }
                           offset += chunk[p];
                         }
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for " + shape_to_string(s));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = (end - begin) * inner;
  const std::size_t skip = begin * inner;
  const auto& xv = x.data();
  std::vector<double> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = xv.data() + o * in_row + skip;
    std::copy(src, src + out_row, out.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  return make_result("slice", std::move(out_shape), std::move(out), {x},
                     [outer, in_row, out_row, skip](std::span<const double> g, detail::GradSlots gs) {
                       for (std::size_t o = 0; o < outer; ++o) {
                         double* dst = gs[0]->data() + o * in_row + skip;
                         for (std::size_t i = 0; i < out_row; ++i) dst[i] += g[o * out_row + i];
                       }
                     });
}

Tensor gather(const Tensor& x, std::vector<std::int64_t> index, Shape out_shape) {
  if (shape_numel(out_shape) != index.size()) {
    throw DimensionError("gather: " + std::to_string(index.size()) + " indices for output shape " +
                         shape_to_string(out_shape));
  }
  const auto& xv = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto j = index[i];
    if (j >= static_cast<std::int64_t>(xv.size())) {
      throw DimensionError("gather: index " + std::to_string(j) + " out of range for " + shape_to_string(x.shape()));
    }
    out[i] = j < 0 ? 0.0 : xv[static_cast<std::size_t>(j)];
  }
  return make_result("gather", std::move(out_shape), std::move(out), {x},
                     [index = std::move(index)](std::span<const double> g, detail::GradSlots gs) {
                       auto& gx = *gs[0];
                       for (std::size_t i = 0; i < index.size(); ++i) {
                         if (index[i] >= 0) gx[static_cast<std::size_t>(index[i])] += g[i];
                       }
                     });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto& xv = x.data();
  double total = 0.0;
  for (double v : xv) total += v;
  return make_result("sum", {}, {total}, {x}, [](std::span<const double> g, detail::GradSlots gs) {
    for (auto& v : *gs[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw ContractError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor sum_rows(const Tensor& x) {
  require_rank("sum_rows", x, 1, 8);
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.numel() / cols : 0;
  const auto& xv = x.data();
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  }
  return make_result("sum_rows", {cols}, std::move(out), {x}, [rows, cols](std::span<const double> g, detail::GradSlots gs) {
    auto& gx = *gs[0];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c];
    }
  });
}

Tensor mean_rows(const Tensor& x) {
  require_rank("mean_rows", x, 1, 8);
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.numel() / cols : 0;
  if (rows == 0) throw ContractError("mean_rows: no rows in " + shape_to_string(x.shape()));
  return scale(sum_rows(x), 1.0 / static_cast<double>(rows));
}

Tensor max_rows(const Tensor& x) {
  require_rank("max_rows", x, 1, 8);
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.numel() / cols : 0;
  if (rows == 0) throw ContractError("max_rows: no rows in " + shape_to_string(x.shape()));
  const auto& xv = x.data();
  std::vector<double> out(xv.begin(), xv.begin() + static_cast<std::ptrdiff_t>(cols));
  std::vector<std::size_t> arg(cols, 0);
  for (std::size_t r = 1; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = xv[r * cols + c];
      if (v > out[c]) {
        out[c] = v;
        arg[c] = r;
      }
    }
  }
  return make_result("max_rows", {cols}, std::move(out), {x},
                     [arg = std::move(arg), cols](std::span<const double> g, detail::GradSlots gs) {
                       auto& gx = *gs[0];
                       for (std::size_t c = 0; c < cols; ++c) gx[arg[c] * cols + c] += g[c];
                     });
}

Tensor l1_distance_sum(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("l1_distance_sum: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()) +
                         " differ");
  }
  const auto& av = a.data();
  const auto& bv = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += std::abs(av[i] - bv[i]);
  return make_result("l1_distance_sum", {}, {total}, {a, b},
                     [pa = a.node(), pb = b.node()](std::span<const double> g, detail::GradSlots gs) {
                       const auto& x = pa->value;
                       const auto& y = pb->value;
                       for (std::size_t i = 0; i < x.size(); ++i) {
                         const double d = x[i] - y[i];
                         const double s = d > 0.0 ? g[0] : (d < 0.0 ? -g[0] : 0.0);
                         if (gs[0]) (*gs[0])[i] += s;
                         if (gs[1]) (*gs[1])[i] -= s;
                       }
                     });
}

// ---- reverse pass -------------------------------------------------------------

std::vector<Tensor> backward(const Tensor& loss, std::span<const Tensor> params) {
  const Node& root = node_of(loss);
  if (root.value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_to_string(root.shape));
  }

  // Iterative post-order DFS over nodes that carry gradients.
  std::vector<Node*> order;
  if (root.requires_grad) {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_set<Node*> wanted;
  for (const auto& p : params) wanted.insert(p.node().get());

  std::unordered_map<Node*, std::vector<double>> grads;
  if (!order.empty()) grads[order.back()] = std::vector<double>(1, 1.0);
  std::vector<std::vector<double>*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (!node->backward) continue;
    slots.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      Node* parent = node->parents[i].get();
      if (!parent->requires_grad) continue;
      auto& buf = grads[parent];
      if (buf.empty()) buf.assign(parent->value.size(), 0.0);
      slots[i] = &buf;
    }
    std::vector<double> own = std::move(grads[node]);
    node->backward(own, slots);
    if (!wanted.contains(node)) grads.erase(node);
    else grads[node] = std::move(own);
  }

  std::vector<Tensor> result;
  result.reserve(params.size());
  for (const auto& p : params) {
    auto found = grads.find(p.node().get());
    if (found == grads.end() || found->second.empty()) {
      result.push_back(Tensor::zeros(p.shape()));
    } else {
      result.push_back(Tensor::from(p.shape(), found->second));
    }
  }
  return result;
}

TensorMap backward(const Tensor& loss, const TensorMap& params) {
  std::vector<Tensor> flat;
  flat.reserve(params.size());
  for (const auto& [name, t] : params) flat.push_back(t);
  auto grads = backward(loss, std::span<const Tensor>(flat));
  TensorMap out;
  std::size_t i = 0;
  for (const auto& [name, t] : params) out.emplace(name, std::move(grads[i++]));
  return out;
}

}  // namespace mimic
