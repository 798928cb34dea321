#include "m3att/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace m3att {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool freed = false;
  const char* op = "leaf";
  std::shared_ptr<const std::string> scope;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool t_grad_enabled = true;
thread_local std::vector<std::string> t_scope_stack;
thread_local std::shared_ptr<const std::string> t_scope = std::make_shared<const std::string>();

void refresh_scope() {
  std::string joined;
  for (const auto& s : t_scope_stack) {
    if (!joined.empty()) joined += '/';
    joined += s;
  }
  t_scope = std::make_shared<const std::string>(std::move(joined));
}

NodePtr make_leaf(const Shape& shape, std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  n->scope = t_scope;
  return n;
}

// Result node; records the parents when any of them is tracked.
NodePtr make_result(const char* op, Shape shape, std::vector<double> values,
                    std::initializer_list<const Tensor*> inputs) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->op = op;
  n->scope = t_scope;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) {
      if (t->defined() && t->node()->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->leaf = false;
    for (const Tensor* t : inputs)
      if (t->defined()) n->parents.push_back(t->node());
  }
  return n;
}

NodePtr make_result_vec(const char* op, Shape shape, std::vector<double> values,
                        const std::vector<Tensor>& inputs) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->op = op;
  n->scope = t_scope;
  if (t_grad_enabled) {
    for (const auto& t : inputs)
      if (t.node()->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->leaf = false;
    for (const auto& t : inputs) n->parents.push_back(t.node());
  }
  return n;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// How b broadcasts into a: 1 (scalar), or a suffix of a's shape.
std::size_t broadcast_extent(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (b.numel() == 1) return 1;
  if (sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
    return b.numel();
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " into " +
                       shape_str(sa));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  return Tensor(make_leaf(shape, std::vector<double>(shape_numel(shape), value), requires_grad));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  if (values.size() != shape_numel(shape))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  return Tensor(make_leaf(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  if (!node_->leaf) throw ContractError("mutable_data on a non-leaf tensor");
  return node_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for " + shape_str(s));
    off = off * s[axis] + i;
    ++axis;
  }
  return node_->data[off];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  require_defined(*this, "set_requires_grad");
  if (!node_->leaf) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return defined() && node_->grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (defined() && has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return node_->leaf; }
const char* Tensor::op_name() const { return node_->op; }
const std::string& Tensor::scope() const { return *node_->scope; }

std::vector<Tensor> Tensor::parents() const {
  std::vector<Tensor> out;
  for (const auto& p : node_->parents) out.emplace_back(p);
  return out;
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(shape(), node_->data, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(shape(), node_->data, node_->requires_grad));
}

std::vector<Tensor> topological_order(const Tensor& root) {
  std::vector<Tensor> order;
  if (!root.defined()) return order;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const NodePtr& p = node->parents[next++];
      if (visited.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      order.emplace_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void Tensor::backward(bool retain_graph) const {
  require_defined(*this, "backward");
  if (numel() != 1)
    throw ContractError("backward() requires a scalar loss, got " + shape_str(shape()));
  if (!node_->requires_grad) throw ContractError("backward() on a tensor that is not on the tape");
  if (node_->freed)
    throw ContractError("backward() through a freed graph; pass retain_graph on the first call");

  auto order = topological_order(*this);
  for (auto& t : order) {
    Node& n = *t.node();
    if (!n.leaf) n.grad.assign(n.data.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = *it->node();
    if (!n.leaf && n.backward_fn) n.backward_fn(n);
  }
  if (!retain_graph) {
    for (auto& t : order) {
      Node& n = *t.node();
      if (!n.leaf) {
        n.parents.clear();
        n.backward_fn = nullptr;
        n.freed = true;
      }
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

ScopeGuard::ScopeGuard(const std::string& name) {
  t_scope_stack.push_back(name);
  refresh_scope();
}
ScopeGuard::~ScopeGuard() {
  t_scope_stack.pop_back();
  refresh_scope();
}
std::string current_scope() { return *t_scope; }

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t k = sa.back();
  if (sb[sb.size() - 2] != k) throw mismatch();
  const std::size_t n = sb.back();

  // Either a shared rank-2 right operand, or matching leading extents.
  const bool shared_rhs = sb.size() == 2;
  std::size_t batch = 1;
  std::size_t m = sa[sa.size() - 2];
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  if (shared_rhs) {
    m = a.numel() / k;
  } else {
    if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))
      throw mismatch();
    batch = a.numel() / (m * k);
  }

  std::vector<double> out(batch * m * n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t g = 0; g < batch; ++g) {
    MutMap(out.data() + g * m * n, m, n).noalias() =
        ConstMap(pa + g * m * k, m, k) * ConstMap(pb + (shared_rhs ? 0 : g * k * n), k, n);
  }
  auto node = make_result("matmul", out_shape, std::move(out), {&a, &b});
  if (node->requires_grad) {
    auto na = a.node();
    auto nb = b.node();
    node->backward_fn = [na, nb, batch, m, k, n, shared_rhs](Node& self) {
      const double* g = self.grad.data();
      if (na->requires_grad) {
        auto& ga = na->ensure_grad();
        for (std::size_t i = 0; i < batch; ++i)
          MutMap(ga.data() + i * m * k, m, k).noalias() +=
              ConstMap(g + i * m * n, m, n) *
              ConstMap(nb->data.data() + (shared_rhs ? 0 : i * k * n), k, n).transpose();
      }
      if (nb->requires_grad) {
        auto& gb = nb->ensure_grad();
        for (std::size_t i = 0; i < batch; ++i)
          MutMap(gb.data() + (shared_rhs ? 0 : i * k * n), k, n).noalias() +=
              ConstMap(na->data.data() + i * m * k, m, k).transpose() *
              ConstMap(g + i * m * n, m, n);
      }
    };
  }
  return Tensor(node);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute");
  const auto& s = x.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw DimensionError("permute: axis count mismatch for " + shape_str(s));
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw DimensionError("permute: invalid axes for " + shape_str(s));
    seen[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[axes[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  // Stride in the input for each output axis.
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) stride[i] = in_stride[axes[i]];

  const std::size_t total = x.numel();
  std::vector<std::size_t> src_index(total);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t lin = 0; lin < total; ++lin) {
      src_index[lin] = off;
      for (std::size_t ax = r; ax-- > 0;) {
        ++idx[ax];
        off += stride[ax];
        if (idx[ax] < out_shape[ax]) break;
        off -= stride[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }
  std::vector<double> out(total);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < total; ++i) out[i] = px[src_index[i]];
  auto node = make_result("permute", out_shape, std::move(out), {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, src = std::move(src_index)](Node& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor transpose(const Tensor& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw DimensionError("transpose: needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  auto node = make_result("reshape", shape, x.to_vector(), {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx](Node& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

// ---- elementwise ---------------------------------------------------------

namespace {

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const std::size_t nb = broadcast_extent(a, b, name);
  const std::size_t na = a.numel();
  std::vector<double> out(na);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < na; ++i) {
    const double bv = pb[i % nb];
    switch (op) {
      case BinOp::kAdd: out[i] = pa[i] + bv; break;
      case BinOp::kSub: out[i] = pa[i] - bv; break;
      case BinOp::kMul: out[i] = pa[i] * bv; break;
    }
  }
  auto node = make_result(name, a.shape(), std::move(out), {&a, &b});
  if (node->requires_grad) {
    auto pa_node = a.node();
    auto pb_node = b.node();
    node->backward_fn = [pa_node, pb_node, nb, op](Node& self) {
      const auto& g = self.grad;
      if (pa_node->requires_grad) {
        auto& ga = pa_node->ensure_grad();
        if (op == BinOp::kMul) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb_node->data[i % nb];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (pb_node->requires_grad) {
        auto& gb = pb_node->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (op) {
            case BinOp::kAdd: gb[i % nb] += g[i]; break;
            case BinOp::kSub: gb[i % nb] -= g[i]; break;
            case BinOp::kMul: gb[i % nb] += g[i] * pa_node->data[i]; break;
          }
        }
      }
    };
  }
  return Tensor(node);
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  require_defined(x, name);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  auto node = make_result(name, x.shape(), std::move(out), {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    // deriv(input, output)
    node->backward_fn = [nx, deriv](Node& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += self.grad[i] * deriv(nx->data[i], self.data[i]);
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](double v) { return v + value; },
      [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Tensor softmax_last_axis(const Tensor& x, const Tensor& additive_mask) {
  require_defined(x, "softmax_last_axis");
  const auto& s = x.shape();
  const std::size_t n = s.back();
  const std::size_t rows = x.numel() / n;
  const std::size_t group = s.size() >= 2 ? s[s.size() - 2] : 1;
  const double* mask = nullptr;
  if (additive_mask.defined()) {
    if (additive_mask.numel() != rows / group * n)
      throw DimensionError("softmax_last_axis: mask " + shape_str(additive_mask.shape()) +
                           " does not fit " + shape_str(s));
    mask = additive_mask.data().data();
  }
  const double* px = x.data().data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * n;
    const double* mrow = mask ? mask + (r / group) * n : nullptr;
    double* o = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = row[j] + (mrow ? mrow[j] : 0.0);
      mx = std::max(mx, o[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(o[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  auto node = make_result("softmax", s, std::move(out), {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, rows, n](Node& self) {
      auto& gx = nx->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.data.data() + r * n;
        const double* g = self.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return Tensor(node);
}

// ---- structural ----------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size())
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s0));
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    const auto& sp = p.shape();
    bool ok = sp.size() == s0.size();
    for (std::size_t i = 0; ok && i < sp.size(); ++i)
      if (i != axis && sp[i] != s0[i]) ok = false;
    if (!ok)
      throw DimensionError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(sp));
    total_axis += sp[axis];
  }
  const std::size_t outer = shape_numel(Shape(s0.begin(), s0.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s0.begin() + axis + 1, s0.end()));
  Shape out_shape = s0;
  out_shape[axis] = total_axis;
  std::vector<double> out(outer * total_axis * inner);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t e = p.shape()[axis];
    const double* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src + o * e * inner, e * inner,
                  out.data() + (o * total_axis + offset) * inner);
    offsets.push_back(offset);
    offset += e;
  }
  auto node = make_result_vec("concat", out_shape, std::move(out), parts);
  if (node->requires_grad) {
    std::vector<NodePtr> ps;
    for (const auto& p : parts) ps.push_back(p.node());
    node->backward_fn = [ps, offsets, axis, outer, inner, total_axis](Node& self) {
      for (std::size_t k = 0; k < ps.size(); ++k) {
        if (!ps[k]->requires_grad) continue;
        const std::size_t e = ps[k]->shape[axis];
        auto& g = ps[k]->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < e * inner; ++i)
            g[o * e * inner + i] += self.grad[(o * total_axis + offsets[k]) * inner + i];
      }
    };
  }
  return Tensor(node);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(x, "slice");
  const auto& s = x.shape();
  if (axis >= s.size())
    throw DimensionError("slice: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  if (length == 0 || start + length > s[axis])
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") out of bounds for " + shape_str(s));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t e = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(outer * length * inner);
  const double* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(px + (o * e + start) * inner, length * inner, out.data() + o * length * inner);
  auto node = make_result("slice", out_shape, std::move(out), {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, outer, inner, e, start, length](Node& self) {
      auto& g = nx->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < length * inner; ++i)
          g[(o * e + start) * inner + i] += self.grad[o * length * inner + i];
    };
  }
  return Tensor(node);
}

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto node = make_result("sum", {1}, {total}, {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx](Node& self) {
      auto& g = nx->ensure_grad();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor(node);
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  require_defined(x, "reduce_mean");
  const auto& s = x.shape();
  if (axis >= s.size())
    throw DimensionError("reduce_mean: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t e = s[axis];
  Shape out_shape = s;
  out_shape[axis] = 1;
  std::vector<double> out(outer * inner, 0.0);
  const double* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < e; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += px[(o * e + k) * inner + i];
  const double inv = 1.0 / static_cast<double>(e);
  for (auto& v : out) v *= inv;
  auto node = make_result("reduce_mean", out_shape, std::move(out), {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, outer, inner, e, inv](Node& self) {
      auto& g = nx->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < e; ++k)
          for (std::size_t i = 0; i < inner; ++i)
            g[(o * e + k) * inner + i] += self.grad[o * inner + i] * inv;
    };
  }
  return Tensor(node);
}

// ---- normalization -------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c)
    throw DimensionError("layer_norm: parameters do not match width " + std::to_string(c));
  const std::size_t rows = x.numel() / c;
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (row[j] - mu) * inv_std[r];
      out[r * c + j] = pg[j] * xhat[r * c + j] + pb[j];
    }
  }
  auto node = make_result("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta});
  if (node->requires_grad) {
    auto nx = x.node();
    auto ng = gamma.node();
    auto nbeta = beta.node();
    node->backward_fn = [nx, ng, nbeta, rows, c, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](Node& self) {
      const auto& g = self.grad;
      if (ng->requires_grad || nbeta->requires_grad) {
        auto& gg = ng->ensure_grad();
        auto& gb = nbeta->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            gg[j] += g[r * c + j] * xhat[r * c + j];
            gb[j] += g[r * c + j];
          }
      }
      if (nx->requires_grad) {
        auto& gx = nx->ensure_grad();
        const double cn = static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double s1 = 0.0;
          double s2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double d = g[r * c + j] * ng->data[j];
            s1 += d;
            s2 += d * xhat[r * c + j];
          }
          for (std::size_t j = 0; j < c; ++j) {
            const double d = g[r * c + j] * ng->data[j];
            gx[r * c + j] += inv_std[r] / cn * (cn * d - s1 - xhat[r * c + j] * s2);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::size_t channel_axis, double eps, BatchStats* stats_out,
                  const BatchStats* running) {
  require_defined(x, "batch_norm");
  const auto& s = x.shape();
  if (channel_axis >= s.size())
    throw DimensionError("batch_norm: channel axis out of range for " + shape_str(s));
  const std::size_t c = s[channel_axis];
  if (gamma.numel() != c || beta.numel() != c)
    throw DimensionError("batch_norm: " + std::to_string(gamma.numel()) +
                         " channels configured, input " + shape_str(s));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + channel_axis));
  const std::size_t inner = shape_numel(Shape(s.begin() + channel_axis + 1, s.end()));
  const std::size_t count = outer * inner;
  const double* px = x.data().data();
  auto index = [&](std::size_t o, std::size_t ch, std::size_t i) {
    return (o * c + ch) * inner + i;
  };

  std::vector<double> mu(c, 0.0);
  std::vector<double> var(c, 0.0);
  if (running) {
    if (running->mean.size() != c || running->var.size() != c)
      throw DimensionError("batch_norm: running statistics do not match channels");
    mu = running->mean;
    var = running->var;
  } else {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i) mu[ch] += px[index(o, ch, i)];
    for (auto& m : mu) m /= static_cast<double>(count);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = px[index(o, ch, i)] - mu[ch];
          var[ch] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(count);
  }
  if (stats_out) *stats_out = {mu, var};

  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = index(o, ch, i);
        xhat[k] = (px[k] - mu[ch]) * inv_std[ch];
        out[k] = pg[ch] * xhat[k] + pb[ch];
      }
  auto node = make_result("batch_norm", s, std::move(out), {&x, &gamma, &beta});
  if (node->requires_grad) {
    auto nx = x.node();
    auto ng = gamma.node();
    auto nbeta = beta.node();
    const bool batch_stats = running == nullptr;
    node->backward_fn = [nx, ng, nbeta, outer, inner, c, count, batch_stats,
                         xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
      const auto& g = self.grad;
      auto index = [&](std::size_t o, std::size_t ch, std::size_t i) {
        return (o * c + ch) * inner + i;
      };
      std::vector<double> sum_g(c, 0.0);
      std::vector<double> sum_gx(c, 0.0);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t k = index(o, ch, i);
            sum_g[ch] += g[k];
            sum_gx[ch] += g[k] * xhat[k];
          }
      if (ng->requires_grad || nbeta->requires_grad) {
        auto& gg = ng->ensure_grad();
        auto& gb = nbeta->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          gg[ch] += sum_gx[ch];
          gb[ch] += sum_g[ch];
        }
      }
      if (nx->requires_grad) {
        auto& gx = nx->ensure_grad();
        const double m = static_cast<double>(count);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double scale_ch = ng->data[ch] * inv_std[ch];
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = index(o, ch, i);
              if (batch_stats)
                gx[k] += scale_ch * (g[k] - sum_g[ch] / m - xhat[k] * sum_gx[ch] / m);
              else
                gx[k] += scale_ch * g[k];
            }
          }
      }
    };
  }
  return Tensor(node);
}

// ---- convolution & resampling --------------------------------------------

namespace {

// cols: [Cin*kh*kw, H*W]
// Valid output range [lo, hi) along one axis for a kernel offset d - pad.
inline void valid_range(long offset, std::size_t extent, std::size_t& lo, std::size_t& hi) {
  const long n = static_cast<long>(extent);
  lo = static_cast<std::size_t>(std::clamp(-offset, 0L, n));
  hi = static_cast<std::size_t>(std::clamp(n - offset, 0L, n));
  if (hi < lo) hi = lo;
}

void im2col(const double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, double* cols) {
  const long ph = static_cast<long>(kh / 2);
  const long pw = static_cast<long>(kw / 2);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t dy = 0; dy < kh; ++dy)
      for (std::size_t dx = 0; dx < kw; ++dx, ++row) {
        double* dst = cols + row * h * w;
        const long oy = static_cast<long>(dy) - ph;
        const long ox = static_cast<long>(dx) - pw;
        std::size_t y0, y1, x0, x1;
        valid_range(oy, h, y0, y1);
        valid_range(ox, w, x0, x1);
        std::fill(dst, dst + y0 * w, 0.0);
        for (std::size_t y = y0; y < y1; ++y) {
          double* d = dst + y * w;
          const double* src = x + (c * h + static_cast<std::size_t>(static_cast<long>(y) + oy)) * w;
          std::fill(d, d + x0, 0.0);
          for (std::size_t xx = x0; xx < x1; ++xx)
            d[xx] = src[static_cast<std::size_t>(static_cast<long>(xx) + ox)];
          std::fill(d + x1, d + w, 0.0);
        }
        std::fill(dst + y1 * w, dst + h * w, 0.0);
      }
}

void col2im_add(const double* cols, std::size_t cin, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, double* gx) {
  const long ph = static_cast<long>(kh / 2);
  const long pw = static_cast<long>(kw / 2);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t dy = 0; dy < kh; ++dy)
      for (std::size_t dx = 0; dx < kw; ++dx, ++row) {
        const double* src = cols + row * h * w;
        const long oy = static_cast<long>(dy) - ph;
        const long ox = static_cast<long>(dx) - pw;
        std::size_t y0, y1, x0, x1;
        valid_range(oy, h, y0, y1);
        valid_range(ox, w, x0, x1);
        for (std::size_t y = y0; y < y1; ++y) {
          const double* s = src + y * w;
          double* d = gx + (c * h + static_cast<std::size_t>(static_cast<long>(y) + oy)) * w;
          for (std::size_t xx = x0; xx < x1; ++xx)
            d[static_cast<std::size_t>(static_cast<long>(xx) + ox)] += s[xx];
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_defined(x, "conv2d");
  require_defined(kernel, "conv2d");
  const auto& sx = x.shape();
  const auto& sk = kernel.shape();
  if ((sx.size() != 3 && sx.size() != 4) || sk.size() != 4)
    throw DimensionError("conv2d: expected [B,C,H,W] input and [O,C,kh,kw] kernel, got " +
                         shape_str(sx) + " and " + shape_str(sk));
  const bool batched = sx.size() == 4;
  const std::size_t b = batched ? sx[0] : 1;
  const std::size_t cin = sx[sx.size() - 3];
  const std::size_t h = sx[sx.size() - 2];
  const std::size_t w = sx[sx.size() - 1];
  const std::size_t cout = sk[0];
  const std::size_t kh = sk[2];
  const std::size_t kw = sk[3];
  if (sk[1] != cin)
    throw DimensionError("conv2d: kernel " + shape_str(sk) + " expects " + std::to_string(sk[1]) +
                         " input channels, input " + shape_str(sx));
  if (kh % 2 == 0 || kw % 2 == 0 || kh > h + 2 * (kh / 2) || kw > w + 2 * (kw / 2))
    throw DimensionError("conv2d: kernel " + shape_str(sk) + " does not fit padded input " +
                         shape_str(sx));
  if (bias.defined() && bias.numel() != cout)
    throw DimensionError("conv2d: bias does not match output channels");

  const std::size_t hw = h * w;
  const std::size_t patch = cin * kh * kw;
  const bool pointwise = kh == 1 && kw == 1;
  Shape out_shape = batched ? Shape{b, cout, h, w} : Shape{cout, h, w};
  std::vector<double> out(b * cout * hw);
  std::vector<double> cols(pointwise ? 0 : patch * hw);
  const double* px = x.data().data();
  const double* pk = kernel.data().data();
  for (std::size_t n = 0; n < b; ++n) {
    const double* xin = px + n * cin * hw;
    const double* c = xin;
    if (!pointwise) {
      im2col(xin, cin, h, w, kh, kw, cols.data());
      c = cols.data();
    }
    MutMap(out.data() + n * cout * hw, cout, hw).noalias() =
        ConstMap(pk, cout, patch) * ConstMap(c, patch, hw);
    if (bias.defined()) {
      const double* pb = bias.data().data();
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t i = 0; i < hw; ++i) out[(n * cout + o) * hw + i] += pb[o];
    }
  }
  auto node = make_result("conv2d", out_shape, std::move(out), {&x, &kernel, &bias});
  if (node->requires_grad) {
    auto nx = x.node();
    auto nk = kernel.node();
    NodePtr nb = bias.defined() ? bias.node() : nullptr;
    node->backward_fn = [nx, nk, nb, b, cin, h, w, kh, kw, cout, hw, patch,
                         pointwise](Node& self) {
      std::vector<double> cols(pointwise ? 0 : patch * hw);
      std::vector<double> dcols(pointwise ? 0 : patch * hw);
      for (std::size_t n = 0; n < b; ++n) {
        const double* g = self.grad.data() + n * cout * hw;
        const double* xin = nx->data.data() + n * cin * hw;
        if (nk->requires_grad) {
          const double* c = xin;
          if (!pointwise) {
            im2col(xin, cin, h, w, kh, kw, cols.data());
            c = cols.data();
          }
          MutMap(nk->ensure_grad().data(), cout, patch).noalias() +=
              ConstMap(g, cout, hw) * ConstMap(c, patch, hw).transpose();
        }
        if (nb && nb->requires_grad) {
          auto& gb = nb->ensure_grad();
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < hw; ++i) gb[o] += g[o * hw + i];
        }
        if (nx->requires_grad) {
          double* gx = nx->ensure_grad().data() + n * cin * hw;
          if (pointwise) {
            MutMap(gx, cin, hw).noalias() +=
                ConstMap(nk->data.data(), cout, patch).transpose() * ConstMap(g, cout, hw);
          } else {
            MutMap(dcols.data(), patch, hw).noalias() =
                ConstMap(nk->data.data(), cout, patch).transpose() * ConstMap(g, cout, hw);
            col2im_add(dcols.data(), cin, h, w, kh, kw, gx);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor upsample2x(const Tensor& x) {
  require_defined(x, "upsample2x");
  const auto& s = x.shape();
  if (s.size() < 2) throw DimensionError("upsample2x: needs rank >= 2, got " + shape_str(s));
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  const std::size_t planes = x.numel() / (h * w);
  Shape out_shape = s;
  out_shape[s.size() - 2] = 2 * h;
  out_shape[s.size() - 1] = 2 * w;
  std::vector<double> out(x.numel() * 4);
  const double* px = x.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = px[(p * h + y / 2) * w + xx / 2];
  auto node = make_result("upsample2x", out_shape, std::move(out), {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, planes, h, w](Node& self) {
      auto& g = nx->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx)
            g[(p * h + y / 2) * w + xx / 2] += self.grad[(p * 2 * h + y) * 2 * w + xx];
    };
  }
  return Tensor(node);
}

Tensor avg_pool2x(const Tensor& x) {
  require_defined(x, "avg_pool2x");
  const auto& s = x.shape();
  if (s.size() < 2 || s[s.size() - 2] % 2 || s[s.size() - 1] % 2)
    throw DimensionError("avg_pool2x: needs even spatial extents, got " + shape_str(s));
  const std::size_t h = s[s.size() - 2] / 2;
  const std::size_t w = s[s.size() - 1] / 2;
  const std::size_t planes = x.numel() / (4 * h * w);
  Shape out_shape = s;
  out_shape[s.size() - 2] = h;
  out_shape[s.size() - 1] = w;
  std::vector<double> out(planes * h * w, 0.0);
  const double* px = x.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * h + y / 2) * w + xx / 2] += 0.25 * px[(p * 2 * h + y) * 2 * w + xx];
  auto node = make_result("avg_pool2x", out_shape, std::move(out), {&x});
  if (node->requires_grad) {
    auto nx = x.node();
    node->backward_fn = [nx, planes, h, w](Node& self) {
      auto& g = nx->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx)
            g[(p * 2 * h + y) * 2 * w + xx] += 0.25 * self.grad[(p * h + y / 2) * w + xx / 2];
    };
  }
  return Tensor(node);
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids, const Shape& out_shape) {
  require_defined(table, "embedding");
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  if (shape_numel(out_shape) != ids.size())
    throw DimensionError("embedding: id count does not match " + shape_str(out_shape));
  const std::size_t vocab = table.dim(0);
  const std::size_t e = table.dim(1);
  std::vector<double> out(ids.size() * e);
  const double* pt = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                           std::to_string(vocab));
    std::copy_n(pt + static_cast<std::size_t>(ids[i]) * e, e, out.data() + i * e);
  }
  Shape s = out_shape;
  s.push_back(e);
  auto node = make_result("embedding", s, std::move(out), {&table});
  if (node->requires_grad) {
    auto nt = table.node();
    node->backward_fn = [nt, ids, e](Node& self) {
      auto& g = nt->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < e; ++j)
          g[static_cast<std::size_t>(ids[i]) * e + j] += self.grad[i * e + j];
    };
  }
  return Tensor(node);
}

// ---- losses --------------------------------------------------------------

Tensor bce_loss(const Tensor& p, const Tensor& target, double clamp) {
  require_defined(p, "bce_loss");
  require_defined(target, "bce_loss");
  if (p.numel() != target.numel())
    throw DimensionError("bce_loss: prediction " + shape_str(p.shape()) + " vs target " +
                         shape_str(target.shape()));
  const auto pp = p.data();
  const auto py = target.data();
  const double n = static_cast<double>(pp.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pp.size(); ++i) {
    const double pc = std::clamp(pp[i], clamp, 1.0 - clamp);
    total -= py[i] * std::log(pc) + (1.0 - py[i]) * std::log(1.0 - pc);
  }
  auto node = make_result("bce_loss", {1}, {total / n}, {&p});
  if (node->requires_grad) {
    auto np = p.node();
    auto ny = target.node();
    node->backward_fn = [np, ny, clamp, n](Node& self) {
      auto& g = np->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double pv = np->data[i];
        if (pv < clamp || pv > 1.0 - clamp) continue;
        const double y = ny->data[i];
        g[i] += self.grad[0] * (-y / pv + (1.0 - y) / (1.0 - pv)) / n;
      }
    };
  }
  return Tensor(node);
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  require_defined(a, "mse_loss");
  require_defined(b, "mse_loss");
  if (a.shape() != b.shape())
    throw DimensionError("mse_loss: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto pa = a.data();
  const auto pb = b.data();
  const double n = static_cast<double>(pa.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) total += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  auto node = make_result("mse_loss", {1}, {total / n}, {&a, &b});
  if (node->requires_grad) {
    auto na = a.node();
    auto nb = b.node();
    node->backward_fn = [na, nb, n](Node& self) {
      const double g = self.grad[0] * 2.0 / n;
      if (na->requires_grad) {
        auto& ga = na->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (na->data[i] - nb->data[i]);
      }
      if (nb->requires_grad) {
        auto& gb = nb->ensure_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * (na->data[i] - nb->data[i]);
      }
    };
  }
  return Tensor(node);
}

}  // namespace m3att
