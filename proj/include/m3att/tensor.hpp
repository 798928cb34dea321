#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every op that sees at least
// one input with requires_grad() records its parents and a backward closure;
// backward() walks that graph in reverse topological order and then releases
// it, so each forward pass owns its own tape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace m3att {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view for leaves only (parameters, buffers, constants).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  const char* op_name() const;
  const std::string& scope() const;

  // Populates grad on every requires_grad tensor reachable from this scalar.
  void backward(bool retain_graph = false) const;

  // Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  const void* id() const { return node_.get(); }
  std::vector<Tensor> parents() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Names the region of the model that creates nodes; used for dataflow checks.
class ScopeGuard {
 public:
  explicit ScopeGuard(const std::string& name);
  ~ScopeGuard();
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;
};

std::string current_scope();

// Every node reachable from root (root included), parents before children.
std::vector<Tensor> topological_order(const Tensor& root);

// ---- ops -----------------------------------------------------------------

// Rank-2 product, or batched product when both operands share leading extents.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, const Shape& shape);

// Elementwise binary ops. b may be a scalar or match a suffix of a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// Softmax over the last axis. additive_mask, when given, has the shape of x
// with the second-to-last axis dropped and is broadcast over it.
Tensor softmax_last_axis(const Tensor& x, const Tensor& additive_mask = Tensor{});

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis; the axis is kept with extent 1.
Tensor reduce_mean(const Tensor& x, std::size_t axis);

// Normalizes over the last axis with learnable gain and bias of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

// Per-channel batch normalization. channel_axis selects the channel extent;
// statistics pool every other axis. When stats_out is given, the batch
// statistics are written there. When running is given (inference), those
// statistics are used instead of batch ones.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::size_t channel_axis, double eps, BatchStats* stats_out,
                  const BatchStats* running);

// x: [B,Cin,H,W] or [Cin,H,W]; kernel: [Cout,Cin,kh,kw]; bias may be undefined.
// Zero "same" padding, stride 1, odd kernels.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias = Tensor{});
// Nearest-neighbour 2x upsampling of the last two axes.
Tensor upsample2x(const Tensor& x);
// 2x2 average pooling of the last two axes (even extents).
Tensor avg_pool2x(const Tensor& x);

// Rows of table selected by ids; output shape = out_shape + [E].
Tensor embedding(const Tensor& table, const std::vector<int>& ids, const Shape& out_shape);

// Mean binary cross entropy of probabilities p against binary targets,
// p clamped to [clamp, 1-clamp].
Tensor bce_loss(const Tensor& p, const Tensor& target, double clamp = 1e-7);
Tensor mse_loss(const Tensor& a, const Tensor& b);

}  // namespace m3att
