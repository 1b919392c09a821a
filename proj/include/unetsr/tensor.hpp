#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unetsr {

/// Tensor extents. Image tensors use N x C x H x W.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class GradTape;
class Tensor;

/// Receives the upstream gradient of a recorded op's output and accumulates
/// into the gradients of that op's inputs.
using BackwardFn = std::function<void(std::span<const double> grad_output)>;

namespace detail {
struct TensorImpl;
}

/// Dense row-major array of doubles with optional gradient buffer.
///
/// `Tensor` is a handle: copies share storage, so a parameter held by a model
/// and the same parameter seen by the optimizer are one object. Use `clone()`
/// for an independent copy. Values are treated as immutable by every op; only
/// initialisation, the optimizer and gradient checking write through
/// `mutable_data()`.
class Tensor {
 public:
  /// Undefined tensor; `defined()` is false.
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;

  /// Value of a single-element tensor.
  double item() const;
  /// Element of a rank-4 tensor.
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  /// Gradient values; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  /// Gradient buffer for accumulation, allocated zero-filled on first use.
  std::span<double> grad_accumulator() const;
  /// Drops the gradient buffer.
  void zero_grad();

  /// Index of the node that produced this tensor on its tape, if any.
  std::optional<std::size_t> tape_node() const;

  /// Detached deep copy (values only).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  friend class GradTape;
  friend void record_op(std::string_view op, std::initializer_list<Tensor> inputs, Tensor& output,
                        BackwardFn backward);
  friend void backward(const Tensor& loss);
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Append-only record of differentiable operations.
///
/// Constructing a tape makes it the active tape of the calling thread until
/// it is destroyed; tapes nest. Ops record onto the active tape whenever one
/// of their inputs requires a gradient.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Innermost active tape of this thread, or nullptr.
  static GradTape* active() noexcept;

  /// Reverse traversal from `loss`; accumulates into every reachable tensor
  /// that requires a gradient, then clears the tape.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op_name(std::size_t node) const { return nodes_.at(node).op; }
  void clear();

 private:
  friend void record_op(std::string_view op, std::initializer_list<Tensor> inputs, Tensor& output,
                        BackwardFn backward);

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;  // producing node ids, leaves omitted
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  GradTape* previous_ = nullptr;
};

/// Disables recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* saved_;
};

/// True when an op on `inputs` must be recorded.
bool should_record(std::initializer_list<Tensor> inputs);

/// Registers `output` as produced by `op`. No-op unless `should_record(inputs)`.
/// Marks `output` as requiring a gradient when recorded.
void record_op(std::string_view op, std::initializer_list<Tensor> inputs, Tensor& output,
               BackwardFn backward);

/// Fault injection for verifying the gradient checks themselves: ops named
/// `op` recorded on this thread get a distorted upstream gradient in their
/// backward pass. An empty name disables it.
void set_backward_fault(std::string op);
const std::string& backward_fault();

/// Runs backward on the tape that produced `loss`.
void backward(const Tensor& loss);

}  // namespace unetsr
