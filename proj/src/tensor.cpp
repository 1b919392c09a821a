#include "unetsr/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "unetsr/error.hpp"

namespace unetsr {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  GradTape* tape = nullptr;
  std::optional<std::size_t> node;
};

}  // namespace detail

namespace {

thread_local GradTape* t_active_tape = nullptr;
thread_local std::string t_backward_fault;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor", "numel",
                         "shape " + shape_string(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("Tensor::dim", "rank",
                         "axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }

std::span<double> Tensor::mutable_data() { return impl().data; }

std::vector<double> Tensor::to_vector() const { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on a tensor of shape " + shape_string(shape()));
  }
  return impl().data.front();
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const auto& s = shape();
  if (s.size() != 4) throw DimensionError("Tensor::at", "rank", "expected rank 4");
  return impl().data[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  impl().requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::grad_accumulator() const {
  auto& i = impl();
  if (i.grad.empty()) i.grad.assign(i.data.size(), 0.0);
  return i.grad;
}

void Tensor::zero_grad() {
  auto& g = impl().grad;
  g.clear();
  g.shrink_to_fit();
}

std::optional<std::size_t> Tensor::tape_node() const { return impl().node; }

Tensor Tensor::clone() const {
  return Tensor(Shape(shape()), std::vector<double>(impl().data));
}

GradTape::GradTape() : previous_(t_active_tape) { t_active_tape = this; }

GradTape::~GradTape() {
  clear();
  if (t_active_tape == this) t_active_tape = previous_;
}

GradTape* GradTape::active() noexcept { return t_active_tape; }

void GradTape::clear() {
  for (auto& node : nodes_) {
    if (node.output) {
      node.output->tape = nullptr;
      node.output->node.reset();
    }
  }
  nodes_.clear();
}

void GradTape::backward(const Tensor& loss) {
  auto& li = loss.impl();
  if (li.data.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(li.shape));
  }
  if (li.tape != this || !li.node) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  const std::size_t last = *li.node;
  li.grad.assign(1, 1.0);
  for (std::size_t k = last + 1; k-- > 0;) {
    auto& node = nodes_[k];
    if (node.output->grad.empty()) continue;  // unreachable from loss
    // Copy: an op whose output feeds itself would otherwise alias.
    const std::vector<double> upstream = node.output->grad;
    node.backward(upstream);
  }
  clear();
}

NoGradScope::NoGradScope() : saved_(t_active_tape) { t_active_tape = nullptr; }

NoGradScope::~NoGradScope() { t_active_tape = saved_; }

void set_backward_fault(std::string op) { t_backward_fault = std::move(op); }

const std::string& backward_fault() { return t_backward_fault; }

bool should_record(std::initializer_list<Tensor> inputs) {
  if (t_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

void record_op(std::string_view op, std::initializer_list<Tensor> inputs, Tensor& output,
               BackwardFn backward) {
  if (!should_record(inputs)) return;
  GradTape& tape = *t_active_tape;
  GradTape::Node node;
  node.op = std::string(op);
  for (const auto& in : inputs) {
    if (in.defined() && in.impl_->tape == &tape && in.impl_->node) {
      node.inputs.push_back(*in.impl_->node);
    }
  }
  node.output = output.impl_;
  if (!t_backward_fault.empty() && t_backward_fault == op) {
    // Distort the upstream gradient so gradient checks have something to catch.
    node.backward = [inner = std::move(backward)](std::span<const double> g) {
      std::vector<double> skewed(g.begin(), g.end());
      for (std::size_t i = 0; i < skewed.size(); ++i) skewed[i] *= 1.5 + 0.25 * static_cast<double>(i % 3);
      inner(skewed);
    };
  } else {
    node.backward = std::move(backward);
  }
  output.impl_->requires_grad = true;
  output.impl_->tape = &tape;
  output.impl_->node = tape.nodes_.size();
  tape.nodes_.push_back(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.impl_->tape == nullptr) {
    throw ContractError("backward: loss was not produced under an active tape");
  }
  loss.impl_->tape->backward(loss);
}

}  // namespace unetsr
