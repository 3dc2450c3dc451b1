#include "magup/tensor.hpp"

#include <cmath>
#include <sstream>

namespace magup {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape, std::size_t count) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != count) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(count) +
                     " values");
  }
}

}  // namespace

Tensor::Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  validate_shape(shape, values.size());
  detail::check_finite(values, "tensor");
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }
Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }
Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value));
}
Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const& { return impl_->data; }
std::span<double> Tensor::mutable_data() & { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

Tensor Tensor::grad() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), impl_->grad);
}

std::span<const double> Tensor::grad_data() const& { return impl_->grad; }
bool Tensor::has_grad() const { return impl_->grad.size() == impl_->data.size(); }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

Tensor Tensor::clone() const {
  Tensor t(shape(), impl_->data);
  if (impl_->node < 0) t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

namespace detail {

void check_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<const Tensor*>& inputs,
                   BackwardFn backward, const char* op) {
  check_finite(values, op);
  Tensor out(std::move(shape), std::move(values));
  Tape& tape = Tape::active();
  if (!tape.recording()) return out;
  bool any = false;
  for (const Tensor* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  out.impl_->requires_grad = true;
  out.impl_->generation = tape.generation();
  out.impl_->node = tape.push(Tape::Node{op, out.impl_, std::move(backward)});
  return out;
}

Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward,
                   const char* op) {
  return make_result(std::move(shape), std::move(values), std::vector<const Tensor*>(inputs),
                     std::move(backward), op);
}

}  // namespace detail

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

std::int64_t Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<std::int64_t>(nodes_.size()) - 1;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  auto& impl = *loss.impl_;
  if (impl.node < 0 || impl.generation != generation_ ||
      static_cast<std::size_t>(impl.node) >= nodes_.size() || nodes_[impl.node].out.get() != &impl) {
    throw ContractError("backward() loss is not on the active tape");
  }
  impl.grad_buffer()[0] += 1.0;
  for (std::int64_t i = impl.node; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.out->grad.empty()) node.backward(*node.out);
  }
}

NoGradGuard::NoGradGuard() : previous_(Tape::active().recording_) {
  Tape::active().recording_ = false;
}

NoGradGuard::~NoGradGuard() { Tape::active().recording_ = previous_; }

void backward(const Tensor& loss) { Tape::active().backward(loss); }

}  // namespace magup
