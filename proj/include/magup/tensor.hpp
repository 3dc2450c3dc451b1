#pragma once

// Dense f64 tensors with define-by-run reverse-mode differentiation.
//
// Layout is row-major throughout. Feature maps are H x W x C.
//
// Every op that consumes at least one tensor requiring gradients appends a
// node to the calling thread's Tape. Tape::backward walks the nodes once, in
// reverse creation order, accumulating gradients additively. Leaves (model
// parameters) keep their gradient until zero_grad(); intermediates are
// released when the tape is cleared.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "magup/errors.hpp"

namespace magup {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  // A leaf that requires gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  // Views into shared storage; calling these on a temporary would dangle.
  std::span<const double> data() const&;
  std::span<const double> data() const&& = delete;
  // Direct write access. Only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data() &;
  std::span<double> mutable_data() && = delete;
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);

  // Accumulated gradient of a leaf or intermediate; zeros when none arrived.
  Tensor grad() const;
  std::span<const double> grad_data() const&;
  std::span<const double> grad_data() const&& = delete;
  bool has_grad() const;
  void zero_grad();

  // Same values, no tape history, no gradient requirement.
  Tensor detach() const;
  // Independent copy of the values, preserving requires_grad for leaves.
  Tensor clone() const;

  // Identity of the underlying storage (for parameter bookkeeping).
  const void* id() const { return impl_.get(); }

  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::int64_t node = -1;
  std::uint64_t generation = 0;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using BackwardFn = std::function<void(TensorImpl& out)>;

// Builds an op result; records a tape node when recording is on and any
// input requires gradients. Throws NumericError on non-finite values.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward, const char* op);
Tensor make_result(Shape shape, std::vector<double> values,
                   const std::vector<const Tensor*>& inputs, BackwardFn backward,
                   const char* op);

inline bool wants_grad(const std::shared_ptr<TensorImpl>& impl) {
  return impl->requires_grad;
}

void check_finite(std::span<const double> values, const char* op);

}  // namespace detail

class Tape {
 public:
  struct Node {
    const char* op;
    std::shared_ptr<detail::TensorImpl> out;
    detail::BackwardFn backward;
  };

  // The calling thread's tape.
  static Tape& active();

  // Drops all nodes; tensors created before keep their values but lose history.
  void clear();
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }
  bool recording() const { return recording_; }

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable tensor.
  void backward(const Tensor& loss);

  std::int64_t push(Node node);

 private:
  friend class NoGradGuard;
  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
  bool recording_ = true;
};

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

void backward(const Tensor& loss);

}  // namespace magup
