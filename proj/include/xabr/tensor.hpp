#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xabr/scalar.hpp"

namespace xabr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Storage behind a Tensor handle. Operations never mutate `data` of their
// inputs; only optimizers and initializers write to parameter data.
struct TensorImpl {
  std::vector<Scalar> data;
  Shape shape;
  bool requires_grad = false;
  std::vector<Scalar> grad;  // empty when absent
  Tape* tape = nullptr;
  std::optional<std::size_t> tape_id;

  void accumulate_grad(std::span<const Scalar> g);
};

// Shared handle to an f32 (or f64, see scalar.hpp) n-d array. Copies alias
// the same storage, so a parameter handle held by an optimizer group sees
// the same buffer as the model that owns it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  // Width of the trailing axis.
  std::size_t last_dim() const { return impl_->shape.back(); }

  std::span<const Scalar> data() const { return impl_->data; }
  // Direct write access, for initializers, optimizers and checkpoint loads.
  std::span<Scalar> mutable_data() { return impl_->data; }
  Scalar item() const;
  Scalar at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Scalar> grad() const { return impl_->grad; }
  std::span<Scalar> mutable_grad() { return impl_->grad; }
  // Drops the gradient buffer entirely.
  void clear_grad() { impl_->grad.clear(); }

  std::optional<std::size_t> tape_id() const { return impl_->tape_id; }
  Tape* tape() const { return impl_->tape; }

  // Fresh leaf with a copy of the data and no gradient history.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of differentiable operations for one forward pass
// (define-by-run). Nodes are appended as operations execute, so inputs always
// precede their consumers.
class Tape {
 public:
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;  // tape ids of recorded inputs
    std::shared_ptr<TensorImpl> output;
    std::function<void(const TensorImpl& out)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  // Seeds d(loss)=1 and walks nodes from the loss back to the first, each
  // exactly once. Intermediate gradients are reset first; leaf gradients
  // accumulate across calls until cleared.
  void backward(const Tensor& loss);

  std::size_t append(Node node);

 private:
  std::vector<Node> nodes_;
};

// Makes `tape` the recording target for operations on this thread. Without
// an active tape operations run in inference mode and record nothing.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

void backward(const Tensor& loss);

// Building block for operations: wraps `data` into an output tensor and, if a
// tape is active and any input requires grad, records `fn` as its backward.
// `fn` receives the output (with its grad populated) and must call
// accumulate_grad on whichever inputs require it.
Tensor record_op(std::string_view op, Shape shape, std::vector<Scalar> data,
                 std::initializer_list<const Tensor*> inputs,
                 std::function<void(const TensorImpl& out)> fn);

}  // namespace xabr
