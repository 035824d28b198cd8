#include "xabr/tensor.hpp"

#include <sstream>

#include "xabr/errors.hpp"

namespace xabr {
namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "×" : "") << shape[i];
  out << ']';
  return out.str();
}

void TensorImpl::accumulate_grad(std::span<const Scalar> g) {
  if (!requires_grad) return;
  if (grad.empty()) grad.assign(data.size(), Scalar(0));
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != data.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, Scalar(0)), requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

std::size_t Tape::append(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (loss.tape() != this || !loss.tape_id())
    throw ContractError("backward: loss was not recorded on this tape");
  const std::size_t last = *loss.tape_id();
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].output->grad.clear();
  loss.impl()->grad.assign(1, Scalar(1));
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.output->grad.empty()) continue;
    node.backward(*node.output);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward needs a scalar loss");
  Tape* tape = loss.tape();
  if (tape == nullptr) throw ContractError("backward: loss is not on a tape");
  tape->backward(loss);
}

Tensor record_op(std::string_view op, Shape shape, std::vector<Scalar> data,
                 std::initializer_list<const Tensor*> inputs,
                 std::function<void(const TensorImpl& out)> fn) {
  Tape* tape = g_active_tape;
  bool needs_grad = false;
  if (tape != nullptr)
    for (const Tensor* in : inputs) needs_grad = needs_grad || in->requires_grad();
  Tensor out(std::move(shape), std::move(data), needs_grad);
  if (!needs_grad) return out;
  Tape::Node node;
  node.op = op;
  for (const Tensor* in : inputs)
    if (in->tape() == tape && in->tape_id()) node.inputs.push_back(*in->tape_id());
  node.output = out.impl();
  node.backward = std::move(fn);
  const std::size_t id = tape->append(std::move(node));
  out.impl()->tape = tape;
  out.impl()->tape_id = id;
  return out;
}

}  // namespace xabr
