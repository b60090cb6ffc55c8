#include "rsmg/tensor.hpp"

#include <atomic>
#include <numeric>
#include <sstream>

namespace rsmg {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw Error(ErrorCode::InvalidArg, "non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<float> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : impl_(std::make_shared<TensorImpl>()) {
  const auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(data.size()) != n)
    throw Error(ErrorCode::ShapeMismatch,
                "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data.assign(data.begin(), data.end());
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }

int Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw Error(ErrorCode::InvalidArg, "axis out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

float Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::NotScalar, "item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  Tensor out;
  out.impl_ = std::make_shared<TensorImpl>();
  out.impl_->shape = impl_->shape;
  out.impl_->data = impl_->data;
  return out;
}

namespace {

std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* active_tape = nullptr;

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Tape::~Tape() {
  if (active_tape == this) active_tape = nullptr;
}

Tape* Tape::active() { return active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

Tape::Scope::~Scope() { active_tape = previous_; }

void Tape::record(const char* op, const std::vector<const Tensor*>& inputs, Tensor& out, BackwardFn fn) {
  Node node{op, {}, out.impl_ptr(), std::move(fn)};
  node.input_nodes.reserve(inputs.size());
  for (const Tensor* in : inputs) node.input_nodes.push_back(in->impl()->tape_id == id_ ? in->node() : -1);
  out.impl()->requires_grad = true;
  out.impl()->tape_id = id_;
  out.impl()->node = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw Error(ErrorCode::NotScalar, "backward needs a single-element loss");
  if (loss.tape_id() != id_ || loss.node() < 0)
    throw Error(ErrorCode::DetachedTensor, "loss is not attached to this tape");
  for (auto& n : nodes_) n.out->grad.clear();
  loss.impl()->grad_buffer()[0] = 1.0f;
  for (std::int64_t i = loss.node(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.out->grad.empty()) continue;
    n.fn(n.out->grad);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw Error(ErrorCode::DetachedTensor, "no active tape");
  tape->backward(loss);
}

Tape* recording_tape(const std::vector<const Tensor*>& inputs) {
  bool needed = false;
  for (const Tensor* t : inputs) needed = needed || t->requires_grad();
  if (!needed) return nullptr;
  Tape* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->tape_id() != 0 && t->tape_id() != tape->id())
      throw Error(ErrorCode::DetachedTensor, "operand was recorded on a different tape");
  }
  return tape;
}

void accumulate_grad(const Tensor& t, std::span<const float> g) {
  if (!t.requires_grad()) return;
  auto buf = t.impl()->grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace rsmg
