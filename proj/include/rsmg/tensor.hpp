#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "rsmg/error.hpp"

namespace rsmg {

using Shape = std::vector<int>;

/// 64-byte aligned storage, so vectorised kernels take the same code path,
/// and round the same way, wherever the buffer lands.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<float, AlignedAllocator<float>>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 for leaves and untracked values
  std::int64_t node = -1;

  /// Gradient buffer, allocated (zero-filled) on first use.
  std::span<float> grad_buffer();
};

/// Dense row-major float32 array. Copies share storage; use `detach()` for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  /// Extent along `axis`; negative axes count from the end.
  int dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  std::vector<float> values() const { return {impl_->data.begin(), impl_->data.end()}; }

  /// Accumulated gradient, or an empty span when nothing has been accumulated.
  std::span<const float> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  float item() const;
  Tensor detach() const;

  std::uint64_t tape_id() const { return impl_->tape_id; }
  std::int64_t node() const { return impl_->node; }

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Append-only record of differentiable operations for one forward pass.
///
/// A tape is bound to the calling thread with `Tape::Scope`. Operations whose
/// inputs require gradients are recorded on the active tape; with no active
/// tape, results are plain values (inference mode). `backward` walks nodes in
/// strict reverse insertion order.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const float> grad_out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Populates gradients on every leaf reachable from `loss`. Leaf gradients
  /// accumulate across calls until `Tensor::zero_grad`; intermediate gradients
  /// are reset per call.
  void backward(const Tensor& loss);

  void record(const char* op, const std::vector<const Tensor*>& inputs, Tensor& out, BackwardFn fn);

  /// Op kind of node `i`.
  const char* op_name(std::size_t i) const { return nodes_.at(i).op; }
  const std::vector<std::int64_t>& node_inputs(std::size_t i) const { return nodes_.at(i).input_nodes; }

  static Tape* active();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  struct Node {
    const char* op;
    std::vector<std::int64_t> input_nodes;
    std::shared_ptr<TensorImpl> out;
    BackwardFn fn;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

/// Backward through the active tape.
void backward(const Tensor& loss);

/// Returns the tape an op over `inputs` must record on, or nullptr when no
/// gradient is needed. Throws DetachedTensor when an input lives on another tape.
Tape* recording_tape(const std::vector<const Tensor*>& inputs);

/// Accumulates `g` into the gradient of `t` if it requires one.
void accumulate_grad(const Tensor& t, std::span<const float> g);

/// Shorthand for ops: record if needed, otherwise leave `out` untracked.
template <class Fn>
void record_if_needed(const char* op, const std::vector<const Tensor*>& inputs, Tensor& out, Fn&& fn) {
  if (Tape* tape = recording_tape(inputs)) tape->record(op, inputs, out, std::forward<Fn>(fn));
}

}  // namespace rsmg
