#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fewshot {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tensor;

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

// Row-major float32 array. Copies of a Tensor are handles to the same
// storage; use clone() for an independent copy. The shape never changes
// after construction.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  explicit operator bool() const noexcept { return defined(); }

  // Creation-order id, unique per process.
  std::uint64_t id() const;

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  // Direct write access, for parameter updates and test perturbation. Not
  // recorded on the tape.
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();  // allocates a zero gradient if absent
  void zero_grad();
  void clear_grad();

  // True when this tensor was produced by a recorded operation.
  bool has_history() const;

  // Independent copy of the values; no gradient, no history.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  bool shares_storage_with(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class AutogradAccess;
};

// Receives the output gradient and accumulates into the inputs' gradients
// through AutogradAccess::grad_of.
using BackwardFn = std::function<void(std::span<const float> grad_output)>;

// Hook for defining differentiable operations outside the core.
class AutogradAccess {
 public:
  // Creates the output tensor of an op. When recording is enabled and any
  // input requires grad, the output joins the tape with the given rule.
  static Tensor make_result(const char* op_name, Shape shape, std::vector<float> data,
                            std::vector<Tensor> inputs, BackwardFn backward);

  // Gradient buffer of an op input, allocated on first use.
  static std::span<float> grad_of(const Tensor& t);

  static bool wants_grad(const Tensor& t);

 private:
  static detail::TensorImpl* impl(const Tensor& t) { return t.impl_.get(); }

  friend class GradTape;
  friend void backward(const Tensor& loss);
};

// One recorded operation.
struct TapeNode {
  std::string op;
  std::vector<std::uint64_t> input_ids;
  std::uint64_t output_id;
};

// Recorded operations reachable from a root, in topological (execution) order.
class GradTape {
 public:
  static GradTape trace(const Tensor& root);

  const std::vector<TapeNode>& nodes() const { return nodes_; }

 private:
  std::vector<TapeNode> nodes_;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// requires_grad tensor reachable from the loss. Throws std::invalid_argument
// if the loss is not a single element or carries no gradient history.
void backward(const Tensor& loss);

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

}  // namespace fewshot
