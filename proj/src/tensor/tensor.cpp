#include "fewshot/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace detail {

struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  std::uint64_t id;
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::optional<std::vector<float>> grad;
  std::shared_ptr<Node> node;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> next_tensor_id{1};
thread_local bool recording_enabled = true;

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<float> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  for (const std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_to_string(shape));
  }
  const std::size_t n = shape_numel(shape);
  Tensor t(new_impl(std::move(shape), std::vector<float>(n, value)));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  for (const std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_to_string(shape));
  }
  Tensor t(new_impl(std::move(shape), std::move(data)));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

std::uint64_t Tensor::id() const { return impl_->id; }
const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_to_string(impl_->shape));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return impl_->grad.has_value(); }

std::span<const float> Tensor::grad() const {
  if (!impl_->grad) throw std::logic_error("tensor has no gradient");
  return *impl_->grad;
}

std::span<float> Tensor::mutable_grad() {
  if (!impl_->grad) impl_->grad.emplace(impl_->data.size(), 0.0f);
  return *impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0f);
}

void Tensor::clear_grad() { impl_->grad.reset(); }
bool Tensor::has_history() const { return impl_->node != nullptr; }

Tensor Tensor::clone() const { return Tensor(new_impl(impl_->shape, impl_->data)); }

Tensor AutogradAccess::make_result(const char* op_name, Shape shape, std::vector<float> data,
                                   std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(new_impl(std::move(shape), std::move(data)));
  if (!recording_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.impl_->requires_grad; });
  if (!any) return out;
  auto node = std::make_shared<detail::Node>();
  node->op = op_name;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl_->node = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

std::span<float> AutogradAccess::grad_of(const Tensor& t) {
  auto& impl = *t.impl_;
  if (!impl.grad) impl.grad.emplace(impl.data.size(), 0.0f);
  return *impl.grad;
}

bool AutogradAccess::wants_grad(const Tensor& t) { return t.impl_->requires_grad; }

namespace {

// Tensors with history reachable from root, inputs before consumers.
template <typename ImplOf>
std::vector<detail::TensorImpl*> topological_order(detail::TensorImpl* root, ImplOf impl_of) {
  std::vector<detail::TensorImpl*> order;
  if (!root->node) return order;
  std::unordered_set<detail::TensorImpl*> visited{root};
  struct Frame {
    detail::TensorImpl* impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack{{root, 0}};
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& inputs = top.impl->node->inputs;
    if (top.next_input < inputs.size()) {
      detail::TensorImpl* child = impl_of(inputs[top.next_input++]);
      if (child->node && visited.insert(child).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(top.impl);
    stack.pop_back();
  }
  return order;
}

}  // namespace

GradTape GradTape::trace(const Tensor& root) {
  GradTape tape;
  if (!root.defined()) return tape;
  const auto order = topological_order(AutogradAccess::impl(root), &AutogradAccess::impl);
  tape.nodes_.reserve(order.size());
  for (const detail::TensorImpl* impl : order) {
    TapeNode node{impl->node->op, {}, impl->id};
    for (const Tensor& in : impl->node->inputs) node.input_ids.push_back(in.id());
    tape.nodes_.push_back(std::move(node));
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_to_string(loss.shape()));
  }
  detail::TensorImpl* root = AutogradAccess::impl(loss);
  if (!root->node && !root->requires_grad) {
    throw std::invalid_argument("backward: loss is detached from the gradient tape");
  }
  AutogradAccess::grad_of(loss)[0] += 1.0f;
  const auto order = topological_order(root, &AutogradAccess::impl);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    if (!impl->grad) continue;
    impl->node->backward(*impl->grad);
  }
}

NoGradGuard::NoGradGuard() : previous_(recording_enabled) { recording_enabled = false; }
NoGradGuard::~NoGradGuard() { recording_enabled = previous_; }

bool grad_recording_enabled() { return recording_enabled; }

}  // namespace fewshot
