#include "fewshot/optim.hpp"

#include <stdexcept>
#include <string>

#include "fewshot/errors.hpp"
#include "fewshot/kernels.hpp"

namespace fewshot {

void rmsprop_step(std::vector<Tensor>& params, std::vector<Tensor>& mean_square, float lr,
                  float rho, float eps) {
  if (!(lr >= 0.0f)) throw std::invalid_argument("rmsprop: learning rate must be non-negative");
  if (!(rho > 0.0f && rho < 1.0f)) throw std::invalid_argument("rmsprop: rho must be in (0,1)");
  if (params.size() != mean_square.size()) {
    throw std::invalid_argument("rmsprop: state count does not match parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::logic_error("rmsprop: parameter " + std::to_string(i) + " " +
                             shape_to_string(params[i].shape()) + " has no gradient");
    }
  }
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    std::span<float> data = p.mutable_data();
    std::span<float> grad = p.mutable_grad();
    std::span<float> s = mean_square[i].mutable_data();
    k.rmsprop_update(data.data(), s.data(), grad.data(), data.size(), lr, rho, eps);
  }
}

RmsProp::RmsProp(std::vector<Tensor> params, RmsPropOptions options)
    : params_(std::move(params)), options_(options) {
  mean_square_.reserve(params_.size());
  for (const Tensor& p : params_) mean_square_.push_back(Tensor::zeros(p.shape()));
}

void RmsProp::step() { rmsprop_step(params_, mean_square_, options_.lr, options_.rho, options_.eps); }

void RmsProp::load_state(const std::vector<Tensor>& state) {
  if (state.size() != mean_square_.size()) {
    throw ShapeError("rmsprop: state has " + std::to_string(state.size()) + " tensors, expected " +
                     std::to_string(mean_square_.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i].shape() != mean_square_[i].shape()) {
      throw ShapeError("rmsprop: state tensor " + std::to_string(i) + " has shape " +
                       shape_to_string(state[i].shape()));
    }
    mean_square_[i] = state[i].clone();
  }
}

}  // namespace fewshot
