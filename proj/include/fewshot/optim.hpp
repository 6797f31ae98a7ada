#pragma once

#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

struct RmsPropOptions {
  float lr = 1e-4f;
  float rho = 0.7f;
  float eps = 1e-8f;
};

// RMSprop with a per-parameter moving average of squared gradients:
//   s <- rho*s + (1-rho)*g^2,  p <- p - lr*g/(sqrt(s)+eps)
// Gradients are zeroed after each step.
class RmsProp {
 public:
  RmsProp(std::vector<Tensor> params, RmsPropOptions options);

  // Throws std::logic_error if a parameter has no gradient.
  void step();

  const RmsPropOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Mean-square accumulators, one per parameter, same shapes.
  const std::vector<Tensor>& state() const { return mean_square_; }
  void load_state(const std::vector<Tensor>& state);

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> mean_square_;
  RmsPropOptions options_;
};

// Functional form used by tests: one update over the given parameters.
void rmsprop_step(std::vector<Tensor>& params, std::vector<Tensor>& mean_square, float lr,
                  float rho, float eps = 1e-8f);

}  // namespace fewshot
