// Portable reference kernels. Straight loops, no intrinsics.

#include <cmath>

#include "fewshot/kernels.hpp"

namespace fewshot::kernels {
namespace {

void sgemm_scalar(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n,
                  std::size_t k, float alpha, const float* a, std::size_t lda, const float* b,
                  std::size_t ldb, float beta, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    float* row = c + i * ldc;
    if (beta == 0.0f) {
      for (std::size_t j = 0; j < n; ++j) row[j] = 0.0f;
    } else if (beta != 1.0f) {
      for (std::size_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  const bool ta = trans_a == Transpose::kYes;
  const bool tb = trans_b == Transpose::kYes;
  for (std::size_t i = 0; i < m; ++i) {
    float* row = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = alpha * (ta ? a[p * lda + i] : a[i * lda + p]);
      if (av == 0.0f) continue;
      if (tb) {
        for (std::size_t j = 0; j < n; ++j) row[j] += av * b[j * ldb + p];
      } else {
        const float* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    }
  }
}

void accumulate_scalar(float* y, const float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void relu_forward_scalar(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward_scalar(const float* x, const float* gy, float* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0f ? gy[i] : 0.0f;
}

void rmsprop_update_scalar(float* param, float* mean_square, float* grad, std::size_t n, float lr,
                           float rho, float eps) {
  const float one_minus_rho = 1.0f - rho;
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grad[i];
    const float s = rho * mean_square[i] + one_minus_rho * (g * g);
    mean_square[i] = s;
    param[i] -= lr * g / (std::sqrt(s) + eps);
    grad[i] = 0.0f;
  }
}

float squared_distance_scalar(const float* a, const float* b, std::size_t n) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const float d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

constexpr KernelTable kScalarTable{
    Backend::kScalar,     "scalar",
    &sgemm_scalar,        &accumulate_scalar,
    &relu_forward_scalar, &relu_backward_scalar,
    &rmsprop_update_scalar, &squared_distance_scalar,
};

}  // namespace

const KernelTable& scalar_table() { return kScalarTable; }

}  // namespace fewshot::kernels
