#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace fewshot::kernels {

enum class Transpose { kNo, kYes };

enum class Backend { kScalar, kAvx2 };

// Row-major single precision kernels. Every backend implements the same
// contract; the scalar table is the reference the others are tested against.
struct KernelTable {
  Backend backend;
  const char* name;

  // C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C. With beta == 0 the
  // previous contents of C are never read.
  void (*sgemm)(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
                float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                float beta, float* c, std::size_t ldc);

  // y[i] += x[i]
  void (*accumulate)(float* y, const float* x, std::size_t n);

  // y[i] = max(0, x[i])
  void (*relu_forward)(const float* x, float* y, std::size_t n);

  // gx[i] += x[i] > 0 ? gy[i] : 0
  void (*relu_backward)(const float* x, const float* gy, float* gx, std::size_t n);

  // s = rho*s + (1-rho)*g^2; p -= lr*g/(sqrt(s)+eps); g = 0
  void (*rmsprop_update)(float* param, float* mean_square, float* grad, std::size_t n, float lr,
                         float rho, float eps);

  // sum_i (a[i]-b[i])^2
  float (*squared_distance)(const float* a, const float* b, std::size_t n);
};

const KernelTable& scalar_table();

// Returns nullptr when the backend was not compiled in.
const KernelTable* avx2_table();

bool cpu_supports(Backend backend);

// Backends usable on this machine, scalar first.
std::vector<Backend> available_backends();

// Active table. Chosen on first use: FEWSHOT_KERNELS=scalar|avx2 if set and
// supported, otherwise the widest backend the CPU supports.
const KernelTable& active();

// Overrides the active backend. Throws std::invalid_argument if unsupported.
void select(Backend backend);

std::string_view backend_name(Backend backend);

}  // namespace fewshot::kernels
