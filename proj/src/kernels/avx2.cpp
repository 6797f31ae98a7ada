// AVX2 + FMA kernels. This translation unit is the only one built with
// -mavx2 -mfma; callers reach it through the dispatch table after a CPU check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fewshot/kernels.hpp"

namespace fewshot::kernels {
namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

struct PackBuffers {
  std::vector<float> a;
  std::vector<float> b;
};

PackBuffers& pack_buffers() {
  thread_local PackBuffers buffers;
  return buffers;
}

// Packs op(A)[ic:ic+mc, pc:pc+kc] into kMr-row slivers, zero padded.
void pack_a(bool trans, const float* a, std::size_t lda, std::size_t ic, std::size_t pc,
            std::size_t mc, std::size_t kc, float* out) {
  for (std::size_t ir = 0; ir < mc; ir += kMr) {
    const std::size_t rows = std::min(kMr, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t ii = 0; ii < kMr; ++ii) {
        float v = 0.0f;
        if (ii < rows) {
          const std::size_t i = ic + ir + ii;
          const std::size_t col = pc + p;
          v = trans ? a[col * lda + i] : a[i * lda + col];
        }
        *out++ = v;
      }
    }
  }
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into kNr-column slivers, zero padded.
void pack_b(bool trans, const float* b, std::size_t ldb, std::size_t pc, std::size_t jc,
            std::size_t kc, std::size_t nc, float* out) {
  for (std::size_t jr = 0; jr < nc; jr += kNr) {
    const std::size_t cols = std::min(kNr, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      const std::size_t row = pc + p;
      if (!trans && cols == kNr) {
        const float* src = b + row * ldb + jc + jr;
        _mm256_storeu_ps(out, _mm256_loadu_ps(src));
        _mm256_storeu_ps(out + 8, _mm256_loadu_ps(src + 8));
        out += kNr;
        continue;
      }
      for (std::size_t jj = 0; jj < kNr; ++jj) {
        float v = 0.0f;
        if (jj < cols) {
          const std::size_t j = jc + jr + jj;
          v = trans ? b[j * ldb + row] : b[row * ldb + j];
        }
        *out++ = v;
      }
    }
  }
}

void micro_kernel(std::size_t kc, const float* ap, const float* bp, float* c, std::size_t ldc,
                  float alpha, float beta, std::size_t mr, std::size_t nr) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();

  for (std::size_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 av = _mm256_broadcast_ss(ap + 0);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(ap + 1);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(ap + 2);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(ap + 3);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
    av = _mm256_broadcast_ss(ap + 4);
    c40 = _mm256_fmadd_ps(av, b0, c40);
    c41 = _mm256_fmadd_ps(av, b1, c41);
    av = _mm256_broadcast_ss(ap + 5);
    c50 = _mm256_fmadd_ps(av, b0, c50);
    c51 = _mm256_fmadd_ps(av, b1, c51);
    ap += kMr;
    bp += kNr;
  }

  alignas(32) float tile[kMr * kNr];
  const __m256 va = _mm256_set1_ps(alpha);
  _mm256_store_ps(tile + 0 * kNr, _mm256_mul_ps(va, c00));
  _mm256_store_ps(tile + 0 * kNr + 8, _mm256_mul_ps(va, c01));
  _mm256_store_ps(tile + 1 * kNr, _mm256_mul_ps(va, c10));
  _mm256_store_ps(tile + 1 * kNr + 8, _mm256_mul_ps(va, c11));
  _mm256_store_ps(tile + 2 * kNr, _mm256_mul_ps(va, c20));
  _mm256_store_ps(tile + 2 * kNr + 8, _mm256_mul_ps(va, c21));
  _mm256_store_ps(tile + 3 * kNr, _mm256_mul_ps(va, c30));
  _mm256_store_ps(tile + 3 * kNr + 8, _mm256_mul_ps(va, c31));
  _mm256_store_ps(tile + 4 * kNr, _mm256_mul_ps(va, c40));
  _mm256_store_ps(tile + 4 * kNr + 8, _mm256_mul_ps(va, c41));
  _mm256_store_ps(tile + 5 * kNr, _mm256_mul_ps(va, c50));
  _mm256_store_ps(tile + 5 * kNr + 8, _mm256_mul_ps(va, c51));

  if (nr == kNr) {
    const __m256 vb = _mm256_set1_ps(beta);
    for (std::size_t r = 0; r < mr; ++r) {
      float* row = c + r * ldc;
      __m256 lo = _mm256_load_ps(tile + r * kNr);
      __m256 hi = _mm256_load_ps(tile + r * kNr + 8);
      if (beta != 0.0f) {
        lo = _mm256_fmadd_ps(vb, _mm256_loadu_ps(row), lo);
        hi = _mm256_fmadd_ps(vb, _mm256_loadu_ps(row + 8), hi);
      }
      _mm256_storeu_ps(row, lo);
      _mm256_storeu_ps(row + 8, hi);
    }
    return;
  }
  for (std::size_t r = 0; r < mr; ++r) {
    float* row = c + r * ldc;
    for (std::size_t j = 0; j < nr; ++j) {
      const float v = tile[r * kNr + j];
      row[j] = beta == 0.0f ? v : std::fma(beta, row[j], v);
    }
  }
}

void sgemm_avx2(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
                float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                float beta, float* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0 || alpha == 0.0f) {
    for (std::size_t i = 0; i < m; ++i) {
      float* row = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) row[j] = beta == 0.0f ? 0.0f : beta * row[j];
    }
    return;
  }
  const bool ta = trans_a == Transpose::kYes;
  const bool tb = trans_b == Transpose::kYes;
  PackBuffers& buffers = pack_buffers();
  buffers.a.resize(kMc * kKc);
  buffers.b.resize(kKc * kNc);

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      const float block_beta = pc == 0 ? beta : 1.0f;
      pack_b(tb, b, ldb, pc, jc, kc, nc, buffers.b.data());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        pack_a(ta, a, lda, ic, pc, mc, kc, buffers.a.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const std::size_t nr = std::min(kNr, nc - jr);
          const float* bp = buffers.b.data() + (jr / kNr) * kc * kNr;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const std::size_t mr = std::min(kMr, mc - ir);
            const float* ap = buffers.a.data() + (ir / kMr) * kc * kMr;
            micro_kernel(kc, ap, bp, c + (ic + ir) * ldc + jc + jr, ldc, alpha, block_beta, mr,
                         nr);
          }
        }
      }
    }
  }
}

void accumulate_avx2(float* y, const float* x, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) y[i] += x[i];
}

void relu_forward_avx2(const float* x, float* y, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward_avx2(const float* x, const float* gy, float* gx, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 pass = _mm256_and_ps(mask, _mm256_loadu_ps(gy + i));
    _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), pass));
  }
  for (; i < n; ++i) gx[i] += x[i] > 0.0f ? gy[i] : 0.0f;
}

// Same operation order as the scalar kernel (no fused multiply-add), so the
// result is bit-identical to the reference.
void rmsprop_update_avx2(float* param, float* mean_square, float* grad, std::size_t n, float lr,
                         float rho, float eps) {
  const float one_minus_rho = 1.0f - rho;
  const __m256 vrho = _mm256_set1_ps(rho);
  const __m256 vomr = _mm256_set1_ps(one_minus_rho);
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 veps = _mm256_set1_ps(eps);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad + i);
    const __m256 s = _mm256_add_ps(_mm256_mul_ps(vrho, _mm256_loadu_ps(mean_square + i)),
                                   _mm256_mul_ps(vomr, _mm256_mul_ps(g, g)));
    _mm256_storeu_ps(mean_square + i, s);
    const __m256 step =
        _mm256_div_ps(_mm256_mul_ps(vlr, g), _mm256_add_ps(_mm256_sqrt_ps(s), veps));
    _mm256_storeu_ps(param + i, _mm256_sub_ps(_mm256_loadu_ps(param + i), step));
    _mm256_storeu_ps(grad + i, zero);
  }
  for (; i < n; ++i) {
    const float g = grad[i];
    const float s = rho * mean_square[i] + one_minus_rho * (g * g);
    mean_square[i] = s;
    param[i] -= lr * g / (std::sqrt(s) + eps);
    grad[i] = 0.0f;
  }
}

float squared_distance_avx2(const float* a, const float* b, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    acc = _mm256_fmadd_ps(d, d, acc);
  }
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, acc);
  float total = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; i < n; ++i) {
    const float d = a[i] - b[i];
    total += d * d;
  }
  return total;
}

constexpr KernelTable kAvx2Table{
    Backend::kAvx2,     "avx2",
    &sgemm_avx2,        &accumulate_avx2,
    &relu_forward_avx2, &relu_backward_avx2,
    &rmsprop_update_avx2, &squared_distance_avx2,
};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2Table; }

}  // namespace fewshot::kernels
