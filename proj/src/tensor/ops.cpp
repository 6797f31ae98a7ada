#include "fewshot/ops.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "fewshot/errors.hpp"
#include "fewshot/kernels.hpp"

namespace fewshot::ops {
namespace {

using kernels::Transpose;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": " + what + " is undefined");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_to_string(t.shape()));
  }
}

[[noreturn]] void dim_mismatch(const char* op, const std::string& what, std::size_t got,
                               std::size_t want) {
  throw ShapeError(std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " +
                   std::to_string(want));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  const std::size_t filters = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != channels) dim_mismatch("conv2d", "kernel channel dim", kernel.dim(1), channels);
  if (bias.dim(0) != filters) dim_mismatch("conv2d", "bias length", bias.dim(0), filters);
  if (kh > height) {
    throw ShapeError("conv2d: kernel height " + std::to_string(kh) + " exceeds input height " +
                     std::to_string(height));
  }
  if (kw > width) {
    throw ShapeError("conv2d: kernel width " + std::to_string(kw) + " exceeds input width " +
                     std::to_string(width));
  }
  const std::size_t out_h = height - kh + 1, out_w = width - kw + 1;
  const std::size_t plane = out_h * out_w;
  const std::size_t cols = batch * plane;
  const std::size_t patch = channels * kh * kw;

  // col[(c,u,v), (b,i,j)] = input[b, c, i+u, j+v]
  auto col = std::make_shared<std::vector<float>>(patch * cols);
  const float* in = input.data().data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t u = 0; u < kh; ++u) {
      for (std::size_t v = 0; v < kw; ++v) {
        float* dst = col->data() + ((c * kh + u) * kw + v) * cols;
        for (std::size_t b = 0; b < batch; ++b) {
          const float* src = in + (b * channels + c) * height * width;
          for (std::size_t i = 0; i < out_h; ++i) {
            const float* row = src + (i + u) * width + v;
            for (std::size_t j = 0; j < out_w; ++j) *dst++ = row[j];
          }
        }
      }
    }
  }

  const auto& k = kernels::active();
  std::vector<float> staged(filters * cols);
  k.sgemm(Transpose::kNo, Transpose::kNo, filters, cols, patch, 1.0f, kernel.data().data(), patch,
          col->data(), cols, 0.0f, staged.data(), cols);

  std::vector<float> out(batch * filters * plane);
  const float* bias_data = bias.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < filters; ++f) {
      const float* src = staged.data() + f * cols + b * plane;
      float* dst = out.data() + (b * filters + f) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bias_data[f];
    }
  }

  BackwardFn rule = [input, kernel, bias, col, batch, channels, height, width, filters, kh, kw,
                     out_h, out_w](std::span<const float> grad) {
    const auto& k = kernels::active();
    const std::size_t plane = out_h * out_w;
    const std::size_t cols = batch * plane;
    const std::size_t patch = channels * kh * kw;
    // grad [B,F,P] -> gT [F, B*P]
    std::vector<float> g_t(filters * cols);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t f = 0; f < filters; ++f) {
        const float* src = grad.data() + (b * filters + f) * plane;
        float* dst = g_t.data() + f * cols + b * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p];
      }
    }
    if (AutogradAccess::wants_grad(bias)) {
      auto gb = AutogradAccess::grad_of(bias);
      for (std::size_t f = 0; f < filters; ++f) {
        float acc = 0.0f;
        const float* row = g_t.data() + f * cols;
        for (std::size_t q = 0; q < cols; ++q) acc += row[q];
        gb[f] += acc;
      }
    }
    if (AutogradAccess::wants_grad(kernel)) {
      auto gk = AutogradAccess::grad_of(kernel);
      k.sgemm(Transpose::kNo, Transpose::kYes, filters, patch, cols, 1.0f, g_t.data(), cols,
              col->data(), cols, 1.0f, gk.data(), patch);
    }
    if (AutogradAccess::wants_grad(input)) {
      std::vector<float> dcol(patch * cols);
      k.sgemm(Transpose::kYes, Transpose::kNo, patch, cols, filters, 1.0f, kernel.data().data(),
              patch, g_t.data(), cols, 0.0f, dcol.data(), cols);
      auto gi = AutogradAccess::grad_of(input);
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t u = 0; u < kh; ++u) {
          for (std::size_t v = 0; v < kw; ++v) {
            const float* src = dcol.data() + ((c * kh + u) * kw + v) * cols;
            for (std::size_t b = 0; b < batch; ++b) {
              float* dst = gi.data() + (b * channels + c) * height * width;
              for (std::size_t i = 0; i < out_h; ++i) {
                float* row = dst + (i + u) * width + v;
                for (std::size_t j = 0; j < out_w; ++j) row[j] += *src++;
              }
            }
          }
        }
      }
    }
  };
  return AutogradAccess::make_result("conv2d", {batch, filters, out_h, out_w}, std::move(out),
                                     {input, kernel, bias}, std::move(rule));
}

Tensor maxpool2d(const Tensor& input, std::size_t window) {
  require_rank(input, 4, "maxpool2d", "input");
  if (window == 0) throw ShapeError("maxpool2d: window must be positive");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  const std::size_t out_h = height / window, out_w = width / window;
  if (out_h == 0 || out_w == 0) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t count = batch * channels * out_h * out_w;
  std::vector<float> out(count);
  auto argmax = std::make_shared<std::vector<std::size_t>>(count);
  const float* in = input.data().data();
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const std::size_t base = bc * height * width;
    for (std::size_t i = 0; i < out_h; ++i) {
      for (std::size_t j = 0; j < out_w; ++j, ++o) {
        std::size_t best = base + (i * window) * width + j * window;
        for (std::size_t u = 0; u < window; ++u) {
          for (std::size_t v = 0; v < window; ++v) {
            const std::size_t idx = base + (i * window + u) * width + j * window + v;
            if (in[idx] > in[best]) best = idx;
          }
        }
        out[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  BackwardFn rule = [input, argmax](std::span<const float> grad) {
    auto gi = AutogradAccess::grad_of(input);
    for (std::size_t q = 0; q < grad.size(); ++q) gi[(*argmax)[q]] += grad[q];
  };
  return AutogradAccess::make_result("maxpool2d", {batch, channels, out_h, out_w}, std::move(out),
                                     {input}, std::move(rule));
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  require_rank(bias, 1, "dense", "bias");
  const std::size_t batch = input.dim(0), n = input.dim(1), m = weight.dim(1);
  if (weight.dim(0) != n) dim_mismatch("dense", "weight rows", weight.dim(0), n);
  if (bias.dim(0) != m) dim_mismatch("dense", "bias length", bias.dim(0), m);
  std::vector<float> out(batch * m);
  const float* b = bias.data().data();
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = b[j];
  }
  kernels::active().sgemm(Transpose::kNo, Transpose::kNo, batch, m, n, 1.0f, input.data().data(),
                          n, weight.data().data(), m, 1.0f, out.data(), m);
  BackwardFn rule = [input, weight, bias, batch, n, m](std::span<const float> grad) {
    const auto& k = kernels::active();
    if (AutogradAccess::wants_grad(input)) {
      auto gi = AutogradAccess::grad_of(input);
      k.sgemm(Transpose::kNo, Transpose::kYes, batch, n, m, 1.0f, grad.data(), m,
              weight.data().data(), m, 1.0f, gi.data(), n);
    }
    if (AutogradAccess::wants_grad(weight)) {
      auto gw = AutogradAccess::grad_of(weight);
      k.sgemm(Transpose::kYes, Transpose::kNo, n, m, batch, 1.0f, input.data().data(), n,
              grad.data(), m, 1.0f, gw.data(), m);
    }
    if (AutogradAccess::wants_grad(bias)) {
      auto gb = AutogradAccess::grad_of(bias);
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t j = 0; j < m; ++j) gb[j] += grad[r * m + j];
      }
    }
  };
  return AutogradAccess::make_result("dense", {batch, m}, std::move(out), {input, weight, bias},
                                     std::move(rule));
}

Tensor relu(const Tensor& input) {
  std::vector<float> out(input.numel());
  kernels::active().relu_forward(input.data().data(), out.data(), out.size());
  BackwardFn rule = [input](std::span<const float> grad) {
    auto gi = AutogradAccess::grad_of(input);
    kernels::active().relu_backward(input.data().data(), grad.data(), gi.data(), gi.size());
  };
  return AutogradAccess::make_result("relu", input.shape(), std::move(out), {input},
                                     std::move(rule));
}

Tensor reshape(const Tensor& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(input.shape()) + " as " +
                     shape_to_string(shape));
  }
  std::vector<float> out(input.data().begin(), input.data().end());
  BackwardFn rule = [input](std::span<const float> grad) {
    auto gi = AutogradAccess::grad_of(input);
    kernels::active().accumulate(gi.data(), grad.data(), gi.size());
  };
  return AutogradAccess::make_result("reshape", std::move(shape), std::move(out), {input},
                                     std::move(rule));
}

Tensor flatten(const Tensor& input) {
  if (input.rank() < 1) throw ShapeError("flatten: input must have a leading batch axis");
  const std::size_t batch = input.dim(0);
  return reshape(input, {batch, input.numel() / batch});
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || a.rank() != b.rank()) {
    throw ShapeError("concat_rows: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  for (std::size_t axis = 1; axis < a.rank(); ++axis) {
    if (a.dim(axis) != b.dim(axis)) {
      throw ShapeError("concat_rows: dim " + std::to_string(axis) + " differs: " +
                       shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<float> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t split = a.numel();
  BackwardFn rule = [a, b, split](std::span<const float> grad) {
    const auto& k = kernels::active();
    if (AutogradAccess::wants_grad(a)) {
      auto ga = AutogradAccess::grad_of(a);
      k.accumulate(ga.data(), grad.data(), ga.size());
    }
    if (AutogradAccess::wants_grad(b)) {
      auto gb = AutogradAccess::grad_of(b);
      k.accumulate(gb.data(), grad.data() + split, gb.size());
    }
  };
  return AutogradAccess::make_result("concat_rows", std::move(shape), std::move(out), {a, b},
                                     std::move(rule));
}

Tensor slice_rows(const Tensor& input, std::size_t begin, std::size_t end) {
  if (input.rank() < 1 || begin >= end || end > input.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_to_string(input.shape()));
  }
  const std::size_t row = input.numel() / input.dim(0);
  Shape shape = input.shape();
  shape[0] = end - begin;
  std::vector<float> out(input.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                         input.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  const std::size_t offset = begin * row;
  BackwardFn rule = [input, offset](std::span<const float> grad) {
    auto gi = AutogradAccess::grad_of(input);
    kernels::active().accumulate(gi.data() + offset, grad.data(), grad.size());
  };
  return AutogradAccess::make_result("slice_rows", std::move(shape), std::move(out), {input},
                                     std::move(rule));
}

Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (const float v : input.data()) acc += v;
  BackwardFn rule = [input](std::span<const float> grad) {
    auto gi = AutogradAccess::grad_of(input);
    for (float& g : gi) g += grad[0];
  };
  return AutogradAccess::make_result("sum", {}, {static_cast<float>(acc)}, {input},
                                     std::move(rule));
}

Tensor mean(const Tensor& input) {
  double acc = 0.0;
  for (const float v : input.data()) acc += v;
  const float inv = 1.0f / static_cast<float>(input.numel());
  BackwardFn rule = [input, inv](std::span<const float> grad) {
    auto gi = AutogradAccess::grad_of(input);
    const float g = grad[0] * inv;
    for (float& x : gi) x += g;
  };
  return AutogradAccess::make_result("mean", {},
                                     {static_cast<float>(acc / static_cast<double>(input.numel()))},
                                     {input}, std::move(rule));
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.data().begin(), a.data().end());
  kernels::active().accumulate(out.data(), b.data().data(), out.size());
  BackwardFn rule = [a, b](std::span<const float> grad) {
    const auto& k = kernels::active();
    if (AutogradAccess::wants_grad(a)) {
      k.accumulate(AutogradAccess::grad_of(a).data(), grad.data(), grad.size());
    }
    if (AutogradAccess::wants_grad(b)) {
      k.accumulate(AutogradAccess::grad_of(b).data(), grad.data(), grad.size());
    }
  };
  return AutogradAccess::make_result("add", a.shape(), std::move(out), {a, b}, std::move(rule));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  BackwardFn rule = [a, b](std::span<const float> grad) {
    if (AutogradAccess::wants_grad(a)) {
      auto ga = AutogradAccess::grad_of(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += grad[i] * b.at(i);
    }
    if (AutogradAccess::wants_grad(b)) {
      auto gb = AutogradAccess::grad_of(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += grad[i] * a.at(i);
    }
  };
  return AutogradAccess::make_result("mul", a.shape(), std::move(out), {a, b}, std::move(rule));
}

Tensor scale(const Tensor& input, float factor) {
  std::vector<float> out(input.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.at(i) * factor;
  BackwardFn rule = [input, factor](std::span<const float> grad) {
    auto gi = AutogradAccess::grad_of(input);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += grad[i] * factor;
  };
  return AutogradAccess::make_result("scale", input.shape(), std::move(out), {input},
                                     std::move(rule));
}

Tensor abs_sum(const Tensor& input) {
  double acc = 0.0;
  for (const float v : input.data()) acc += std::fabs(v);
  BackwardFn rule = [input](std::span<const float> grad) {
    auto gi = AutogradAccess::grad_of(input);
    const auto x = input.data();
    for (std::size_t i = 0; i < gi.size(); ++i) {
      gi[i] += x[i] > 0.0f ? grad[0] : (x[i] < 0.0f ? -grad[0] : 0.0f);
    }
  };
  return AutogradAccess::make_result("abs_sum", {}, {static_cast<float>(acc)}, {input},
                                     std::move(rule));
}

}  // namespace fewshot::ops
