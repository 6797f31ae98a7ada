#pragma once

#include <cstddef>

#include "fewshot/tensor.hpp"

namespace fewshot::ops {

// Valid (unpadded) stride-1 convolution.
// input [B,C,H,W], kernel [F,C,kh,kw], bias [F] -> [B,F,H-kh+1,W-kw+1].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// Non-overlapping max pooling with a window x window kernel and stride
// window. Trailing rows/columns that don't fill a window are dropped. Ties
// route the gradient to the first maximum in row-major order.
Tensor maxpool2d(const Tensor& input, std::size_t window);

// input [B,n], weight [n,m], bias [m] -> [B,m].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& input);

Tensor reshape(const Tensor& input, Shape shape);

// [B, ...] -> [B, prod(...)].
Tensor flatten(const Tensor& input);

// Concatenates along the leading axis; trailing shapes must agree.
Tensor concat_rows(const Tensor& a, const Tensor& b);

// Rows [begin, end) of the leading axis.
Tensor slice_rows(const Tensor& input, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& input);
Tensor mean(const Tensor& input);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& input, float factor);

// Sum of absolute values. Subgradient 0 at 0.
Tensor abs_sum(const Tensor& input);

}  // namespace fewshot::ops
