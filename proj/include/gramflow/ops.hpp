#pragma once

#include "gramflow/tensor.hpp"

namespace gramflow {

// Feature maps are (T, H, W, C) row-major throughout.

// Same-padded 3D convolution.  weight is (kt, kh, kw, Cin, Cout) with odd
// spatial/temporal extents; bias is (Cout).  Out-of-range taps read zero.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv3dGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;
};
Conv3dGrads conv3d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy);

// Per-token group normalization: channels split into `groups` contiguous
// groups, each normalized with biased variance over its channels at every
// (t, h, w) independently.  gamma/beta are (C).
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::size_t groups, double eps);

struct GroupNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
GroupNormGrads group_norm_backward(const Tensor& x, const Tensor& gamma,
                                   std::size_t groups, double eps, const Tensor& dy);

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& dy);

// Per-token channel mixing: y[n, co] = bias[co] + sum_ci weight[co, ci] * x[n, ci]
// where n runs over all leading axes.  weight is (Cout, Cin), bias (Cout).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy);

// Linear temporal upsampling by integer factor s: output has s*(T-1)+1 frames,
// every s-th output frame is a bitwise copy of an input frame and the rest are
// linear blends of the two neighbours.
Tensor interp_temporal(const Tensor& x, std::size_t factor);
Tensor interp_temporal_backward(const Shape& x_dims, std::size_t factor, const Tensor& dy);

// Align-corners bilinear resize of the (H, W) axes; T and C are preserved.
// An identity resize is a bitwise copy.
Tensor resample_spatial(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor resample_spatial_backward(const Shape& x_dims, const Tensor& dy);

}  // namespace gramflow
