#pragma once

#include <utility>
#include <vector>

#include "lfs/tensor.hpp"

// Differentiable operations over Tensor. Every function validates shapes,
// computes the forward value, checks it for non-finite entries and, when any
// input requires gradients, records a backward rule on the tape.
//
// Layout conventions: images are [H,W,C]; convolution kernels are
// [kh,kw,Cin,Cout]; transpose-convolution kernels are [kh,kw,Cout,Cin];
// sampling coordinates are [H,W,2] with channel 0 = x (along W) and
// channel 1 = y (along H), in absolute pixel units.

namespace lfs {

// Elementwise arithmetic (shapes must match; no broadcasting).
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_scalar(Tape& tape, const Tensor& x, double offset);
Tensor abs(Tape& tape, const Tensor& x);
Tensor square(Tape& tape, const Tensor& x);

// Full reductions to a rank-0 scalar.
Tensor sum_all(Tape& tape, const Tensor& x);
Tensor mean_all(Tape& tape, const Tensor& x);

/// x if x >= 0 else slope * x; the subgradient at 0 takes the positive branch.
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope);

/// Cross-correlation with zero same-padding, output extent ceil(H/stride).
/// Odd kernel extents; stride 1 or 2.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride);

/// Exact linear adjoint of stride-2 conv2d (up to bias); doubles the spatial
/// extent. Kernel layout [kh,kw,Cout,Cin] so that a kernel shared with
/// conv2d satisfies <conv(x,K),y> == <x,convT(y,K)>.
Tensor conv2d_transpose(Tape& tape, const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride = 2);

/// Bilinear sampling of `input` at absolute positions `coords`, clamped to
/// the valid square [0,W-1]x[0,H-1]. Differentiable in both arguments.
Tensor grid_sample(Tape& tape, const Tensor& input, const Tensor& coords);

/// Bilinear upsampling by an integer factor, align-corners convention
/// (endpoints map to endpoints). Rank >= 3; leading axes are batch.
Tensor bilinear_resize(Tape& tape, const Tensor& input, int factor);

/// Mean over the leading axis of [N, ...].
Tensor reduce_view_mean(Tape& tape, const Tensor& x);
/// Unbiased variance (N-1 denominator) over the leading axis; N >= 2.
Tensor reduce_view_var(Tape& tape, const Tensor& x);
std::pair<Tensor, Tensor> reduce_mean_var(Tape& tape, const Tensor& x);

/// Concatenation along the last axis; all other extents must match.
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape);
/// Drops the leading axis: slice_leading([N,rest], i) -> [rest].
Tensor slice_leading(Tape& tape, const Tensor& x, std::int64_t index);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack_leading(Tape& tape, const std::vector<Tensor>& parts);

/// Forward difference along a spatial axis of [...,H,W,C]:
/// dim 0 differences along H (output [...,H-1,W,C]), dim 1 along W.
Tensor forward_diff_spatial(Tape& tape, const Tensor& x, int dim);

// Constant coordinate grids (requires_grad = false).
Tensor identity_grid(std::int64_t height, std::int64_t width);
Tensor const_offset_grid(std::int64_t height, std::int64_t width, double dx, double dy);

/// Copy with values clamped to [0,1]; not differentiable (inference only).
Tensor clamp01_copy(const Tensor& x);

}  // namespace lfs
