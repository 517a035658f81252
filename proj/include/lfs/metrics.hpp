#pragma once

#include "lfs/light_field.hpp"
#include "lfs/tensor.hpp"

namespace lfs {

/// PSNR in dB for images in [0,1]; 10*log10(1/MSE), capped at 100 dB when
/// MSE < 1e-10.
double psnr(const Tensor& a, const Tensor& b);

/// Single-scale SSIM, 11-tap Gaussian window (sigma 1.5), k1=0.01, k2=0.03,
/// averaged over channels. Uses the valid interior when the image is at
/// least 11x11, otherwise border-renormalized windows.
double ssim(const Tensor& a, const Tensor& b);

// Field-level metrics: per-view values averaged over all views except the
// center view, which is the input passed through unchanged.
double psnr(const LightField& a, const LightField& b);
double ssim(const LightField& a, const LightField& b);

/// PSNR restricted to pixels where mask > 0.5. `mask` is [H,W] or [H,W,1]
/// and applies to every channel.
double masked_psnr(const Tensor& a, const Tensor& b, const Tensor& mask);

}  // namespace lfs
