#include "lfs/metrics.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace lfs {

namespace {

using i64 = std::int64_t;

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

double mse(const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape(), b.shape())) {
    throw ArgumentError("metrics: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  return (a.values() - b.values()).square().mean();
}

double psnr_from_mse(double m) {
  if (m < 1e-10) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / m));
}

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> w{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable Gaussian-weighted local mean with border renormalization; at
// positions where the full window fits this equals plain 'valid' filtering.
void blur(const std::vector<double>& in, i64 H, i64 W, std::vector<double>& out,
          std::vector<double>& tmp) {
  static const std::array<double, kWin> win = gaussian_window();
  const int r = kWin / 2;
  tmp.resize(in.size());
  out.resize(in.size());
  for (i64 y = 0; y < H; ++y) {
    for (i64 x = 0; x < W; ++x) {
      double acc = 0.0, wsum = 0.0;
      for (int k = -r; k <= r; ++k) {
        const i64 xx = x + k;
        if (xx < 0 || xx >= W) continue;
        acc += win[k + r] * in[y * W + xx];
        wsum += win[k + r];
      }
      tmp[y * W + x] = acc / wsum;
    }
  }
  for (i64 y = 0; y < H; ++y) {
    for (i64 x = 0; x < W; ++x) {
      double acc = 0.0, wsum = 0.0;
      for (int k = -r; k <= r; ++k) {
        const i64 yy = y + k;
        if (yy < 0 || yy >= H) continue;
        acc += win[k + r] * tmp[yy * W + x];
        wsum += win[k + r];
      }
      out[y * W + x] = acc / wsum;
    }
  }
}

double ssim_channel(const std::vector<double>& a, const std::vector<double>& b, i64 H, i64 W) {
  const i64 n = H * W;
  std::vector<double> aa(n), bb(n), ab(n);
  for (i64 i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  std::vector<double> mu_a, mu_b, m_aa, m_bb, m_ab, tmp;
  blur(a, H, W, mu_a, tmp);
  blur(b, H, W, mu_b, tmp);
  blur(aa, H, W, m_aa, tmp);
  blur(bb, H, W, m_bb, tmp);
  blur(ab, H, W, m_ab, tmp);

  const int r = kWin / 2;
  const bool valid = H >= kWin && W >= kWin;
  const i64 y0 = valid ? r : 0, y1 = valid ? H - r : H;
  const i64 x0 = valid ? r : 0, x1 = valid ? W - r : W;
  double acc = 0.0;
  i64 count = 0;
  for (i64 y = y0; y < y1; ++y) {
    for (i64 x = x0; x < x1; ++x) {
      const i64 i = y * W + x;
      const double va = m_aa[i] - mu_a[i] * mu_a[i];
      const double vb = m_bb[i] - mu_b[i] * mu_b[i];
      const double cov = m_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
      acc += num / den;
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape(), b.shape())) {
    throw ArgumentError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  if (a.rank() != 3) throw ArgumentError("ssim: need [H,W,C], got " + shape_str(a.shape()));
  const i64 H = a.extent(0), W = a.extent(1), C = a.extent(2);
  std::vector<double> ca(static_cast<std::size_t>(H * W)), cb(ca.size());
  double acc = 0.0;
  for (i64 c = 0; c < C; ++c) {
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (i64 p = 0; p < H * W; ++p) {
      ca[static_cast<std::size_t>(p)] = pa[p * C + c];
      cb[static_cast<std::size_t>(p)] = pb[p * C + c];
    }
    acc += ssim_channel(ca, cb, H, W);
  }
  return acc / static_cast<double>(C);
}

double psnr(const LightField& a, const LightField& b) {
  if (!same_shape(a.data.shape(), b.data.shape())) {
    throw ArgumentError("psnr: field shape mismatch " + shape_str(a.data.shape()) + " vs " +
                        shape_str(b.data.shape()));
  }
  const i64 U = a.angular();
  const i64 c = a.center();
  double acc = 0.0;
  i64 count = 0;
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      if (v == c && u == c) continue;  // center view is the pass-through input
      acc += psnr(a.view(v, u), b.view(v, u));
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("psnr: field has no non-center views");
  return acc / static_cast<double>(count);
}

double ssim(const LightField& a, const LightField& b) {
  if (!same_shape(a.data.shape(), b.data.shape())) {
    throw ArgumentError("ssim: field shape mismatch " + shape_str(a.data.shape()) + " vs " +
                        shape_str(b.data.shape()));
  }
  const i64 U = a.angular();
  const i64 c = a.center();
  double acc = 0.0;
  i64 count = 0;
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      if (v == c && u == c) continue;
      acc += ssim(a.view(v, u), b.view(v, u));
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("ssim: field has no non-center views");
  return acc / static_cast<double>(count);
}

double masked_psnr(const Tensor& a, const Tensor& b, const Tensor& mask) {
  if (!same_shape(a.shape(), b.shape())) {
    throw ArgumentError("masked_psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  if (a.rank() != 3) throw ArgumentError("masked_psnr: need [H,W,C]");
  const i64 H = a.extent(0), W = a.extent(1), C = a.extent(2);
  if (mask.size() != H * W) {
    throw ArgumentError("masked_psnr: mask size " + shape_str(mask.shape()) +
                        " does not match spatial extents");
  }
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  const double* pm = mask.values().data();
  double acc = 0.0;
  i64 count = 0;
  for (i64 p = 0; p < H * W; ++p) {
    if (pm[p] <= 0.5) continue;
    for (i64 c = 0; c < C; ++c) {
      const double d = pa[p * C + c] - pb[p * C + c];
      acc += d * d;
    }
    count += C;
  }
  if (count == 0) throw ArgumentError("masked_psnr: empty mask");
  return psnr_from_mse(acc / static_cast<double>(count));
}

}  // namespace lfs
