#pragma once

#include <cstdint>
#include <string>

#include "lfs/png_io.hpp"
#include "lfs/tensor.hpp"

namespace lfs {

/// Angular offset of a view relative to the center view.
struct ViewOffset {
  std::int64_t dv = 0;
  std::int64_t dh = 0;
};

/// 4D light field held as a [U,U,H,W,C] tensor. The angular grid is square
/// with equal extent in both directions; stored sample values live in [0,1];
/// the center view sits at index ceil(U/2)-1 on both angular axes.
struct LightField {
  Tensor data;

  LightField() = default;
  explicit LightField(Tensor t);

  std::int64_t angular() const { return data.extent(0); }
  std::int64_t height() const { return data.extent(2); }
  std::int64_t width() const { return data.extent(3); }
  std::int64_t channels() const { return data.extent(4); }
  std::int64_t center() const { return (angular() + 1) / 2 - 1; }
  std::int64_t view_count() const { return angular() * angular(); }
  ViewOffset offset(std::int64_t v, std::int64_t u) const {
    return ViewOffset{v - center(), u - center()};
  }

  /// Plain copy of one view as an [H,W,C] tensor (no tape involvement).
  Tensor view(std::int64_t v, std::int64_t u) const;
  Tensor center_view() const { return view(center(), center()); }

  double at(std::int64_t v, std::int64_t u, std::int64_t y, std::int64_t x,
            std::int64_t c) const {
    return data.at(v, u, y, x, c);
  }
};

/// Sample encoding of the packed ".lf4" container.
enum class LfDtype : std::uint32_t { F32 = 0, F64 = 1 };

// Packed binary ".lf4": little-endian, magic "LF4D", u32 header fields
// (version, U_v, U_h, H, W, C, dtype), then samples in [v,u,h,w,c] row-major
// order. F64 round-trips bit-identically. The same container carries flow
// (C=2) and disparity (C=1) sidecars via the tensor variants.
void save_lf4(const LightField& lf, const std::string& path, LfDtype dtype = LfDtype::F64);
LightField load_lf4(const std::string& path);
void save_lf4_tensor(const Tensor& t, const std::string& path, LfDtype dtype = LfDtype::F64);
Tensor load_lf4_tensor(const std::string& path);

// SAI-grid directory: 8-bit "view_{v}_{u}.png" files plus "manifest.json"
// with fields {views, height, width, channels}. Round-trips within 8-bit
// quantization (<= 1/255 per sample).
void save_sai_grid(const LightField& lf, const std::string& dir);
LightField load_sai_grid(const std::string& dir);

/// Horizontal EPI: row `fixed_row` of views (fixed_v, u) stacked over u;
/// result shape [U,W,C].
Tensor epi(const LightField& lf, std::int64_t fixed_row, std::int64_t fixed_v);

/// Shift-and-average refocusing: every view is sampled at x + slope * du
/// (bilinear, clamp-to-edge) and the views are averaged. Slope 0 yields
/// exactly the per-pixel view mean.
Tensor refocus(const LightField& lf, double slope);

// Conversions between 8-bit images and [H,W,C] float tensors in [0,1].
// Quantization rounds half to even.
Tensor image_from_png(const PngImage& img);
PngImage png_from_image(const Tensor& image);

/// Rec.601 luminance of an [H,W,3] image; [H,W,1] passes through.
Tensor to_luminance(const Tensor& image);

}  // namespace lfs
