#pragma once

#include "lfs/light_field.hpp"
#include "lfs/ops.hpp"
#include "lfs/tensor.hpp"

namespace lfs {

/// Per-view 2D sampling offsets in pixels, shape [U,U,H,W,2] with channel 0
/// = dx and channel 1 = dy. Offsets add to the identity grid, so zero flow
/// is the identity warp.
struct AppearanceFlowField {
  Tensor flows;

  AppearanceFlowField() = default;
  explicit AppearanceFlowField(Tensor t);

  std::int64_t angular() const { return flows.extent(0); }
  std::int64_t height() const { return flows.extent(2); }
  std::int64_t width() const { return flows.extent(3); }
};

/// Pixels of shift per unit angular distance (the bias-initialization
/// constant).
struct ShiftScale {
  double eta = 0.8;
};

/// Builds a U x U light field whose view at angular offset du is the center
/// image translated by -eta * du (bilinear, clamp-to-edge). The center view
/// is the unmodified input. Differentiable w.r.t. `center`. U must be odd.
LightField shift_views(Tape& tape, const Tensor& center, std::int64_t views, ShiftScale eta);

/// Variant with an explicit center index; even grids (which have no exact
/// center view) designate one, as the table-faithful 8x8 model does.
LightField shift_views_centered(Tape& tape, const Tensor& center, std::int64_t views,
                                double eta, std::int64_t center_index);

/// Unpacks a raw [H,W,2U^2] network output into per-view flows. The view
/// with linear index s = v + u*U (rows fastest within a column) owns
/// channels (2s, 2s+1) as (dx, dy).
AppearanceFlowField decode_flow(Tape& tape, const Tensor& raw, std::int64_t views);

/// Inverse of decode_flow (layout packing), mainly for tests and export.
Tensor encode_flow(Tape& tape, const AppearanceFlowField& flow);

/// Per view: output(x) = bilinear_sample(shifted_view, x + flow(x)).
/// Differentiable through both arguments.
LightField warp(Tape& tape, const LightField& shifted, const AppearanceFlowField& flow);

/// Bilinearly resizes each flow component by `factor` and scales the vector
/// magnitudes by `factor` (offsets are in pixels of the new grid).
AppearanceFlowField upsample_flow(Tape& tape, const AppearanceFlowField& flow, int factor);

// Channel-stacking between a [U,U,H,W,C] field and an [H,W,U^2*C] tensor,
// using the same s = v + u*U view order as decode_flow.
Tensor views_to_channels(Tape& tape, const Tensor& field);
Tensor channels_to_views(Tape& tape, const Tensor& stacked, std::int64_t views,
                         std::int64_t channels);

// Flow export: the packed container with C=2, plus a color-wheel rendering
// (hue = direction, saturation = magnitude, white = zero) of one view.
void save_flow(const AppearanceFlowField& flow, const std::string& path,
               LfDtype dtype = LfDtype::F64);
AppearanceFlowField load_flow(const std::string& path);
PngImage flow_view_to_png(const AppearanceFlowField& flow, std::int64_t v, std::int64_t u);

}  // namespace lfs
