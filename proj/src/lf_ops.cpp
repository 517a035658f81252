#include "lfs/lf_ops.hpp"

#include <cmath>
#include <vector>

namespace lfs {

namespace {

using i64 = std::int64_t;

}  // namespace

AppearanceFlowField::AppearanceFlowField(Tensor t) : flows(std::move(t)) {
  if (flows.rank() != 5 || flows.extent(4) != 2) {
    throw ShapeError("AppearanceFlowField must be [U,U,H,W,2], got " + shape_str(flows.shape()));
  }
  if (flows.extent(0) != flows.extent(1)) {
    throw ShapeError("AppearanceFlowField angular grid must be square, got " +
                     shape_str(flows.shape()));
  }
  flows.check_finite("AppearanceFlowField");
}

LightField shift_views(Tape& tape, const Tensor& center, i64 views, ShiftScale eta) {
  if (views < 1 || views % 2 == 0) {
    throw ArgumentError("shift_views: views must be odd, got " + std::to_string(views));
  }
  return shift_views_centered(tape, center, views, eta.eta, (views + 1) / 2 - 1);
}

LightField shift_views_centered(Tape& tape, const Tensor& center, i64 views, double eta,
                                i64 center_index) {
  if (!std::isfinite(eta)) throw ArgumentError("shift_views: eta must be finite");
  if (center.rank() != 3) {
    throw ShapeError("shift_views: center must be [H,W,C], got " + shape_str(center.shape()));
  }
  if (center_index < 0 || center_index >= views) {
    throw ArgumentError("shift_views: center index out of range");
  }
  const i64 H = center.extent(0), W = center.extent(1), C = center.extent(2);

  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(views * views));
  for (i64 v = 0; v < views; ++v) {
    for (i64 u = 0; u < views; ++u) {
      if (v == center_index && u == center_index) {
        parts.push_back(center);
        continue;
      }
      const double dv = static_cast<double>(v - center_index);
      const double dh = static_cast<double>(u - center_index);
      // L_s(x,u) = L(x - eta*du, 0): sample the center at x - eta*du.
      Tensor grid = const_offset_grid(H, W, -eta * dh, -eta * dv);
      parts.push_back(grid_sample(tape, center, grid));
    }
  }
  Tensor stacked = stack_leading(tape, parts);
  return LightField(reshape(tape, stacked, Shape{views, views, H, W, C}));
}

AppearanceFlowField decode_flow(Tape& tape, const Tensor& raw, i64 views) {
  if (raw.rank() != 3) {
    throw ShapeError("decode_flow: raw must be [H,W,2U^2], got " + shape_str(raw.shape()));
  }
  const i64 U = views;
  const i64 H = raw.extent(0), W = raw.extent(1);
  if (raw.extent(2) != 2 * U * U) {
    throw ShapeError("decode_flow: channel count " + std::to_string(raw.extent(2)) +
                     " does not equal 2*U^2 = " + std::to_string(2 * U * U));
  }
  const i64 CH = 2 * U * U;

  Eigen::ArrayXd out(U * U * H * W * 2);
  const double* src = raw.values().data();
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const i64 s = v + u * U;
      double* dst = out.data() + (v * U + u) * H * W * 2;
      for (i64 p = 0; p < H * W; ++p) {
        dst[2 * p] = src[p * CH + 2 * s];
        dst[2 * p + 1] = src[p * CH + 2 * s + 1];
      }
    }
  }

  const bool rg = raw.requires_grad();
  Tensor flows = Tensor::from_array(Shape{U, U, H, W, 2}, std::move(out), rg);
  if (rg) {
    Tensor tin = raw;
    tape.record("decode_flow", {raw}, flows, [tin, flows, U, H, W, CH]() mutable {
      const double* g = flows.grad().data();
      double* gi = tin.grad_buffer().data();
      for (i64 v = 0; v < U; ++v) {
        for (i64 u = 0; u < U; ++u) {
          const i64 s = v + u * U;
          const double* gs = g + (v * U + u) * H * W * 2;
          for (i64 p = 0; p < H * W; ++p) {
            gi[p * CH + 2 * s] += gs[2 * p];
            gi[p * CH + 2 * s + 1] += gs[2 * p + 1];
          }
        }
      }
    });
  }
  return AppearanceFlowField(flows);
}

Tensor encode_flow(Tape& tape, const AppearanceFlowField& flow) {
  const i64 U = flow.angular(), H = flow.height(), W = flow.width();
  const i64 CH = 2 * U * U;

  Eigen::ArrayXd out(H * W * CH);
  const double* src = flow.flows.values().data();
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const i64 s = v + u * U;
      const double* sp = src + (v * U + u) * H * W * 2;
      for (i64 p = 0; p < H * W; ++p) {
        out[p * CH + 2 * s] = sp[2 * p];
        out[p * CH + 2 * s + 1] = sp[2 * p + 1];
      }
    }
  }

  const bool rg = flow.flows.requires_grad();
  Tensor raw = Tensor::from_array(Shape{H, W, CH}, std::move(out), rg);
  if (rg) {
    Tensor tin = flow.flows;
    tape.record("encode_flow", {tin}, raw, [tin, raw, U, H, W, CH]() mutable {
      const double* g = raw.grad().data();
      double* gi = tin.grad_buffer().data();
      for (i64 v = 0; v < U; ++v) {
        for (i64 u = 0; u < U; ++u) {
          const i64 s = v + u * U;
          double* gs = gi + (v * U + u) * H * W * 2;
          for (i64 p = 0; p < H * W; ++p) {
            gs[2 * p] += g[p * CH + 2 * s];
            gs[2 * p + 1] += g[p * CH + 2 * s + 1];
          }
        }
      }
    });
  }
  return raw;
}

LightField warp(Tape& tape, const LightField& shifted, const AppearanceFlowField& flow) {
  const i64 U = shifted.angular();
  if (flow.angular() != U || flow.height() != shifted.height() ||
      flow.width() != shifted.width()) {
    throw ShapeError("warp: flow shape " + shape_str(flow.flows.shape()) +
                     " does not match field " + shape_str(shifted.data.shape()));
  }
  const i64 H = shifted.height(), W = shifted.width(), C = shifted.channels();
  Tensor identity = identity_grid(H, W);

  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(U * U));
  for (i64 v = 0; v < U; ++v) {
    Tensor field_row = slice_leading(tape, shifted.data, v);
    Tensor flow_row = slice_leading(tape, flow.flows, v);
    for (i64 u = 0; u < U; ++u) {
      Tensor view = slice_leading(tape, field_row, u);
      Tensor offsets = slice_leading(tape, flow_row, u);
      Tensor coords = add(tape, identity, offsets);
      parts.push_back(grid_sample(tape, view, coords));
    }
  }
  Tensor stacked = stack_leading(tape, parts);
  return LightField(reshape(tape, stacked, Shape{U, U, H, W, C}));
}

AppearanceFlowField upsample_flow(Tape& tape, const AppearanceFlowField& flow, int factor) {
  if (factor < 1) {
    throw ArgumentError("upsample_flow: factor must be >= 1, got " + std::to_string(factor));
  }
  if (factor == 1) return flow;
  Tensor resized = bilinear_resize(tape, flow.flows, factor);
  return AppearanceFlowField(scale(tape, resized, static_cast<double>(factor)));
}

Tensor views_to_channels(Tape& tape, const Tensor& field) {
  if (field.rank() != 5 || field.extent(0) != field.extent(1)) {
    throw ShapeError("views_to_channels: need [U,U,H,W,C], got " + shape_str(field.shape()));
  }
  const i64 U = field.extent(0), H = field.extent(2), W = field.extent(3), C = field.extent(4);
  const i64 CH = U * U * C;

  Eigen::ArrayXd out(H * W * CH);
  const double* src = field.values().data();
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const i64 s = v + u * U;
      const double* sp = src + (v * U + u) * H * W * C;
      for (i64 p = 0; p < H * W; ++p) {
        for (i64 c = 0; c < C; ++c) out[p * CH + s * C + c] = sp[p * C + c];
      }
    }
  }

  const bool rg = field.requires_grad();
  Tensor stacked = Tensor::from_array(Shape{H, W, CH}, std::move(out), rg);
  if (rg) {
    Tensor tin = field;
    tape.record("views_to_channels", {field}, stacked, [tin, stacked, U, H, W, C, CH]() mutable {
      const double* g = stacked.grad().data();
      double* gi = tin.grad_buffer().data();
      for (i64 v = 0; v < U; ++v) {
        for (i64 u = 0; u < U; ++u) {
          const i64 s = v + u * U;
          double* gp = gi + (v * U + u) * H * W * C;
          for (i64 p = 0; p < H * W; ++p) {
            for (i64 c = 0; c < C; ++c) gp[p * C + c] += g[p * CH + s * C + c];
          }
        }
      }
    });
  }
  return stacked;
}

Tensor channels_to_views(Tape& tape, const Tensor& stacked, i64 views, i64 channels) {
  if (stacked.rank() != 3) {
    throw ShapeError("channels_to_views: need [H,W,U^2*C], got " + shape_str(stacked.shape()));
  }
  const i64 U = views, C = channels;
  const i64 H = stacked.extent(0), W = stacked.extent(1);
  const i64 CH = U * U * C;
  if (stacked.extent(2) != CH) {
    throw ShapeError("channels_to_views: channel count " + std::to_string(stacked.extent(2)) +
                     " does not equal U^2*C = " + std::to_string(CH));
  }

  Eigen::ArrayXd out(U * U * H * W * C);
  const double* src = stacked.values().data();
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const i64 s = v + u * U;
      double* dp = out.data() + (v * U + u) * H * W * C;
      for (i64 p = 0; p < H * W; ++p) {
        for (i64 c = 0; c < C; ++c) dp[p * C + c] = src[p * CH + s * C + c];
      }
    }
  }

  const bool rg = stacked.requires_grad();
  Tensor field = Tensor::from_array(Shape{U, U, H, W, C}, std::move(out), rg);
  if (rg) {
    Tensor tin = stacked;
    tape.record("channels_to_views", {stacked}, field, [tin, field, U, H, W, C, CH]() mutable {
      const double* g = field.grad().data();
      double* gi = tin.grad_buffer().data();
      for (i64 v = 0; v < U; ++v) {
        for (i64 u = 0; u < U; ++u) {
          const i64 s = v + u * U;
          const double* gp = g + (v * U + u) * H * W * C;
          for (i64 p = 0; p < H * W; ++p) {
            for (i64 c = 0; c < C; ++c) gi[p * CH + s * C + c] += gp[p * C + c];
          }
        }
      }
    });
  }
  return field;
}

void save_flow(const AppearanceFlowField& flow, const std::string& path, LfDtype dtype) {
  save_lf4_tensor(flow.flows, path, dtype);
}

AppearanceFlowField load_flow(const std::string& path) {
  return AppearanceFlowField(load_lf4_tensor(path));
}

PngImage flow_view_to_png(const AppearanceFlowField& flow, i64 v, i64 u) {
  const i64 U = flow.angular();
  if (v < 0 || v >= U || u < 0 || u >= U) {
    throw ArgumentError("flow_view_to_png: view index out of range");
  }
  const i64 H = flow.height(), W = flow.width();
  const double* src = flow.flows.values().data() + (v * U + u) * H * W * 2;

  double max_mag = 0.0;
  for (i64 p = 0; p < H * W; ++p) {
    max_mag = std::max(max_mag, std::hypot(src[2 * p], src[2 * p + 1]));
  }
  if (max_mag < 1e-12) max_mag = 1.0;

  PngImage img;
  img.height = H;
  img.width = W;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(H * W * 3));
  for (i64 p = 0; p < H * W; ++p) {
    const double dx = src[2 * p], dy = src[2 * p + 1];
    const double mag = std::hypot(dx, dy) / max_mag;        // saturation
    const double hue = std::atan2(dy, dx) / (2.0 * M_PI);   // direction
    const double h6 = (hue < 0.0 ? hue + 1.0 : hue) * 6.0;
    const int sector = std::min(5, static_cast<int>(h6));
    const double f = h6 - sector;
    const double q = 1.0 - mag * (sector % 2 == 0 ? 1.0 - f : f);
    const double t = 1.0 - mag;
    double r = 1.0, g = 1.0, b = 1.0;
    switch (sector) {  // value fixed at 1, white = zero flow
      case 0: g = q; b = t; break;
      case 1: r = q; b = t; break;
      case 2: r = t; b = q; break;
      case 3: r = t; g = q; break;
      case 4: r = q; g = t; break;
      default: g = t; b = q; break;
    }
    img.pixels[static_cast<std::size_t>(3 * p)] = static_cast<std::uint8_t>(std::lround(r * 255.0));
    img.pixels[static_cast<std::size_t>(3 * p + 1)] = static_cast<std::uint8_t>(std::lround(g * 255.0));
    img.pixels[static_cast<std::size_t>(3 * p + 2)] = static_cast<std::uint8_t>(std::lround(b * 255.0));
  }
  return img;
}

}  // namespace lfs
