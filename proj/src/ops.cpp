#include "lfs/ops.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace lfs {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMat = Eigen::Map<RowMat>;
using MapConstRowMat = Eigen::Map<const RowMat>;
using i64 = std::int64_t;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(Shape shape, Eigen::ArrayXd values, bool rg, const char* op) {
  Tensor out = Tensor::from_array(std::move(shape), std::move(values), rg);
  out.check_finite(op);
  return out;
}

// Unary elementwise op with a value-dependent local derivative.
template <class Fwd, class Bwd>
Tensor unary_elementwise(Tape& tape, const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  const bool rg = x.requires_grad();
  Tensor out = make_output(x.shape(), fwd(x.values()), rg, name);
  if (rg) {
    Tensor xin = x;
    tape.record(name, {x}, out, [xin, out, bwd]() mutable {
      xin.grad_buffer() += bwd(xin.values(), out.grad());
    });
  }
  return out;
}

// im2col for [H,W,C] row-major input with symmetric zero padding (k-1)/2.
RowMat im2col(const Eigen::ArrayXd& in, i64 H, i64 W, i64 C, i64 kh, i64 kw, int stride,
              i64 Ho, i64 Wo) {
  const i64 ph = (kh - 1) / 2;
  const i64 pw = (kw - 1) / 2;
  RowMat cols = RowMat::Zero(Ho * Wo, kh * kw * C);
  const double* src = in.data();
  for (i64 oy = 0; oy < Ho; ++oy) {
    for (i64 ox = 0; ox < Wo; ++ox) {
      double* row = cols.data() + (oy * Wo + ox) * (kh * kw * C);
      for (i64 iy = 0; iy < kh; ++iy) {
        const i64 y = oy * stride - ph + iy;
        if (y < 0 || y >= H) continue;
        for (i64 ix = 0; ix < kw; ++ix) {
          const i64 x = ox * stride - pw + ix;
          if (x < 0 || x >= W) continue;
          std::memcpy(row + (iy * kw + ix) * C, src + (y * W + x) * C,
                      sizeof(double) * static_cast<std::size_t>(C));
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-adds column rows back into an [H,W,C] buffer.
void col2im_add(const RowMat& cols, i64 H, i64 W, i64 C, i64 kh, i64 kw, int stride, i64 Ho,
                i64 Wo, Eigen::ArrayXd& out) {
  const i64 ph = (kh - 1) / 2;
  const i64 pw = (kw - 1) / 2;
  double* dst = out.data();
  for (i64 oy = 0; oy < Ho; ++oy) {
    for (i64 ox = 0; ox < Wo; ++ox) {
      const double* row = cols.data() + (oy * Wo + ox) * (kh * kw * C);
      for (i64 iy = 0; iy < kh; ++iy) {
        const i64 y = oy * stride - ph + iy;
        if (y < 0 || y >= H) continue;
        for (i64 ix = 0; ix < kw; ++ix) {
          const i64 x = ox * stride - pw + ix;
          if (x < 0 || x >= W) continue;
          for (i64 c = 0; c < C; ++c) dst[(y * W + x) * C + c] += row[(iy * kw + ix) * C + c];
        }
      }
    }
  }
}

void validate_conv_args(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                        int stride, const char* op) {
  if (stride != 1 && stride != 2) {
    throw ArgumentError(std::string(op) + ": stride must be 1 or 2, got " +
                        std::to_string(stride));
  }
  require(input.rank() == 3, std::string(op) + ": input must be [H,W,C], got " +
                                 shape_str(input.shape()));
  require(kernel.rank() == 4, std::string(op) + ": kernel must be rank 4, got " +
                                  shape_str(kernel.shape()));
  require(bias.rank() == 1, std::string(op) + ": bias must be rank 1, got " +
                                shape_str(bias.shape()));
  const i64 kh = kernel.extent(0);
  const i64 kw = kernel.extent(1);
  if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0) {
    throw ArgumentError(std::string(op) + ": kernel extents must be odd and positive, got " +
                        shape_str(kernel.shape()));
  }
}

struct ResizeAxisMap {
  std::vector<i64> lo, hi;
  std::vector<double> frac;
};

ResizeAxisMap resize_axis_map(i64 in_extent, i64 out_extent) {
  ResizeAxisMap m;
  m.lo.resize(out_extent);
  m.hi.resize(out_extent);
  m.frac.resize(out_extent);
  for (i64 i = 0; i < out_extent; ++i) {
    double src = 0.0;
    if (out_extent > 1 && in_extent > 1) {
      src = static_cast<double>(i) * static_cast<double>(in_extent - 1) /
            static_cast<double>(out_extent - 1);
    }
    i64 lo = static_cast<i64>(std::floor(src));
    if (lo > in_extent - 1) lo = in_extent - 1;
    const i64 hi = std::min<i64>(lo + 1, in_extent - 1);
    m.lo[i] = lo;
    m.hi[i] = hi;
    m.frac[i] = src - static_cast<double>(lo);
  }
  return m;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool rg = any_grad({&a, &b});
  Tensor out = make_output(a.shape(), a.values() + b.values(), rg, "add");
  if (rg) {
    Tensor ta = a, tb = b;
    tape.record("add", {a, b}, out, [ta, tb, out]() mutable {
      if (ta.requires_grad()) ta.grad_buffer() += out.grad();
      if (tb.requires_grad()) tb.grad_buffer() += out.grad();
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool rg = any_grad({&a, &b});
  Tensor out = make_output(a.shape(), a.values() - b.values(), rg, "sub");
  if (rg) {
    Tensor ta = a, tb = b;
    tape.record("sub", {a, b}, out, [ta, tb, out]() mutable {
      if (ta.requires_grad()) ta.grad_buffer() += out.grad();
      if (tb.requires_grad()) tb.grad_buffer() -= out.grad();
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool rg = any_grad({&a, &b});
  Tensor out = make_output(a.shape(), a.values() * b.values(), rg, "mul");
  if (rg) {
    Tensor ta = a, tb = b;
    tape.record("mul", {a, b}, out, [ta, tb, out]() mutable {
      if (ta.requires_grad()) ta.grad_buffer() += out.grad() * tb.values();
      if (tb.requires_grad()) tb.grad_buffer() += out.grad() * ta.values();
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  return unary_elementwise(
      tape, x, "scale", [factor](const Eigen::ArrayXd& v) { return (v * factor).eval(); },
      [factor](const Eigen::ArrayXd&, const Eigen::ArrayXd& g) { return (g * factor).eval(); });
}

Tensor add_scalar(Tape& tape, const Tensor& x, double offset) {
  return unary_elementwise(
      tape, x, "add_scalar", [offset](const Eigen::ArrayXd& v) { return (v + offset).eval(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& g) { return g; });
}

Tensor abs(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, "abs", [](const Eigen::ArrayXd& v) { return v.abs().eval(); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd& g) {
        return (g * v.sign()).eval();  // sign(0) == 0
      });
}

Tensor square(Tape& tape, const Tensor& x) {
  return unary_elementwise(
      tape, x, "square", [](const Eigen::ArrayXd& v) { return v.square().eval(); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd& g) { return (2.0 * v * g).eval(); });
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  const bool rg = x.requires_grad();
  Tensor out = make_output(Shape{}, Eigen::ArrayXd::Constant(1, x.values().sum()), rg, "sum_all");
  if (rg) {
    Tensor xin = x;
    tape.record("sum_all", {x}, out, [xin, out]() mutable {
      xin.grad_buffer() += out.grad()[0];
    });
  }
  return out;
}

Tensor mean_all(Tape& tape, const Tensor& x) {
  if (x.size() == 0) throw ArgumentError("mean_all of an empty tensor");
  const double n = static_cast<double>(x.size());
  const bool rg = x.requires_grad();
  Tensor out =
      make_output(Shape{}, Eigen::ArrayXd::Constant(1, x.values().sum() / n), rg, "mean_all");
  if (rg) {
    Tensor xin = x;
    tape.record("mean_all", {x}, out, [xin, out, n]() mutable {
      xin.grad_buffer() += out.grad()[0] / n;
    });
  }
  return out;
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  if (!(slope > 0.0)) {
    throw ArgumentError("leaky_relu: slope must be positive, got " + std::to_string(slope));
  }
  return unary_elementwise(
      tape, x, "leaky_relu",
      [slope](const Eigen::ArrayXd& v) {
        return (v >= 0.0).select(v, slope * v).eval();
      },
      [slope](const Eigen::ArrayXd& v, const Eigen::ArrayXd& g) {
        return (v >= 0.0).select(g, slope * g).eval();
      });
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride) {
  validate_conv_args(input, kernel, bias, stride, "conv2d");
  const i64 H = input.extent(0), W = input.extent(1), Cin = input.extent(2);
  const i64 kh = kernel.extent(0), kw = kernel.extent(1);
  require(kernel.extent(2) == Cin,
          "conv2d: kernel input channels " + std::to_string(kernel.extent(2)) +
              " do not match input channels " + std::to_string(Cin));
  const i64 Cout = kernel.extent(3);
  require(bias.extent(0) == Cout, "conv2d: bias extent " + std::to_string(bias.extent(0)) +
                                      " does not match output channels " + std::to_string(Cout));
  const i64 Ho = (H + stride - 1) / stride;
  const i64 Wo = (W + stride - 1) / stride;

  RowMat cols = im2col(input.values(), H, W, Cin, kh, kw, stride, Ho, Wo);
  MapConstRowMat kmat(kernel.values().data(), kh * kw * Cin, Cout);
  Eigen::ArrayXd out_data(Ho * Wo * Cout);
  MapRowMat out_mat(out_data.data(), Ho * Wo, Cout);
  out_mat.noalias() = cols * kmat;
  out_mat.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), Cout);

  const bool rg = any_grad({&input, &kernel, &bias});
  Tensor out = make_output(Shape{Ho, Wo, Cout}, std::move(out_data), rg, "conv2d");
  if (rg) {
    Tensor tin = input, tk = kernel, tb = bias;
    tape.record("conv2d", {input, kernel, bias}, out,
                [tin, tk, tb, out, H, W, Cin, kh, kw, Cout, Ho, Wo, stride]() mutable {
                  MapConstRowMat gout(out.grad().data(), Ho * Wo, Cout);
                  if (tk.requires_grad() || tin.requires_grad()) {
                    MapConstRowMat km(tk.values().data(), kh * kw * Cin, Cout);
                    if (tk.requires_grad()) {
                      RowMat cols2 = im2col(tin.values(), H, W, Cin, kh, kw, stride, Ho, Wo);
                      MapRowMat gk(tk.grad_buffer().data(), kh * kw * Cin, Cout);
                      gk.noalias() += cols2.transpose() * gout;
                    }
                    if (tin.requires_grad()) {
                      RowMat gcols(Ho * Wo, kh * kw * Cin);
                      gcols.noalias() = gout * km.transpose();
                      col2im_add(gcols, H, W, Cin, kh, kw, stride, Ho, Wo, tin.grad_buffer());
                    }
                  }
                  if (tb.requires_grad()) {
                    Eigen::Map<Eigen::RowVectorXd> gb(tb.grad_buffer().data(), Cout);
                    gb += gout.colwise().sum();
                  }
                });
  }
  return out;
}

Tensor conv2d_transpose(Tape& tape, const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride) {
  validate_conv_args(input, kernel, bias, stride, "conv2d_transpose");
  if (stride != 2) {
    throw ArgumentError("conv2d_transpose: only stride 2 is supported, got " +
                        std::to_string(stride));
  }
  const i64 H = input.extent(0), W = input.extent(1), Cin = input.extent(2);
  const i64 kh = kernel.extent(0), kw = kernel.extent(1);
  const i64 Cout = kernel.extent(2);
  require(kernel.extent(3) == Cin,
          "conv2d_transpose: kernel input channels " + std::to_string(kernel.extent(3)) +
              " do not match input channels " + std::to_string(Cin));
  require(bias.extent(0) == Cout,
          "conv2d_transpose: bias extent " + std::to_string(bias.extent(0)) +
              " does not match output channels " + std::to_string(Cout));
  const i64 Hf = 2 * H, Wf = 2 * W;  // full-resolution output extent

  // Forward pass is the adjoint of stride-2 conv2d: scatter through col2im.
  MapConstRowMat kmat(kernel.values().data(), kh * kw * Cout, Cin);
  MapConstRowMat in_mat(input.values().data(), H * W, Cin);
  RowMat gcols(H * W, kh * kw * Cout);
  gcols.noalias() = in_mat * kmat.transpose();
  Eigen::ArrayXd out_data = Eigen::ArrayXd::Zero(Hf * Wf * Cout);
  col2im_add(gcols, Hf, Wf, Cout, kh, kw, stride, H, W, out_data);
  MapRowMat out_mat(out_data.data(), Hf * Wf, Cout);
  out_mat.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), Cout);

  const bool rg = any_grad({&input, &kernel, &bias});
  Tensor out = make_output(Shape{Hf, Wf, Cout}, std::move(out_data), rg, "conv2d_transpose");
  if (rg) {
    Tensor tin = input, tk = kernel, tb = bias;
    tape.record("conv2d_transpose", {input, kernel, bias}, out,
                [tin, tk, tb, out, H, W, Cin, kh, kw, Cout, Hf, Wf, stride]() mutable {
                  if (tin.requires_grad() || tk.requires_grad()) {
                    RowMat cols_g = im2col(out.grad(), Hf, Wf, Cout, kh, kw, stride, H, W);
                    if (tin.requires_grad()) {
                      MapConstRowMat km(tk.values().data(), kh * kw * Cout, Cin);
                      MapRowMat gin(tin.grad_buffer().data(), H * W, Cin);
                      gin.noalias() += cols_g * km;
                    }
                    if (tk.requires_grad()) {
                      MapConstRowMat im(tin.values().data(), H * W, Cin);
                      MapRowMat gk(tk.grad_buffer().data(), kh * kw * Cout, Cin);
                      gk.noalias() += cols_g.transpose() * im;
                    }
                  }
                  if (tb.requires_grad()) {
                    MapConstRowMat gout(out.grad().data(), Hf * Wf, Cout);
                    Eigen::Map<Eigen::RowVectorXd> gb(tb.grad_buffer().data(), Cout);
                    gb += gout.colwise().sum();
                  }
                });
  }
  return out;
}

Tensor grid_sample(Tape& tape, const Tensor& input, const Tensor& coords) {
  require(input.rank() == 3, "grid_sample: input must be [H,W,C], got " +
                                 shape_str(input.shape()));
  require(coords.rank() == 3 && coords.extent(2) == 2,
          "grid_sample: coords must be [H,W,2], got " + shape_str(coords.shape()));
  const i64 H = input.extent(0), W = input.extent(1), C = input.extent(2);
  const i64 Ho = coords.extent(0), Wo = coords.extent(1);

  const double* in = input.values().data();
  const double* cr = coords.values().data();
  Eigen::ArrayXd out_data(Ho * Wo * C);
  double* od = out_data.data();
  const double xmax = static_cast<double>(W - 1);
  const double ymax = static_cast<double>(H - 1);
  for (i64 p = 0; p < Ho * Wo; ++p) {
    const double xs = cr[2 * p];
    const double ys = cr[2 * p + 1];
    const double xc = std::min(std::max(xs, 0.0), xmax);
    const double yc = std::min(std::max(ys, 0.0), ymax);
    const i64 x0 = static_cast<i64>(std::floor(xc));
    const i64 y0 = static_cast<i64>(std::floor(yc));
    const i64 x1 = std::min<i64>(x0 + 1, W - 1);
    const i64 y1 = std::min<i64>(y0 + 1, H - 1);
    const double fx = xc - static_cast<double>(x0);
    const double fy = yc - static_cast<double>(y0);
    const double* r00 = in + (y0 * W + x0) * C;
    const double* r01 = in + (y0 * W + x1) * C;
    const double* r10 = in + (y1 * W + x0) * C;
    const double* r11 = in + (y1 * W + x1) * C;
    for (i64 c = 0; c < C; ++c) {
      od[p * C + c] = (1.0 - fy) * ((1.0 - fx) * r00[c] + fx * r01[c]) +
                      fy * ((1.0 - fx) * r10[c] + fx * r11[c]);
    }
  }

  const bool rg = any_grad({&input, &coords});
  Tensor out = make_output(Shape{Ho, Wo, C}, std::move(out_data), rg, "grid_sample");
  if (rg) {
    Tensor tin = input, tc = coords;
    tape.record("grid_sample", {input, coords}, out,
                [tin, tc, out, H, W, C, Ho, Wo, xmax, ymax]() mutable {
                  const double* in = tin.values().data();
                  const double* cr = tc.values().data();
                  const double* g = out.grad().data();
                  double* gi = tin.requires_grad() ? tin.grad_buffer().data() : nullptr;
                  double* gc = tc.requires_grad() ? tc.grad_buffer().data() : nullptr;
                  for (i64 p = 0; p < Ho * Wo; ++p) {
                    const double xs = cr[2 * p];
                    const double ys = cr[2 * p + 1];
                    const double xc = std::min(std::max(xs, 0.0), xmax);
                    const double yc = std::min(std::max(ys, 0.0), ymax);
                    const i64 x0 = static_cast<i64>(std::floor(xc));
                    const i64 y0 = static_cast<i64>(std::floor(yc));
                    const i64 x1 = std::min<i64>(x0 + 1, W - 1);
                    const i64 y1 = std::min<i64>(y0 + 1, H - 1);
                    const double fx = xc - static_cast<double>(x0);
                    const double fy = yc - static_cast<double>(y0);
                    const i64 o00 = (y0 * W + x0) * C, o01 = (y0 * W + x1) * C;
                    const i64 o10 = (y1 * W + x0) * C, o11 = (y1 * W + x1) * C;
                    double gx = 0.0, gy = 0.0;
                    for (i64 c = 0; c < C; ++c) {
                      const double go = g[p * C + c];
                      if (gi) {
                        gi[o00 + c] += go * (1.0 - fy) * (1.0 - fx);
                        gi[o01 + c] += go * (1.0 - fy) * fx;
                        gi[o10 + c] += go * fy * (1.0 - fx);
                        gi[o11 + c] += go * fy * fx;
                      }
                      if (gc) {
                        gx += go * ((1.0 - fy) * (in[o01 + c] - in[o00 + c]) +
                                    fy * (in[o11 + c] - in[o10 + c]));
                        gy += go * ((1.0 - fx) * (in[o10 + c] - in[o00 + c]) +
                                    fx * (in[o11 + c] - in[o01 + c]));
                      }
                    }
                    if (gc) {
                      // Clamped coordinates are locally constant outside the frame.
                      gc[2 * p] += (xs > 0.0 && xs < xmax) ? gx : 0.0;
                      gc[2 * p + 1] += (ys > 0.0 && ys < ymax) ? gy : 0.0;
                    }
                  }
                });
  }
  return out;
}

Tensor bilinear_resize(Tape& tape, const Tensor& input, int factor) {
  if (factor < 1) {
    throw ArgumentError("bilinear_resize: factor must be >= 1, got " + std::to_string(factor));
  }
  require(input.rank() >= 3, "bilinear_resize: rank must be >= 3, got " +
                                 shape_str(input.shape()));
  if (factor == 1) return input;

  const int r = input.rank();
  const i64 H = input.extent(r - 3), W = input.extent(r - 2), C = input.extent(r - 1);
  i64 B = 1;
  for (int a = 0; a < r - 3; ++a) B *= input.extent(a);
  const i64 Ho = H * factor, Wo = W * factor;

  const ResizeAxisMap ym = resize_axis_map(H, Ho);
  const ResizeAxisMap xm = resize_axis_map(W, Wo);

  Shape out_shape = input.shape();
  out_shape[r - 3] = Ho;
  out_shape[r - 2] = Wo;
  Eigen::ArrayXd out_data(B * Ho * Wo * C);
  const double* src = input.values().data();
  double* dst = out_data.data();
  for (i64 b = 0; b < B; ++b) {
    const double* sb = src + b * H * W * C;
    double* db = dst + b * Ho * Wo * C;
    for (i64 i = 0; i < Ho; ++i) {
      const double wy = ym.frac[i];
      const i64 y0 = ym.lo[i], y1 = ym.hi[i];
      for (i64 j = 0; j < Wo; ++j) {
        const double wx = xm.frac[j];
        const i64 x0 = xm.lo[j], x1 = xm.hi[j];
        const double* r00 = sb + (y0 * W + x0) * C;
        const double* r01 = sb + (y0 * W + x1) * C;
        const double* r10 = sb + (y1 * W + x0) * C;
        const double* r11 = sb + (y1 * W + x1) * C;
        double* o = db + (i * Wo + j) * C;
        for (i64 c = 0; c < C; ++c) {
          o[c] = (1.0 - wy) * ((1.0 - wx) * r00[c] + wx * r01[c]) +
                 wy * ((1.0 - wx) * r10[c] + wx * r11[c]);
        }
      }
    }
  }

  const bool rg = input.requires_grad();
  Tensor out = make_output(std::move(out_shape), std::move(out_data), rg, "bilinear_resize");
  if (rg) {
    Tensor tin = input;
    tape.record("bilinear_resize", {input}, out, [tin, out, B, H, W, C, Ho, Wo, ym, xm]() mutable {
      const double* g = out.grad().data();
      double* gi = tin.grad_buffer().data();
      for (i64 b = 0; b < B; ++b) {
        const double* gb = g + b * Ho * Wo * C;
        double* ib = gi + b * H * W * C;
        for (i64 i = 0; i < Ho; ++i) {
          const double wy = ym.frac[i];
          const i64 y0 = ym.lo[i], y1 = ym.hi[i];
          for (i64 j = 0; j < Wo; ++j) {
            const double wx = xm.frac[j];
            const i64 x0 = xm.lo[j], x1 = xm.hi[j];
            const double* go = gb + (i * Wo + j) * C;
            for (i64 c = 0; c < C; ++c) {
              ib[(y0 * W + x0) * C + c] += go[c] * (1.0 - wy) * (1.0 - wx);
              ib[(y0 * W + x1) * C + c] += go[c] * (1.0 - wy) * wx;
              ib[(y1 * W + x0) * C + c] += go[c] * wy * (1.0 - wx);
              ib[(y1 * W + x1) * C + c] += go[c] * wy * wx;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor reduce_view_mean(Tape& tape, const Tensor& x) {
  require(x.rank() >= 1 && x.extent(0) >= 1,
          "reduce_view_mean: need a leading view axis, got " + shape_str(x.shape()));
  const i64 N = x.extent(0);
  const i64 R = x.size() / N;
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  MapConstRowMat xm(x.values().data(), N, R);
  Eigen::ArrayXd out_data(R);
  Eigen::Map<Eigen::RowVectorXd>(out_data.data(), R) =
      xm.colwise().sum() / static_cast<double>(N);

  const bool rg = x.requires_grad();
  Tensor out = make_output(std::move(out_shape), std::move(out_data), rg, "reduce_view_mean");
  if (rg) {
    Tensor tin = x;
    tape.record("reduce_view_mean", {x}, out, [tin, out, N, R]() mutable {
      MapRowMat gi(tin.grad_buffer().data(), N, R);
      gi.rowwise() +=
          Eigen::Map<const Eigen::RowVectorXd>(out.grad().data(), R) / static_cast<double>(N);
    });
  }
  return out;
}

Tensor reduce_view_var(Tape& tape, const Tensor& x) {
  require(x.rank() >= 1, "reduce_view_var: need a leading view axis");
  const i64 N = x.extent(0);
  if (N < 2) {
    throw ArgumentError("reduce_view_var: unbiased variance needs at least 2 views, got " +
                        std::to_string(N));
  }
  const i64 R = x.size() / N;
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  MapConstRowMat xm(x.values().data(), N, R);
  Eigen::RowVectorXd mean = xm.colwise().sum() / static_cast<double>(N);
  RowMat centered = xm.rowwise() - mean;
  Eigen::ArrayXd out_data(R);
  Eigen::Map<Eigen::RowVectorXd>(out_data.data(), R) =
      centered.cwiseProduct(centered).colwise().sum() / static_cast<double>(N - 1);

  const bool rg = x.requires_grad();
  Tensor out = make_output(std::move(out_shape), std::move(out_data), rg, "reduce_view_var");
  if (rg) {
    Tensor tin = x;
    tape.record("reduce_view_var", {x}, out, [tin, out, N, R, mean]() mutable {
      // dV/dx_s = 2 (x_s - mean) / (N - 1); the mean-dependence cancels.
      MapConstRowMat xm(tin.values().data(), N, R);
      MapRowMat gi(tin.grad_buffer().data(), N, R);
      const Eigen::RowVectorXd gv =
          Eigen::Map<const Eigen::RowVectorXd>(out.grad().data(), R) * (2.0 / (N - 1));
      RowMat centered = xm.rowwise() - mean;
      gi.noalias() += centered * gv.asDiagonal();
    });
  }
  return out;
}

std::pair<Tensor, Tensor> reduce_mean_var(Tape& tape, const Tensor& x) {
  return {reduce_view_mean(tape, x), reduce_view_var(tape, x)};
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank() && a.rank() >= 1,
          "concat_channels: rank mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  for (int ax = 0; ax + 1 < a.rank(); ++ax) {
    require(a.extent(ax) == b.extent(ax),
            "concat_channels: non-channel extents differ, " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  const int r = a.rank();
  const i64 Ca = a.extent(r - 1), Cb = b.extent(r - 1);
  i64 rows = 1;
  for (int ax = 0; ax + 1 < r; ++ax) rows *= a.extent(ax);
  Shape out_shape = a.shape();
  out_shape[r - 1] = Ca + Cb;

  Eigen::ArrayXd out_data(rows * (Ca + Cb));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out_data.data();
  for (i64 rr = 0; rr < rows; ++rr) {
    std::memcpy(po + rr * (Ca + Cb), pa + rr * Ca, sizeof(double) * static_cast<std::size_t>(Ca));
    std::memcpy(po + rr * (Ca + Cb) + Ca, pb + rr * Cb,
                sizeof(double) * static_cast<std::size_t>(Cb));
  }

  const bool rg = any_grad({&a, &b});
  Tensor out = make_output(std::move(out_shape), std::move(out_data), rg, "concat_channels");
  if (rg) {
    Tensor ta = a, tb = b;
    tape.record("concat_channels", {a, b}, out, [ta, tb, out, rows, Ca, Cb]() mutable {
      const double* g = out.grad().data();
      double* ga = ta.requires_grad() ? ta.grad_buffer().data() : nullptr;
      double* gb = tb.requires_grad() ? tb.grad_buffer().data() : nullptr;
      for (i64 rr = 0; rr < rows; ++rr) {
        const double* row = g + rr * (Ca + Cb);
        if (ga) {
          for (i64 c = 0; c < Ca; ++c) ga[rr * Ca + c] += row[c];
        }
        if (gb) {
          for (i64 c = 0; c < Cb; ++c) gb[rr * Cb + c] += row[Ca + c];
        }
      }
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
  if (shape_size(new_shape) != x.size()) {
    throw ShapeError("reshape: size mismatch, " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  }
  const bool rg = x.requires_grad();
  Tensor out = Tensor::from_array(std::move(new_shape), x.values(), rg);
  if (rg) {
    Tensor tin = x;
    tape.record("reshape", {x}, out, [tin, out]() mutable {
      tin.grad_buffer() += out.grad();
    });
  }
  return out;
}

Tensor slice_leading(Tape& tape, const Tensor& x, std::int64_t index) {
  require(x.rank() >= 1, "slice_leading: rank must be >= 1");
  const i64 N = x.extent(0);
  if (index < 0 || index >= N) {
    throw ArgumentError("slice_leading: index " + std::to_string(index) +
                        " out of range [0," + std::to_string(N) + ")");
  }
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  const i64 block = x.size() / N;
  Eigen::ArrayXd out_data = x.values().segment(index * block, block);

  const bool rg = x.requires_grad();
  Tensor out = Tensor::from_array(std::move(out_shape), std::move(out_data), rg);
  if (rg) {
    Tensor tin = x;
    tape.record("slice_leading", {x}, out, [tin, out, index, block]() mutable {
      tin.grad_buffer().segment(index * block, block) += out.grad();
    });
  }
  return out;
}

Tensor stack_leading(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("stack_leading: empty input list");
  const Shape& base = parts[0].shape();
  for (const Tensor& t : parts) require_same_shape(parts[0], t, "stack_leading");
  const i64 K = static_cast<i64>(parts.size());
  const i64 block = parts[0].size();
  Shape out_shape;
  out_shape.reserve(base.size() + 1);
  out_shape.push_back(K);
  out_shape.insert(out_shape.end(), base.begin(), base.end());

  Eigen::ArrayXd out_data(K * block);
  bool rg = false;
  for (i64 k = 0; k < K; ++k) {
    out_data.segment(k * block, block) = parts[k].values();
    rg = rg || parts[k].requires_grad();
  }
  Tensor out = Tensor::from_array(std::move(out_shape), std::move(out_data), rg);
  if (rg) {
    std::vector<Tensor> ins = parts;
    tape.record("stack_leading", ins, out, [ins, out, block]() mutable {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (ins[k].requires_grad()) {
          ins[k].grad_buffer() += out.grad().segment(static_cast<i64>(k) * block, block);
        }
      }
    });
  }
  return out;
}

Tensor forward_diff_spatial(Tape& tape, const Tensor& x, int dim) {
  require(x.rank() >= 3, "forward_diff_spatial: rank must be >= 3, got " +
                             shape_str(x.shape()));
  if (dim != 0 && dim != 1) {
    throw ArgumentError("forward_diff_spatial: dim must be 0 (rows) or 1 (cols)");
  }
  const int r = x.rank();
  const i64 H = x.extent(r - 3), W = x.extent(r - 2), C = x.extent(r - 1);
  i64 B = 1;
  for (int a = 0; a < r - 3; ++a) B *= x.extent(a);
  const i64 Hd = dim == 0 ? H - 1 : H;
  const i64 Wd = dim == 1 ? W - 1 : W;
  require(Hd >= 1 && Wd >= 1, "forward_diff_spatial: spatial extent too small");

  Shape out_shape = x.shape();
  out_shape[r - 3] = Hd;
  out_shape[r - 2] = Wd;
  Eigen::ArrayXd out_data(B * Hd * Wd * C);
  const double* src = x.values().data();
  double* dst = out_data.data();
  const i64 dy = dim == 0 ? W * C : C;  // flat offset of the forward neighbour
  for (i64 b = 0; b < B; ++b) {
    const double* sb = src + b * H * W * C;
    double* db = dst + b * Hd * Wd * C;
    for (i64 i = 0; i < Hd; ++i) {
      for (i64 j = 0; j < Wd; ++j) {
        const double* s0 = sb + (i * W + j) * C;
        double* o = db + (i * Wd + j) * C;
        for (i64 c = 0; c < C; ++c) o[c] = s0[dy + c] - s0[c];
      }
    }
  }

  const bool rg = x.requires_grad();
  Tensor out = make_output(std::move(out_shape), std::move(out_data), rg, "forward_diff_spatial");
  if (rg) {
    Tensor tin = x;
    tape.record("forward_diff_spatial", {x}, out,
                [tin, out, B, H, W, C, Hd, Wd, dy]() mutable {
                  const double* g = out.grad().data();
                  double* gi = tin.grad_buffer().data();
                  for (i64 b = 0; b < B; ++b) {
                    const double* gb = g + b * Hd * Wd * C;
                    double* ib = gi + b * H * W * C;
                    for (i64 i = 0; i < Hd; ++i) {
                      for (i64 j = 0; j < Wd; ++j) {
                        const double* go = gb + (i * Wd + j) * C;
                        double* i0 = ib + (i * W + j) * C;
                        for (i64 c = 0; c < C; ++c) {
                          i0[dy + c] += go[c];
                          i0[c] -= go[c];
                        }
                      }
                    }
                  }
                });
  }
  return out;
}

Tensor identity_grid(std::int64_t height, std::int64_t width) {
  Eigen::ArrayXd data(height * width * 2);
  for (i64 y = 0; y < height; ++y) {
    for (i64 x = 0; x < width; ++x) {
      data[(y * width + x) * 2] = static_cast<double>(x);
      data[(y * width + x) * 2 + 1] = static_cast<double>(y);
    }
  }
  return Tensor::from_array(Shape{height, width, 2}, std::move(data));
}

Tensor const_offset_grid(std::int64_t height, std::int64_t width, double dx, double dy) {
  Eigen::ArrayXd data(height * width * 2);
  for (i64 y = 0; y < height; ++y) {
    for (i64 x = 0; x < width; ++x) {
      data[(y * width + x) * 2] = static_cast<double>(x) + dx;
      data[(y * width + x) * 2 + 1] = static_cast<double>(y) + dy;
    }
  }
  return Tensor::from_array(Shape{height, width, 2}, std::move(data));
}

Tensor clamp01_copy(const Tensor& x) {
  return Tensor::from_array(x.shape(), x.values().cwiseMax(0.0).cwiseMin(1.0));
}

}  // namespace lfs
