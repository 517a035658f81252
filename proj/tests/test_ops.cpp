#include <doctest.h>

#include <cmath>

#include "lfs/grad_check.hpp"
#include "lfs/ops.hpp"
#include "test_util.hpp"

using namespace lfs;

namespace {

// Independent nested-loop convolution used as the oracle for conv2d
// (same-padding cross-correlation, symmetric zero pad (k-1)/2).
Tensor conv2d_oracle(const Tensor& x, const Tensor& k, const Tensor& b, int stride) {
  const auto H = x.extent(0), W = x.extent(1), Cin = x.extent(2);
  const auto kh = k.extent(0), kw = k.extent(1), Cout = k.extent(3);
  const auto Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
  Tensor out = Tensor::zeros({Ho, Wo, Cout});
  for (std::int64_t oy = 0; oy < Ho; ++oy) {
    for (std::int64_t ox = 0; ox < Wo; ++ox) {
      for (std::int64_t co = 0; co < Cout; ++co) {
        double acc = b.at(co);
        for (std::int64_t iy = 0; iy < kh; ++iy) {
          for (std::int64_t ix = 0; ix < kw; ++ix) {
            const std::int64_t y = oy * stride - (kh - 1) / 2 + iy;
            const std::int64_t xx = ox * stride - (kw - 1) / 2 + ix;
            if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
              acc += x.at(y, xx, ci) * k.at(iy, ix, ci, co);
            }
          }
        }
        out.set(acc, oy, ox, co);
      }
    }
  }
  return out;
}

double dot(const Tensor& a, const Tensor& b) { return (a.values() * b.values()).sum(); }

}  // namespace

TEST_CASE("conv2d scalar product") {
  Tape tape;
  Tensor x = Tensor::from_values({1, 1, 1}, {2.0});
  Tensor k = Tensor::from_values({1, 1, 1, 1}, {3.0});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(tape, x, k, b, 1);
  CHECK(y.at(0, 0, 0) == 6.0);
}

TEST_CASE("conv2d all-ones 3x3: center 9, corner 4, matches the loop oracle") {
  Tape tape;
  Tensor x = Tensor::constant({3, 3, 1}, 1.0);
  Tensor k = Tensor::constant({3, 3, 1, 1}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(tape, x, k, b, 1);
  CHECK(y.at(1, 1, 0) == 9.0);
  CHECK(y.at(0, 0, 0) == 4.0);
  Tensor want = conv2d_oracle(x, k, b, 1);
  CHECK(test::max_abs_diff(y, want) == 0.0);
}

TEST_CASE("conv2d matches the loop oracle on random inputs, strides 1 and 2") {
  for (int stride : {1, 2}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      Tensor x = test::random_tensor({5, 7, 2}, seed, -1.0, 1.0);
      Tensor k = test::random_tensor({3, 3, 2, 4}, seed + 10, -1.0, 1.0);
      Tensor b = test::random_tensor({4}, seed + 20, -0.5, 0.5);
      Tape tape;
      Tensor y = conv2d(tape, x, k, b, stride);
      Tensor want = conv2d_oracle(x, k, b, stride);
      CHECK(same_shape(y.shape(), want.shape()));
      CHECK(test::max_abs_diff(y, want) < 1e-12);
    }
  }
}

TEST_CASE("conv2d gradient matches central finite differences") {
  Tensor x = test::random_tensor({5, 5, 2}, 11, -1.0, 1.0, true);
  Tensor k = test::random_tensor({3, 3, 2, 3}, 12, -1.0, 1.0, true);
  Tensor b = test::random_tensor({3}, 13, -0.5, 0.5, true);
  auto fn = [](Tape& t, const std::vector<Tensor>& in) {
    return mean_all(t, square(t, conv2d(t, in[0], in[1], in[2], 1)));
  };
  auto r = check_gradient(fn, {x, k, b});
  CHECK(r.max_rel_error < 1e-6);  // linear op: only roundoff remains
}

TEST_CASE("conv2d validation errors") {
  Tape tape;
  Tensor x = Tensor::zeros({4, 4, 2});
  Tensor k = Tensor::zeros({3, 3, 3, 1});  // channel mismatch
  Tensor b = Tensor::zeros({1});
  CHECK_THROWS_AS(conv2d(tape, x, k, b, 1), ShapeError);
  Tensor k2 = Tensor::zeros({3, 3, 2, 1});
  CHECK_THROWS_AS(conv2d(tape, x, k2, b, 0), ArgumentError);
  CHECK_THROWS_AS(conv2d(tape, x, k2, b, -2), ArgumentError);
  Tensor keven = Tensor::zeros({2, 2, 2, 1});
  CHECK_THROWS_AS(conv2d(tape, x, keven, b, 1), ArgumentError);
}

TEST_CASE("conv2d_transpose covers each output pixel once from a 1x1 input") {
  Tape tape;
  Tensor x = Tensor::from_values({1, 1, 1}, {1.0});
  Tensor k = Tensor::constant({3, 3, 1, 1}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d_transpose(tape, x, k, b);
  CHECK(same_shape(y.shape(), Shape{2, 2, 1}));
  for (std::int64_t i = 0; i < 4; ++i) CHECK(y.values()[i] == 1.0);
}

TEST_CASE("conv2d_transpose of zero input broadcasts the bias") {
  Tape tape;
  Tensor x = Tensor::zeros({3, 3, 2});
  Tensor k = test::random_tensor({3, 3, 4, 2}, 5, -1.0, 1.0);
  Tensor b = Tensor::from_values({4}, {0.5, -1.0, 2.0, 0.25});
  Tensor y = conv2d_transpose(tape, x, k, b);
  CHECK(same_shape(y.shape(), Shape{6, 6, 4}));
  for (std::int64_t p = 0; p < 36; ++p) {
    for (std::int64_t c = 0; c < 4; ++c) CHECK(y.values()[p * 4 + c] == b.at(c));
  }
}

TEST_CASE("conv2d_transpose is the exact adjoint of stride-2 conv2d") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    // Shared kernel K [kh,kw,Cx,Cy]: conv maps [H,W,Cx] -> [ceil(H/2),.,Cy].
    Tensor k = test::random_tensor({3, 3, 2, 3}, seed, -1.0, 1.0);
    Tensor zero_cy = Tensor::zeros({3});
    Tensor zero_cx = Tensor::zeros({2});
    Tensor x = test::random_tensor({6, 8, 2}, seed + 1, -1.0, 1.0);
    Tensor y = test::random_tensor({3, 4, 3}, seed + 2, -1.0, 1.0);
    Tape tape;
    Tensor cx = conv2d(tape, x, k, zero_cy, 2);
    Tensor cty = conv2d_transpose(tape, y, k, zero_cx);
    CHECK(std::abs(dot(cx, y) - dot(x, cty)) < 1e-9);
  }
}

TEST_CASE("conv2d_transpose gradient matches central finite differences") {
  Tensor x = test::random_tensor({3, 4, 2}, 31, -1.0, 1.0, true);
  Tensor k = test::random_tensor({3, 3, 3, 2}, 32, -1.0, 1.0, true);
  Tensor b = test::random_tensor({3}, 33, -0.5, 0.5, true);
  auto fn = [](Tape& t, const std::vector<Tensor>& in) {
    return mean_all(t, square(t, conv2d_transpose(t, in[0], in[1], in[2])));
  };
  auto r = check_gradient(fn, {x, k, b});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("leaky_relu values and subgradient") {
  Tape tape;
  Tensor x = Tensor::from_values({3}, {2.0, -1.0, -3.0}, true);
  Tensor y = leaky_relu(tape, x, 0.2);
  CHECK(y.at(0) == 2.0);
  CHECK(y.at(1) == doctest::Approx(-0.2).epsilon(1e-15));
  Tensor s = sum_all(tape, y);
  tape.backward(s);
  CHECK(x.grad()[2] == 0.2);
  CHECK(x.grad()[0] == 1.0);
  CHECK_THROWS_AS(leaky_relu(tape, x, 0.0), ArgumentError);
  // subgradient at the kink takes the positive branch
  Tape t2;
  Tensor z = Tensor::from_values({1}, {0.0}, true);
  tape.reset();
  Tensor s2 = sum_all(t2, leaky_relu(t2, z, 0.2));
  t2.backward(s2);
  CHECK(z.grad()[0] == 1.0);
}

TEST_CASE("grid_sample identity grid is bit-exact") {
  Tensor x = test::random_tensor({5, 6, 3}, 41);
  Tape tape;
  Tensor y = grid_sample(tape, x, identity_grid(5, 6));
  CHECK(test::bit_equal(x, y));
}

TEST_CASE("grid_sample bilinear midpoint and clamping") {
  Tensor row = Tensor::from_values({1, 2, 1}, {0.0, 1.0});
  Tape tape;
  Tensor mid = grid_sample(tape, row, Tensor::from_values({1, 1, 2}, {0.5, 0.0}));
  CHECK(mid.at(0, 0, 0) == 0.5);
  Tensor clamped = grid_sample(tape, row, Tensor::from_values({1, 1, 2}, {-3.0, 0.0}));
  CHECK(clamped.at(0, 0, 0) == 0.0);
  Tensor clamped_hi = grid_sample(tape, row, Tensor::from_values({1, 1, 2}, {9.0, 0.0}));
  CHECK(clamped_hi.at(0, 0, 0) == 1.0);
}

TEST_CASE("grid_sample gradients match finite differences") {
  Tensor x = test::random_tensor({6, 6, 2}, 51, 0.0, 1.0, true);
  // Coordinates strictly interior and away from the integer lattice.
  Rng rng(52);
  Eigen::ArrayXd c(5 * 5 * 2);
  for (std::int64_t p = 0; p < 25; ++p) {
    c[2 * p] = rng.uniform(0.3, 4.7) + 0.013;
    c[2 * p + 1] = rng.uniform(0.3, 4.7) + 0.017;
  }
  Tensor coords = Tensor::from_array({5, 5, 2}, std::move(c), true);
  auto fn = [](Tape& t, const std::vector<Tensor>& in) {
    return mean_all(t, square(t, grid_sample(t, in[0], in[1])));
  };
  auto r = check_gradient(fn, {x, coords});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("bilinear_resize identity, constants and the 1x2 closed form") {
  Tensor x = test::random_tensor({3, 4, 2}, 61);
  Tape tape;
  CHECK(test::bit_equal(bilinear_resize(tape, x, 1), x));

  Tensor c = Tensor::constant({2, 3, 1}, 0.375);
  Tensor cu = bilinear_resize(tape, c, 2);
  CHECK(same_shape(cu.shape(), Shape{4, 6, 1}));
  for (Eigen::Index i = 0; i < cu.values().size(); ++i) CHECK(cu.values()[i] == 0.375);

  Tensor row = Tensor::from_values({1, 2, 1}, {0.0, 1.0});
  Tensor up = bilinear_resize(tape, row, 2);
  CHECK(same_shape(up.shape(), Shape{2, 4, 1}));
  CHECK(up.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(up.at(0, 1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(up.at(0, 2, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(up.at(0, 3, 0) == doctest::Approx(1.0));

  CHECK_THROWS_AS(bilinear_resize(tape, row, 0), ArgumentError);
}

TEST_CASE("bilinear_resize gradient matches finite differences") {
  Tensor x = test::random_tensor({3, 4, 2}, 71, -1.0, 1.0, true);
  auto fn = [](Tape& t, const std::vector<Tensor>& in) {
    return mean_all(t, square(t, bilinear_resize(t, in[0], 2)));
  };
  auto r = check_gradient(fn, {x});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("reduce_mean_var hand example and degenerate input") {
  Tensor two = Tensor::from_values({2, 1}, {0.0, 2.0});
  Tape tape;
  auto [m, v] = reduce_mean_var(tape, two);
  CHECK(m.at(0) == 1.0);
  CHECK(v.at(0) == 2.0);  // ((0-1)^2 + (2-1)^2) / (2-1)

  Tensor same = Tensor::constant({4, 3}, 0.7);
  auto [m2, v2] = reduce_mean_var(tape, same);
  for (int i = 0; i < 3; ++i) {
    CHECK(m2.at(i) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(v2.at(i) == 0.0);
  }

  Tensor one = Tensor::constant({1, 3}, 0.5);
  CHECK_THROWS_AS(reduce_view_var(tape, one), ArgumentError);
  CHECK(reduce_view_mean(tape, one).at(0) == 0.5);
}

TEST_CASE("reduce_mean_var gradients match finite differences") {
  Tensor x = test::random_tensor({4, 2, 3}, 81, -1.0, 1.0, true);
  auto fn_mean = [](Tape& t, const std::vector<Tensor>& in) {
    return mean_all(t, square(t, reduce_view_mean(t, in[0])));
  };
  auto fn_var = [](Tape& t, const std::vector<Tensor>& in) {
    return mean_all(t, square(t, reduce_view_var(t, in[0])));
  };
  CHECK(check_gradient(fn_mean, {x}).max_rel_error < 1e-6);
  CHECK(check_gradient(fn_var, {x}).max_rel_error < 1e-6);
}

TEST_CASE("concat_channels shapes, identity with empty channels, gradient split") {
  Tape tape;
  Tensor a = test::random_tensor({4, 4, 2}, 91);
  Tensor b = test::random_tensor({4, 4, 3}, 92);
  Tensor ab = concat_channels(tape, a, b);
  CHECK(same_shape(ab.shape(), Shape{4, 4, 5}));
  CHECK(ab.at(1, 2, 0) == a.at(1, 2, 0));
  CHECK(ab.at(1, 2, 4) == b.at(1, 2, 2));

  Tensor empty = Tensor::zeros({4, 4, 0});
  CHECK(test::bit_equal(concat_channels(tape, a, empty), a));

  Tensor mismatched = Tensor::zeros({3, 4, 1});
  CHECK_THROWS_AS(concat_channels(tape, a, mismatched), ShapeError);

  // gradient of sum over concat equals gradient of sum over the parts
  Tape t2;
  Tensor ag = test::random_tensor({2, 2, 2}, 93, 0.0, 1.0, true);
  Tensor bg = test::random_tensor({2, 2, 1}, 94, 0.0, 1.0, true);
  Tensor s = sum_all(t2, concat_channels(t2, ag, bg));
  t2.backward(s);
  for (Eigen::Index i = 0; i < ag.grad().size(); ++i) CHECK(ag.grad()[i] == 1.0);
  for (Eigen::Index i = 0; i < bg.grad().size(); ++i) CHECK(bg.grad()[i] == 1.0);
}

TEST_CASE("slice, stack, reshape and forward differences round-trip with gradients") {
  Tensor x = test::random_tensor({3, 2, 2, 1}, 101, -1.0, 1.0, true);
  auto fn = [](Tape& t, const std::vector<Tensor>& in) {
    Tensor s0 = slice_leading(t, in[0], 0);
    Tensor s2 = slice_leading(t, in[0], 2);
    Tensor st = stack_leading(t, {s0, s2, s0});
    Tensor r = reshape(t, st, {3, 4, 1, 1});
    Tensor d = forward_diff_spatial(t, r, 0);
    return mean_all(t, square(t, d));
  };
  CHECK(check_gradient(fn, {x}).max_rel_error < 1e-6);

  Tape tape;
  Tensor ramp = Tensor::from_values({1, 2, 4, 1}, {0, 1, 2, 3, 0, 1, 2, 3});
  Tensor dx = forward_diff_spatial(tape, ramp, 1);
  CHECK(same_shape(dx.shape(), Shape{1, 2, 3, 1}));
  for (Eigen::Index i = 0; i < dx.values().size(); ++i) CHECK(dx.values()[i] == 1.0);
}

TEST_CASE("elementwise op gradients match finite differences") {
  Tensor x = test::random_tensor({3, 3}, 111, 0.2, 1.0, true);
  Tensor y = test::random_tensor({3, 3}, 112, 0.2, 1.0, true);
  auto fn = [](Tape& t, const std::vector<Tensor>& in) {
    Tensor a = mul(t, in[0], in[1]);
    Tensor b = add(t, a, scale(t, sub(t, in[0], in[1]), 0.5));
    Tensor c = abs(t, add_scalar(t, b, -0.3));
    return mean_all(t, square(t, c));
  };
  CHECK(check_gradient(fn, {x, y}).max_rel_error < 1e-5);
}
