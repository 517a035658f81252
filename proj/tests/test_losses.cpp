#include <doctest.h>

#include <cmath>
#include <vector>

#include "lfs/grad_check.hpp"
#include "lfs/losses.hpp"
#include "test_util.hpp"

using namespace lfs;

namespace {

// Independent explicit-loop evaluators of the mean/variance losses. These
// never touch the reduction ops under test.

double group_oracle(const std::vector<const double*>& pred,
                    const std::vector<const double*>& truth, std::int64_t pixels) {
  const std::size_t K = pred.size();
  double mean_term = 0.0, var_term = 0.0;
  for (std::int64_t p = 0; p < pixels; ++p) {
    double mp = 0.0, mt = 0.0;
    for (std::size_t s = 0; s < K; ++s) {
      mp += pred[s][p];
      mt += truth[s][p];
    }
    mp /= static_cast<double>(K);
    mt /= static_cast<double>(K);
    double vp = 0.0, vt = 0.0;
    for (std::size_t s = 0; s < K; ++s) {
      vp += (pred[s][p] - mp) * (pred[s][p] - mp);
      vt += (truth[s][p] - mt) * (truth[s][p] - mt);
    }
    vp /= static_cast<double>(K - 1);
    vt /= static_cast<double>(K - 1);
    mean_term += std::abs(mp - mt);
    var_term += std::abs(vp - vt);
  }
  return mean_term / static_cast<double>(pixels) + var_term / static_cast<double>(pixels);
}

std::vector<const double*> view_ptrs(const LightField& lf, int which, std::int64_t index) {
  // which: 0 = all views, 1 = angular row `index`, 2 = angular column `index`.
  const std::int64_t U = lf.angular();
  const std::int64_t block = lf.height() * lf.width() * lf.channels();
  std::vector<const double*> out;
  for (std::int64_t v = 0; v < U; ++v) {
    for (std::int64_t u = 0; u < U; ++u) {
      if (which == 1 && v != index) continue;
      if (which == 2 && u != index) continue;
      out.push_back(lf.data.values().data() + (v * U + u) * block);
    }
  }
  return out;
}

double global_oracle(const LightField& pred, const LightField& truth) {
  const std::int64_t pixels = pred.height() * pred.width() * pred.channels();
  return group_oracle(view_ptrs(pred, 0, 0), view_ptrs(truth, 0, 0), pixels);
}

double local_oracle(const LightField& pred, const LightField& truth) {
  const std::int64_t pixels = pred.height() * pred.width() * pred.channels();
  double acc = 0.0;
  for (std::int64_t m = 0; m < pred.angular(); ++m) {
    acc += group_oracle(view_ptrs(pred, 1, m), view_ptrs(truth, 1, m), pixels);
  }
  for (std::int64_t n = 0; n < pred.angular(); ++n) {
    acc += group_oracle(view_ptrs(pred, 2, n), view_ptrs(truth, 2, n), pixels);
  }
  return acc;
}

double l1_oracle(const LightField& a, const LightField& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.data.values().size(); ++i) {
    acc += std::abs(a.data.values()[i] - b.data.values()[i]);
  }
  return acc / static_cast<double>(a.data.size());
}

LightField random_field(Shape shape, std::uint64_t seed) {
  return LightField(test::random_tensor(std::move(shape), seed, 0.0, 1.0));
}

LightField field_from(std::initializer_list<double> views) {
  // 2x2-view, 1x1-pixel field in (v,u) order.
  Eigen::ArrayXd data(4);
  Eigen::Index i = 0;
  for (double v : views) data[i++] = v;
  return LightField(Tensor::from_array({2, 2, 1, 1, 1}, std::move(data)));
}

}  // namespace

TEST_CASE("global loss hand-worked 2x2 example equals exactly 1/3") {
  Tape tape;
  LightField truth = field_from({0.0, 0.0, 1.0, 1.0});
  LightField pred = field_from({0.0, 1.0, 1.0, 1.0});
  // |0.75 - 0.5| + |0.25 - 1/3| = 1/3, exactly representable in this order.
  Tensor loss = global_lf_loss(tape, pred, truth);
  CHECK(loss.value() == 1.0 / 3.0);
  CHECK(loss.value() == doctest::Approx(global_oracle(pred, truth)).epsilon(1e-15));
}

TEST_CASE("global loss: zero at equality, |c| under a constant shift") {
  Tape tape;
  LightField truth = random_field({3, 3, 4, 4, 1}, 1);
  CHECK(global_lf_loss(tape, truth, truth).value() == 0.0);

  const double c = 0.25;
  LightField shifted(Tensor::from_array(truth.data.shape(), truth.data.values() + c));
  CHECK(global_lf_loss(tape, shifted, truth).value() == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("global and local losses match the explicit-loop oracles") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::int64_t U = 2 + static_cast<std::int64_t>(seed % 4);  // 2..5 views
    LightField pred = random_field({U, U, 3, 4, 1}, 100 + seed);
    LightField truth = random_field({U, U, 3, 4, 1}, 200 + seed);
    Tape tape;
    CHECK(global_lf_loss(tape, pred, truth).value() ==
          doctest::Approx(global_oracle(pred, truth)).epsilon(1e-9));
    CHECK(local_lf_loss(tape, pred, truth).value() ==
          doctest::Approx(local_oracle(pred, truth)).epsilon(1e-9));
  }
}

TEST_CASE("local loss localizes a single differing angular row") {
  const std::int64_t U = 3;
  LightField truth = random_field({U, U, 2, 2, 1}, 7);
  Tensor pred_t = Tensor::from_array(truth.data.shape(), truth.data.values());
  // Add +c to every view in angular row 1.
  const std::int64_t block = 2 * 2;
  for (std::int64_t u = 0; u < U; ++u) {
    for (std::int64_t i = 0; i < block; ++i) {
      pred_t.mutable_values()[(1 * U + u) * block + i] += 0.125;
    }
  }
  LightField pred(pred_t);
  // Row group 1 contributes |c|; every column group contains exactly one
  // changed view. Rows 0 and 2 contribute nothing.
  const double expect_row = 0.125;
  double expect_cols = 0.0;
  for (std::int64_t n = 0; n < U; ++n) {
    expect_cols += group_oracle(view_ptrs(pred, 2, n), view_ptrs(truth, 2, n), block);
  }
  Tape tape;
  CHECK(local_lf_loss(tape, pred, truth).value() ==
        doctest::Approx(expect_row + expect_cols).epsilon(1e-12));
  CHECK(group_oracle(view_ptrs(pred, 1, 0), view_ptrs(truth, 1, 0), block) == 0.0);
}

TEST_CASE("matching group statistics do not imply pixel equality") {
  // Checkerboard swap: all row/column/global statistics agree, fields differ.
  // Exactly representable values keep the reordered sums bit-identical.
  LightField pred = field_from({0.25, 0.75, 0.75, 0.25});
  LightField truth = field_from({0.75, 0.25, 0.25, 0.75});
  Tape tape;
  CHECK(global_lf_loss(tape, pred, truth).value() == 0.0);
  CHECK(local_lf_loss(tape, pred, truth).value() == 0.0);
  CHECK(test::max_abs_diff(pred.data, truth.data) == 0.5);
}

TEST_CASE("tv regularizer: constant flow, unit ramp, homogeneity") {
  Tape tape;
  AppearanceFlowField constant(Tensor::constant({3, 3, 4, 4, 2}, 1.7));
  CHECK(tv_regularizer(tape, constant).value() == 0.0);

  // x-component equals the column index, y-component 0.
  Tensor ramp = Tensor::zeros({2, 2, 3, 4, 2});
  for (std::int64_t b = 0; b < 4; ++b) {
    for (std::int64_t y = 0; y < 3; ++y) {
      for (std::int64_t x = 0; x < 4; ++x) {
        ramp.mutable_values()[((b * 3 + y) * 4 + x) * 2] = static_cast<double>(x);
      }
    }
  }
  AppearanceFlowField ramp_flow(ramp);
  CHECK(tv_regularizer(tape, ramp_flow).value() == doctest::Approx(0.25).epsilon(1e-12));

  AppearanceFlowField doubled(Tensor::from_array(ramp.shape(), ramp.values() * 2.0));
  CHECK(tv_regularizer(tape, doubled).value() ==
        doctest::Approx(4.0 * tv_regularizer(tape, ramp_flow).value()).epsilon(1e-12));
}

TEST_CASE("sr loss closed forms and loop oracle") {
  Tape tape;
  LightField a = random_field({2, 2, 4, 4, 1}, 9);
  CHECK(sr_loss(tape, a, a).value() == 0.0);

  LightField b(Tensor::from_array(a.data.shape(), a.data.values() + 0.2));
  CHECK(sr_loss(tape, b, a).value() == doctest::Approx(0.2).epsilon(1e-12));

  LightField c = random_field({2, 2, 4, 4, 1}, 10);
  CHECK(sr_loss(tape, a, c).value() == doctest::Approx(l1_oracle(a, c)).epsilon(1e-12));
  CHECK(pixel_l1(tape, a, c).value() == doctest::Approx(l1_oracle(a, c)).epsilon(1e-12));
}

TEST_CASE("losses are non-negative and symmetric in their arguments") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    LightField a = random_field({3, 3, 3, 3, 1}, seed);
    LightField b = random_field({3, 3, 3, 3, 1}, seed + 50);
    Tape tape;
    const double g1 = global_lf_loss(tape, a, b).value();
    const double g2 = global_lf_loss(tape, b, a).value();
    CHECK(g1 >= 0.0);
    CHECK(g1 == doctest::Approx(g2).epsilon(1e-12));
    const double l1 = local_lf_loss(tape, a, b).value();
    const double l2 = local_lf_loss(tape, b, a).value();
    CHECK(l1 >= 0.0);
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
    const double s1 = sr_loss(tape, a, b).value();
    CHECK(s1 >= 0.0);
    CHECK(s1 == doctest::Approx(sr_loss(tape, b, a).value()).epsilon(1e-12));
  }
}

TEST_CASE("total objective combines the four weighted terms exactly") {
  LightField pred_lr = random_field({3, 3, 4, 4, 1}, 21);
  LightField truth_lr = random_field({3, 3, 4, 4, 1}, 22);
  LightField pred_hr = random_field({3, 3, 8, 8, 1}, 23);
  LightField truth_hr = random_field({3, 3, 8, 8, 1}, 24);
  AppearanceFlowField flow(test::random_tensor({3, 3, 4, 4, 2}, 25, -1.0, 1.0));

  LossWeights w;  // paper defaults: 10, 1, 1e-4, 10
  Tape tape;
  LossTerms t = total_objective(tape, pred_lr, truth_lr, pred_hr, truth_hr, flow, w);
  LossReport r = t.report();
  const double want = w.lambda_g * r.global + w.lambda_l * r.local + w.lambda_tv * r.tv +
                      w.lambda_sr * r.sr;
  CHECK(r.total == doctest::Approx(want).epsilon(1e-15));

  LossWeights zero{0.0, 0.0, 0.0, 0.0};
  Tape t2;
  CHECK(total_objective(t2, pred_lr, truth_lr, pred_hr, truth_hr, flow, zero)
            .report()
            .total == 0.0);

  // Perfect prediction and constant flow vanish entirely.
  AppearanceFlowField cflow(Tensor::constant({3, 3, 4, 4, 2}, 0.4));
  Tape t3;
  CHECK(total_objective(t3, truth_lr, truth_lr, truth_hr, truth_hr, cflow, w).report().total ==
        0.0);

  LossWeights bad{-1.0, 0.0, 0.0, 0.0};
  Tape t4;
  CHECK_THROWS_AS(total_objective(t4, pred_lr, truth_lr, pred_hr, truth_hr, flow, bad),
                  ArgumentError);
}

TEST_CASE("loss gradients match finite differences") {
  Tensor pred_lr = test::random_tensor({2, 2, 3, 3, 1}, 31, 0.1, 0.9, true);
  Tensor truth_lr = test::random_tensor({2, 2, 3, 3, 1}, 32, 0.1, 0.9);
  auto fn_global = [&truth_lr](Tape& t, const std::vector<Tensor>& in) {
    return global_lf_loss(t, LightField(in[0]), LightField(truth_lr));
  };
  auto fn_local = [&truth_lr](Tape& t, const std::vector<Tensor>& in) {
    return local_lf_loss(t, LightField(in[0]), LightField(truth_lr));
  };
  auto fn_sr = [&truth_lr](Tape& t, const std::vector<Tensor>& in) {
    return sr_loss(t, LightField(in[0]), LightField(truth_lr));
  };
  CHECK(check_gradient(fn_global, {pred_lr}).max_rel_error < 1e-4);
  CHECK(check_gradient(fn_local, {pred_lr}).max_rel_error < 1e-4);
  CHECK(check_gradient(fn_sr, {pred_lr}).max_rel_error < 1e-4);

  Tensor flow = test::random_tensor({2, 2, 3, 3, 2}, 33, -1.0, 1.0, true);
  auto fn_tv = [](Tape& t, const std::vector<Tensor>& in) {
    return tv_regularizer(t, AppearanceFlowField(in[0]));
  };
  CHECK(check_gradient(fn_tv, {flow}).max_rel_error < 1e-6);
}

TEST_CASE("degenerate view counts raise argument errors") {
  Tape tape;
  LightField single(test::random_tensor({1, 1, 3, 3, 1}, 41, 0.0, 1.0));
  CHECK_THROWS_AS(global_lf_loss(tape, single, single), ArgumentError);
  CHECK_THROWS_AS(local_lf_loss(tape, single, single), ArgumentError);
  LightField a = random_field({2, 2, 3, 3, 1}, 42);
  LightField b = random_field({3, 3, 3, 3, 1}, 43);
  CHECK_THROWS_AS(global_lf_loss(tape, a, b), ShapeError);
  CHECK_THROWS_AS(sr_loss(tape, a, b), ShapeError);
}
