#include "lfs/losses.hpp"

#include <cmath>

namespace lfs {

namespace {

using i64 = std::int64_t;

void require_matching_fields(const LightField& a, const LightField& b, const char* op) {
  if (!same_shape(a.data.shape(), b.data.shape())) {
    throw ShapeError(std::string(op) + ": field shapes differ, " + shape_str(a.data.shape()) +
                     " vs " + shape_str(b.data.shape()));
  }
}

Tensor l1_mean(Tape& tape, const Tensor& a, const Tensor& b) {
  return mean_all(tape, abs(tape, sub(tape, a, b)));
}

/// Mean + variance L1 discrepancy of one view group [K,H,W,C], K >= 2.
Tensor group_stat_loss(Tape& tape, const Tensor& pred_group, const Tensor& truth_group) {
  auto [mp, vp] = reduce_mean_var(tape, pred_group);
  auto [mt, vt] = reduce_mean_var(tape, truth_group);
  return add(tape, l1_mean(tape, mp, mt), l1_mean(tape, vp, vt));
}

Tensor flat_views(Tape& tape, const LightField& lf) {
  return reshape(tape, lf.data,
                 Shape{lf.view_count(), lf.height(), lf.width(), lf.channels()});
}

/// Column n of the angular grid as a [U,H,W,C] stack.
Tensor column_group(Tape& tape, const Tensor& field5, i64 n) {
  const i64 U = field5.extent(0);
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(U));
  for (i64 v = 0; v < U; ++v) {
    rows.push_back(slice_leading(tape, slice_leading(tape, field5, v), n));
  }
  return stack_leading(tape, rows);
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {lambda_g, lambda_l, lambda_tv, lambda_sr}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ArgumentError("loss weights must be finite and non-negative");
    }
  }
}

Tensor global_lf_loss(Tape& tape, const LightField& pred, const LightField& truth) {
  require_matching_fields(pred, truth, "global_lf_loss");
  if (pred.view_count() < 2) {
    throw ArgumentError("global_lf_loss: variance needs at least 2 views, got " +
                        std::to_string(pred.view_count()));
  }
  return group_stat_loss(tape, flat_views(tape, pred), flat_views(tape, truth));
}

Tensor local_lf_loss(Tape& tape, const LightField& pred, const LightField& truth) {
  require_matching_fields(pred, truth, "local_lf_loss");
  const i64 U = pred.angular();
  if (U < 2) {
    throw ArgumentError("local_lf_loss: needs an angular extent of at least 2, got " +
                        std::to_string(U));
  }
  Tensor acc;
  for (i64 m = 0; m < U; ++m) {
    Tensor term = group_stat_loss(tape, slice_leading(tape, pred.data, m),
                                  slice_leading(tape, truth.data, m));
    acc = acc.defined() ? add(tape, acc, term) : term;
  }
  for (i64 n = 0; n < U; ++n) {
    Tensor term = group_stat_loss(tape, column_group(tape, pred.data, n),
                                  column_group(tape, truth.data, n));
    acc = add(tape, acc, term);
  }
  return acc;
}

Tensor tv_regularizer(Tape& tape, const AppearanceFlowField& flow) {
  Tensor acc = Tensor::scalar(0.0);
  int directions = 0;
  if (flow.width() >= 2) {
    Tensor dx = forward_diff_spatial(tape, flow.flows, 1);
    acc = add(tape, acc, mean_all(tape, square(tape, dx)));
    ++directions;
  }
  if (flow.height() >= 2) {
    Tensor dy = forward_diff_spatial(tape, flow.flows, 0);
    acc = add(tape, acc, mean_all(tape, square(tape, dy)));
    ++directions;
  }
  if (directions == 0) return Tensor::scalar(0.0);
  return scale(tape, acc, 1.0 / directions);
}

Tensor sr_loss(Tape& tape, const LightField& pred_hr, const LightField& truth_hr) {
  require_matching_fields(pred_hr, truth_hr, "sr_loss");
  return l1_mean(tape, pred_hr.data, truth_hr.data);
}

Tensor pixel_l1(Tape& tape, const LightField& pred, const LightField& truth) {
  require_matching_fields(pred, truth, "pixel_l1");
  return l1_mean(tape, pred.data, truth.data);
}

LossReport LossTerms::report() const {
  LossReport r;
  r.global = global.value();
  r.local = local.value();
  r.tv = tv.value();
  r.sr = sr.value();
  r.total = total.value();
  return r;
}

LossTerms total_objective(Tape& tape, const LightField& pred_lr, const LightField& truth_lr,
                          const LightField& pred_hr, const LightField& truth_hr,
                          const AppearanceFlowField& flow, const LossWeights& weights) {
  weights.validate();
  LossTerms t;
  t.global = global_lf_loss(tape, pred_lr, truth_lr);
  t.local = local_lf_loss(tape, pred_lr, truth_lr);
  t.tv = tv_regularizer(tape, flow);
  t.sr = sr_loss(tape, pred_hr, truth_hr);
  t.total = add(tape,
                add(tape, scale(tape, t.global, weights.lambda_g),
                    scale(tape, t.local, weights.lambda_l)),
                add(tape, scale(tape, t.tv, weights.lambda_tv),
                    scale(tape, t.sr, weights.lambda_sr)));
  return t;
}

}  // namespace lfs
