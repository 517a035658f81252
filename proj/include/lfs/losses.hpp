#pragma once

#include "lfs/lf_ops.hpp"
#include "lfs/light_field.hpp"

namespace lfs {

/// Non-negative weights of the combined objective. Defaults follow the
/// published hyperparameters.
struct LossWeights {
  double lambda_g = 10.0;
  double lambda_l = 1.0;
  double lambda_tv = 1e-4;
  double lambda_sr = 10.0;

  void validate() const;
};

/// Raw per-iteration loss values; total is the weighted sum exactly as
/// computed on the tape.
struct LossReport {
  double global = 0.0;
  double local = 0.0;
  double tv = 0.0;
  double sr = 0.0;
  double total = 0.0;
};

/// L1 discrepancy of the per-pixel view mean plus L1 discrepancy of the
/// per-pixel unbiased view variance, each averaged over pixels and channels.
Tensor global_lf_loss(Tape& tape, const LightField& pred, const LightField& truth);

/// The same mean/variance discrepancy evaluated per angular row and per
/// angular column (U views each), summed over all 2U groups without
/// normalization; each group is internally pixel-averaged.
Tensor local_lf_loss(Tape& tape, const LightField& pred, const LightField& truth);

/// Mean of squared forward differences of the flow, averaged over views,
/// pixels, the 2 flow components and the 2 spatial directions (last
/// row/column omitted).
Tensor tv_regularizer(Tape& tape, const AppearanceFlowField& flow);

/// Mean absolute error over all views, pixels and channels.
Tensor sr_loss(Tape& tape, const LightField& pred_hr, const LightField& truth_hr);

/// Plain pixel-wise L1 between fields. Not part of the default objective;
/// exists as an opt-in ablation alternative to the light-field losses.
Tensor pixel_l1(Tape& tape, const LightField& pred, const LightField& truth);

/// All four terms plus their weighted total, kept on the tape so the total
/// can drive backward().
struct LossTerms {
  Tensor global;
  Tensor local;
  Tensor tv;
  Tensor sr;
  Tensor total;

  LossReport report() const;
};

LossTerms total_objective(Tape& tape, const LightField& pred_lr, const LightField& truth_lr,
                          const LightField& pred_hr, const LightField& truth_hr,
                          const AppearanceFlowField& flow, const LossWeights& weights);

}  // namespace lfs
