#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lfs/losses.hpp"
#include "lfs/model.hpp"
#include "lfs/rng.hpp"
#include "lfs/synthgen.hpp"

namespace lfs {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::int64_t total_iters = 1200;
  std::int64_t stage1_iters = 300;  // spatial decoder frozen
  int batch_size = 1;
  AdamConfig adam;
  double lr = 1e-4;
  LossWeights weights;
  std::pair<double, double> gamma_range = {0.4, 1.0};
  std::int64_t crop_h = 32;
  std::int64_t crop_w = 32;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 400;
  /// Alternative stage-1 handling: drop the sr term entirely instead of
  /// merely freezing the spatial parameters.
  bool zero_sr_in_stage1 = false;
  NetConfig net;

  void validate() const;
};

struct TrainSample {
  LightField lr;
  LightField hr;
  Tensor center;  // LR center view, the network input
};

struct TrainState {
  std::int64_t iteration = 0;
  ModelParams params;
  // Adam moment buffers and per-parameter applied-update counts, aligned
  // with params.params; frozen parameters keep untouched moments.
  std::vector<Eigen::ArrayXd> m;
  std::vector<Eigen::ArrayXd> v;
  std::vector<std::int64_t> steps;
  std::vector<double> loss_history;
};

TrainState init_state(const TrainConfig& config);

/// Identical gamma exponent and crop window applied to the LR field, the HR
/// field and the input view. Gamma is uniform in gamma_range; the crop
/// offset is uniform within +-12.5% of each extent around the center.
TrainSample augment(const TrainSample& sample, const TrainConfig& config, Rng& rng);

/// One optimization step: forward both decoders, total objective, backward,
/// Adam update skipping frozen groups. During stage 1 (iteration <
/// stage1_iters) the spatial decoder is frozen. Deterministic.
LossReport train_step(TrainState& state, const std::vector<TrainSample>& batch,
                      const TrainConfig& config);
LossReport train_step(TrainState& state, const TrainSample& sample, const TrainConfig& config);

struct FitResult {
  std::string checkpoint_path;
  std::string log_path;
};

/// Stage 1 then joint training over the corpus, with periodic checkpoints
/// and a JSON-lines loss log. Reproducible from (config, seed, corpus);
/// resumable from a checkpoint written by a previous fit.
FitResult fit(const TrainConfig& config, const std::string& corpus_dir,
              const std::string& out_dir, const std::string& resume_checkpoint = {});

// Corpus access shared by fit and the evaluation harnesses.
TrainSample load_sample(const DatasetManifest& manifest, std::int64_t index);

/// FNV-1a hash over a parameter group's values, for freeze checks.
std::uint64_t group_hash(const ModelParams& params, const std::string& group);

}  // namespace lfs
