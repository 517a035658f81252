#include "lfs/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace lfs {

namespace {

using i64 = std::int64_t;
namespace fs = std::filesystem;

constexpr char kStateMagic[4] = {'L', 'F', 'T', 'S'};

Tensor crop_field(const Tensor& field, i64 oy, i64 ox, i64 ch, i64 cw) {
  const i64 U1 = field.extent(0), U2 = field.extent(1);
  const i64 H = field.extent(2), W = field.extent(3), C = field.extent(4);
  Tensor out = Tensor::zeros(Shape{U1, U2, ch, cw, C});
  const double* src = field.values().data();
  double* dst = out.mutable_values().data();
  for (i64 b = 0; b < U1 * U2; ++b) {
    for (i64 y = 0; y < ch; ++y) {
      std::memcpy(dst + (b * ch + y) * cw * C,
                  src + (b * H + oy + y) * W * C + ox * C,
                  sizeof(double) * static_cast<std::size_t>(cw * C));
    }
  }
  return out;
}

Tensor apply_gamma(const Tensor& t, double gamma) {
  return Tensor::from_array(t.shape(), t.values().pow(gamma));
}

nlohmann::json config_json(const TrainConfig& c) {
  return {{"total_iters", c.total_iters},
          {"stage1_iters", c.stage1_iters},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"weights",
           {{"lambda_g", c.weights.lambda_g},
            {"lambda_l", c.weights.lambda_l},
            {"lambda_tv", c.weights.lambda_tv},
            {"lambda_sr", c.weights.lambda_sr}}},
          {"gamma_range", {c.gamma_range.first, c.gamma_range.second}},
          {"crop", {c.crop_h, c.crop_w}},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"zero_sr_in_stage1", c.zero_sr_in_stage1},
          {"net",
           {{"input_hw", {c.net.input_h, c.net.input_w}},
            {"views", c.net.views},
            {"channels", c.net.channels},
            {"base_filters", c.net.base_filters},
            {"depth", c.net.depth},
            {"eta", c.net.eta},
            {"sr_factor", c.net.sr_factor},
            {"residual_order", residual_order_name(c.net.residual_order)},
            {"residual_channels_per_view", c.net.residual_channels_per_view}}}};
}

void save_trainer_state(const TrainState& state, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write trainer state: " + path);
  os.write(kStateMagic, 4);
  const std::uint64_t iter = static_cast<std::uint64_t>(state.iteration);
  os.write(reinterpret_cast<const char*>(&iter), sizeof(iter));
  const std::uint64_t count = state.m.size();
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    const std::uint64_t n = static_cast<std::uint64_t>(state.m[i].size());
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    const std::uint64_t steps = static_cast<std::uint64_t>(state.steps[i]);
    os.write(reinterpret_cast<const char*>(&steps), sizeof(steps));
    os.write(reinterpret_cast<const char*>(state.m[i].data()),
             static_cast<std::streamsize>(sizeof(double)) * state.m[i].size());
    os.write(reinterpret_cast<const char*>(state.v[i].data()),
             static_cast<std::streamsize>(sizeof(double)) * state.v[i].size());
  }
  if (!os) throw IoError("trainer state write failed: " + path);
}

void load_trainer_state(TrainState& state, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read trainer state: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kStateMagic, 4) != 0) {
    throw FormatError("trainer state: bad magic in " + path);
  }
  std::uint64_t iter = 0, count = 0;
  is.read(reinterpret_cast<char*>(&iter), sizeof(iter));
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!is || count != state.m.size()) {
    throw FormatError("trainer state does not match the checkpoint parameter directory");
  }
  state.iteration = static_cast<i64>(iter);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t n = 0, steps = 0;
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    is.read(reinterpret_cast<char*>(&steps), sizeof(steps));
    if (!is || n != static_cast<std::uint64_t>(state.m[i].size())) {
      throw FormatError("trainer state: moment buffer size mismatch");
    }
    state.steps[i] = static_cast<i64>(steps);
    is.read(reinterpret_cast<char*>(state.m[i].data()),
            static_cast<std::streamsize>(sizeof(double)) * state.m[i].size());
    is.read(reinterpret_cast<char*>(state.v[i].data()),
            static_cast<std::streamsize>(sizeof(double)) * state.v[i].size());
  }
  if (!is) throw FormatError("trainer state truncated: " + path);
}

}  // namespace

void TrainConfig::validate() const {
  if (total_iters < 1) throw ConfigError("total_iters must be positive");
  if (stage1_iters < 0 || stage1_iters > total_iters) {
    throw ConfigError("stage1_iters must lie in [0, total_iters]");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(gamma_range.first > 0.0) || gamma_range.first > gamma_range.second) {
    throw ConfigError("gamma_range must satisfy 0 < low <= high");
  }
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  weights.validate();
  net.validate();
  const i64 div = i64{1} << net.depth;
  if (crop_h < div || crop_w < div || crop_h % div != 0 || crop_w % div != 0) {
    throw ConfigError("crop extents must be positive multiples of 2^depth = " +
                      std::to_string(div));
  }
}

TrainState init_state(const TrainConfig& config) {
  config.validate();
  TrainState state;
  state.params = build(config.net, config.seed);
  for (const Param& p : state.params.params) {
    state.m.push_back(Eigen::ArrayXd::Zero(p.value.size()));
    state.v.push_back(Eigen::ArrayXd::Zero(p.value.size()));
    state.steps.push_back(0);
  }
  return state;
}

TrainSample augment(const TrainSample& sample, const TrainConfig& config, Rng& rng) {
  const i64 H = sample.lr.height(), W = sample.lr.width();
  const i64 ch = config.crop_h, cw = config.crop_w;
  if (ch > H || cw > W) {
    throw ConfigError("crop " + std::to_string(ch) + "x" + std::to_string(cw) +
                      " exceeds field extents " + std::to_string(H) + "x" + std::to_string(W));
  }
  const double gamma = rng.uniform(config.gamma_range.first, config.gamma_range.second);

  const i64 base_y = (H - ch) / 2, base_x = (W - cw) / 2;
  const i64 jitter_y = static_cast<i64>(0.125 * static_cast<double>(H));
  const i64 jitter_x = static_cast<i64>(0.125 * static_cast<double>(W));
  i64 oy = base_y + rng.uniform_int(-jitter_y, jitter_y);
  i64 ox = base_x + rng.uniform_int(-jitter_x, jitter_x);
  oy = std::min(std::max<i64>(oy, 0), H - ch);
  ox = std::min(std::max<i64>(ox, 0), W - cw);

  TrainSample out;
  out.lr = LightField(apply_gamma(crop_field(sample.lr.data, oy, ox, ch, cw), gamma));
  out.hr = LightField(
      apply_gamma(crop_field(sample.hr.data, 2 * oy, 2 * ox, 2 * ch, 2 * cw), gamma));
  out.center = out.lr.center_view();
  return out;
}

LossReport train_step(TrainState& state, const std::vector<TrainSample>& batch,
                      const TrainConfig& config) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  const bool stage1 = state.iteration < config.stage1_iters;
  state.params.group_frozen["spatial"] = stage1;

  LossWeights weights = config.weights;
  if (stage1 && config.zero_sr_in_stage1) weights.lambda_sr = 0.0;

  std::vector<Eigen::ArrayXd> grad_acc;
  grad_acc.reserve(state.params.params.size());
  for (const Param& p : state.params.params) {
    grad_acc.push_back(Eigen::ArrayXd::Zero(p.value.size()));
  }

  LossReport mean_report;
  for (const TrainSample& sample : batch) {
    Tape tape;
    LossReport report;
    try {
      AngularForward af = forward_angular(tape, state.params, sample.center);
      SpatialForward sf = forward_spatial(tape, state.params, af);
      LossTerms terms = total_objective(tape, af.lf_lr, sample.lr, sf.lf_hr, sample.hr,
                                        af.flow, weights);
      report = terms.report();
      tape.backward(terms.total);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(state.iteration) + ": " + e.what());
    }
    mean_report.global += report.global;
    mean_report.local += report.local;
    mean_report.tv += report.tv;
    mean_report.sr += report.sr;
    mean_report.total += report.total;
    for (std::size_t i = 0; i < state.params.params.size(); ++i) {
      const Tensor& p = state.params.params[i].value;
      if (p.has_grad()) grad_acc[i] += p.grad();
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  mean_report.global *= inv_b;
  mean_report.local *= inv_b;
  mean_report.tv *= inv_b;
  mean_report.sr *= inv_b;
  mean_report.total *= inv_b;

  // Adam update; frozen groups receive neither updates nor moment changes.
  for (std::size_t i = 0; i < state.params.params.size(); ++i) {
    Param& p = state.params.params[i];
    if (state.params.frozen(p.name)) continue;
    const Eigen::ArrayXd g = grad_acc[i] * inv_b;
    state.m[i] = config.adam.beta1 * state.m[i] + (1.0 - config.adam.beta1) * g;
    state.v[i] = config.adam.beta2 * state.v[i] + (1.0 - config.adam.beta2) * g.square();
    state.steps[i] += 1;
    const double t = static_cast<double>(state.steps[i]);
    const double bc1 = 1.0 - std::pow(config.adam.beta1, t);
    const double bc2 = 1.0 - std::pow(config.adam.beta2, t);
    p.value.mutable_values() -=
        config.lr * (state.m[i] / bc1) / ((state.v[i] / bc2).sqrt() + config.adam.eps);
  }

  state.iteration += 1;
  state.loss_history.push_back(mean_report.total);
  return mean_report;
}

LossReport train_step(TrainState& state, const TrainSample& sample, const TrainConfig& config) {
  return train_step(state, std::vector<TrainSample>{sample}, config);
}

TrainSample load_sample(const DatasetManifest& manifest, i64 index) {
  if (index < 0 || index >= static_cast<i64>(manifest.scenes.size())) {
    throw ArgumentError("sample index out of range");
  }
  const DatasetManifest::Scene& s = manifest.scenes[static_cast<std::size_t>(index)];
  TrainSample sample;
  sample.lr = load_lf4((fs::path(manifest.dir) / s.lr).string());
  sample.hr = load_lf4((fs::path(manifest.dir) / s.hr).string());
  sample.center = sample.lr.center_view();
  return sample;
}

std::uint64_t group_hash(const ModelParams& params, const std::string& group) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Param& p : params.params) {
    if (ModelParams::group_of(p.name) != group) continue;
    const Eigen::ArrayXd& v = p.value.values();
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(v.size()); ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

FitResult fit(const TrainConfig& config, const std::string& corpus_dir,
              const std::string& out_dir, const std::string& resume_checkpoint) {
  config.validate();
  const DatasetManifest manifest = DatasetManifest::load(corpus_dir);
  if (manifest.height < config.crop_h || manifest.width < config.crop_w) {
    throw ConfigError("crop exceeds corpus field extents");
  }
  fs::create_directories(out_dir);

  TrainState state = init_state(config);
  if (!resume_checkpoint.empty()) {
    ModelParams loaded = load_checkpoint(resume_checkpoint, config.net);
    loaded.set_requires_grad(true);
    state.params = std::move(loaded);
    load_trainer_state(state, resume_checkpoint + ".state");
  }

  const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path, resume_checkpoint.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open training log: " + log_path);
  if (resume_checkpoint.empty()) {
    log << nlohmann::json({{"config", config_json(config)}}).dump() << "\n";
  }

  auto write_checkpoint = [&](const std::string& name) {
    const std::string path = (fs::path(out_dir) / name).string();
    save_checkpoint(state.params, path);
    save_trainer_state(state, path + ".state");
    return path;
  };

  std::string final_path;
  while (state.iteration < config.total_iters) {
    const i64 iter = state.iteration;
    Rng rng(Rng::derive(config.seed, static_cast<std::uint64_t>(iter)));
    std::vector<TrainSample> batch;
    batch.reserve(static_cast<std::size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      const i64 idx = rng.uniform_int(0, static_cast<i64>(manifest.scenes.size()) - 1);
      batch.push_back(augment(load_sample(manifest, idx), config, rng));
    }
    const LossReport report = train_step(state, batch, config);
    log << nlohmann::json({{"iter", iter},
                           {"stage", iter < config.stage1_iters ? 1 : 2},
                           {"global", report.global},
                           {"local", report.local},
                           {"tv", report.tv},
                           {"sr", report.sr},
                           {"total", report.total}})
               .dump()
        << "\n";
    if (state.iteration % config.checkpoint_every == 0 &&
        state.iteration < config.total_iters) {
      write_checkpoint("ckpt_" + std::to_string(state.iteration) + ".lfck");
    }
  }
  final_path = write_checkpoint("final.lfck");
  log.flush();
  return FitResult{final_path, log_path};
}

}  // namespace lfs
