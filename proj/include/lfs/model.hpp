#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lfs/lf_ops.hpp"
#include "lfs/light_field.hpp"

namespace lfs {

/// Which priors feed the spatial-decoder residual branches, and in what
/// stage order. Two-branch variants differ only in concat sources.
enum class ResidualOrder {
  kFlowThenIntensity,   // default: first stage flow prior, second intensity
  kIntensityThenFlow,
  kSingleFlow,
  kSingleIntensity,
  kFlowFlow,
  kIntensityIntensity,
};

std::string residual_order_name(ResidualOrder order);
ResidualOrder residual_order_from_name(const std::string& name);
std::vector<ResidualOrder> all_residual_orders();

struct NetConfig {
  std::int64_t input_h = 64;
  std::int64_t input_w = 64;
  std::int64_t views = 5;     // U; odd at desk scale, 8 in table-faithful mode
  std::int64_t channels = 1;  // C of the input image
  std::int64_t base_filters = 8;
  int depth = 4;  // encoder levels
  double eta = 0.8;
  int sr_factor = 2;
  ResidualOrder residual_order = ResidualOrder::kFlowThenIntensity;
  /// Channels each residual view carries; equals `channels` at desk scale
  /// and 3 in table-faithful mode.
  std::int64_t residual_channels_per_view = 1;

  static NetConfig desk();
  static NetConfig table_faithful();

  void validate() const;
  std::int64_t encoder_filters(int level) const;  // level 1..depth
  std::int64_t bottleneck_filters() const;
  std::int64_t decoder_filters(int level) const;  // floored at 4*base_filters
  std::int64_t center() const { return (views + 1) / 2 - 1; }
  std::int64_t flow_channels() const { return 2 * views * views; }
  std::int64_t field_channels() const { return views * views * channels; }
  std::int64_t residual_channels() const { return views * views * residual_channels_per_view; }
  std::uint64_t fingerprint() const;

  bool operator==(const NetConfig&) const = default;
};

struct Param {
  std::string name;
  Tensor value;
};

/// All convolution weights and biases, in creation order, with per-group
/// freeze flags. Groups are the leading name segment: "encoder" (including
/// the bottleneck), "angular" and "spatial".
struct ModelParams {
  NetConfig config;
  std::vector<Param> params;
  std::map<std::string, bool> group_frozen = {
      {"encoder", false}, {"angular", false}, {"spatial", false}};

  const Tensor& find(const std::string& name) const;
  Tensor& find(const std::string& name);
  std::int64_t param_count() const;
  static std::string group_of(const std::string& name);
  bool frozen(const std::string& name) const;
  void set_requires_grad(bool rg);
};

/// Deterministic construction: biases zero, weights He-initialized from the
/// seed. Parameter shapes in table-faithful mode match the published layer
/// tables.
ModelParams build(const NetConfig& config, std::uint64_t seed);

/// Optional recorder of named activation shapes, for architecture checks.
struct ActivationLog {
  std::vector<std::pair<std::string, Shape>> entries;
  void note(const std::string& name, const Tensor& t) { entries.emplace_back(name, t.shape()); }
  const Shape* find(const std::string& name) const;
};

struct AngularForward {
  AppearanceFlowField flow;  // decoded per-view offsets
  Tensor flow_raw;           // [H,W,2U^2] network output, pre-decode
  LightField lf_lr;          // warped initial light field
  Tensor bottleneck;         // shared encoder feature
};

/// Encoder + angular decoder: estimates per-view appearance flow from the
/// center image, shifts, then warps. Input is the luminance center view.
AngularForward forward_angular(Tape& tape, const ModelParams& params, const Tensor& center,
                               ActivationLog* log = nullptr);

struct SpatialForward {
  LightField lf_hr;               // upsampled field plus residuals (unclamped)
  std::vector<Tensor> residuals;  // per-branch residual fields, view layout
  Tensor residual_flow;           // first flow-prior branch output, if any
  Tensor residual_intensity;      // first intensity-prior branch output, if any
};

/// Spatial decoder from the shared bottleneck; each residual branch
/// concatenates its prior (appearance flow or the initial light field) at
/// native resolution and again 2x-upsampled before the final convolutions.
SpatialForward forward_spatial(Tape& tape, const ModelParams& params,
                               const AngularForward& af, ActivationLog* log = nullptr);

/// Full inference: angular + spatial passes, output clamped to [0,1].
/// With x4, the network runs a second time per upsampled view through the
/// spatial path only (zero flow prior), adding the center-view residual.
LightField synthesize(const ModelParams& params, const Tensor& center, bool x4 = false);
LightField synth_hr_x4(const ModelParams& params, const Tensor& center);

// Checkpoints: magic "LFCK", version, the full NetConfig, a config
// fingerprint, then the named parameter directory with shapes and payload.
// F64 payloads round-trip bit-identically.
void save_checkpoint(const ModelParams& params, const std::string& path,
                     LfDtype dtype = LfDtype::F64);
ModelParams load_checkpoint(const std::string& path,
                            const std::optional<NetConfig>& expected = std::nullopt);

}  // namespace lfs
