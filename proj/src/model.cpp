#include "lfs/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "lfs/rng.hpp"

namespace lfs {

namespace {

using i64 = std::int64_t;

constexpr double kLeakySlope = 0.2;
constexpr char kCkptMagic[4] = {'L', 'F', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

enum class Prior { kFlow, kIntensity };

std::vector<Prior> branch_priors(ResidualOrder order) {
  switch (order) {
    case ResidualOrder::kFlowThenIntensity: return {Prior::kFlow, Prior::kIntensity};
    case ResidualOrder::kIntensityThenFlow: return {Prior::kIntensity, Prior::kFlow};
    case ResidualOrder::kSingleFlow: return {Prior::kFlow};
    case ResidualOrder::kSingleIntensity: return {Prior::kIntensity};
    case ResidualOrder::kFlowFlow: return {Prior::kFlow, Prior::kFlow};
    case ResidualOrder::kIntensityIntensity: return {Prior::kIntensity, Prior::kIntensity};
  }
  throw ArgumentError("unknown residual order");
}

struct ConvSpec {
  std::string name;  // base name; parameters are name+"/w" and name+"/b"
  i64 cin = 0;
  i64 cout = 0;
  bool transpose = false;
};

// The single source of truth for parameter names, shapes and order; build(),
// the forward passes and checkpoint validation all derive from this walk.
std::vector<ConvSpec> layer_specs(const NetConfig& cfg) {
  std::vector<ConvSpec> specs;
  const int D = cfg.depth;

  i64 prev = cfg.channels;
  for (int k = 1; k <= D; ++k) {
    const i64 ch = cfg.encoder_filters(k);
    const std::string base = "encoder/l" + std::to_string(k);
    specs.push_back({base + "/conv_a", prev, ch, false});
    specs.push_back({base + "/conv_b", ch, ch, false});
    specs.push_back({base + "/down", ch, ch, false});
    prev = ch;
  }
  specs.push_back({"encoder/bottleneck/conv_a", prev, cfg.bottleneck_filters(), false});
  specs.push_back({"encoder/bottleneck/conv_b", cfg.bottleneck_filters(),
                   cfg.bottleneck_filters(), false});

  prev = cfg.bottleneck_filters();
  for (int k = D; k >= 1; --k) {
    const i64 ch = cfg.decoder_filters(k);
    const std::string base = "angular/l" + std::to_string(k);
    specs.push_back({base + "/up", prev, ch, true});
    specs.push_back({base + "/conv_a", ch + cfg.encoder_filters(k), ch, false});
    specs.push_back({base + "/conv_b", ch, ch, false});
    prev = ch;
  }
  specs.push_back({"angular/head/conv_a", prev, cfg.decoder_filters(1), false});
  specs.push_back({"angular/head/conv_b", cfg.decoder_filters(1), cfg.decoder_filters(1), false});
  specs.push_back({"angular/head/out", cfg.decoder_filters(1), cfg.flow_channels(), false});

  prev = cfg.bottleneck_filters();
  for (int i = 1; i <= D - 1; ++i) {
    const int level = D + 1 - i;
    const i64 ch = cfg.decoder_filters(level);
    const std::string base = "spatial/trunk/s" + std::to_string(i);
    specs.push_back({base + "/up", prev, ch, true});
    if (i <= D - 2) {
      specs.push_back({base + "/conv_a", ch, ch, false});
      specs.push_back({base + "/conv_b", ch, ch, false});
    }
    prev = ch;
  }

  const std::vector<Prior> priors = branch_priors(cfg.residual_order);
  const i64 head = cfg.decoder_filters(1);
  const i64 rc_total = cfg.residual_channels();
  for (std::size_t j = 0; j < priors.size(); ++j) {
    const i64 prior_ch =
        priors[j] == Prior::kFlow ? cfg.flow_channels() : cfg.field_channels();
    const std::string base = "spatial/branch" + std::to_string(j + 1);
    specs.push_back({base + "/up1", prev, head, true});
    specs.push_back({base + "/conv1_a", head + prior_ch, head, false});
    specs.push_back({base + "/conv1_b", head, head, false});
    specs.push_back({base + "/up2", head, rc_total, true});
    specs.push_back({base + "/conv2_a", rc_total + prior_ch, rc_total, false});
    specs.push_back({base + "/conv2_b", rc_total, rc_total, false});
  }
  return specs;
}

Tensor conv_lrelu(Tape& tape, const ModelParams& p, const std::string& base, const Tensor& x,
                  int stride = 1) {
  return leaky_relu(tape, conv2d(tape, x, p.find(base + "/w"), p.find(base + "/b"), stride),
                    kLeakySlope);
}

Tensor convt_lrelu(Tape& tape, const ModelParams& p, const std::string& base, const Tensor& x) {
  return leaky_relu(tape, conv2d_transpose(tape, x, p.find(base + "/w"), p.find(base + "/b")),
                    kLeakySlope);
}

struct EncoderOut {
  Tensor bottleneck;
  std::vector<Tensor> skips;  // pre-downsample activation per level, 1-based-1
};

EncoderOut run_encoder(Tape& tape, const ModelParams& p, const Tensor& input,
                       ActivationLog* log) {
  const NetConfig& cfg = p.config;
  EncoderOut out;
  Tensor x = input;
  for (int k = 1; k <= cfg.depth; ++k) {
    const std::string base = "encoder/l" + std::to_string(k);
    x = conv_lrelu(tape, p, base + "/conv_a", x);
    x = conv_lrelu(tape, p, base + "/conv_b", x);
    if (log) log->note(base + "/conv", x);
    out.skips.push_back(x);
    x = conv_lrelu(tape, p, base + "/down", x, 2);
    if (log) log->note(base + "/down", x);
  }
  x = conv_lrelu(tape, p, "encoder/bottleneck/conv_a", x);
  x = conv_lrelu(tape, p, "encoder/bottleneck/conv_b", x);
  if (log) log->note("encoder/bottleneck", x);
  out.bottleneck = x;
  return out;
}

/// Shared trunk plus residual branches; returns per-branch residuals in
/// channel layout at 2x resolution. Priors arrive in channel layout at the
/// trunk's base resolution.
std::vector<Tensor> run_spatial_branches(Tape& tape, const ModelParams& p,
                                         const Tensor& bottleneck, const Tensor& flow_raw,
                                         const Tensor& field_channels, ActivationLog* log) {
  const NetConfig& cfg = p.config;
  Tensor x = bottleneck;
  for (int i = 1; i <= cfg.depth - 1; ++i) {
    const std::string base = "spatial/trunk/s" + std::to_string(i);
    x = convt_lrelu(tape, p, base + "/up", x);
    if (log) log->note(base + "/up", x);
    if (i <= cfg.depth - 2) {
      x = conv_lrelu(tape, p, base + "/conv_a", x);
      x = conv_lrelu(tape, p, base + "/conv_b", x);
      if (log) log->note(base + "/conv", x);
    }
  }

  Tensor flow_up = scale(tape, bilinear_resize(tape, flow_raw, 2), 2.0);
  Tensor field_up = bilinear_resize(tape, field_channels, 2);

  const std::vector<Prior> priors = branch_priors(cfg.residual_order);
  std::vector<Tensor> residuals;
  residuals.reserve(priors.size());
  for (std::size_t j = 0; j < priors.size(); ++j) {
    const std::string base = "spatial/branch" + std::to_string(j + 1);
    const Tensor& prior_native = priors[j] == Prior::kFlow ? flow_raw : field_channels;
    const Tensor& prior_up = priors[j] == Prior::kFlow ? flow_up : field_up;

    Tensor b = convt_lrelu(tape, p, base + "/up1", x);
    if (log) log->note(base + "/up1", b);
    b = concat_channels(tape, b, prior_native);
    b = conv_lrelu(tape, p, base + "/conv1_a", b);
    b = conv_lrelu(tape, p, base + "/conv1_b", b);
    if (log) log->note(base + "/conv1", b);
    b = convt_lrelu(tape, p, base + "/up2", b);
    if (log) log->note(base + "/up2", b);
    b = concat_channels(tape, b, prior_up);
    b = conv_lrelu(tape, p, base + "/conv2_a", b);
    b = conv_lrelu(tape, p, base + "/conv2_b", b);
    if (log) log->note(base + "/conv2", b);
    residuals.push_back(b);
  }
  return residuals;
}

/// Replicates the channel axis so a C-channel field matches the residual
/// channel count (table-faithful residuals carry 3 channels per view).
Tensor lift_channels(Tape& tape, const Tensor& field, i64 target) {
  const i64 C = field.extent(field.rank() - 1);
  if (C == target) return field;
  if (target % C != 0) {
    throw ShapeError("cannot lift " + std::to_string(C) + " channels to " +
                     std::to_string(target));
  }
  Tensor out = field;
  for (i64 i = 1; i < target / C; ++i) out = concat_channels(tape, out, field);
  return out;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v & 0xffffffffULL));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("checkpoint truncated reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is, const std::string& what) {
  const std::uint64_t lo = read_u32(is, what);
  const std::uint64_t hi = read_u32(is, what);
  return lo | (hi << 32);
}

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001B3ULL;
  }
}

}  // namespace

std::string residual_order_name(ResidualOrder order) {
  switch (order) {
    case ResidualOrder::kFlowThenIntensity: return "flow_then_intensity";
    case ResidualOrder::kIntensityThenFlow: return "intensity_then_flow";
    case ResidualOrder::kSingleFlow: return "single_flow";
    case ResidualOrder::kSingleIntensity: return "single_intensity";
    case ResidualOrder::kFlowFlow: return "flow_flow";
    case ResidualOrder::kIntensityIntensity: return "intensity_intensity";
  }
  throw ArgumentError("unknown residual order");
}

ResidualOrder residual_order_from_name(const std::string& name) {
  for (ResidualOrder o : all_residual_orders()) {
    if (residual_order_name(o) == name) return o;
  }
  throw ArgumentError("unknown residual order '" + name + "'");
}

std::vector<ResidualOrder> all_residual_orders() {
  return {ResidualOrder::kFlowThenIntensity, ResidualOrder::kIntensityThenFlow,
          ResidualOrder::kSingleFlow,        ResidualOrder::kSingleIntensity,
          ResidualOrder::kFlowFlow,          ResidualOrder::kIntensityIntensity};
}

NetConfig NetConfig::desk() { return NetConfig{}; }

NetConfig NetConfig::table_faithful() {
  NetConfig cfg;
  cfg.input_h = 128;
  cfg.input_w = 128;
  cfg.views = 8;
  cfg.channels = 1;
  cfg.base_filters = 16;
  cfg.depth = 5;
  cfg.residual_channels_per_view = 3;
  return cfg;
}

void NetConfig::validate() const {
  if (depth < 2) throw ConfigError("depth must be at least 2, got " + std::to_string(depth));
  if (views < 2) throw ConfigError("views must be at least 2, got " + std::to_string(views));
  if (views % 2 == 0 && views != 8) {
    throw ConfigError("views must be odd (or 8 in table-faithful mode), got " +
                      std::to_string(views));
  }
  if (channels < 1) throw ConfigError("channels must be positive");
  if (base_filters < 1) throw ConfigError("base_filters must be positive");
  if (sr_factor != 2) throw ConfigError("sr_factor must be 2");
  if (!std::isfinite(eta)) throw ConfigError("eta must be finite");
  if (residual_channels_per_view < 1 || residual_channels_per_view % channels != 0) {
    throw ConfigError("residual_channels_per_view must be a positive multiple of channels");
  }
  const i64 div = i64{1} << depth;
  if (input_h % div != 0 || input_w % div != 0) {
    throw ConfigError("input extents " + std::to_string(input_h) + "x" +
                      std::to_string(input_w) + " must be divisible by 2^depth = " +
                      std::to_string(div));
  }
}

i64 NetConfig::encoder_filters(int level) const { return base_filters << (level - 1); }

i64 NetConfig::bottleneck_filters() const { return base_filters << depth; }

i64 NetConfig::decoder_filters(int level) const {
  return std::max<i64>(encoder_filters(level), 4 * base_filters);
}

std::uint64_t NetConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv_mix(h, static_cast<std::uint64_t>(input_h));
  fnv_mix(h, static_cast<std::uint64_t>(input_w));
  fnv_mix(h, static_cast<std::uint64_t>(views));
  fnv_mix(h, static_cast<std::uint64_t>(channels));
  fnv_mix(h, static_cast<std::uint64_t>(base_filters));
  fnv_mix(h, static_cast<std::uint64_t>(depth));
  fnv_mix(h, static_cast<std::uint64_t>(sr_factor));
  fnv_mix(h, static_cast<std::uint64_t>(residual_order));
  fnv_mix(h, static_cast<std::uint64_t>(residual_channels_per_view));
  std::uint64_t eta_bits = 0;
  std::memcpy(&eta_bits, &eta, sizeof(eta_bits));
  fnv_mix(h, eta_bits);
  return h;
}

const Tensor& ModelParams::find(const std::string& name) const {
  for (const Param& p : params) {
    if (p.name == name) return p.value;
  }
  throw ArgumentError("unknown parameter '" + name + "'");
}

Tensor& ModelParams::find(const std::string& name) {
  for (Param& p : params) {
    if (p.name == name) return p.value;
  }
  throw ArgumentError("unknown parameter '" + name + "'");
}

std::int64_t ModelParams::param_count() const {
  i64 n = 0;
  for (const Param& p : params) n += p.value.size();
  return n;
}

std::string ModelParams::group_of(const std::string& name) {
  return name.substr(0, name.find('/'));
}

bool ModelParams::frozen(const std::string& name) const {
  auto it = group_frozen.find(group_of(name));
  return it != group_frozen.end() && it->second;
}

void ModelParams::set_requires_grad(bool rg) {
  for (Param& p : params) {
    p.value = Tensor::from_array(p.value.shape(), p.value.values(), rg);
  }
}

ModelParams build(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams mp;
  mp.config = config;
  Rng rng(seed);
  for (const ConvSpec& spec : layer_specs(config)) {
    const Shape kshape = spec.transpose ? Shape{3, 3, spec.cout, spec.cin}
                                        : Shape{3, 3, spec.cin, spec.cout};
    const double stddev = std::sqrt(2.0 / (9.0 * static_cast<double>(spec.cin)));
    Eigen::ArrayXd w(shape_size(kshape));
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = stddev * rng.normal();
    mp.params.push_back({spec.name + "/w", Tensor::from_array(kshape, std::move(w), true)});
    mp.params.push_back({spec.name + "/b", Tensor::zeros(Shape{spec.cout}, true)});
  }
  return mp;
}

const Shape* ActivationLog::find(const std::string& name) const {
  for (const auto& [n, s] : entries) {
    if (n == name) return &s;
  }
  return nullptr;
}

AngularForward forward_angular(Tape& tape, const ModelParams& params, const Tensor& center,
                               ActivationLog* log) {
  const NetConfig& cfg = params.config;
  if (center.rank() != 3 || center.extent(2) != cfg.channels) {
    throw ShapeError("forward_angular: input must be [H,W," + std::to_string(cfg.channels) +
                     "], got " + shape_str(center.shape()));
  }
  const i64 div = i64{1} << cfg.depth;
  if (center.extent(0) % div != 0 || center.extent(1) % div != 0) {
    throw ShapeError("forward_angular: input " + std::to_string(center.extent(0)) + "x" +
                     std::to_string(center.extent(1)) + " must be divisible by 2^depth = " +
                     std::to_string(div));
  }

  EncoderOut enc = run_encoder(tape, params, center, log);

  Tensor d = enc.bottleneck;
  for (int k = cfg.depth; k >= 1; --k) {
    const std::string base = "angular/l" + std::to_string(k);
    d = convt_lrelu(tape, params, base + "/up", d);
    if (log) log->note(base + "/up", d);
    d = concat_channels(tape, d, enc.skips[static_cast<std::size_t>(k - 1)]);
    d = conv_lrelu(tape, params, base + "/conv_a", d);
    d = conv_lrelu(tape, params, base + "/conv_b", d);
    if (log) log->note(base + "/conv", d);
  }
  d = conv_lrelu(tape, params, "angular/head/conv_a", d);
  d = conv_lrelu(tape, params, "angular/head/conv_b", d);
  if (log) log->note("angular/head/conv", d);
  Tensor raw = conv2d(tape, d, params.find("angular/head/out/w"),
                      params.find("angular/head/out/b"), 1);
  if (log) log->note("angular/head/out", raw);

  AngularForward out;
  out.flow_raw = raw;
  out.flow = decode_flow(tape, raw, cfg.views);
  out.bottleneck = enc.bottleneck;
  LightField shifted = shift_views_centered(tape, center, cfg.views, cfg.eta, cfg.center());
  out.lf_lr = warp(tape, shifted, out.flow);
  return out;
}

SpatialForward forward_spatial(Tape& tape, const ModelParams& params, const AngularForward& af,
                               ActivationLog* log) {
  const NetConfig& cfg = params.config;
  Tensor field_channels = views_to_channels(tape, af.lf_lr.data);
  std::vector<Tensor> branch_out =
      run_spatial_branches(tape, params, af.bottleneck, af.flow_raw, field_channels, log);

  Tensor lifted = lift_channels(tape, af.lf_lr.data, cfg.residual_channels_per_view);
  Tensor acc = bilinear_resize(tape, lifted, 2);

  SpatialForward out;
  const std::vector<Prior> priors = branch_priors(cfg.residual_order);
  for (std::size_t j = 0; j < branch_out.size(); ++j) {
    Tensor res = channels_to_views(tape, branch_out[j], cfg.views,
                                   cfg.residual_channels_per_view);
    acc = add(tape, acc, res);
    out.residuals.push_back(res);
    if (priors[j] == Prior::kFlow && !out.residual_flow.defined()) out.residual_flow = res;
    if (priors[j] == Prior::kIntensity && !out.residual_intensity.defined()) {
      out.residual_intensity = res;
    }
  }
  out.lf_hr = LightField(acc);
  return out;
}

LightField synthesize(const ModelParams& params, const Tensor& center, bool x4) {
  if (x4) return synth_hr_x4(params, center);
  Tape tape;
  AngularForward af = forward_angular(tape, params, center);
  SpatialForward sf = forward_spatial(tape, params, af);
  return LightField(clamp01_copy(sf.lf_hr.data));
}

LightField synth_hr_x4(const ModelParams& params, const Tensor& center) {
  const NetConfig& cfg = params.config;
  LightField lf2;
  {
    Tape tape;
    AngularForward af = forward_angular(tape, params, center);
    SpatialForward sf = forward_spatial(tape, params, af);
    lf2 = LightField(clamp01_copy(sf.lf_hr.data));
  }

  const i64 U = cfg.views;
  const i64 rc = cfg.residual_channels_per_view;
  const i64 H2 = lf2.height(), W2 = lf2.width();
  const i64 sc = cfg.center() + cfg.center() * U;  // center view channel block

  Tensor out = Tensor::zeros(Shape{U, U, 2 * H2, 2 * W2, rc});
  const i64 block = 2 * H2 * 2 * W2 * rc;
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      Tensor view = lf2.view(v, u);
      Tensor lum;
      if (rc == cfg.channels) {
        lum = view;
      } else if (cfg.channels == 1) {
        lum = to_luminance(view);
      } else {
        throw ShapeError("synth_hr_x4: cannot reduce " + std::to_string(rc) +
                         " residual channels to " + std::to_string(cfg.channels) +
                         " input channels");
      }
      // Second pass runs the spatial path only: the flow prior is zero and
      // the initial-field prior is the plain shifted stack of this view.
      Tape tape;
      EncoderOut enc = run_encoder(tape, params, lum, nullptr);
      Tensor zero_flow = Tensor::zeros(Shape{H2, W2, cfg.flow_channels()});
      LightField shifted = shift_views_centered(tape, lum, U, cfg.eta, cfg.center());
      Tensor prior_channels = views_to_channels(tape, shifted.data);
      std::vector<Tensor> branch_out = run_spatial_branches(
          tape, params, enc.bottleneck, zero_flow, prior_channels, nullptr);

      Tensor up_view = bilinear_resize(tape, view, 2);
      Eigen::ArrayXd acc = up_view.values();
      const i64 CH = U * U * rc;
      for (const Tensor& b : branch_out) {
        const double* res = b.values().data();
        for (i64 p = 0; p < 2 * H2 * 2 * W2; ++p) {
          for (i64 c = 0; c < rc; ++c) acc[p * rc + c] += res[p * CH + sc * rc + c];
        }
      }
      out.mutable_values().segment((v * U + u) * block, block) = acc;
    }
  }
  return LightField(clamp01_copy(out));
}

void save_checkpoint(const ModelParams& params, const std::string& path, LfDtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  const NetConfig& cfg = params.config;
  os.write(kCkptMagic, 4);
  write_u32(os, kCkptVersion);
  write_u32(os, static_cast<std::uint32_t>(dtype));
  write_u32(os, static_cast<std::uint32_t>(cfg.input_h));
  write_u32(os, static_cast<std::uint32_t>(cfg.input_w));
  write_u32(os, static_cast<std::uint32_t>(cfg.views));
  write_u32(os, static_cast<std::uint32_t>(cfg.channels));
  write_u32(os, static_cast<std::uint32_t>(cfg.base_filters));
  write_u32(os, static_cast<std::uint32_t>(cfg.depth));
  write_u32(os, static_cast<std::uint32_t>(cfg.sr_factor));
  write_u32(os, static_cast<std::uint32_t>(cfg.residual_order));
  write_u32(os, static_cast<std::uint32_t>(cfg.residual_channels_per_view));
  std::uint64_t eta_bits = 0;
  std::memcpy(&eta_bits, &cfg.eta, sizeof(eta_bits));
  write_u64(os, eta_bits);
  write_u64(os, cfg.fingerprint());

  write_u32(os, static_cast<std::uint32_t>(params.params.size()));
  for (const Param& p : params.params) {
    write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(os, static_cast<std::uint32_t>(p.value.rank()));
    for (int a = 0; a < p.value.rank(); ++a) {
      write_u32(os, static_cast<std::uint32_t>(p.value.extent(a)));
    }
    const Eigen::ArrayXd& v = p.value.values();
    if (dtype == LfDtype::F64) {
      os.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(sizeof(double)) * v.size());
    } else {
      std::vector<float> f(static_cast<std::size_t>(v.size()));
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        f[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
      }
      os.write(reinterpret_cast<const char*>(f.data()),
               static_cast<std::streamsize>(sizeof(float) * f.size()));
    }
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path, const std::optional<NetConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint for reading: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic in " + path + " (expected \"LFCK\")");
  }
  const std::uint32_t version = read_u32(is, "version");
  if (version != kCkptVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t dtype = read_u32(is, "dtype");
  if (dtype != 0 && dtype != 1) {
    throw FormatError("checkpoint: unknown dtype code " + std::to_string(dtype));
  }

  NetConfig cfg;
  cfg.input_h = read_u32(is, "input_h");
  cfg.input_w = read_u32(is, "input_w");
  cfg.views = read_u32(is, "views");
  cfg.channels = read_u32(is, "channels");
  cfg.base_filters = read_u32(is, "base_filters");
  cfg.depth = static_cast<int>(read_u32(is, "depth"));
  cfg.sr_factor = static_cast<int>(read_u32(is, "sr_factor"));
  cfg.residual_order = static_cast<ResidualOrder>(read_u32(is, "residual_order"));
  cfg.residual_channels_per_view = read_u32(is, "residual_channels_per_view");
  const std::uint64_t eta_bits = read_u64(is, "eta");
  std::memcpy(&cfg.eta, &eta_bits, sizeof(cfg.eta));
  const std::uint64_t stored_fp = read_u64(is, "fingerprint");
  if (stored_fp != cfg.fingerprint()) {
    throw FormatError("checkpoint: config fingerprint mismatch (corrupt header?)");
  }
  if (expected) {
    auto check = [&](const std::string& field, auto got, auto want) {
      if (got != want) {
        throw FormatError("checkpoint config mismatch on field '" + field + "': checkpoint has " +
                          std::to_string(got) + ", expected " + std::to_string(want));
      }
    };
    check("views", cfg.views, expected->views);
    check("channels", cfg.channels, expected->channels);
    check("base_filters", cfg.base_filters, expected->base_filters);
    check("depth", cfg.depth, expected->depth);
    check("residual_channels_per_view", cfg.residual_channels_per_view,
          expected->residual_channels_per_view);
    if (cfg.residual_order != expected->residual_order) {
      throw FormatError("checkpoint config mismatch on field 'residual_order': checkpoint has " +
                        residual_order_name(cfg.residual_order) + ", expected " +
                        residual_order_name(expected->residual_order));
    }
  }
  cfg.validate();

  ModelParams mp;
  mp.config = cfg;
  const std::uint32_t count = read_u32(is, "param count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is, "param name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("checkpoint truncated reading a parameter name");
    const std::uint32_t rank = read_u32(is, name + " rank");
    Shape shape(rank);
    for (std::uint32_t a = 0; a < rank; ++a) {
      shape[a] = read_u32(is, name + " extent");
    }
    const i64 n = shape_size(shape);
    Eigen::ArrayXd values(n);
    if (dtype == 1) {
      is.read(reinterpret_cast<char*>(values.data()),
              static_cast<std::streamsize>(sizeof(double)) * n);
    } else {
      std::vector<float> f(static_cast<std::size_t>(n));
      is.read(reinterpret_cast<char*>(f.data()),
              static_cast<std::streamsize>(sizeof(float) * f.size()));
      for (i64 k = 0; k < n; ++k) values[k] = static_cast<double>(f[static_cast<std::size_t>(k)]);
    }
    if (!is) {
      throw FormatError("checkpoint truncated reading payload of '" + name + "'");
    }
    mp.params.push_back({std::move(name), Tensor::from_array(std::move(shape), std::move(values))});
  }
  is.peek();
  if (!is.eof()) {
    throw FormatError("checkpoint length error: trailing bytes after the parameter directory");
  }

  // Cross-check the directory against the architecture walk.
  const std::vector<ConvSpec> specs = layer_specs(cfg);
  if (mp.params.size() != specs.size() * 2) {
    throw FormatError("checkpoint holds " + std::to_string(mp.params.size()) +
                      " parameters, architecture expects " + std::to_string(specs.size() * 2));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ConvSpec& s = specs[i];
    const Param& w = mp.params[2 * i];
    const Param& b = mp.params[2 * i + 1];
    const Shape want_w =
        s.transpose ? Shape{3, 3, s.cout, s.cin} : Shape{3, 3, s.cin, s.cout};
    if (w.name != s.name + "/w" || !same_shape(w.value.shape(), want_w)) {
      throw FormatError("checkpoint parameter '" + w.name + "' does not match expected '" +
                        s.name + "/w' " + shape_str(want_w));
    }
    if (b.name != s.name + "/b" || b.value.extent(0) != s.cout) {
      throw FormatError("checkpoint parameter '" + b.name + "' does not match expected '" +
                        s.name + "/b'");
    }
  }
  return mp;
}

}  // namespace lfs
