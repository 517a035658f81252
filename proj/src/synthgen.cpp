#include "lfs/synthgen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lfs/ops.hpp"
#include "lfs/rng.hpp"

namespace lfs {

namespace {

using i64 = std::int64_t;
namespace fs = std::filesystem;

// Rasterizes a texture at integer pixel positions, optionally at a finer
// sampling scale (scale 2 renders the same continuous pattern on a 2x grid,
// so an HR render and its box-filtered LR stay geometrically aligned).
Tensor rasterize_texture(const TextureSpec& tex, i64 H, i64 W, i64 scale) {
  Tensor out = Tensor::zeros(Shape{H, W, 1});
  double* d = out.mutable_values().data();
  switch (tex.kind) {
    case TextureKind::kNoise: {
      Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(H * W);
      double amp = 1.0, amp_sum = 0.0;
      for (int o = 0; o < std::max(1, tex.octaves); ++o) {
        // Octave cells floor at 4 px: finer octaves put too much curvature into
        // the bilinear resampling chain for the 50 dB reconstruction budget.
        const i64 cell = std::max<i64>(4, tex.cell >> o) * scale;
        const i64 gx = W / cell + 2, gy = H / cell + 2;
        Rng rng(Rng::derive(tex.seed, static_cast<std::uint64_t>(o)));
        std::vector<double> knots(static_cast<std::size_t>(gx * gy));
        for (double& k : knots) k = rng.uniform01();
        for (i64 y = 0; y < H; ++y) {
          const i64 y0 = y / cell;
          const double fy = static_cast<double>(y % cell) / static_cast<double>(cell);
          for (i64 x = 0; x < W; ++x) {
            const i64 x0 = x / cell;
            const double fx = static_cast<double>(x % cell) / static_cast<double>(cell);
            const double v00 = knots[static_cast<std::size_t>(y0 * gx + x0)];
            const double v01 = knots[static_cast<std::size_t>(y0 * gx + x0 + 1)];
            const double v10 = knots[static_cast<std::size_t>((y0 + 1) * gx + x0)];
            const double v11 = knots[static_cast<std::size_t>((y0 + 1) * gx + x0 + 1)];
            acc[y * W + x] += amp * ((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                     fy * ((1 - fx) * v10 + fx * v11));
          }
        }
        amp_sum += amp;
        amp *= 0.5;
      }
      for (i64 i = 0; i < H * W; ++i) {
        d[i] = tex.brightness + tex.contrast * (2.0 * acc[i] / amp_sum - 1.0);
      }
      break;
    }
    case TextureKind::kChecker: {
      const double period = static_cast<double>(2 * tex.cell * scale);
      for (i64 y = 0; y < H; ++y) {
        for (i64 x = 0; x < W; ++x) {
          const double sx = std::sin(2.0 * M_PI * static_cast<double>(x) / period);
          const double sy = std::sin(2.0 * M_PI * static_cast<double>(y) / period);
          d[y * W + x] = tex.brightness + tex.contrast * std::tanh(1.5 * sx * sy);
        }
      }
      break;
    }
    case TextureKind::kMosaic: {
      // Flat-shaded jittered-grid mosaic: piecewise-constant cells with sharp
      // boundaries. Spatially heterogeneous statistics anchor the mean and
      // variance losses to geometry in a way stationary noise cannot.
      const i64 cell = std::max<i64>(4, tex.cell) * scale;
      // One jittered site per cell on a grid padded by one cell on each side;
      // logical cell (cx,cy) ranges over [-1, extent/cell], stored at +1.
      const i64 gx = W / cell + 3, gy = H / cell + 3;
      Rng rng(tex.seed);
      std::vector<double> sx(static_cast<std::size_t>(gx * gy));
      std::vector<double> sy(static_cast<std::size_t>(gx * gy));
      std::vector<double> lum(static_cast<std::size_t>(gx * gy));
      for (i64 g = 0; g < gx * gy; ++g) {
        const i64 cx = g % gx - 1, cy = g / gx - 1;
        sx[static_cast<std::size_t>(g)] =
            (static_cast<double>(cx) + rng.uniform(0.15, 0.85)) * static_cast<double>(cell);
        sy[static_cast<std::size_t>(g)] =
            (static_cast<double>(cy) + rng.uniform(0.15, 0.85)) * static_cast<double>(cell);
        lum[static_cast<std::size_t>(g)] = tex.brightness + tex.contrast * (2.0 * rng.uniform01() - 1.0);
      }
      for (i64 y = 0; y < H; ++y) {
        for (i64 x = 0; x < W; ++x) {
          const i64 cx = x / cell, cy = y / cell;
          double best = 1e18;
          double value = tex.brightness;
          for (i64 ny = cy - 1; ny <= cy + 1; ++ny) {
            for (i64 nx = cx - 1; nx <= cx + 1; ++nx) {
              const i64 g = (ny + 1) * gx + (nx + 1);
              const double ddx = static_cast<double>(x) - sx[static_cast<std::size_t>(g)];
              const double ddy = static_cast<double>(y) - sy[static_cast<std::size_t>(g)];
              const double d2 = ddx * ddx + ddy * ddy;
              if (d2 < best) {
                best = d2;
                value = lum[static_cast<std::size_t>(g)];
              }
            }
          }
          d[y * W + x] = value;
        }
      }
      break;
    }
    case TextureKind::kGradient: {
      Rng rng(tex.seed);
      const double angle = rng.uniform(0.0, 2.0 * M_PI);
      const double gx = std::cos(angle), gy = std::sin(angle);
      const double span = std::max<double>(1.0, std::hypot(static_cast<double>(W),
                                                           static_cast<double>(H)));
      for (i64 y = 0; y < H; ++y) {
        for (i64 x = 0; x < W; ++x) {
          const double t = (gx * static_cast<double>(x) + gy * static_cast<double>(y)) / span;
          d[y * W + x] = tex.brightness + 2.0 * tex.contrast * t;
        }
      }
      break;
    }
  }
  // Textures are built to stay in range; clamp defensively anyway.
  out.mutable_values() = out.values().cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

/// Blob mask from seeded axis-aligned ellipses, 1 inside.
Tensor rasterize_mask(const LayerSpec& layer, i64 H, i64 W, i64 scale) {
  Tensor mask = Tensor::zeros(Shape{H, W, 1});
  if (layer.full_coverage) {
    mask.mutable_values().setConstant(1.0);
    return mask;
  }
  double* d = mask.mutable_values().data();
  Rng rng(layer.mask_seed);
  const int blobs = 2 + static_cast<int>(rng.uniform_int(0, 2));
  const double target_area = layer.coverage * static_cast<double>(H * W);
  const double r_base = std::sqrt(target_area / (M_PI * blobs));
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0.15, 0.85) * static_cast<double>(W);
    const double cy = rng.uniform(0.15, 0.85) * static_cast<double>(H);
    const double rx = r_base * rng.uniform(0.7, 1.3);
    const double ry = r_base * rng.uniform(0.7, 1.3);
    for (i64 y = 0; y < H; ++y) {
      for (i64 x = 0; x < W; ++x) {
        const double dx = (static_cast<double>(x) - cx) / rx;
        const double dy = (static_cast<double>(y) - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) d[y * W + x] = 1.0;
      }
    }
  }
  (void)scale;
  return mask;
}

Tensor translate_image(const Tensor& img, double dy, double dx) {
  Tape scratch;
  Tensor grid = const_offset_grid(img.extent(0), img.extent(1), dx, dy);
  return grid_sample(scratch, img, grid);
}

GroundTruth render(const SceneSpec& spec, i64 scale) {
  const i64 H = spec.height * scale, W = spec.width * scale;
  const i64 U = spec.views;
  const i64 c = (U + 1) / 2 - 1;
  const std::size_t L = spec.layers.size();

  std::vector<Tensor> textures(L), masks(L);
  for (std::size_t l = 0; l < L; ++l) {
    TextureSpec tex = spec.layers[l].texture;
    tex.seed = Rng::derive(spec.seed, 1000 + l) ^ tex.seed;
    LayerSpec layer = spec.layers[l];
    layer.mask_seed = Rng::derive(spec.seed, 2000 + l) ^ layer.mask_seed;
    textures[l] = rasterize_texture(tex, H, W, scale);
    masks[l] = rasterize_mask(layer, H, W, scale);
  }

  Tensor field = Tensor::zeros(Shape{U, U, H, W, 1});
  Tensor view_disp = Tensor::zeros(Shape{U, U, H, W, 1});
  Tensor valid = Tensor::zeros(Shape{U, U, H, W, 1});
  // Visible layer index per view, used for the center-occlusion test.
  std::vector<std::vector<std::int8_t>> vis(static_cast<std::size_t>(U * U));

  const i64 block = H * W;
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const double dv = static_cast<double>(v - c);
      const double dh = static_cast<double>(u - c);
      std::vector<std::int8_t>& visible = vis[static_cast<std::size_t>(v * U + u)];
      visible.assign(static_cast<std::size_t>(block), -1);
      double* fd = field.mutable_values().data() + (v * U + u) * block;
      double* dd = view_disp.mutable_values().data() + (v * U + u) * block;
      for (std::size_t l = 0; l < L; ++l) {
        const double d = spec.layers[l].disparity * static_cast<double>(scale);
        Tensor t;
        if (spec.render_eta != 0.0 && !(v == c && u == c)) {
          const double e = spec.render_eta * static_cast<double>(scale);
          t = translate_image(translate_image(textures[l], -e * dv, -e * dh),
                              -(d - e) * dv, -(d - e) * dh);
        } else {
          t = translate_image(textures[l], -d * dv, -d * dh);
        }
        Tensor m = spec.layers[l].full_coverage
                       ? masks[l]
                       : translate_image(masks[l], -d * dv, -d * dh);
        const double* tv = t.values().data();
        const double* mv = m.values().data();
        for (i64 p = 0; p < block; ++p) {
          if (visible[static_cast<std::size_t>(p)] >= 0) continue;
          if (mv[p] > 0.5) {
            visible[static_cast<std::size_t>(p)] = static_cast<std::int8_t>(l);
            fd[p] = tv[p];
            dd[p] = spec.layers[l].disparity * static_cast<double>(scale);
          }
        }
      }
    }
  }

  // Flow validity: the source position in the center image must be interior
  // and its whole bilinear stencil must show the same layer.
  const std::vector<std::int8_t>& center_vis = vis[static_cast<std::size_t>(c * U + c)];
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const double dv = static_cast<double>(v - c);
      const double dh = static_cast<double>(u - c);
      const std::vector<std::int8_t>& visible = vis[static_cast<std::size_t>(v * U + u)];
      const double* dd = view_disp.values().data() + (v * U + u) * block;
      double* ok = valid.mutable_values().data() + (v * U + u) * block;
      for (i64 y = 0; y < H; ++y) {
        for (i64 x = 0; x < W; ++x) {
          const i64 p = y * W + x;
          const std::int8_t layer = visible[static_cast<std::size_t>(p)];
          const double sy = static_cast<double>(y) - dd[p] * dv;
          const double sx = static_cast<double>(x) - dd[p] * dh;
          if (sy < 3.0 || sy > static_cast<double>(H - 4) || sx < 3.0 ||
              sx > static_cast<double>(W - 4)) {
            continue;  // border band
          }
          // The shift+warp chain reads center pixels in [floor(p)-2, floor(p)+3].
          bool clean = true;
          const i64 by = static_cast<i64>(std::floor(sy));
          const i64 bx = static_cast<i64>(std::floor(sx));
          for (i64 yy = by - 2; yy <= by + 3 && clean; ++yy) {
            for (i64 xx = bx - 2; xx <= bx + 3 && clean; ++xx) {
              clean = center_vis[static_cast<std::size_t>(yy * W + xx)] == layer;
            }
          }
          ok[p] = clean ? 1.0 : 0.0;
        }
      }
    }
  }

  GroundTruth gt;
  gt.lf = LightField(field);
  gt.view_disparity = view_disp;
  gt.valid_mask = valid;
  gt.disparity_map = Tensor::from_array(
      Shape{H, W, 1}, view_disp.values().segment((c * U + c) * block, block));
  return gt;
}

}  // namespace

void SceneSpec::validate() const {
  if (layers.empty()) throw ConfigError("scene needs at least one layer");
  if (!layers.back().full_coverage) {
    throw ConfigError("the back layer must have full coverage");
  }
  if (height < 8 || width < 8) throw ConfigError("scene extents too small");
  if (views < 1) throw ConfigError("scene needs at least one view");
  const double half = static_cast<double>(views / 2);
  for (const LayerSpec& l : layers) {
    if (!std::isfinite(l.disparity)) throw ConfigError("layer disparity must be finite");
    if (std::abs(l.disparity) * half > static_cast<double>(width) / 4.0) {
      throw ConfigError("layer disparity " + std::to_string(l.disparity) +
                        " shifts outside the safe frame (|d| * floor(U/2) <= W/4)");
    }
  }
}

GroundTruth generate(const SceneSpec& spec) {
  spec.validate();
  return render(spec, 1);
}

AppearanceFlowField GroundTruth::ideal_flow(double eta) const {
  const i64 U = lf.angular();
  const i64 H = lf.height(), W = lf.width();
  const i64 c = lf.center();
  Tensor flows = Tensor::zeros(Shape{U, U, H, W, 2});
  double* f = flows.mutable_values().data();
  const double* d = view_disparity.values().data();
  const i64 block = H * W;
  for (i64 v = 0; v < U; ++v) {
    for (i64 u = 0; u < U; ++u) {
      const double dv = static_cast<double>(v - c);
      const double dh = static_cast<double>(u - c);
      const double* dd = d + (v * U + u) * block;
      double* fd = f + (v * U + u) * block * 2;
      for (i64 p = 0; p < block; ++p) {
        fd[2 * p] = (eta - dd[p]) * dh;
        fd[2 * p + 1] = (eta - dd[p]) * dv;
      }
    }
  }
  return AppearanceFlowField(flows);
}

SceneSpec random_scene(std::uint64_t seed, i64 height, i64 width, i64 views) {
  Rng rng(seed);
  auto draw_disparity = [&rng](double lo, double hi) {
    // Keep a margin around eta = 0.8 so ideal flow signs stay well-defined.
    for (int tries = 0; tries < 64; ++tries) {
      const double d = rng.uniform(lo, hi);
      if (std::abs(d - 0.8) >= 0.15) return d;
    }
    return lo;
  };
  // Most scenes keep the shift mismatch |eta - d| within the bilinear
  // gradient horizon of the outermost views so the unsupervised losses can
  // pull flows toward geometry; a minority stretches to the full corpus
  // disparity range [-1.5, 1.5].
  const bool wide = (seed & 7) == 7;
  const double d_back = wide ? draw_disparity(-1.5, -0.6) : draw_disparity(0.05, 0.6);
  const double d_front = draw_disparity(std::max(d_back + 0.5, 0.95), 1.5);
  auto brightness_for = [](double d) { return 0.25 + 0.5 * (d + 1.5) / 3.0; };

  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.views = views;
  spec.seed = seed;

  LayerSpec front;
  front.disparity = d_front;
  front.full_coverage = false;
  front.coverage = rng.uniform(0.15, 0.3);
  front.mask_seed = rng.next_u64();
  front.texture.kind = TextureKind::kMosaic;
  front.texture.cell = 10;  // finer mosaic marks the near layer
  front.texture.seed = rng.next_u64();
  front.texture.brightness = brightness_for(d_front);
  front.texture.contrast = 0.22;

  LayerSpec back;
  back.disparity = d_back;
  back.full_coverage = true;
  back.texture.kind = TextureKind::kMosaic;
  back.texture.cell = 16;
  back.texture.seed = rng.next_u64();
  back.texture.brightness = brightness_for(d_back);
  back.texture.contrast = 0.22;

  spec.layers = {front, back};
  return spec;
}

Tensor box_downsample2(const Tensor& field) {
  if (field.rank() != 5) throw ShapeError("box_downsample2: need [U,U,H,W,C]");
  const i64 U1 = field.extent(0), U2 = field.extent(1);
  const i64 H = field.extent(2), W = field.extent(3), C = field.extent(4);
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("box_downsample2: extents must be even");
  const i64 h = H / 2, w = W / 2;
  Tensor out = Tensor::zeros(Shape{U1, U2, h, w, C});
  const double* src = field.values().data();
  double* dst = out.mutable_values().data();
  for (i64 b = 0; b < U1 * U2; ++b) {
    const double* sb = src + b * H * W * C;
    double* db = dst + b * h * w * C;
    for (i64 y = 0; y < h; ++y) {
      for (i64 x = 0; x < w; ++x) {
        for (i64 ch = 0; ch < C; ++ch) {
          const double s = sb[((2 * y) * W + 2 * x) * C + ch] +
                           sb[((2 * y) * W + 2 * x + 1) * C + ch] +
                           sb[((2 * y + 1) * W + 2 * x) * C + ch] +
                           sb[((2 * y + 1) * W + 2 * x + 1) * C + ch];
          db[(y * w + x) * C + ch] = 0.25 * s;
        }
      }
    }
  }
  return out;
}

DatasetManifest make_dataset(i64 n_scenes, i64 height, i64 width, i64 views,
                             std::uint64_t seed, double eta, const std::string& out_dir) {
  if (n_scenes < 1) throw ArgumentError("make_dataset: need at least one scene");
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.views = views;
  manifest.height = height;
  manifest.width = width;
  manifest.eta = eta;
  manifest.seed = seed;
  manifest.dir = out_dir;

  for (i64 i = 0; i < n_scenes; ++i) {
    const std::uint64_t scene_seed = Rng::derive(seed, static_cast<std::uint64_t>(i));
    SceneSpec spec = random_scene(scene_seed, height, width, views);
    spec.render_eta = eta;  // match the synthesis chain's resampling
    spec.validate();

    // HR render of the same continuous scene, then the LR pair by box filter.
    GroundTruth hr = render(spec, 2);
    GroundTruth lr_geom = render(spec, 1);
    Tensor lr_field = box_downsample2(hr.lf.data);

    char id[16];
    std::snprintf(id, sizeof(id), "scene_%03d", static_cast<int>(i));
    DatasetManifest::Scene s;
    s.id = id;
    s.lr = std::string(id) + ".lr.lf4";
    s.hr = std::string(id) + ".hr.lf4";
    s.disparity = std::string(id) + ".disp.gt.lf4";
    s.flow = std::string(id) + ".flow.gt.lf4";
    s.valid = std::string(id) + ".valid.gt.lf4";
    s.seed = scene_seed;
    s.disparity_min = spec.layers[0].disparity;
    s.disparity_max = spec.layers[0].disparity;
    for (const LayerSpec& l : spec.layers) {
      s.disparity_min = std::min(s.disparity_min, l.disparity);
      s.disparity_max = std::max(s.disparity_max, l.disparity);
    }

    save_lf4_tensor(lr_field, (fs::path(out_dir) / s.lr).string());
    save_lf4_tensor(hr.lf.data, (fs::path(out_dir) / s.hr).string());
    save_lf4_tensor(lr_geom.view_disparity, (fs::path(out_dir) / s.disparity).string());
    save_flow(lr_geom.ideal_flow(eta), (fs::path(out_dir) / s.flow).string());
    save_lf4_tensor(lr_geom.valid_mask, (fs::path(out_dir) / s.valid).string());
    manifest.scenes.push_back(std::move(s));
  }

  nlohmann::json j;
  j["views"] = manifest.views;
  j["height"] = manifest.height;
  j["width"] = manifest.width;
  j["eta"] = manifest.eta;
  j["seed"] = manifest.seed;
  double dmin = manifest.scenes.front().disparity_min;
  double dmax = manifest.scenes.front().disparity_max;
  for (const auto& s : manifest.scenes) {
    dmin = std::min(dmin, s.disparity_min);
    dmax = std::max(dmax, s.disparity_max);
  }
  j["disparity_range"] = {dmin, dmax};
  j["scenes"] = nlohmann::json::array();
  for (const auto& s : manifest.scenes) {
    j["scenes"].push_back({{"id", s.id},
                           {"lr", s.lr},
                           {"hr", s.hr},
                           {"disparity", s.disparity},
                           {"flow", s.flow},
                           {"valid", s.valid},
                           {"seed", s.seed},
                           {"disparity_min", s.disparity_min},
                           {"disparity_max", s.disparity_max}});
  }
  std::ofstream os(fs::path(out_dir) / "manifest.json");
  if (!os) throw IoError("cannot write manifest.json in " + out_dir);
  os << j.dump(2) << "\n";
  return manifest;
}

DatasetManifest DatasetManifest::load(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream is(mpath);
  if (!is) throw IoError("missing manifest.json in " + dir);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid manifest.json: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.dir = dir;
  m.views = j.at("views").get<i64>();
  m.height = j.at("height").get<i64>();
  m.width = j.at("width").get<i64>();
  m.eta = j.at("eta").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& js : j.at("scenes")) {
    Scene s;
    s.id = js.at("id").get<std::string>();
    s.lr = js.at("lr").get<std::string>();
    s.hr = js.at("hr").get<std::string>();
    s.disparity = js.at("disparity").get<std::string>();
    s.flow = js.at("flow").get<std::string>();
    s.valid = js.at("valid").get<std::string>();
    s.seed = js.at("seed").get<std::uint64_t>();
    s.disparity_min = js.at("disparity_min").get<double>();
    s.disparity_max = js.at("disparity_max").get<double>();
    m.scenes.push_back(std::move(s));
  }
  if (m.scenes.empty()) throw FormatError("manifest.json lists no scenes");
  return m;
}

}  // namespace lfs
