#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lfs/lf_ops.hpp"
#include "lfs/light_field.hpp"

namespace lfs {

enum class TextureKind { kNoise, kChecker, kGradient, kMosaic };

/// Procedural band-limited texture. Noise and gradient rasters are exactly
/// reproduced by bilinear resampling (knots on integer pixels), which keeps
/// geometric oracle tests tight.
struct TextureSpec {
  TextureKind kind = TextureKind::kNoise;
  std::uint64_t seed = 0;
  int octaves = 2;         // noise only
  std::int64_t cell = 8;   // noise base cell / checker half-period, pixels
  double brightness = 0.5;
  double contrast = 0.25;
};

struct LayerSpec {
  double disparity = 0.0;  // pixels of shift per unit angular distance
  TextureSpec texture;
  bool full_coverage = true;  // otherwise a seeded blob mask
  std::uint64_t mask_seed = 0;
  double coverage = 0.35;  // approximate blob coverage fraction
};

struct SceneSpec {
  std::vector<LayerSpec> layers;  // ordered front to back
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t views = 5;
  std::uint64_t seed = 0;
  /// When nonzero, each layer is translated in two bilinear passes
  /// (-eta*du, then -(d-eta)*du) instead of one, matching the resampling
  /// signature of the shift-then-warp synthesis chain. The net translation
  /// is unchanged; with the ideal flow the pipeline then reproduces the
  /// rendered views exactly away from occlusions, which keeps the
  /// statistical losses anchored to geometry. Dataset generation uses the
  /// corpus eta here.
  double render_eta = 0.0;

  void validate() const;
};

struct GroundTruth {
  LightField lf;
  Tensor disparity_map;   // [H,W,1] visible-surface disparity at the center view
  Tensor view_disparity;  // [U,U,H,W,1] visible-surface disparity per view
  /// [U,U,H,W,1]; 1 where flow-based reconstruction from the center image is
  /// well-defined (surface unoccluded in the center view, away from borders).
  Tensor valid_mask;

  /// Per-pixel ideal flow (eta - d) * du for the given shift scale.
  AppearanceFlowField ideal_flow(double eta) const;
};

/// Renders the layered scene: each view translates every layer by -d * du
/// (bilinear subpixel, clamp-to-edge) and composites front to back with
/// per-pixel nearest-disparity visibility. Deterministic given the spec.
GroundTruth generate(const SceneSpec& spec);

/// Draws a random two-layer scene with monocular depth cues: layer
/// brightness and texture scale correlate with disparity so that held-out
/// scenes remain predictable from a single image. Disparities stay in
/// [-1.5, 1.5] and avoid the eta = 0.8 sign boundary.
SceneSpec random_scene(std::uint64_t seed, std::int64_t height, std::int64_t width,
                       std::int64_t views);

struct DatasetManifest {
  struct Scene {
    std::string id;
    std::string lr;         // [U,U,h,w,1] field
    std::string hr;         // [U,U,2h,2w,1] field; lr is its 2x2 box filter
    std::string disparity;  // [U,U,h,w,1] per-view visible disparity
    std::string flow;       // [U,U,h,w,2] ideal flow at the manifest eta
    std::string valid;      // [U,U,h,w,1] flow-validity mask
    std::uint64_t seed = 0;
    double disparity_min = 0.0;
    double disparity_max = 0.0;
  };
  std::vector<Scene> scenes;
  std::int64_t views = 0;
  std::int64_t height = 0;  // LR extents
  std::int64_t width = 0;
  double eta = 0.8;
  std::uint64_t seed = 0;

  static DatasetManifest load(const std::string& dir);
  std::string dir;  // directory the manifest was loaded from / written to
};

/// Writes `n_scenes` HR fields with their box-filtered LR counterparts and
/// ground-truth sidecars plus manifest.json; byte-identical across runs with
/// the same arguments.
DatasetManifest make_dataset(std::int64_t n_scenes, std::int64_t height, std::int64_t width,
                             std::int64_t views, std::uint64_t seed, double eta,
                             const std::string& out_dir);

/// 2x2 box filter downsample of a [U,U,H,W,C] field (H, W even).
Tensor box_downsample2(const Tensor& field);

}  // namespace lfs
