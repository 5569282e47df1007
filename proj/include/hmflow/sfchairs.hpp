#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hmflow/errors.hpp"
#include "hmflow/flowio.hpp"
#include "hmflow/image.hpp"

namespace hmflow {

// Procedural dataset in the FlyingChairs mold, but with the scale/motion
// statistics pinned down: the background drifts slowly under a global affine
// transform while small textured sprites jump farther than their own size.
// Every sample ships two exact ground truths (with and without foreground)
// plus per-object visibility masks, and every byte is a deterministic
// function of (config, seed).

struct GeneratorConfig {
  int width = 512;
  int height = 512;
  int min_objects = 1;
  int max_objects = 4;
  // Sprite canvas side s is drawn uniformly from [scale_min, scale_max - 1]:
  // the bound is exclusive, mirroring the "scales below 64 pixels" rule.
  int scale_min = 16;
  int scale_max = 64;
  // Cap on the affine background displacement magnitude anywhere in frame.
  double bg_motion_max = 8.0;
  // Object displacement magnitude range. Must leave headroom above
  // scale_max + bg_motion_max or the small/fast constraint is unsatisfiable.
  double displacement_min = 0.0;
  double displacement_max = 144.0;
  // In-plane rotation between frames, uniform in [-rot_max_rad, rot_max_rad].
  double rot_max_rad = 0.0;
  std::uint64_t seed = 0;
  int max_attempts = 1024;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Square RGBA sprite raster; alpha is a hard 0/255 stencil.
struct Sprite {
  int side = 0;
  std::vector<std::uint8_t> rgba;

  Sprite() = default;
  explicit Sprite(int s) : side(s), rgba(static_cast<std::size_t>(s) * s * 4, 0) {}
  std::uint8_t at(int y, int x, int c) const {
    return rgba[(static_cast<std::size_t>(y) * side + x) * 4 + c];
  }
  std::uint8_t& at(int y, int x, int c) {
    return rgba[(static_cast<std::size_t>(y) * side + x) * 4 + c];
  }
};

/// Deterministic textured sprite: a star-shaped polygon or a chair
/// silhouette stencil, filled with two-tone value noise.
Sprite make_sprite(std::uint64_t seed, int side);

struct ObjectSpec {
  std::uint64_t sprite_seed = 0;
  int scale = 0;      // sprite canvas side; the footprint never exceeds it
  double p1x = 0.0;   // sprite-box center in image 1
  double p1y = 0.0;
  double dx = 0.0;    // displacement: center in image 2 is p1 + d
  double dy = 0.0;
  double rot = 0.0;   // in-plane rotation between frames, radians
  Sprite sprite;

  /// Exact rigid flow of this object at image-1 pixel (x, y).
  void rigid_flow(double x, double y, double& u, double& v) const;
};

struct SceneSpec {
  int width = 0;
  int height = 0;
  std::uint64_t seed = 0;      // scene seed (echoed for regeneration)
  std::uint64_t bg_seed = 0;   // background texture seed
  int pad = 0;                 // background raster margin around the frame
  // Affine map from image-1 to image-2 coordinates:
  //   x' = t[0]*x + t[1]*y + t[2],  y' = t[3]*x + t[4]*y + t[5]
  double t[6] = {1, 0, 0, 0, 1, 0};
  std::vector<ObjectSpec> objects;
  Image background;            // (width+2*pad) x (height+2*pad) RGB

  /// Background displacement at image-1 point (x, y).
  void bg_motion(double x, double y, double& u, double& v) const;

  /// Serialization carries seeds and numeric fields only; rasters are
  /// regenerated on load, so the echo stays small and exact.
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

/// Regenerates the padded background raster from (bg_seed, size).
Image make_background(std::uint64_t bg_seed, int raster_w, int raster_h);

/// Draws a scene satisfying every invariant: background displacement within
/// the cap, objects fully inside frame 1, and each object's motion relative
/// to the background strictly larger than its own scale (rejection-sampled
/// within config.max_attempts, else ConfigError).
SceneSpec sample_scene(const GeneratorConfig& cfg, std::uint64_t seed);

struct SampleRecord {
  Image i1, i2;
  FlowField flow_fg;               // background field + object rigid fields
  FlowField flow_bg;               // pure affine background field
  std::vector<RegionMask> masks;   // visible image-1 footprints, "object-<k>"
  SceneSpec scene;
};

/// Deterministic rasterization: image 1 pastes sprites pixel-aligned onto
/// the background crop, image 2 resamples the background through the affine
/// map and draws each sprite at its displaced (and rotated) pose. Later
/// objects occlude earlier ones, and masks record visible pixels only.
SampleRecord render_sample(const SceneSpec& scene);

/// Visible sprite footprints in image 2 (same painter's ordering).
std::vector<RegionMask> footprints2(const SceneSpec& scene);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool all_pass() const;
  const CheckResult* find(const std::string& name) const;
  nlohmann::json to_json() const;
};

/// Re-derives every SampleRecord invariant from the record itself: flow/mask
/// coherence, the small/fast law, scale bounds, mask disjointness, and
/// photometric consistency of the background flow. Reports, never throws.
ValidationReport validate_sample(const SampleRecord& rec,
                                 const GeneratorConfig& cfg);

struct DatasetManifest {
  GeneratorConfig config;
  int n = 0;
  struct Entry {
    int index = 0;
    std::string split;  // "train" | "test"
    std::string dir;    // relative to the dataset root
  };
  std::vector<Entry> samples;

  std::vector<Entry> split_entries(const std::string& split) const;
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// Deterministic 90/10 assignment: within each block of ten consecutive
/// indices, one index (a hash of the block and the seed) goes to "test".
std::string sample_split(std::uint64_t seed, int index);

/// Writes n samples under out_dir/<split>/<index>/ with images as PNG,
/// flows as .flo, masks as PNG and the scene echo as JSON, plus a
/// manifest.json at the root. Fully deterministic in (config, n).
DatasetManifest generate_dataset(const GeneratorConfig& cfg, int n,
                                 const std::string& out_dir);

DatasetManifest read_manifest(const std::string& dataset_dir);

/// Loads one sample directory back into memory (rasters regenerated from the
/// scene echo where needed, pixels and flows from the files themselves).
SampleRecord load_sample(const std::string& sample_dir);

}  // namespace hmflow
