#include "hmflow/sfchairs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

namespace fs = std::filesystem;

namespace hmflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed + 0x9E3779B97F4A7C15ULL * (index + 1));
}

double smoothstep(double f) { return f * f * (3.0 - 2.0 * f); }

// Smoothstep-interpolated random lattice in [0, 1], the classic value noise.
struct ValueNoise {
  int gw, gh;
  double cell;
  std::vector<double> lattice;

  ValueNoise(int w, int h, double cell_size, std::mt19937_64& rng)
      : gw(static_cast<int>(w / cell_size) + 3),
        gh(static_cast<int>(h / cell_size) + 3), cell(cell_size),
        lattice(static_cast<std::size_t>(gw) * gh) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (double& v : lattice) v = dist(rng);
  }

  double operator()(double x, double y) const {
    const double u = x / cell, v = y / cell;
    int i = static_cast<int>(std::floor(u)), j = static_cast<int>(std::floor(v));
    i = std::clamp(i, 0, gw - 2);
    j = std::clamp(j, 0, gh - 2);
    const double fu = smoothstep(std::clamp(u - i, 0.0, 1.0));
    const double fv = smoothstep(std::clamp(v - j, 0.0, 1.0));
    auto at = [&](int jj, int ii) {
      return lattice[static_cast<std::size_t>(jj) * gw + ii];
    };
    const double top = at(j, i) * (1 - fu) + at(j, i + 1) * fu;
    const double bot = at(j + 1, i) * (1 - fu) + at(j + 1, i + 1) * fu;
    return top * (1 - fv) + bot * fv;
  }
};

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(
      std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255));
}

// Bilinear fetch from an interleaved uint8 raster, clamped at the border.
double sample_raster(const std::uint8_t* data, int w, int h, int channels,
                     double x, double y, int c) {
  x = std::clamp(x, 0.0, w - 1.0);
  y = std::clamp(y, 0.0, h - 1.0);
  const int x0 = std::min(static_cast<int>(x), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), h - 2 >= 0 ? h - 2 : 0);
  const double fx = x - x0, fy = y - y0;
  auto at = [&](int yy, int xx) {
    return static_cast<double>(
        data[(static_cast<std::size_t>(yy) * w + xx) * channels + c]);
  };
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  return at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x1) * fx * (1 - fy) +
         at(y1, x0) * (1 - fx) * fy + at(y1, x1) * fx * fy;
}

// Alpha lookup with zero outside the sprite canvas (no border clamping:
// past the edge there is no sprite).
double sprite_alpha(const Sprite& s, double x, double y) {
  if (x < 0.0 || y < 0.0 || x > s.side - 1.0 || y > s.side - 1.0) return 0.0;
  return sample_raster(s.rgba.data(), s.side, s.side, 4, x, y, 3);
}

struct Affine {
  double a = 1, b = 0, c = 0, d = 1;  // linear part, row-major
  double tx = 0, ty = 0;

  void apply(double x, double y, double& ox, double& oy) const {
    ox = a * x + b * y + tx;
    oy = c * x + d * y + ty;
  }
  Affine inverse() const {
    const double det = a * d - b * c;
    if (std::abs(det) < 1e-9)
      throw ValueError("sfchairs: degenerate background transform");
    Affine inv;
    inv.a = d / det;
    inv.b = -b / det;
    inv.c = -c / det;
    inv.d = a / det;
    inv.tx = -(inv.a * tx + inv.b * ty);
    inv.ty = -(inv.c * tx + inv.d * ty);
    return inv;
  }
};

Affine scene_affine(const SceneSpec& s) {
  Affine t;
  t.a = s.t[0];
  t.b = s.t[1];
  t.tx = s.t[2];
  t.c = s.t[3];
  t.d = s.t[4];
  t.ty = s.t[5];
  return t;
}

// Visible-owner grid for the sprites at the given centers/rotations:
// owner[p] is the index of the frontmost (last-drawn) sprite covering p,
// or -1. Shared by both frames so masks and renders cannot disagree.
std::vector<int> owner_grid(const SceneSpec& scene, bool frame2) {
  std::vector<int> owner(static_cast<std::size_t>(scene.width) * scene.height,
                         -1);
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const ObjectSpec& ob = scene.objects[k];
    const double cx = frame2 ? ob.p1x + ob.dx : ob.p1x;
    const double cy = frame2 ? ob.p1y + ob.dy : ob.p1y;
    const double rot = frame2 ? ob.rot : 0.0;
    const double cs = (ob.scale - 1) / 2.0;
    const double reach = cs * std::sqrt(2.0) + 2.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int x1 = std::min(scene.width - 1,
                            static_cast<int>(std::ceil(cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int y1 = std::min(scene.height - 1,
                            static_cast<int>(std::ceil(cy + reach)));
    const double cr = std::cos(-rot), sr = std::sin(-rot);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double rx = x - cx, ry = y - cy;
        const double sx = cr * rx - sr * ry + cs;
        const double sy = sr * rx + cr * ry + cs;
        if (sprite_alpha(ob.sprite, sx, sy) >= 127.5)
          owner[static_cast<std::size_t>(y) * scene.width + x] =
              static_cast<int>(k);
      }
  }
  return owner;
}

std::vector<RegionMask> masks_from_owner(const std::vector<int>& owner, int w,
                                         int h, std::size_t n_objects) {
  std::vector<RegionMask> masks;
  masks.reserve(n_objects);
  for (std::size_t k = 0; k < n_objects; ++k)
    masks.emplace_back(w, h, make_object_label(static_cast<int>(k)));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int k = owner[static_cast<std::size_t>(y) * w + x];
      if (k >= 0) masks[k].set(y, x, true);
    }
  return masks;
}

void fill_polygon_stencil(Sprite& sp, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nverts(3, 7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = nverts(rng);
  const double rmax = (sp.side - 1) / 2.0;
  std::vector<double> theta(n), radius(n);
  for (int i = 0; i < n; ++i) {
    theta[i] = 2.0 * kPi * (i + 0.3 * (unit(rng) - 0.5)) / n;
    radius[i] = (0.55 + 0.45 * unit(rng)) * rmax;
  }
  radius[static_cast<int>(rng() % n)] = rmax;  // span the full canvas
  const double cx = rmax;
  for (int y = 0; y < sp.side; ++y)
    for (int x = 0; x < sp.side; ++x) {
      const double vx = x - cx, vy = y - cx;
      const double r = std::hypot(vx, vy);
      if (r < 1e-9) {
        sp.at(y, x, 3) = 255;
        continue;
      }
      double ang = std::atan2(vy, vx);
      int i = n - 1;  // segment [theta[i], theta[i+1]) containing ang
      for (int j = 0; j < n; ++j) {
        const double a0 = theta[j];
        const double a1 = theta[(j + 1) % n] + (j + 1 == n ? 2.0 * kPi : 0.0);
        double aa = ang;
        while (aa < a0) aa += 2.0 * kPi;
        if (aa < a1) {
          i = j;
          ang = aa;
          break;
        }
      }
      const double a0 = theta[i];
      const double a1 = theta[(i + 1) % n] + (i + 1 == n ? 2.0 * kPi : 0.0);
      const double r0 = radius[i], r1 = radius[(i + 1) % n];
      // polar form of the straight edge through (r0, a0) and (r1, a1)
      const double denom = r1 * std::sin(a1 - ang) + r0 * std::sin(ang - a0);
      const double redge =
          denom > 1e-9 ? r0 * r1 * std::sin(a1 - a0) / denom : 0.0;
      if (r <= redge) sp.at(y, x, 3) = 255;
    }
}

void fill_chair_stencil(Sprite& sp) {
  const double s = sp.side;
  auto rect = [&](double x0, double y0, double x1, double y1) {
    const int ix0 = static_cast<int>(std::floor(x0 * s));
    const int iy0 = static_cast<int>(std::floor(y0 * s));
    const int ix1 = std::min(sp.side - 1, static_cast<int>(std::ceil(x1 * s)));
    const int iy1 = std::min(sp.side - 1, static_cast<int>(std::ceil(y1 * s)));
    for (int y = iy0; y <= iy1; ++y)
      for (int x = ix0; x <= ix1; ++x) sp.at(y, x, 3) = 255;
  };
  rect(0.06, 0.00, 0.30, 0.52);  // backrest
  rect(0.06, 0.42, 0.94, 0.60);  // seat
  rect(0.10, 0.60, 0.24, 0.99);  // front leg
  rect(0.76, 0.60, 0.90, 0.99);  // back leg
}

}  // namespace

// ---- config ----------------------------------------------------------------

void GeneratorConfig::validate() const {
  if (width < 32 || height < 32)
    throw ConfigError("sfchairs: resolution must be at least 32x32");
  if (min_objects < 1 || max_objects < min_objects)
    throw ConfigError("sfchairs: need 1 <= min_objects <= max_objects");
  if (scale_min < 4)
    throw ConfigError("sfchairs: scale_min must be at least 4");
  if (scale_max <= scale_min)
    throw ConfigError("sfchairs: scale_max must exceed scale_min");
  if (scale_max > std::min(width, height) / 2)
    throw ConfigError("sfchairs: scale_max too large for the resolution");
  if (bg_motion_max < 0.0)
    throw ConfigError("sfchairs: bg_motion_max must be non-negative");
  if (displacement_min < 0.0 || displacement_max <= displacement_min)
    throw ConfigError("sfchairs: bad displacement range");
  if (displacement_max <= scale_max + bg_motion_max)
    throw ConfigError(
        "sfchairs: displacement_max must exceed scale_max + bg_motion_max or "
        "the small/fast constraint is unsatisfiable");
  if (rot_max_rad < 0.0 || rot_max_rad > 0.7)
    throw ConfigError("sfchairs: rot_max_rad must be in [0, 0.7]");
  if (max_attempts < 1)
    throw ConfigError("sfchairs: max_attempts must be positive");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"width", width},
          {"height", height},
          {"min_objects", min_objects},
          {"max_objects", max_objects},
          {"scale_min", scale_min},
          {"scale_max", scale_max},
          {"bg_motion_max", bg_motion_max},
          {"displacement_min", displacement_min},
          {"displacement_max", displacement_max},
          {"rot_max_rad", rot_max_rad},
          {"seed", seed},
          {"max_attempts", max_attempts}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.scale_min = j.value("scale_min", c.scale_min);
  c.scale_max = j.value("scale_max", c.scale_max);
  c.bg_motion_max = j.value("bg_motion_max", c.bg_motion_max);
  c.displacement_min = j.value("displacement_min", c.displacement_min);
  c.displacement_max = j.value("displacement_max", c.displacement_max);
  c.rot_max_rad = j.value("rot_max_rad", c.rot_max_rad);
  c.seed = j.value("seed", c.seed);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  return c;
}

// ---- sprites and backgrounds -------------------------------------------------

Sprite make_sprite(std::uint64_t seed, int side) {
  if (side < 4) throw ConfigError("sfchairs: sprite side must be at least 4");
  std::mt19937_64 rng(seed);
  Sprite sp(side);

  // texture fills the whole canvas; alpha stencils it afterwards
  std::uniform_int_distribution<int> dark(25, 120), bright(130, 235);
  const double c0[3] = {double(dark(rng)), double(dark(rng)), double(dark(rng))};
  const double c1[3] = {double(bright(rng)), double(bright(rng)),
                        double(bright(rng))};
  const double cell = std::max(2.0, side / 4.0);
  ValueNoise noise(side, side, cell, rng);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double n = noise(x, y);
      for (int c = 0; c < 3; ++c)
        sp.at(y, x, c) = static_cast<std::uint8_t>(
            std::clamp(static_cast<int>(std::lround(c0[c] + (c1[c] - c0[c]) * n)),
                       0, 255));
    }

  if (rng() & 1)
    fill_chair_stencil(sp);
  else
    fill_polygon_stencil(sp, rng);
  return sp;
}

Image make_background(std::uint64_t bg_seed, int raster_w, int raster_h) {
  std::mt19937_64 rng(bg_seed);
  const int side = std::max(raster_w, raster_h);
  const double c1 = std::max(10.0, side / 5.0);
  const double c2 = std::max(7.0, side / 12.0);
  const double c3 = 6.0;
  ValueNoise n1(raster_w, raster_h, c1, rng);
  ValueNoise n2(raster_w, raster_h, c2, rng);
  ValueNoise n3(raster_w, raster_h, c3, rng);
  ValueNoise tint_r(raster_w, raster_h, c2, rng);
  ValueNoise tint_b(raster_w, raster_h, c2, rng);

  Image img(raster_w, raster_h, 3);
  for (int y = 0; y < raster_h; ++y)
    for (int x = 0; x < raster_w; ++x) {
      const double base =
          0.55 * n1(x, y) + 0.30 * n2(x, y) + 0.15 * n3(x, y);
      const double g = 0.25 + 0.5 * base;
      const double r = g + 0.08 * (tint_r(x, y) - 0.5);
      const double b = g + 0.08 * (tint_b(x, y) - 0.5);
      img.at(y, x, 0) = quantize(r);
      img.at(y, x, 1) = quantize(g);
      img.at(y, x, 2) = quantize(b);
    }
  return img;
}

// ---- scene specs -------------------------------------------------------------

void ObjectSpec::rigid_flow(double x, double y, double& u, double& v) const {
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double rx = x - p1x, ry = y - p1y;
  u = (cr - 1.0) * rx - sr * ry + dx;
  v = sr * rx + (cr - 1.0) * ry + dy;
}

void SceneSpec::bg_motion(double x, double y, double& u, double& v) const {
  u = (t[0] - 1.0) * x + t[1] * y + t[2];
  v = t[3] * x + (t[4] - 1.0) * y + t[5];
}

nlohmann::json SceneSpec::to_json() const {
  nlohmann::json objs = nlohmann::json::array();
  for (const ObjectSpec& ob : objects)
    objs.push_back({{"sprite_seed", ob.sprite_seed},
                    {"scale", ob.scale},
                    {"p1x", ob.p1x},
                    {"p1y", ob.p1y},
                    {"dx", ob.dx},
                    {"dy", ob.dy},
                    {"rot", ob.rot}});
  return {{"width", width},       {"height", height},
          {"seed", seed},         {"bg_seed", bg_seed},
          {"pad", pad},           {"transform", std::vector<double>(t, t + 6)},
          {"objects", std::move(objs)}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.bg_seed = j.at("bg_seed").get<std::uint64_t>();
  s.pad = j.at("pad").get<int>();
  const auto tr = j.at("transform").get<std::vector<double>>();
  if (tr.size() != 6)
    throw FormatError("sfchairs: scene transform must have 6 entries");
  std::copy(tr.begin(), tr.end(), s.t);
  for (const auto& o : j.at("objects")) {
    ObjectSpec ob;
    ob.sprite_seed = o.at("sprite_seed").get<std::uint64_t>();
    ob.scale = o.at("scale").get<int>();
    ob.p1x = o.at("p1x").get<double>();
    ob.p1y = o.at("p1y").get<double>();
    ob.dx = o.at("dx").get<double>();
    ob.dy = o.at("dy").get<double>();
    ob.rot = o.at("rot").get<double>();
    ob.sprite = make_sprite(ob.sprite_seed, ob.scale);
    s.objects.push_back(std::move(ob));
  }
  s.background =
      make_background(s.bg_seed, s.width + 2 * s.pad, s.height + 2 * s.pad);
  return s;
}

SceneSpec sample_scene(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceneSpec scene;
  scene.width = cfg.width;
  scene.height = cfg.height;
  scene.seed = seed;
  scene.bg_seed = rng();
  scene.pad = static_cast<int>(std::ceil(cfg.bg_motion_max)) + 3;
  scene.background = make_background(scene.bg_seed, cfg.width + 2 * scene.pad,
                                     cfg.height + 2 * scene.pad);

  // Affine background motion about the frame center, capped at the corners.
  const double cx = (cfg.width - 1) / 2.0, cy = (cfg.height - 1) / 2.0;
  const double reach = std::hypot(cx, cy);
  const double cap = cfg.bg_motion_max;
  int attempt = 0;
  for (;; ++attempt) {
    if (attempt >= cfg.max_attempts)
      throw ConfigError("sfchairs: could not sample a background transform "
                        "within the motion cap");
    const double e = cap > 0.0 ? 0.3 * cap / (2.0 * reach) : 0.0;
    double lin[4];
    for (double& v : lin) v = (2.0 * unit(rng) - 1.0) * e;
    const double ang = 2.0 * kPi * unit(rng);
    const double mag = cap * (0.2 + 0.35 * unit(rng));
    const double tx = mag * std::cos(ang), ty = mag * std::sin(ang);
    // q = (I + lin)(p - c) + c + t, flattened to q = A p + b
    scene.t[0] = 1.0 + lin[0];
    scene.t[1] = lin[1];
    scene.t[3] = lin[2];
    scene.t[4] = 1.0 + lin[3];
    scene.t[2] = tx + cx - (scene.t[0] * cx + scene.t[1] * cy);
    scene.t[5] = ty + cy - (scene.t[3] * cx + scene.t[4] * cy);
    double worst = 0.0;
    for (const double px : {0.0, double(cfg.width - 1)})
      for (const double py : {0.0, double(cfg.height - 1)}) {
        double u, v;
        scene.bg_motion(px, py, u, v);
        worst = std::max(worst, std::hypot(u, v));
      }
    if (worst <= cap || cap == 0.0) break;
  }
  if (cap == 0.0) {
    scene.t[0] = scene.t[4] = 1.0;
    scene.t[1] = scene.t[2] = scene.t[3] = scene.t[5] = 0.0;
  }

  std::uniform_int_distribution<int> count(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> scale(cfg.scale_min, cfg.scale_max - 1);
  const int n = count(rng);
  for (int k = 0; k < n; ++k) {
    ObjectSpec ob;
    ob.sprite_seed = rng();
    ob.scale = scale(rng);
    ob.sprite = make_sprite(ob.sprite_seed, ob.scale);
    std::uniform_int_distribution<int> px(0, cfg.width - ob.scale);
    std::uniform_int_distribution<int> py(0, cfg.height - ob.scale);
    const double cs = (ob.scale - 1) / 2.0;
    ob.p1x = px(rng) + cs;
    ob.p1y = py(rng) + cs;

    double bu, bv;
    scene.bg_motion(ob.p1x, ob.p1y, bu, bv);
    bool placed = false;
    for (int a = 0; a < cfg.max_attempts; ++a) {
      const double ang = 2.0 * kPi * unit(rng);
      const double mag = cfg.displacement_min +
                         (cfg.displacement_max - cfg.displacement_min) *
                             unit(rng);
      ob.dx = mag * std::cos(ang);
      ob.dy = mag * std::sin(ang);
      if (std::hypot(ob.dx - bu, ob.dy - bv) > ob.scale) {
        placed = true;
        break;
      }
    }
    if (!placed)
      throw ConfigError("sfchairs: could not satisfy the small/fast "
                        "constraint within max_attempts");
    ob.rot = cfg.rot_max_rad > 0.0
                 ? (2.0 * unit(rng) - 1.0) * cfg.rot_max_rad
                 : 0.0;
    scene.objects.push_back(std::move(ob));
  }
  return scene;
}

// ---- rendering ---------------------------------------------------------------

SampleRecord render_sample(const SceneSpec& scene) {
  const int w = scene.width, h = scene.height, pad = scene.pad;
  SampleRecord rec;
  rec.scene = scene;
  rec.i1 = Image(w, h, 3);
  rec.i2 = Image(w, h, 3);
  rec.flow_fg = FlowField(w, h);
  rec.flow_bg = FlowField(w, h);

  const Affine T = scene_affine(scene);
  const Affine Tinv = T.inverse();
  const Image& bg = scene.background;

  // image 1: center crop of the background, sprites pasted pixel-aligned
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        rec.i1.at(y, x, c) = bg.at(y + pad, x + pad, c);
  const std::vector<int> owner1 = owner_grid(scene, /*frame2=*/false);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int k = owner1[static_cast<std::size_t>(y) * w + x];
      if (k < 0) continue;
      const ObjectSpec& ob = scene.objects[k];
      const double cs = (ob.scale - 1) / 2.0;
      const int sx = static_cast<int>(std::lround(x - ob.p1x + cs));
      const int sy = static_cast<int>(std::lround(y - ob.p1y + cs));
      for (int c = 0; c < 3; ++c) rec.i1.at(y, x, c) = ob.sprite.at(sy, sx, c);
    }

  // image 2: background pulled through the inverse affine, sprites at their
  // displaced (and rotated) poses
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double qx, qy;
      Tinv.apply(x, y, qx, qy);
      for (int c = 0; c < 3; ++c)
        rec.i2.at(y, x, c) = static_cast<std::uint8_t>(std::lround(
            sample_raster(bg.data.data(), bg.width, bg.height, 3, qx + pad,
                          qy + pad, c)));
    }
  const std::vector<int> owner2 = owner_grid(scene, /*frame2=*/true);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int k = owner2[static_cast<std::size_t>(y) * w + x];
      if (k < 0) continue;
      const ObjectSpec& ob = scene.objects[k];
      const double cs = (ob.scale - 1) / 2.0;
      const double cr = std::cos(-ob.rot), sr = std::sin(-ob.rot);
      const double rx = x - (ob.p1x + ob.dx), ry = y - (ob.p1y + ob.dy);
      const double sx = cr * rx - sr * ry + cs;
      const double sy = sr * rx + cr * ry + cs;
      for (int c = 0; c < 3; ++c)
        rec.i2.at(y, x, c) = static_cast<std::uint8_t>(std::lround(
            sample_raster(ob.sprite.rgba.data(), ob.scale, ob.scale, 4,
                          std::clamp(sx, 0.0, ob.scale - 1.0),
                          std::clamp(sy, 0.0, ob.scale - 1.0), c)));
    }

  // ground truths: affine field everywhere, rigid fields inside the masks
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double u, v;
      scene.bg_motion(x, y, u, v);
      rec.flow_bg.u(y, x) = static_cast<float>(u);
      rec.flow_bg.v(y, x) = static_cast<float>(v);
      const int k = owner1[static_cast<std::size_t>(y) * w + x];
      if (k >= 0) scene.objects[k].rigid_flow(x, y, u, v);
      rec.flow_fg.u(y, x) = static_cast<float>(u);
      rec.flow_fg.v(y, x) = static_cast<float>(v);
    }

  rec.masks = masks_from_owner(owner1, w, h, scene.objects.size());
  return rec;
}

std::vector<RegionMask> footprints2(const SceneSpec& scene) {
  return masks_from_owner(owner_grid(scene, /*frame2=*/true), scene.width,
                          scene.height, scene.objects.size());
}

// ---- validation --------------------------------------------------------------

bool ValidationReport::all_pass() const {
  for (const CheckResult& c : checks)
    if (!c.pass) return false;
  return true;
}

const CheckResult* ValidationReport::find(const std::string& name) const {
  for (const CheckResult& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

nlohmann::json ValidationReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const CheckResult& c : checks)
    arr.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  return {{"all_pass", all_pass()}, {"checks", std::move(arr)}};
}

ValidationReport validate_sample(const SampleRecord& rec,
                                 const GeneratorConfig& cfg) {
  ValidationReport rep;
  const SceneSpec& scene = rec.scene;
  const int w = scene.width, h = scene.height;
  auto report = [&](std::string name, bool pass, std::string detail) {
    rep.checks.push_back({std::move(name), pass, std::move(detail)});
  };

  report("finite-flows", rec.flow_fg.all_finite() && rec.flow_bg.all_finite(),
         "");

  // rebuild an owner grid out of the record's own masks
  std::vector<int> owner(static_cast<std::size_t>(w) * h, -1);
  bool disjoint = true, sized = true;
  for (std::size_t k = 0; k < rec.masks.size(); ++k) {
    const RegionMask& m = rec.masks[k];
    if (m.width != w || m.height != h) {
      sized = false;
      continue;
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (m.at(y, x)) {
          std::size_t i = static_cast<std::size_t>(y) * w + x;
          if (owner[i] >= 0) disjoint = false;
          owner[i] = static_cast<int>(k);
        }
  }
  report("masks-disjoint", disjoint && sized,
         sized ? "" : "mask resolution mismatch");

  bool nonempty = rec.masks.size() == scene.objects.size();
  for (const RegionMask& m : rec.masks) nonempty = nonempty && m.count() > 0;
  report("masks-nonempty", nonempty, "");

  double obj_dev = 0.0, bg_dev = 0.0, aff_dev = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int k = owner[static_cast<std::size_t>(y) * w + x];
      double u, v;
      if (k >= 0 && k < static_cast<int>(scene.objects.size())) {
        scene.objects[k].rigid_flow(x, y, u, v);
        obj_dev = std::max({obj_dev, std::abs(rec.flow_fg.u(y, x) - u),
                            std::abs(rec.flow_fg.v(y, x) - v)});
      } else {
        bg_dev = std::max(
            {bg_dev,
             std::abs(double(rec.flow_fg.u(y, x)) - rec.flow_bg.u(y, x)),
             std::abs(double(rec.flow_fg.v(y, x)) - rec.flow_bg.v(y, x))});
      }
      scene.bg_motion(x, y, u, v);
      aff_dev = std::max({aff_dev, std::abs(rec.flow_bg.u(y, x) - u),
                          std::abs(rec.flow_bg.v(y, x) - v)});
    }
  report("object-flow", obj_dev <= 1e-4, "max dev " + std::to_string(obj_dev));
  report("background-flow", bg_dev <= 1e-6,
         "max dev " + std::to_string(bg_dev));
  report("bg-affine", aff_dev <= 1e-4, "max dev " + std::to_string(aff_dev));

  double min_margin = 1e30;
  bool scales_ok = true;
  for (const ObjectSpec& ob : scene.objects) {
    double bu, bv;
    scene.bg_motion(ob.p1x, ob.p1y, bu, bv);
    min_margin = std::min(
        min_margin, std::hypot(ob.dx - bu, ob.dy - bv) - ob.scale);
    scales_ok = scales_ok && ob.scale >= 1 && ob.scale < cfg.scale_max;
  }
  report("small-fast", scene.objects.empty() || min_margin > 0.0,
         "min margin " + std::to_string(min_margin));
  report("scale-bound", scales_ok, "");

  // photometric consistency of the background flow: pull image 2 back by
  // flow_bg and compare against image 1 away from sprites in either frame
  std::vector<char> occ2(static_cast<std::size_t>(w) * h, 0);
  {
    const std::vector<RegionMask> fp2 = footprints2(scene);
    for (const RegionMask& m : fp2)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (m.at(y, x))
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < h && xx >= 0 && xx < w)
                  occ2[static_cast<std::size_t>(yy) * w + xx] = 1;
              }
  }
  double abs_sum = 0.0;
  std::int64_t n_valid = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (owner[static_cast<std::size_t>(y) * w + x] >= 0) continue;
      const double tx = x + rec.flow_bg.u(y, x);
      const double ty = y + rec.flow_bg.v(y, x);
      const int x0 = static_cast<int>(std::floor(tx));
      const int y0 = static_cast<int>(std::floor(ty));
      if (x0 < 0 || y0 < 0 || x0 + 1 > w - 1 || y0 + 1 > h - 1) continue;
      bool clear = true;
      for (int dy = 0; dy <= 1 && clear; ++dy)
        for (int dx = 0; dx <= 1 && clear; ++dx)
          clear = !occ2[static_cast<std::size_t>(y0 + dy) * w + (x0 + dx)];
      if (!clear) continue;
      for (int c = 0; c < 3; ++c) {
        const double warped = sample_raster(rec.i2.data.data(), w, h, 3, tx,
                                            ty, c);
        abs_sum += std::abs(warped - rec.i1.at(y, x, c)) / 255.0;
      }
      ++n_valid;
    }
  const double mae = n_valid > 0 ? abs_sum / (3.0 * n_valid) : 1.0;
  report("photometric", n_valid > 0 && mae < 2.0 / 255.0,
         "mae " + std::to_string(mae) + " over " + std::to_string(n_valid) +
             " px");
  return rep;
}

// ---- dataset I/O -------------------------------------------------------------

std::string sample_split(std::uint64_t seed, int index) {
  const std::uint64_t block = static_cast<std::uint64_t>(index) / 10;
  const int slot = static_cast<int>(
      splitmix64(seed ^ (0xA0761D6478BD642FULL * (block + 1))) % 10);
  return index % 10 == slot ? "test" : "train";
}

std::vector<DatasetManifest::Entry> DatasetManifest::split_entries(
    const std::string& split) const {
  std::vector<Entry> out;
  for (const Entry& e : samples)
    if (e.split == split) out.push_back(e);
  return out;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const Entry& e : samples)
    arr.push_back({{"index", e.index}, {"split", e.split}, {"dir", e.dir}});
  return {{"config", config.to_json()}, {"n", n}, {"samples", std::move(arr)}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.config = GeneratorConfig::from_json(j.at("config"));
  m.n = j.at("n").get<int>();
  for (const auto& e : j.at("samples"))
    m.samples.push_back({e.at("index").get<int>(),
                         e.at("split").get<std::string>(),
                         e.at("dir").get<std::string>()});
  return m;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path);
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad JSON in " + path + ": " + e.what());
  }
  return j;
}

Image mask_to_image(const RegionMask& m) {
  Image img(m.width, m.height, 1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      img.at(y, x, 0) = m.at(y, x) ? 255 : 0;
  return img;
}

}  // namespace

DatasetManifest generate_dataset(const GeneratorConfig& cfg, int n,
                                 const std::string& out_dir) {
  cfg.validate();
  if (n < 1) throw ConfigError("sfchairs: dataset size must be positive");

  std::error_code ec;
  for (const char* split : {"train", "test"}) {
    fs::create_directories(fs::path(out_dir) / split, ec);
    if (ec)
      throw IoError("cannot create directory " +
                    (fs::path(out_dir) / split).string() + ": " + ec.message());
  }

  DatasetManifest manifest;
  manifest.config = cfg;
  manifest.n = n;
  for (int index = 0; index < n; ++index) {
    const std::string split = sample_split(cfg.seed, index);
    char name[16];
    std::snprintf(name, sizeof(name), "%05d", index);
    const fs::path dir = fs::path(out_dir) / split / name;
    fs::create_directories(dir, ec);
    if (ec)
      throw IoError("cannot create directory " + dir.string() + ": " +
                    ec.message());

    // a fully occluded object would leave an empty visible mask; rare, but
    // re-draw the scene deterministically until every mask has pixels
    const std::uint64_t base = sub_seed(cfg.seed, index);
    SampleRecord rec;
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 16 && !ok; ++attempt) {
      rec = render_sample(sample_scene(cfg, sub_seed(base, attempt)));
      ok = true;
      for (const RegionMask& m : rec.masks) ok = ok && m.count() > 0;
    }
    if (!ok)
      throw ConfigError("sfchairs: objects fully occluded after 16 re-draws "
                        "at sample " + std::to_string(index));

    write_png(rec.i1, (dir / "img1.png").string());
    write_png(rec.i2, (dir / "img2.png").string());
    write_flo_file(rec.flow_fg, (dir / "flow_fg.flo").string());
    write_flo_file(rec.flow_bg, (dir / "flow_bg.flo").string());
    for (std::size_t k = 0; k < rec.masks.size(); ++k)
      write_png(mask_to_image(rec.masks[k]),
                (dir / ("mask_" + std::to_string(k) + ".png")).string());
    nlohmann::json meta = {{"index", index}, {"scene", rec.scene.to_json()}};
    write_text((dir / "meta.json").string(), meta.dump(2) + "\n");

    manifest.samples.push_back(
        {index, split, (fs::path(split) / name).string()});
  }
  write_text((fs::path(out_dir) / "manifest.json").string(),
             manifest.to_json().dump(2) + "\n");
  return manifest;
}

DatasetManifest read_manifest(const std::string& dataset_dir) {
  return DatasetManifest::from_json(
      read_json_file((fs::path(dataset_dir) / "manifest.json").string()));
}

SampleRecord load_sample(const std::string& sample_dir) {
  const fs::path dir(sample_dir);
  SampleRecord rec;
  const nlohmann::json meta = read_json_file((dir / "meta.json").string());
  rec.scene = SceneSpec::from_json(meta.at("scene"));
  rec.i1 = read_png((dir / "img1.png").string());
  rec.i2 = read_png((dir / "img2.png").string());
  rec.flow_fg = read_flo_file((dir / "flow_fg.flo").string());
  rec.flow_bg = read_flo_file((dir / "flow_bg.flo").string());
  for (std::size_t k = 0; k < rec.scene.objects.size(); ++k) {
    const Image img =
        read_png((dir / ("mask_" + std::to_string(k) + ".png")).string());
    RegionMask m(img.width, img.height, make_object_label(static_cast<int>(k)));
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) m.set(y, x, img.at(y, x, 0) >= 128);
    rec.masks.push_back(std::move(m));
  }
  return rec;
}

}  // namespace hmflow
