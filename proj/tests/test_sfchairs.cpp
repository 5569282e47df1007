// Dataset generator: determinism, the small/fast construction law,
// analytic render fixtures, painter's occlusion, photometric consistency,
// fault-injected validation, and the on-disk layout contract.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "hmflow/sfchairs.hpp"

using namespace hmflow;
namespace fs = std::filesystem;

namespace {

GeneratorConfig mini_config(std::uint64_t seed = 0) {
  GeneratorConfig cfg;
  cfg.width = 128;
  cfg.height = 128;
  cfg.min_objects = 1;
  cfg.max_objects = 3;
  cfg.scale_min = 6;
  cfg.scale_max = 17;
  cfg.bg_motion_max = 2.0;
  cfg.displacement_min = 18.0;
  cfg.displacement_max = 40.0;
  cfg.seed = seed;
  return cfg;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// a scene with a hand-picked transform/object list (no sampling)
SceneSpec manual_scene(int w, int h, std::vector<ObjectSpec> objects,
                       const double t[6]) {
  SceneSpec s;
  s.width = w;
  s.height = h;
  s.seed = 1;
  s.bg_seed = 77;
  s.pad = 12;
  std::copy(t, t + 6, s.t);
  s.objects = std::move(objects);
  s.background = make_background(s.bg_seed, w + 2 * s.pad, h + 2 * s.pad);
  return s;
}

ObjectSpec manual_object(std::uint64_t sprite_seed, int scale, int tlx,
                         int tly, double dx, double dy, double rot = 0.0) {
  ObjectSpec ob;
  ob.sprite_seed = sprite_seed;
  ob.scale = scale;
  ob.sprite = make_sprite(sprite_seed, scale);
  ob.p1x = tlx + (scale - 1) / 2.0;
  ob.p1y = tly + (scale - 1) / 2.0;
  ob.dx = dx;
  ob.dy = dy;
  ob.rot = rot;
  return ob;
}

}  // namespace

TEST_CASE("config validation and defaults") {
  GeneratorConfig full;  // full-scale defaults
  CHECK(full.width == 512);
  CHECK(full.height == 512);
  CHECK(full.scale_max == 64);
  CHECK(full.min_objects == 1);
  CHECK(full.max_objects == 4);
  CHECK(full.bg_motion_max == 8.0);
  CHECK_NOTHROW(full.validate());

  GeneratorConfig bad = mini_config();
  bad.displacement_max = bad.scale_max + bad.bg_motion_max;  // infeasible
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = mini_config();
  bad.scale_max = bad.scale_min;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = mini_config();
  bad.scale_max = 100;  // sprites as large as the frame
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  GeneratorConfig cfg = mini_config(9);
  GeneratorConfig back = GeneratorConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("sprites: determinism, coverage, canvas bound") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 10ULL, 11ULL, 12ULL}) {
    const Sprite a = make_sprite(seed, 14);
    const Sprite b = make_sprite(seed, 14);
    CHECK(a.rgba == b.rgba);

    std::int64_t alpha_count = 0;
    for (int y = 0; y < a.side; ++y)
      for (int x = 0; x < a.side; ++x) {
        CHECK((a.at(y, x, 3) == 0 || a.at(y, x, 3) == 255));
        if (a.at(y, x, 3) == 255) ++alpha_count;
      }
    // the stencil is a solid shape, not a sliver, and fits its canvas
    CHECK(alpha_count > 14 * 14 / 6);
    CHECK(alpha_count < 14 * 14);
  }
  CHECK(make_sprite(5, 8).rgba != make_sprite(6, 8).rgba);
}

TEST_CASE("sample_scene: determinism and construction laws over 1000+ objects") {
  const GeneratorConfig cfg = mini_config(42);

  const SceneSpec once = sample_scene(cfg, 7);
  const SceneSpec twice = sample_scene(cfg, 7);
  CHECK(once.to_json() == twice.to_json());
  CHECK(once.background.data == twice.background.data);

  int objects_seen = 0;
  int scenes = 0;
  for (std::uint64_t seed = 0; objects_seen < 1000; ++seed) {
    const SceneSpec s = sample_scene(cfg, seed);
    ++scenes;
    REQUIRE(s.objects.size() >= 1);

    // background cap holds at the corners (affine => frame-wide bound)
    for (const double px : {0.0, 127.0})
      for (const double py : {0.0, 127.0}) {
        double u, v;
        s.bg_motion(px, py, u, v);
        CHECK(std::hypot(u, v) <= cfg.bg_motion_max + 1e-9);
      }

    for (const ObjectSpec& ob : s.objects) {
      ++objects_seen;
      CHECK(ob.scale >= cfg.scale_min);
      CHECK(ob.scale < cfg.scale_max);
      double bu, bv;
      s.bg_motion(ob.p1x, ob.p1y, bu, bv);
      CHECK(std::hypot(ob.dx - bu, ob.dy - bv) > ob.scale);
      // fully inside frame 1
      const double cs = (ob.scale - 1) / 2.0;
      CHECK(ob.p1x - cs >= 0.0);
      CHECK(ob.p1y - cs >= 0.0);
      CHECK(ob.p1x + cs <= 127.0);
      CHECK(ob.p1y + cs <= 127.0);
    }
  }
  CHECK(objects_seen >= 1000);
  CHECK(scenes <= 1000);
}

TEST_CASE("render: identity background with one translating object") {
  const double ident[6] = {1, 0, 0, 0, 1, 0};
  SceneSpec scene = manual_scene(
      96, 96, {manual_object(/*sprite_seed=*/3, /*scale=*/10, 30, 40, 20, 0)},
      ident);
  const SampleRecord rec = render_sample(scene);

  REQUIRE(rec.masks.size() == 1);
  CHECK(rec.masks[0].count() > 0);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      CHECK(rec.flow_bg.u(y, x) == 0.0f);
      CHECK(rec.flow_bg.v(y, x) == 0.0f);
      if (rec.masks[0].at(y, x)) {
        CHECK(rec.flow_fg.u(y, x) == 20.0f);
        CHECK(rec.flow_fg.v(y, x) == 0.0f);
      } else {
        CHECK(rec.flow_fg.u(y, x) == 0.0f);
        CHECK(rec.flow_fg.v(y, x) == 0.0f);
      }
    }

  // image-1 sprite pixels land pixel-aligned; image 2 carries the sprite
  // 20 px to the right of them
  const Sprite& sp = scene.objects[0].sprite;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      if (rec.masks[0].at(y, x)) {
        const int sx = x - 30, sy = y - 40;
        REQUIRE(sx >= 0);
        REQUIRE(sy >= 0);
        for (int c = 0; c < 3; ++c) {
          CHECK(rec.i1.at(y, x, c) == sp.at(sy, sx, c));
          CHECK(rec.i2.at(y, x + 20, c) == sp.at(sy, sx, c));
        }
      }

  const ValidationReport rep = validate_sample(rec, mini_config());
  CHECK(rep.all_pass());
}

TEST_CASE("render: pure background translation is photometrically consistent") {
  const double shift[6] = {1, 0, 3.7, 0, 1, -2.2};
  SceneSpec scene = manual_scene(96, 96, {}, shift);
  const SampleRecord rec = render_sample(scene);

  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      CHECK(rec.flow_bg.u(y, x) == doctest::Approx(3.7).epsilon(1e-6));
      CHECK(rec.flow_bg.v(y, x) == doctest::Approx(-2.2).epsilon(1e-6));
    }

  const ValidationReport rep = validate_sample(rec, mini_config());
  const CheckResult* photo = rep.find("photometric");
  REQUIRE(photo != nullptr);
  CHECK(photo->pass);
  CHECK(rep.all_pass());
}

TEST_CASE("render: overlapping objects, front one wins, masks disjoint") {
  const double ident[6] = {1, 0, 0, 0, 1, 0};
  SceneSpec scene = manual_scene(
      96, 96,
      {manual_object(21, 14, 40, 40, 25, 0), manual_object(22, 14, 43, 42, 0, 25)},
      ident);
  const SampleRecord rec = render_sample(scene);
  REQUIRE(rec.masks.size() == 2);

  // footprints from the raw stencils
  auto in_footprint = [&](int k, int y, int x) {
    const ObjectSpec& ob = scene.objects[k];
    const int tlx = static_cast<int>(ob.p1x - (ob.scale - 1) / 2.0);
    const int tly = static_cast<int>(ob.p1y - (ob.scale - 1) / 2.0);
    const int sx = x - tlx, sy = y - tly;
    if (sx < 0 || sy < 0 || sx >= ob.scale || sy >= ob.scale) return false;
    return ob.sprite.at(sy, sx, 3) == 255;
  };

  int overlap = 0;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      CHECK(!(rec.masks[0].at(y, x) && rec.masks[1].at(y, x)));
      if (in_footprint(0, y, x) && in_footprint(1, y, x)) {
        ++overlap;
        CHECK(rec.masks[1].at(y, x));   // later object owns the pixel
        CHECK(!rec.masks[0].at(y, x));
        for (int c = 0; c < 3; ++c) {
          const ObjectSpec& ob = scene.objects[1];
          const int sx = x - static_cast<int>(ob.p1x - (ob.scale - 1) / 2.0);
          const int sy = y - static_cast<int>(ob.p1y - (ob.scale - 1) / 2.0);
          CHECK(rec.i1.at(y, x, c) == ob.sprite.at(sy, sx, c));
        }
      } else if (in_footprint(0, y, x)) {
        CHECK(rec.masks[0].at(y, x));
      }
    }
  CHECK(overlap > 0);  // the fixture would be vacuous without an overlap
  CHECK(validate_sample(rec, mini_config()).all_pass());
}

TEST_CASE("render: rotation gives the exact rigid field") {
  const double ident[6] = {1, 0, 0, 0, 1, 0};
  SceneSpec scene = manual_scene(
      96, 96, {manual_object(8, 12, 30, 30, 22, 9, /*rot=*/0.25)}, ident);
  const SampleRecord rec = render_sample(scene);
  const ObjectSpec& ob = scene.objects[0];
  REQUIRE(rec.masks.size() == 1);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      if (rec.masks[0].at(y, x)) {
        double u, v;
        ob.rigid_flow(x, y, u, v);
        CHECK(rec.flow_fg.u(y, x) == doctest::Approx(u).epsilon(1e-5));
        CHECK(rec.flow_fg.v(y, x) == doctest::Approx(v).epsilon(1e-5));
        // rotation by 0.25 rad about the center moves edge pixels; the
        // field must differ from pure translation somewhere
      }
  // the rigid field is not constant when rot != 0
  float umin = 1e9f, umax = -1e9f;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      if (rec.masks[0].at(y, x)) {
        umin = std::min(umin, rec.flow_fg.u(y, x));
        umax = std::max(umax, rec.flow_fg.u(y, x));
      }
  CHECK(umax - umin > 0.5f);
  CHECK(validate_sample(rec, mini_config()).all_pass());
}

TEST_CASE("validate_sample: injected faults are caught") {
  const GeneratorConfig cfg = mini_config(5);
  SceneSpec scene = sample_scene(cfg, 31);
  SampleRecord rec = render_sample(scene);
  REQUIRE(validate_sample(rec, cfg).all_pass());

  SUBCASE("object flow zeroed inside a mask") {
    for (int y = 0; y < rec.flow_fg.height; ++y)
      for (int x = 0; x < rec.flow_fg.width; ++x)
        if (rec.masks[0].at(y, x)) {
          rec.flow_fg.u(y, x) = 0.0f;
          rec.flow_fg.v(y, x) = 0.0f;
        }
    const ValidationReport rep = validate_sample(rec, cfg);
    CHECK_FALSE(rep.all_pass());
    REQUIRE(rep.find("object-flow") != nullptr);
    CHECK_FALSE(rep.find("object-flow")->pass);
  }

  SUBCASE("displacement reduced below the object's scale") {
    SceneSpec slow = scene;
    slow.objects[0].dx = 1.0;
    slow.objects[0].dy = 0.0;
    const SampleRecord rec2 = render_sample(slow);
    const ValidationReport rep = validate_sample(rec2, cfg);
    CHECK_FALSE(rep.all_pass());
    REQUIRE(rep.find("small-fast") != nullptr);
    CHECK_FALSE(rep.find("small-fast")->pass);
    // coherence checks still pass: the fault is in the spec, not the render
    CHECK(rep.find("object-flow")->pass);
    CHECK(rep.find("bg-affine")->pass);
  }

  SUBCASE("oversized object") {
    GeneratorConfig tight = cfg;
    tight.scale_max = scene.objects[0].scale;  // now s >= scale_max
    const ValidationReport rep = validate_sample(rec, tight);
    REQUIRE(rep.find("scale-bound") != nullptr);
    CHECK_FALSE(rep.find("scale-bound")->pass);
  }
}

TEST_CASE("pyramid-disappearance: masks vanish at level ceil(log2 s)+1") {
  const GeneratorConfig cfg = mini_config(77);
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    const SampleRecord rec = render_sample(sample_scene(cfg, seed));
    for (std::size_t k = 0; k < rec.masks.size(); ++k) {
      const int s = rec.scene.objects[k].scale;
      const int level =
          static_cast<int>(std::ceil(std::log2(double(s)))) + 1;
      const int cell = 1 << level;
      std::set<std::pair<int, int>> occupied;  // max-pooled footprint
      for (int y = 0; y < rec.masks[k].height; ++y)
        for (int x = 0; x < rec.masks[k].width; ++x)
          if (rec.masks[k].at(y, x)) occupied.insert({y / cell, x / cell});
      CHECK(occupied.size() <= 4);
      if (!occupied.empty()) {
        int ymin = 1 << 20, ymax = -1, xmin = 1 << 20, xmax = -1;
        for (const auto& [cy, cx] : occupied) {
          ymin = std::min(ymin, cy);
          ymax = std::max(ymax, cy);
          xmin = std::min(xmin, cx);
          xmax = std::max(xmax, cx);
        }
        CHECK(ymax - ymin <= 1);
        CHECK(xmax - xmin <= 1);
      }
    }
  }
}

TEST_CASE("scene JSON round trip regenerates rasters exactly") {
  const GeneratorConfig cfg = mini_config(8);
  const SceneSpec scene = sample_scene(cfg, 19);
  const SceneSpec back = SceneSpec::from_json(scene.to_json());
  CHECK(back.background.data == scene.background.data);
  REQUIRE(back.objects.size() == scene.objects.size());
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    CHECK(back.objects[k].sprite.rgba == scene.objects[k].sprite.rgba);
    CHECK(back.objects[k].p1x == scene.objects[k].p1x);
    CHECK(back.objects[k].dx == scene.objects[k].dx);
    CHECK(back.objects[k].rot == scene.objects[k].rot);
  }
  CHECK(back.to_json() == scene.to_json());
}

TEST_CASE("split assignment: deterministic, one test sample per ten") {
  for (int index = 0; index < 100; ++index)
    CHECK(sample_split(11, index) == sample_split(11, index));
  int tests = 0;
  for (int index = 0; index < 50; ++index)
    if (sample_split(11, index) == "test") ++tests;
  CHECK(tests == 5);
  // different seeds shuffle which slot is held out
  std::set<std::string> layouts;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    std::string layout;
    for (int index = 0; index < 10; ++index)
      layout += sample_split(seed, index) == "test" ? 'T' : '.';
    layouts.insert(layout);
  }
  CHECK(layouts.size() > 1);
}

TEST_CASE("generate_dataset: layout, split, determinism, reload") {
  const fs::path root = fs::temp_directory_path() / "hmflow_sfchairs_test";
  fs::remove_all(root);
  GeneratorConfig cfg = mini_config(123);

  const DatasetManifest manifest =
      generate_dataset(cfg, 10, (root / "a").string());
  CHECK(manifest.n == 10);
  REQUIRE(manifest.samples.size() == 10);
  CHECK(manifest.split_entries("train").size() == 9);
  CHECK(manifest.split_entries("test").size() == 1);

  for (const auto& e : manifest.samples) {
    const fs::path dir = root / "a" / e.dir;
    for (const char* f : {"img1.png", "img2.png", "flow_fg.flo",
                          "flow_bg.flo", "meta.json"})
      CHECK(fs::exists(dir / f));
    const SampleRecord rec = load_sample(dir.string());
    CHECK(fs::exists(dir / ("mask_" + std::to_string(rec.masks.size() - 1) +
                            ".png")));
    CHECK(validate_sample(rec, cfg).all_pass());

    // reload matches regeneration from the scene echo
    const SampleRecord fresh = render_sample(rec.scene);
    CHECK(fresh.i1.data == rec.i1.data);
    CHECK(fresh.i2.data == rec.i2.data);
    CHECK(fresh.flow_fg.data == rec.flow_fg.data);
    for (std::size_t k = 0; k < fresh.masks.size(); ++k)
      CHECK(fresh.masks[k].data == rec.masks[k].data);
  }

  // regeneration is byte-identical, .flo files included
  generate_dataset(cfg, 10, (root / "b").string());
  for (const auto& e : manifest.samples) {
    CHECK(slurp(root / "a" / e.dir / "flow_fg.flo") ==
          slurp(root / "b" / e.dir / "flow_fg.flo"));
    CHECK(slurp(root / "a" / e.dir / "flow_bg.flo") ==
          slurp(root / "b" / e.dir / "flow_bg.flo"));
    CHECK(slurp(root / "a" / e.dir / "img1.png") ==
          slurp(root / "b" / e.dir / "img1.png"));
  }

  const DatasetManifest read = read_manifest((root / "a").string());
  CHECK(read.to_json() == manifest.to_json());
  fs::remove_all(root);
}
