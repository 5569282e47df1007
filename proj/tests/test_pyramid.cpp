// Feature pyramid extractor: shape laws, Siamese sharing, and the analytic
// parameter count against both hand arithmetic and live enumeration.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hmflow/pyramid.hpp"

using namespace hmflow;

namespace {

Tensor random_image(int c, int h, int w, std::mt19937_64& rng) {
  Tensor t({c, h, w});
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

PyramidConfig mini_config() {
  PyramidConfig cfg;
  cfg.levels = 5;
  cfg.channels = {8, 16, 32, 64, 96};
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  PyramidConfig bad;
  bad.levels = 1;
  bad.channels = {8};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  PyramidConfig mismatch;
  mismatch.levels = 3;
  mismatch.channels = {8, 16};
  CHECK_THROWS_AS(mismatch.validate(), ConfigError);

  PyramidConfig zero;
  zero.levels = 2;
  zero.channels = {8, 0};
  CHECK_THROWS_AS(zero.validate(), ConfigError);
}

TEST_CASE("shape law: spatial halves per level, channels follow config") {
  PyramidConfig cfg = mini_config();
  ParamStore store;
  declare_pyramid_params(cfg, store);
  store.init_random(42);
  std::mt19937_64 rng(1);
  Tensor img = random_image(3, 64, 32, rng);

  Graph g;
  ParamLeaves leaves(g, store);
  std::vector<Value> pyr = extract_pyramid(g, g.constant(img), cfg, leaves);
  REQUIRE(pyr.size() == 5);
  for (int l = 1; l <= 5; ++l) {
    const Tensor& f = g.value(pyr[l - 1]);
    CHECK(f.dim(0) == cfg.channels_at(l));
    CHECK(f.dim(1) == 64 / (1 << l));
    CHECK(f.dim(2) == 32 / (1 << l));
  }
  // top level of the mini config: 96 x 2 x 1
  CHECK(g.value(pyr[4]).shape() == std::vector<int>{96, 2, 1});
}

TEST_CASE("indivisible input is rejected, no implicit padding") {
  PyramidConfig cfg = mini_config();
  ParamStore store;
  declare_pyramid_params(cfg, store);
  store.init_random(42);
  std::mt19937_64 rng(2);
  Tensor img = random_image(3, 48, 64, rng);  // 48 % 32 != 0
  Graph g;
  ParamLeaves leaves(g, store);
  CHECK_THROWS_AS(extract_pyramid(g, g.constant(img), cfg, leaves),
                  ShapeError);
}

TEST_CASE("Siamese contract: one weight set, identical inputs, identical maps") {
  PyramidConfig cfg = mini_config();
  ParamStore store;
  declare_pyramid_params(cfg, store);
  store.init_random(7);
  std::mt19937_64 rng(3);
  Tensor img1 = random_image(3, 32, 32, rng);
  Tensor img2 = img1;

  Graph g;
  ParamLeaves leaves(g, store);
  auto p1 = extract_pyramid(g, g.constant(img1), cfg, leaves);
  auto p2 = extract_pyramid(g, g.constant(img2), cfg, leaves);
  for (int l = 0; l < 5; ++l) {
    const Tensor& a = g.value(p1[l]);
    const Tensor& b = g.value(p2[l]);
    REQUIRE(a.same_shape(b));
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  }

  // swapping the pair swaps the pyramids bit-exactly
  Tensor other = random_image(3, 32, 32, rng);
  Graph g2;
  ParamLeaves leaves2(g2, store);
  auto fwd = extract_pyramid(g2, g2.constant(img1), cfg, leaves2);
  auto swp = extract_pyramid(g2, g2.constant(other), cfg, leaves2);
  Graph g3;
  ParamLeaves leaves3(g3, store);
  auto fwd3 = extract_pyramid(g3, g3.constant(other), cfg, leaves3);
  auto swp3 = extract_pyramid(g3, g3.constant(img1), cfg, leaves3);
  for (int l = 0; l < 5; ++l) {
    const Tensor& a = g2.value(fwd[l]);
    const Tensor& b = g3.value(swp3[l]);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    const Tensor& c = g2.value(swp[l]);
    const Tensor& d = g3.value(fwd3[l]);
    for (std::int64_t i = 0; i < c.numel(); ++i) CHECK(c[i] == d[i]);
  }
}

TEST_CASE("parameter count: hand arithmetic for one 3->4 level") {
  // conv1: 3*3*3*4 + 4 = 112, conv2: 3*3*4*4 + 4 = 148, total 260.
  // count_pyramid_params requires L >= 2, so stack two identical levels
  // and check the increment; also check the raw conv arithmetic directly.
  CHECK(conv_param_count(3, 4, 3) == 112);
  CHECK(conv_param_count(4, 4, 3) == 148);

  PyramidConfig two;
  two.levels = 2;
  two.channels = {4, 4};
  // level 1: 112 + 148 = 260; level 2 (4->4): 148 + 148 = 296
  CHECK(count_pyramid_params(two) == 260 + 296);

  PyramidConfig none;
  none.levels = 0;
  none.channels = {};
  CHECK(count_pyramid_params(none) == 0);
}

TEST_CASE("analytic count equals enumerated parameter total") {
  for (const PyramidConfig& cfg :
       {mini_config(), PyramidConfig{}}) {  // mini and full
    ParamStore store;
    declare_pyramid_params(cfg, store);
    CHECK(count_pyramid_params(cfg) == store.total_parameters());
  }
}
