// Oracle tests for the matching kernels: integer-shift and closed-form
// interpolation oracles for warp, a brute-force loop for the cost volume,
// and central finite-difference gradient checks in double precision.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hmflow/ops.hpp"

using namespace hmflow;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

Tensor constant_flow(int h, int w, double u, double v) {
  Tensor f({2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      f.at(0, y, x) = u;
      f.at(1, y, x) = v;
    }
  return f;
}

// Brute-force correlation oracle: plain triple loop over pixels and
// displacements, independent of the library kernel.
Tensor brute_force_cost_volume(const Tensor& a, const Tensor& b, int r) {
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const int side = 2 * r + 1;
  Tensor out({side * side, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          double s = 0.0;
          if (y + dy >= 0 && y + dy < h && x + dx >= 0 && x + dx < w)
            for (int ch = 0; ch < c; ++ch)
              s += a.at(ch, y, x) * b.at(ch, y + dy, x + dx);
          out.at((dy + r) * side + (dx + r), y, x) = s / c;
        }
  return out;
}

double relative_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("warp with zero flow is the identity, exactly") {
  std::mt19937_64 rng(3);
  Tensor src = random_tensor({3, 5, 6}, rng);
  Tensor flow = constant_flow(5, 6, 0.0, 0.0);
  Tensor out = warp_tensor(src, flow);
  for (std::int64_t i = 0; i < src.numel(); ++i) CHECK(out[i] == src[i]);
}

TEST_CASE("warp integer shift oracle with zero padding") {
  std::mt19937_64 rng(5);
  Tensor src = random_tensor({2, 5, 5}, rng);
  Tensor flow = constant_flow(5, 5, 1.0, 0.0);
  Tensor out = warp_tensor(src, flow);
  for (int ch = 0; ch < 2; ++ch)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        const double expect = (x + 1 < 5) ? src.at(ch, y, x + 1) : 0.0;
        CHECK(out.at(ch, y, x) == expect);
      }

  // and a vertical shift by -2
  Tensor flow2 = constant_flow(5, 5, 0.0, -2.0);
  Tensor out2 = warp_tensor(src, flow2);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      const double expect = (y - 2 >= 0) ? src.at(0, y - 2, x) : 0.0;
      CHECK(out2.at(0, y, x) == expect);
    }
}

TEST_CASE("warp half-pixel flow on a ramp gives neighbor midpoints") {
  // source(x) = x along each row; flow (0.5, 0) -> interior value x + 0.5
  Tensor src({1, 3, 6});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 6; ++x) src.at(0, y, x) = x;
  Tensor flow = constant_flow(3, 6, 0.5, 0.0);
  Tensor out = warp_tensor(src, flow);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x)
      CHECK(out.at(0, y, x) == doctest::Approx(x + 0.5).epsilon(1e-9));
  // last column samples (5.5): half weight in-bounds -> 0.5 * src(5)
  CHECK(out.at(0, 1, 5) == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("warp shape mismatch raises") {
  Tensor src({1, 4, 4});
  Tensor flow({2, 3, 4});
  CHECK_THROWS_AS(warp_tensor(src, flow), ShapeError);
  Tensor not_flow({3, 4, 4});
  CHECK_THROWS_AS(warp_tensor(src, not_flow), ShapeError);
}

TEST_CASE("cost volume r=0 on constant ones is exactly 1") {
  Tensor a({4, 3, 3}, 1.0);
  Graph g;
  Value cv = cost_volume(g, g.constant(a), g.constant(a), 0);
  CHECK(g.value(cv).shape() == std::vector<int>{1, 3, 3});
  for (int i = 0; i < 9; ++i) CHECK(g.value(cv)[i] == doctest::Approx(1.0));
}

TEST_CASE("cost volume is zero at d=(0,0) for orthogonal channel vectors") {
  Tensor a({2, 2, 2});
  Tensor b({2, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      a.at(0, y, x) = 1.0;
      a.at(1, y, x) = 0.0;
      b.at(0, y, x) = 0.0;
      b.at(1, y, x) = 1.0;
    }
  Graph g;
  Value cv = cost_volume(g, g.constant(a), g.constant(b), 1);
  const Tensor& out = g.value(cv);
  const int center = 4;  // (dy=0,dx=0) with r=1
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) CHECK(out.at(center, y, x) == 0.0);
}

TEST_CASE("cost volume matches brute-force oracle") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor a = random_tensor({1, 4, 4}, rng);
    Tensor b = random_tensor({1, 4, 4}, rng);
    Tensor ref = brute_force_cost_volume(a, b, 1);
    Graph g;
    Value cv = cost_volume(g, g.constant(a), g.constant(b), 1);
    const Tensor& out = g.value(cv);
    REQUIRE(out.same_shape(ref));
    for (std::int64_t i = 0; i < out.numel(); ++i)
      CHECK(std::abs(out[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("cost volume swap symmetry transposes interior entries") {
  std::mt19937_64 rng(29);
  Tensor a = random_tensor({3, 5, 5}, rng);
  Tensor b = random_tensor({3, 5, 5}, rng);
  const int r = 1, side = 3;
  Graph g;
  const Tensor& ab = g.value(cost_volume(g, g.constant(a), g.constant(b), r));
  const Tensor& ba = g.value(cost_volume(g, g.constant(b), g.constant(a), r));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      for (int y = r; y < 5 - r; ++y)
        for (int x = r; x < 5 - r; ++x) {
          const int k = (dy + r) * side + (dx + r);
          const int knegd = (-dy + r) * side + (-dx + r);
          CHECK(ab.at(k, y, x) ==
                doctest::Approx(ba.at(knegd, y + dy, x + dx)).epsilon(1e-12));
        }
}

TEST_CASE("cost volume input validation") {
  Tensor a({1, 2, 2});
  Tensor b({1, 2, 3});
  Graph g;
  CHECK_THROWS_AS(cost_volume(g, g.constant(a), g.constant(b), 1), ShapeError);
  CHECK_THROWS_AS(cost_volume(g, g.constant(a), g.constant(a), -1), ValueError);
}

TEST_CASE("upsample_flow doubles size and values for constant fields") {
  Tensor f = constant_flow(4, 4, 1.0, 1.0);
  Tensor up = upsample_flow_2x_tensor(f);
  CHECK(up.shape() == std::vector<int>{2, 8, 8});
  for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(2.0));

  Tensor z = constant_flow(3, 5, 0.0, 0.0);
  Tensor upz = upsample_flow_2x_tensor(z);
  for (std::int64_t i = 0; i < upz.numel(); ++i) CHECK(upz[i] == 0.0);
}

TEST_CASE("upsample_flow matches closed-form bilinear interpolation") {
  // u(x) = x on a 2x2 grid. Output samples at source coords
  // (ox+0.5)/2-0.5 = {-0.25, 0.25, 0.75, 1.25}, clamped to [0,1],
  // then doubled: {0, 0.5, 1.5, 2.0}.
  Tensor f({2, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      f.at(0, y, x) = x;
      f.at(1, y, x) = 0.0;
    }
  Tensor up = upsample_flow_2x_tensor(f);
  const double expect[4] = {0.0, 0.5, 1.5, 2.0};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(up.at(0, y, x) == doctest::Approx(expect[x]).epsilon(1e-12));
}

TEST_CASE("gradient check: warp wrt source and flow") {
  std::mt19937_64 rng(31);
  Tensor src = random_tensor({2, 4, 4}, rng);
  // keep sample points off the integer lattice so central differences
  // stay on one bilinear cell
  Tensor flow({2, 4, 4});
  std::uniform_real_distribution<double> fdist(0.1, 0.9);
  std::uniform_int_distribution<int> idist(-1, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      flow.at(0, y, x) = idist(rng) + fdist(rng);
      flow.at(1, y, x) = idist(rng) + fdist(rng);
    }

  auto run = [&](const Tensor& s, const Tensor& f) {
    Graph g;
    Value out = warp(g, g.constant(s), g.constant(f));
    return g.value(sum_squares(g, out))[0];
  };

  Graph g;
  Value vs = g.leaf(src);
  Value vf = g.leaf(flow);
  g.backward(sum_squares(g, warp(g, vs, vf)));
  const Tensor& gs = g.grad(vs);
  const Tensor& gf = g.grad(vf);

  const double h = 1e-4;
  for (std::int64_t i = 0; i < src.numel(); ++i) {
    const double keep = src[i];
    src[i] = keep + h;
    const double up = run(src, flow);
    src[i] = keep - h;
    const double dn = run(src, flow);
    src[i] = keep;
    CHECK(relative_err((up - dn) / (2 * h), gs[i]) < 1e-3);
  }
  for (std::int64_t i = 0; i < flow.numel(); ++i) {
    const double keep = flow[i];
    flow[i] = keep + h;
    const double up = run(src, flow);
    flow[i] = keep - h;
    const double dn = run(src, flow);
    flow[i] = keep;
    CHECK(relative_err((up - dn) / (2 * h), gf[i]) < 1e-3);
  }
}

TEST_CASE("gradient check: cost volume wrt both inputs") {
  std::mt19937_64 rng(37);
  Tensor a = random_tensor({2, 4, 4}, rng);
  Tensor b = random_tensor({2, 4, 4}, rng);

  auto run = [&](const Tensor& ta, const Tensor& tb) {
    Graph g;
    Value out = cost_volume(g, g.constant(ta), g.constant(tb), 1);
    return g.value(sum_squares(g, out))[0];
  };

  Graph g;
  Value va = g.leaf(a);
  Value vb = g.leaf(b);
  g.backward(sum_squares(g, cost_volume(g, va, vb, 1)));
  const Tensor& ga = g.grad(va);
  const Tensor& gb = g.grad(vb);

  const double h = 1e-4;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    double keep = a[i];
    a[i] = keep + h;
    const double up = run(a, b);
    a[i] = keep - h;
    const double dn = run(a, b);
    a[i] = keep;
    CHECK(relative_err((up - dn) / (2 * h), ga[i]) < 1e-3);
  }
  for (std::int64_t i = 0; i < b.numel(); ++i) {
    double keep = b[i];
    b[i] = keep + h;
    const double up = run(a, b);
    b[i] = keep - h;
    const double dn = run(a, b);
    b[i] = keep;
    CHECK(relative_err((up - dn) / (2 * h), gb[i]) < 1e-3);
  }
}

TEST_CASE("gradient check: upsample_flow") {
  std::mt19937_64 rng(41);
  Tensor f = random_tensor({2, 3, 3}, rng);
  Graph g;
  Value vf = g.leaf(f);
  g.backward(sum_squares(g, upsample_flow_2x(g, vf)));
  const Tensor& gf = g.grad(vf);
  const double h = 1e-5;
  for (std::int64_t i = 0; i < f.numel(); ++i) {
    double keep = f[i];
    auto run = [&]() {
      Graph gg;
      return gg.value(sum_squares(gg, upsample_flow_2x(gg, gg.constant(f))))[0];
    };
    f[i] = keep + h;
    const double up = run();
    f[i] = keep - h;
    const double dn = run();
    f[i] = keep;
    CHECK(relative_err((up - dn) / (2 * h), gf[i]) < 1e-4);
  }
}

TEST_CASE("avg_pool_2x block means") {
  Tensor x({1, 2, 4});
  for (int i = 0; i < 8; ++i) x[i] = i;
  Tensor p = avg_pool_2x(x);
  CHECK(p.shape() == std::vector<int>{1, 1, 2});
  CHECK(p[0] == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(p[1] == doctest::Approx((2 + 3 + 6 + 7) / 4.0));
  Tensor odd({1, 3, 4});
  CHECK_THROWS_AS(avg_pool_2x(odd), ShapeError);
}

TEST_CASE("search range arithmetic: levels 2..6 at r=4 and top-level span") {
  const std::int64_t expect[5] = {16, 32, 64, 128, 256};
  for (int l = 2; l <= 6; ++l)
    CHECK(search_range_full_res_px(4, l) == expect[l - 2]);
  CHECK(top_level_pixel_span(6) == 32);
  CHECK_THROWS_AS(search_range_full_res_px(-1, 2), ValueError);
}

TEST_CASE("kernel stats counters increment") {
  KernelStats::reset();
  std::mt19937_64 rng(43);
  Tensor a = random_tensor({1, 2, 2}, rng);
  Tensor f = constant_flow(2, 2, 0.0, 0.0);
  Graph g;
  warp(g, g.constant(a), g.constant(f));
  cost_volume(g, g.constant(a), g.constant(a), 0);
  CHECK(KernelStats::warp_calls == 1);
  CHECK(KernelStats::cost_volume_calls == 1);
}
