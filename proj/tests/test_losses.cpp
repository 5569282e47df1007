// Training objectives: analytic fixtures (3-4-5 sums, the 0.01^0.4
// plateau), the q=1/eps=0 identity against an independent L1 form,
// downsampling oracles, and finite-difference gradients, including the
// end-to-end check of the full training loss on a tiny model.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hmflow/losses.hpp"

using namespace hmflow;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

double relative_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

HmflowConfig tiny_config(Mode mode) {
  HmflowConfig cfg;
  cfg.mode = mode;
  cfg.levels = 3;
  cfg.radius = 1;
  cfg.finest_level = 2;
  cfg.estimator_widths = {6, 5};
  cfg.feature_channels = {4, 6, 8};
  return cfg;
}

}  // namespace

TEST_CASE("config validation and JSON round trip") {
  LossConfig bad;
  bad.q = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LossConfig{};
  bad.gamma = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LossConfig{};
  bad.alpha[4] = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  LossConfig cfg;
  cfg.mode = LossMode::robust;
  cfg.alpha = {{2, 0.4}, {3, 0.1}};
  LossConfig back = LossConfig::from_json(cfg.to_json());
  CHECK(back.mode == cfg.mode);
  CHECK(back.alpha == cfg.alpha);
  CHECK(back.gamma == cfg.gamma);
  CHECK(back.epsilon == cfg.epsilon);
  CHECK(back.q == cfg.q);

  // published defaults
  LossConfig defaults;
  CHECK(defaults.alpha.at(6) == 0.32);
  CHECK(defaults.alpha.at(5) == 0.08);
  CHECK(defaults.alpha.at(4) == 0.02);
  CHECK(defaults.alpha.at(3) == 0.01);
  CHECK(defaults.alpha.at(2) == 0.005);
  CHECK(defaults.gamma == 0.0004);
  CHECK(defaults.epsilon == 0.01);
  CHECK(defaults.q == 0.4);

  // anchored weights for a 5-level pyramid keep the coarse-first pattern
  const auto a5 = LossConfig::anchored_alphas(5, 2);
  CHECK(a5.at(5) == 0.32);
  CHECK(a5.at(4) == 0.08);
  CHECK(a5.at(3) == 0.02);
  CHECK(a5.at(2) == 0.01);
}

TEST_CASE("downsample_gt: constants, identity, block-mean oracle") {
  FlowField c(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) c.u(y, x) = 4.0f;
  for (int l = 0; l <= 3; ++l) {
    FlowField d = downsample_gt(c, l);
    CHECK(d.width == 8 >> l);
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) {
        CHECK(d.u(y, x) == doctest::Approx(4.0 / (1 << l)));
        CHECK(d.v(y, x) == 0.0f);
      }
  }

  std::mt19937_64 rng(3);
  FlowField f(4, 4);
  std::uniform_real_distribution<float> dist(-5.0f, 5.0f);
  for (float& v : f.data) v = dist(rng);
  CHECK(downsample_gt(f, 0).data == f.data);

  FlowField d = downsample_gt(f, 1);
  REQUIRE(d.width == 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      double su = 0.0, sv = 0.0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          su += f.u(2 * y + dy, 2 * x + dx);
          sv += f.v(2 * y + dy, 2 * x + dx);
        }
      CHECK(d.u(y, x) == doctest::Approx(su / 4.0 * 0.5).epsilon(1e-6));
      CHECK(d.v(y, x) == doctest::Approx(sv / 4.0 * 0.5).epsilon(1e-6));
    }
}

namespace {

// builds a fake prediction set at the levels present in alpha
ForwardFlows fake_preds(Graph& g, const std::map<int, Tensor>& flows) {
  ForwardFlows out;
  for (const auto& [l, t] : flows) out.per_level[l] = g.leaf(t);
  return out;
}

}  // namespace

TEST_CASE("multiscale loss: exactness, 3-4-5 fixture, regularizer") {
  ParamStore store;
  store.declare("w", {3});
  store.at("w")[0] = 1.0;
  store.at("w")[1] = -2.0;
  store.at("w")[2] = 0.5;  // sum of squares = 5.25

  // ground truth constant (2, -1) at full resolution 8x8
  FlowField gt(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      gt.u(y, x) = 2.0f;
      gt.v(y, x) = -1.0f;
    }

  LossConfig cfg;
  cfg.alpha = {{1, 0.5}};
  cfg.gamma = 0.0;

  // exact prediction at level 1: constant (1, -0.5)
  Tensor exact({2, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      exact.at(0, y, x) = 1.0;
      exact.at(1, y, x) = -0.5;
    }
  {
    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows preds = fake_preds(g, {{1, exact}});
    CHECK(g.value(multiscale_loss(g, preds, gt, leaves, cfg))[0] == 0.0);
  }

  // constant error (3, 4) at a single level: alpha * N * 5
  Tensor off = exact;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      off.at(0, y, x) += 3.0;
      off.at(1, y, x) += 4.0;
    }
  {
    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows preds = fake_preds(g, {{1, off}});
    CHECK(g.value(multiscale_loss(g, preds, gt, leaves, cfg))[0] ==
          doctest::Approx(0.5 * 16 * 5.0).epsilon(1e-12));
  }

  // regularizer isolation: zero error, gamma > 0
  cfg.gamma = 0.1;
  {
    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows preds = fake_preds(g, {{1, exact}});
    CHECK(g.value(multiscale_loss(g, preds, gt, leaves, cfg))[0] ==
          doctest::Approx(0.1 * 5.25).epsilon(1e-12));
  }

  // missing alpha for a supervised level
  cfg.alpha = {{2, 0.5}};
  {
    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows preds = fake_preds(g, {{1, exact}});
    CHECK_THROWS_AS(multiscale_loss(g, preds, gt, leaves, cfg), ConfigError);
  }
}

TEST_CASE("robust loss: q=1/eps=0 identity, zero-error plateau, monotone") {
  ParamStore store;
  store.declare("w", {2});
  store.at("w")[0] = 0.75;
  store.at("w")[1] = -0.25;  // sum sq = 0.625

  std::mt19937_64 rng(11);
  FlowField gt(8, 8);
  std::uniform_real_distribution<float> dist(-3.0f, 3.0f);
  for (float& v : gt.data) v = dist(rng);

  LossConfig cfg;
  cfg.mode = LossMode::robust;
  cfg.alpha = {{1, 0.3}, {2, 0.7}};
  cfg.gamma = 0.2;
  cfg.epsilon = 0.0;
  cfg.q = 1.0;

  std::map<int, Tensor> flows;
  flows[1] = random_tensor({2, 4, 4}, rng);
  flows[2] = random_tensor({2, 2, 2}, rng);

  // identity against an independently implemented weighted L1 sum
  double expect = 0.2 * 0.625;
  for (const auto& [l, t] : flows) {
    const Tensor target = downsample_gt(gt, l).to_tensor();
    double s = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i)
      s += std::abs(t[i] - target[i]);
    expect += cfg.alpha.at(l) * s;
  }
  {
    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows preds = fake_preds(g, flows);
    const double got = g.value(robust_loss(g, preds, gt, leaves, cfg))[0];
    CHECK(relative_err(got, expect) < 1e-12);

    // and against the graph-side L1 term, level by level
    Graph g2;
    Value acc;
    for (const auto& [l, t] : flows) {
      Value term = flow_loss_l1(g2, g2.constant(t),
                                downsample_gt(gt, l).to_tensor());
      term = scale(g2, term, cfg.alpha.at(l));
      acc = acc.valid() ? add(g2, acc, term) : term;
    }
    CHECK(relative_err(g2.value(acc)[0] + 0.2 * 0.625, got) < 1e-12);
  }

  // zero error with eps = 0.01, q = 0.4: per-pixel term 0.01^0.4
  cfg.epsilon = 0.01;
  cfg.q = 0.4;
  {
    std::map<int, Tensor> exact;
    for (const auto& [l, t] : flows) exact[l] = downsample_gt(gt, l).to_tensor();
    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows preds = fake_preds(g, exact);
    const double per_pixel = std::pow(0.01, 0.4);  // ~0.158489
    CHECK(per_pixel == doctest::Approx(0.1585).epsilon(1e-3));
    const double want =
        0.3 * 16 * per_pixel + 0.7 * 4 * per_pixel + 0.2 * 0.625;
    const double got = g.value(robust_loss(g, preds, gt, leaves, cfg))[0];
    CHECK(relative_err(got, want) < 1e-12);
  }

  // growing one pixel's error never decreases the loss
  {
    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows preds = fake_preds(g, flows);
    const double base = g.value(robust_loss(g, preds, gt, leaves, cfg))[0];
    std::map<int, Tensor> worse = flows;
    const Tensor t1 = downsample_gt(gt, 1).to_tensor();
    const double d = worse[1][5] - t1[5];
    worse[1][5] += (d >= 0.0 ? 1.0 : -1.0);  // push away from the target
    Graph g2;
    ParamLeaves leaves2(g2, store);
    ForwardFlows preds2 = fake_preds(g2, worse);
    CHECK(g2.value(robust_loss(g2, preds2, gt, leaves2, cfg))[0] >= base);
  }
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(13);
  FlowField gt(4, 4);
  // keep targets away from predictions so no per-pixel error is 0
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      gt.u(y, x) = 5.0f + 0.1f * static_cast<float>(x);
      gt.v(y, x) = -4.0f - 0.1f * static_cast<float>(y);
    }
  Tensor pred = random_tensor({2, 2, 2}, rng);

  ParamStore store;
  store.declare("w", {2});
  store.at("w")[0] = 0.4;
  store.at("w")[1] = -1.1;

  LossConfig cfg;
  cfg.alpha = {{1, 0.6}};
  cfg.gamma = 0.05;

  for (LossMode mode : {LossMode::multiscale_l2, LossMode::robust}) {
    cfg.mode = mode;
    auto value_at = [&](const Tensor& p) {
      Graph g;
      ParamLeaves leaves(g, store);
      ForwardFlows preds;
      preds.per_level[1] = g.constant(p);
      return g.value(training_loss(g, preds, gt, leaves, cfg))[0];
    };

    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows preds;
    Value vp = g.leaf(pred);
    preds.per_level[1] = vp;
    Value loss = training_loss(g, preds, gt, leaves, cfg);
    g.backward(loss);
    const Tensor& gp = g.grad(vp);
    const Tensor& gw = g.grad(leaves("w"));

    const double h = 1e-6;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
      const double keep = pred[i];
      pred[i] = keep + h;
      const double up = value_at(pred);
      pred[i] = keep - h;
      const double dn = value_at(pred);
      pred[i] = keep;
      CHECK(relative_err((up - dn) / (2 * h), gp[i]) < 1e-3);
    }
    for (std::int64_t i = 0; i < 2; ++i) {
      Tensor& w = store.at("w");
      const double keep = w[i];
      w[i] = keep + h;
      const double up = value_at(pred);
      w[i] = keep - h;
      const double dn = value_at(pred);
      w[i] = keep;
      CHECK(relative_err((up - dn) / (2 * h), gw[i]) < 1e-3);
    }
  }
}

TEST_CASE("end-to-end: training loss vs finite differences on tiny model") {
  std::mt19937_64 rng(17);
  Tensor i1 = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  Tensor i2 = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  FlowField gt(16, 16);
  std::uniform_real_distribution<float> fdist(-2.0f, 2.0f);
  for (float& v : gt.data) v = fdist(rng);

  HmflowConfig cfg = tiny_config(Mode::hybrid);
  ParamStore store;
  declare_hmflow_params(cfg, store);
  store.init_random(23);

  LossConfig loss_cfg;
  loss_cfg.alpha = LossConfig::anchored_alphas(cfg.levels, cfg.finest_level);
  loss_cfg.gamma = 0.0004;

  auto loss_of = [&]() {
    Graph g;
    ParamLeaves leaves(g, store);
    ForwardFlows out =
        hmflow_forward(g, cfg, leaves, g.constant(i1), g.constant(i2));
    return g.value(training_loss(g, out, gt, leaves, loss_cfg))[0];
  };

  Graph g;
  ParamLeaves leaves(g, store);
  ForwardFlows out =
      hmflow_forward(g, cfg, leaves, g.constant(i1), g.constant(i2));
  Value loss = training_loss(g, out, gt, leaves, loss_cfg);
  g.backward(loss);

  std::mt19937_64 pick(29);
  const double h = 1e-5;
  int checked = 0;
  for (const auto& [name, leaf] : leaves.touched()) {
    Tensor& w = store.at(name);
    const Tensor& gw = g.grad(leaf);
    std::uniform_int_distribution<std::int64_t> coord(0, w.numel() - 1);
    const std::int64_t i = coord(pick);
    const double keep = w[i];
    w[i] = keep + h;
    const double up = loss_of();
    w[i] = keep - h;
    const double dn = loss_of();
    w[i] = keep;
    const double fd = (up - dn) / (2 * h);
    if (std::abs(fd) > 1e-9) {
      CHECK(relative_err(fd, gw[i]) < 1e-2);
      ++checked;
    }
  }
  CHECK(checked >= 20);
}
