#include "hmflow/losses.hpp"

#include <cmath>

namespace hmflow {

std::string loss_mode_to_string(LossMode m) {
  switch (m) {
    case LossMode::multiscale_l2: return "multiscale_l2";
    case LossMode::robust: return "robust";
  }
  throw ValueError("loss_mode_to_string: unknown mode");
}

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "multiscale_l2") return LossMode::multiscale_l2;
  if (s == "robust") return LossMode::robust;
  throw ConfigError("unknown loss mode '" + s + "'");
}

void LossConfig::validate() const {
  for (const auto& [level, a] : alpha) {
    if (a < 0.0)
      throw ConfigError("LossConfig: alpha for level " +
                        std::to_string(level) + " is negative");
  }
  if (gamma < 0.0) throw ConfigError("LossConfig: gamma must be >= 0");
  if (epsilon < 0.0) throw ConfigError("LossConfig: epsilon must be >= 0");
  if (q <= 0.0 || q > 1.0)
    throw ConfigError("LossConfig: q must lie in (0, 1]");
}

nlohmann::json LossConfig::to_json() const {
  nlohmann::json a = nlohmann::json::object();
  for (const auto& [level, w] : alpha) a[std::to_string(level)] = w;
  return nlohmann::json{{"mode", loss_mode_to_string(mode)},
                        {"alpha", a},
                        {"gamma", gamma},
                        {"epsilon", epsilon},
                        {"q", q}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  LossConfig cfg;  // missing keys keep their defaults
  if (j.contains("mode"))
    cfg.mode = loss_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("alpha")) {
    cfg.alpha.clear();
    for (const auto& [key, value] : j.at("alpha").items())
      cfg.alpha[std::stoi(key)] = value.get<double>();
  }
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.q = j.value("q", cfg.q);
  cfg.validate();
  return cfg;
}

std::map<int, double> LossConfig::anchored_alphas(int levels,
                                                  int finest_level) {
  static const double published[] = {0.32, 0.08, 0.02, 0.01, 0.005};
  if (finest_level > levels)
    throw ConfigError("anchored_alphas: finest_level above levels");
  std::map<int, double> out;
  for (int l = levels; l >= finest_level; --l) {
    const int idx = levels - l;
    out[l] = idx < 5 ? published[idx] : published[4] / (1 << (idx - 4));
  }
  return out;
}

FlowField downsample_gt(const FlowField& gt, int level) {
  if (level < 0) throw ValueError("downsample_gt: negative level");
  if (level == 0) return gt;
  Tensor t = gt.to_tensor();
  for (int i = 0; i < level; ++i) t = avg_pool_2x(t);
  const double scale = 1.0 / (1 << level);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] *= scale;
  return FlowField::from_tensor(t);
}

namespace {

void check_pred_target(const Tensor& pred, const Tensor& target) {
  if (pred.rank() != 3 || pred.dim(0) != 2)
    throw ShapeError("flow loss: prediction must be {2, H, W}");
  if (!pred.same_shape(target))
    throw ShapeError("flow loss: prediction/target shapes differ");
}

}  // namespace

Value flow_loss_l2(Graph& g, Value pred, const Tensor& target) {
  const Tensor& p = g.value(pred);
  check_pred_target(p, target);
  const int h = p.dim(1), w = p.dim(2);
  Tensor out = Tensor::scalar(0.0);
  double s = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      s += std::hypot(p.at(0, y, x) - target.at(0, y, x),
                      p.at(1, y, x) - target.at(1, y, x));
  out[0] = s;
  Tensor tgt = target;
  return g.make(std::move(out), {pred},
                [pred, tgt = std::move(tgt), h, w](Graph& gg, Value self) {
                  const double gs = gg.grad_buffer(self)[0];
                  if (!gg.needs_grad(pred)) return;
                  const Tensor& pv = gg.value(pred);
                  Tensor& gp = gg.grad_buffer(pred);
                  for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                      const double du = pv.at(0, y, x) - tgt.at(0, y, x);
                      const double dv = pv.at(1, y, x) - tgt.at(1, y, x);
                      const double n = std::hypot(du, dv);
                      if (n == 0.0) continue;  // subgradient 0 at the kink
                      gp.at(0, y, x) += gs * du / n;
                      gp.at(1, y, x) += gs * dv / n;
                    }
                });
}

Value flow_loss_l1(Graph& g, Value pred, const Tensor& target) {
  const Tensor& p = g.value(pred);
  check_pred_target(p, target);
  Tensor out = Tensor::scalar(0.0);
  double s = 0.0;
  for (std::int64_t i = 0; i < p.numel(); ++i) s += std::abs(p[i] - target[i]);
  out[0] = s;
  Tensor tgt = target;
  return g.make(std::move(out), {pred},
                [pred, tgt = std::move(tgt)](Graph& gg, Value self) {
                  const double gs = gg.grad_buffer(self)[0];
                  if (!gg.needs_grad(pred)) return;
                  const Tensor& pv = gg.value(pred);
                  Tensor& gp = gg.grad_buffer(pred);
                  for (std::int64_t i = 0; i < pv.numel(); ++i) {
                    const double d = pv[i] - tgt[i];
                    if (d > 0.0) gp[i] += gs;
                    else if (d < 0.0) gp[i] -= gs;
                  }
                });
}

Value flow_loss_robust(Graph& g, Value pred, const Tensor& target,
                       double epsilon, double q) {
  if (q <= 0.0) throw ConfigError("flow_loss_robust: q must be > 0");
  if (epsilon < 0.0) throw ConfigError("flow_loss_robust: epsilon < 0");
  const Tensor& p = g.value(pred);
  check_pred_target(p, target);
  const int h = p.dim(1), w = p.dim(2);
  Tensor out = Tensor::scalar(0.0);
  double s = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double l1 = std::abs(p.at(0, y, x) - target.at(0, y, x)) +
                        std::abs(p.at(1, y, x) - target.at(1, y, x));
      s += std::pow(l1 + epsilon, q);
    }
  out[0] = s;
  Tensor tgt = target;
  return g.make(
      std::move(out), {pred},
      [pred, tgt = std::move(tgt), h, w, epsilon, q](Graph& gg, Value self) {
        const double gs = gg.grad_buffer(self)[0];
        if (!gg.needs_grad(pred)) return;
        const Tensor& pv = gg.value(pred);
        Tensor& gp = gg.grad_buffer(pred);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double du = pv.at(0, y, x) - tgt.at(0, y, x);
            const double dv = pv.at(1, y, x) - tgt.at(1, y, x);
            const double l1 = std::abs(du) + std::abs(dv);
            const double outer = q * std::pow(l1 + epsilon, q - 1.0);
            if (du > 0.0) gp.at(0, y, x) += gs * outer;
            else if (du < 0.0) gp.at(0, y, x) -= gs * outer;
            if (dv > 0.0) gp.at(1, y, x) += gs * outer;
            else if (dv < 0.0) gp.at(1, y, x) -= gs * outer;
          }
      });
}

namespace {

Value weight_decay(Graph& g, ParamLeaves& params, double gamma) {
  Value total;
  for (const std::string& name : params.store().names()) {
    Value term = sum_squares(g, params(name));
    total = total.valid() ? add(g, total, term) : term;
  }
  return scale(g, total, gamma);
}

using LevelTerm = Value (*)(Graph&, Value, const Tensor&, const LossConfig&);

Value weighted_levels(Graph& g, const ForwardFlows& preds, const FlowField& gt,
                      ParamLeaves& params, const LossConfig& cfg,
                      LevelTerm term) {
  cfg.validate();
  Value total;
  for (const auto& [level, pred] : preds.per_level) {
    const auto it = cfg.alpha.find(level);
    if (it == cfg.alpha.end())
      throw ConfigError("loss: no alpha for predicted level " +
                        std::to_string(level));
    const Tensor target = downsample_gt(gt, level).to_tensor();
    Value t = scale(g, term(g, pred, target, cfg), it->second);
    total = total.valid() ? add(g, total, t) : t;
  }
  if (cfg.gamma > 0.0)
    total = add(g, total, weight_decay(g, params, cfg.gamma));
  return total;
}

}  // namespace

Value multiscale_loss(Graph& g, const ForwardFlows& preds, const FlowField& gt,
                      ParamLeaves& params, const LossConfig& cfg) {
  return weighted_levels(
      g, preds, gt, params, cfg,
      [](Graph& gg, Value pred, const Tensor& target, const LossConfig&) {
        return flow_loss_l2(gg, pred, target);
      });
}

Value robust_loss(Graph& g, const ForwardFlows& preds, const FlowField& gt,
                  ParamLeaves& params, const LossConfig& cfg) {
  return weighted_levels(
      g, preds, gt, params, cfg,
      [](Graph& gg, Value pred, const Tensor& target, const LossConfig& c) {
        return flow_loss_robust(gg, pred, target, c.epsilon, c.q);
      });
}

Value training_loss(Graph& g, const ForwardFlows& preds, const FlowField& gt,
                    ParamLeaves& params, const LossConfig& cfg) {
  return cfg.mode == LossMode::multiscale_l2
             ? multiscale_loss(g, preds, gt, params, cfg)
             : robust_loss(g, preds, gt, params, cfg);
}

}  // namespace hmflow
