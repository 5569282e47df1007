#include "hmflow/c2f.hpp"

#include <algorithm>

namespace hmflow {

namespace {

std::string est_name(int level, int layer) {
  return "est.l" + std::to_string(level) + ".conv" + std::to_string(layer);
}
std::string est_head_name(int level) {
  return "est.l" + std::to_string(level) + ".head";
}

}  // namespace

std::string mode_to_string(Mode m) {
  switch (m) {
    case Mode::hybrid: return "hybrid";
    case Mode::local_only: return "local_only";
    case Mode::global_only: return "global_only";
  }
  throw ValueError("mode_to_string: unknown mode");
}

Mode mode_from_string(const std::string& s) {
  if (s == "hybrid") return Mode::hybrid;
  if (s == "local_only") return Mode::local_only;
  if (s == "global_only") return Mode::global_only;
  throw ConfigError("unknown mode '" + s +
                    "' (expected hybrid, local_only or global_only)");
}

void HmflowConfig::validate() const {
  if (levels < 2)
    throw ConfigError("HmflowConfig: need at least 2 levels");
  if (static_cast<int>(feature_channels.size()) != levels)
    throw ConfigError("HmflowConfig: " +
                      std::to_string(feature_channels.size()) +
                      " channel counts for " + std::to_string(levels) +
                      " levels");
  for (int c : feature_channels)
    if (c <= 0) throw ConfigError("HmflowConfig: channel counts must be > 0");
  if (radius < 1) throw ConfigError("HmflowConfig: radius must be >= 1");
  if (finest_level < 1 || finest_level > levels)
    throw ConfigError("HmflowConfig: finest_level " +
                      std::to_string(finest_level) + " outside 1.." +
                      std::to_string(levels));
  if (estimator_widths.empty())
    throw ConfigError("HmflowConfig: estimator_widths empty");
  for (int w : estimator_widths)
    if (w <= 0) throw ConfigError("HmflowConfig: estimator widths must be > 0");
  if (input_channels <= 0)
    throw ConfigError("HmflowConfig: input_channels must be > 0");
}

PyramidConfig HmflowConfig::pyramid_config() const {
  PyramidConfig p;
  p.levels = levels;
  p.channels = feature_channels;
  p.input_channels = input_channels;
  return p;
}

GmcConfig HmflowConfig::gmc_config() const {
  GmcConfig gmc;
  gmc.levels = levels;
  gmc.channels = feature_channels;
  gmc.input_channels = 2 * input_channels;
  gmc.min_decode_level = finest_level;
  gmc.detach_flow_into_gmc = detach_flow_into_gmc;
  return gmc;
}

int HmflowConfig::channels_at(int level) const {
  if (level < 1 || level > levels)
    throw ConfigError("HmflowConfig: level out of range");
  return feature_channels[level - 1];
}

int HmflowConfig::matching_channels(int level) const {
  switch (mode) {
    case Mode::hybrid: return channels_at(level) + local_match_channels();
    case Mode::local_only: return local_match_channels();
    case Mode::global_only: return channels_at(level);
  }
  throw ValueError("matching_channels: unknown mode");
}

int HmflowConfig::unmatching_channels(int level) const {
  return channels_at(level) + 2;
}

nlohmann::json HmflowConfig::to_json() const {
  return nlohmann::json{{"mode", mode_to_string(mode)},
                        {"levels", levels},
                        {"radius", radius},
                        {"finest_level", finest_level},
                        {"estimator_widths", estimator_widths},
                        {"feature_channels", feature_channels},
                        {"input_channels", input_channels},
                        {"detach_flow_into_gmc", detach_flow_into_gmc}};
}

HmflowConfig HmflowConfig::from_json(const nlohmann::json& j) {
  HmflowConfig cfg;  // missing keys keep their defaults
  if (j.contains("mode"))
    cfg.mode = mode_from_string(j.at("mode").get<std::string>());
  cfg.levels = j.value("levels", cfg.levels);
  cfg.radius = j.value("radius", cfg.radius);
  cfg.finest_level = j.value("finest_level", cfg.finest_level);
  cfg.estimator_widths = j.value("estimator_widths", cfg.estimator_widths);
  cfg.feature_channels = j.value("feature_channels", cfg.feature_channels);
  cfg.input_channels = j.value("input_channels", cfg.input_channels);
  cfg.detach_flow_into_gmc =
      j.value("detach_flow_into_gmc", cfg.detach_flow_into_gmc);
  cfg.validate();
  return cfg;
}

std::pair<Value, Value> local_matching(Graph& g, Value f1, Value f2,
                                       Value flow_up, int radius) {
  Value warped = warp(g, f2, flow_up);
  Value m_local = cost_volume(g, f1, warped, radius);
  Value u = concat_channels(g, {f1, flow_up});
  return {m_local, u};
}

Value hybrid_concat(Graph& g, Value m_global, Value m_local) {
  const Tensor& a = g.value(m_global);
  const Tensor& b = g.value(m_local);
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw ShapeError("hybrid_concat: spatial sizes differ");
  return concat_channels(g, {m_global, m_local});
}

Value estimate_level(Graph& g, const HmflowConfig& cfg, ParamLeaves& params,
                     int level, Value m, Value u) {
  const Tensor& mv = g.value(m);
  const Tensor& uv = g.value(u);
  if (mv.dim(1) != uv.dim(1) || mv.dim(2) != uv.dim(2))
    throw ShapeError("estimate_level: matching/unmatching spatial mismatch");

  // densely connected stack: layer k sees the input and all previous
  // layer outputs; the head consumes the final concatenation
  Value dense = concat_channels(g, {m, u});
  for (std::size_t k = 0; k < cfg.estimator_widths.size(); ++k) {
    Value out = leaky_relu(
        g, apply_conv(g, params, est_name(level, static_cast<int>(k) + 1),
                      dense, /*stride=*/1));
    dense = concat_channels(g, {dense, out});
  }
  return apply_conv(g, params, est_head_name(level), dense, /*stride=*/1);
}

namespace {

void declare_estimator(const HmflowConfig& cfg, ParamStore& store, int level) {
  int in = cfg.matching_channels(level) + cfg.unmatching_channels(level);
  for (std::size_t k = 0; k < cfg.estimator_widths.size(); ++k) {
    declare_conv(store, est_name(level, static_cast<int>(k) + 1), in,
                 cfg.estimator_widths[k], 3);
    in += cfg.estimator_widths[k];
  }
  declare_conv(store, est_head_name(level), in, 2, 3);
}

std::int64_t count_estimator(const HmflowConfig& cfg, int level) {
  std::int64_t total = 0;
  int in = cfg.matching_channels(level) + cfg.unmatching_channels(level);
  for (int w : cfg.estimator_widths) {
    total += conv_param_count(in, w, 3);
    in += w;
  }
  return total + conv_param_count(in, 2, 3);
}

}  // namespace

void declare_hmflow_params(const HmflowConfig& cfg, ParamStore& params) {
  cfg.validate();
  declare_pyramid_params(cfg.pyramid_config(), params);
  if (cfg.uses_gmc()) declare_gmc_params(cfg.gmc_config(), params);
  for (int l = cfg.levels; l >= cfg.finest_level; --l)
    declare_estimator(cfg, params, l);
}

std::int64_t count_hmflow_params(const HmflowConfig& cfg) {
  cfg.validate();
  std::int64_t total = count_pyramid_params(cfg.pyramid_config());
  if (cfg.uses_gmc()) total += count_gmc_params(cfg.gmc_config());
  for (int l = cfg.levels; l >= cfg.finest_level; --l)
    total += count_estimator(cfg, l);
  return total;
}

ForwardFlows hmflow_forward(Graph& g, const HmflowConfig& cfg,
                            ParamLeaves& params, Value i1, Value i2) {
  cfg.validate();
  const PyramidConfig pyr_cfg = cfg.pyramid_config();
  std::vector<Value> f1 = extract_pyramid(g, i1, pyr_cfg, params);
  // image-2 features feed the cost volume only; the global branch reads
  // the raw pair through its own encoder
  std::vector<Value> f2;
  if (cfg.uses_local()) f2 = extract_pyramid(g, i2, pyr_cfg, params);

  const GmcConfig gmc_cfg = cfg.gmc_config();
  GmcEncoderState enc;
  Value m_global;
  if (cfg.uses_gmc()) {
    enc = gmc_encode(g, i1, i2, gmc_cfg, params);
    m_global = gmc_decode_top(g, enc, gmc_cfg, params);
  }

  ForwardFlows flows;
  Value flow_up;  // f^l_UP, zero at the top level
  for (int l = cfg.levels; l >= cfg.finest_level; --l) {
    const Tensor& ref = g.value(f1[l - 1]);
    if (l == cfg.levels) {
      flow_up = g.constant(Tensor({2, ref.dim(1), ref.dim(2)}));
    } else {
      flow_up = upsample_flow_2x(g, flows.per_level.at(l + 1));
      if (cfg.uses_gmc())
        m_global = gmc_decode_step(g, l, m_global, enc.skip_b[l - 1], flow_up,
                                   gmc_cfg, params);
    }

    MatchingBundle bundle;
    bundle.level = l;
    if (cfg.uses_local()) {
      auto [m_local, u] = local_matching(g, f1[l - 1], f2[l - 1], flow_up,
                                         cfg.radius);
      bundle.m_local = m_local;
      bundle.u = u;
    } else {
      bundle.u = concat_channels(g, {f1[l - 1], flow_up});
    }
    if (cfg.uses_gmc()) bundle.m_global = m_global;

    Value m;
    switch (cfg.mode) {
      case Mode::hybrid:
        bundle.m_hybrid = hybrid_concat(g, bundle.m_global, bundle.m_local);
        m = bundle.m_hybrid;
        break;
      case Mode::local_only: m = bundle.m_local; break;
      case Mode::global_only: m = bundle.m_global; break;
    }
    flows.per_level[l] = estimate_level(g, cfg, params, l, m, bundle.u);
  }

  Value full = flows.per_level.at(cfg.finest_level);
  for (int i = 0; i < cfg.finest_level; ++i) full = upsample_flow_2x(g, full);
  flows.final_flow = full;
  return flows;
}

HmflowModel::HmflowModel(HmflowConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)) {
  declare_hmflow_params(cfg_, params_);
  params_.init_random(init_seed);
}

MultiScaleFlows HmflowModel::infer(const Tensor& i1, const Tensor& i2) const {
  Graph g;
  ParamLeaves leaves(g, params_, /*tracked=*/false);
  ForwardFlows out = hmflow_forward(g, cfg_, leaves, g.constant(i1),
                                    g.constant(i2));
  MultiScaleFlows result;
  result.finest_level = cfg_.finest_level;
  for (const auto& [l, v] : out.per_level)
    result.per_level.emplace(l, FlowField::from_tensor(g.value(v)));
  result.final_flow = FlowField::from_tensor(g.value(out.final_flow));
  return result;
}

}  // namespace hmflow
