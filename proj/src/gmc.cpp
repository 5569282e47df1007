#include "hmflow/gmc.hpp"

#include <algorithm>
#include <string>

namespace hmflow {

namespace {

std::string enc_name(int l, char which) {
  return "gmc.conv" + std::to_string(l) + std::string(1, which);
}
std::string deconv_name(int l) { return "gmc.deconv" + std::to_string(l); }
std::string match_name(int l) { return "gmc.match" + std::to_string(l); }

}  // namespace

void GmcConfig::validate() const {
  if (levels < 2)
    throw ConfigError("GmcConfig: need at least 2 levels, got " +
                      std::to_string(levels));
  if (static_cast<int>(channels.size()) != levels)
    throw ConfigError("GmcConfig: " + std::to_string(channels.size()) +
                      " channel counts for " + std::to_string(levels) +
                      " levels");
  for (int c : channels)
    if (c <= 0) throw ConfigError("GmcConfig: channel counts must be > 0");
  if (input_channels <= 0)
    throw ConfigError("GmcConfig: input_channels must be > 0");
  if (min_decode_level < 1 || min_decode_level > levels)
    throw ConfigError("GmcConfig: min_decode_level " +
                      std::to_string(min_decode_level) +
                      " outside 1.." + std::to_string(levels));
}

int GmcConfig::channels_at(int level) const {
  if (level < 1 || level > levels)
    throw ConfigError("GmcConfig: level " + std::to_string(level) +
                      " out of range 1.." + std::to_string(levels));
  return channels[level - 1];
}

void declare_gmc_params(const GmcConfig& cfg, ParamStore& params) {
  cfg.validate();
  int in = cfg.input_channels;
  for (int l = 1; l < cfg.levels; ++l) {
    const int out = cfg.channels_at(l);
    const int k = GmcConfig::kernel_at(l);
    declare_conv(params, enc_name(l, 'a'), in, out, k);
    declare_conv(params, enc_name(l, 'b'), out, out, k);
    in = out;
  }
  declare_conv(params, enc_name(cfg.levels, 'a'), in,
               cfg.channels_at(cfg.levels), GmcConfig::kernel_at(cfg.levels));

  declare_conv(params, match_name(cfg.levels), cfg.channels_at(cfg.levels),
               cfg.channels_at(cfg.levels), 3);
  for (int l = cfg.levels - 1; l >= cfg.min_decode_level; --l) {
    declare_deconv(params, deconv_name(l), cfg.channels_at(l + 1),
                   cfg.channels_at(l));
    declare_conv(params, match_name(l), 2 * cfg.channels_at(l) + 2,
                 cfg.channels_at(l), 3);
  }
}

std::int64_t count_gmc_params(const GmcConfig& cfg) {
  cfg.validate();
  std::int64_t total = 0;
  int in = cfg.input_channels;
  for (int l = 1; l < cfg.levels; ++l) {
    const int out = cfg.channels_at(l);
    const int k = GmcConfig::kernel_at(l);
    total += conv_param_count(in, out, k) + conv_param_count(out, out, k);
    in = out;
  }
  total += conv_param_count(in, cfg.channels_at(cfg.levels),
                            GmcConfig::kernel_at(cfg.levels));
  total += conv_param_count(cfg.channels_at(cfg.levels),
                            cfg.channels_at(cfg.levels), 3);
  for (int l = cfg.levels - 1; l >= cfg.min_decode_level; --l) {
    total += conv_param_count(cfg.channels_at(l + 1), cfg.channels_at(l), 4);
    total += conv_param_count(2 * cfg.channels_at(l) + 2, cfg.channels_at(l), 3);
  }
  return total;
}

GmcEncoderState gmc_encode(Graph& g, Value i1, Value i2, const GmcConfig& cfg,
                           ParamLeaves& params) {
  cfg.validate();
  const Tensor& a = g.value(i1);
  const Tensor& b = g.value(i2);
  if (!a.same_shape(b))
    throw ShapeError("gmc_encode: image pair shapes differ");
  if (a.rank() != 3 || a.dim(0) * 2 != cfg.input_channels)
    throw ShapeError("gmc_encode: expected two {" +
                     std::to_string(cfg.input_channels / 2) + ", H, W} images");
  const int div = 1 << cfg.levels;
  if (a.dim(1) % div != 0 || a.dim(2) % div != 0)
    throw ShapeError("gmc_encode: input " + std::to_string(a.dim(2)) + "x" +
                     std::to_string(a.dim(1)) + " not divisible by 2^" +
                     std::to_string(cfg.levels));

  GmcEncoderState state;
  Value x = concat_channels(g, {i1, i2});
  for (int l = 1; l < cfg.levels; ++l) {
    x = leaky_relu(g, apply_conv(g, params, enc_name(l, 'a'), x, /*stride=*/2));
    x = leaky_relu(g, apply_conv(g, params, enc_name(l, 'b'), x, /*stride=*/1));
    state.skip_b.push_back(x);
  }
  state.bottleneck = leaky_relu(
      g, apply_conv(g, params, enc_name(cfg.levels, 'a'), x, /*stride=*/2));
  return state;
}

Value gmc_decode_top(Graph& g, const GmcEncoderState& state,
                     const GmcConfig& cfg, ParamLeaves& params) {
  return leaky_relu(g, apply_conv(g, params, match_name(cfg.levels),
                                  state.bottleneck, /*stride=*/1));
}

Value gmc_decode_step(Graph& g, int level, Value m_coarser, Value skip_b,
                      Value flow_up, const GmcConfig& cfg,
                      ParamLeaves& params) {
  if (level < cfg.min_decode_level || level >= cfg.levels)
    throw ConfigError("gmc_decode_step: level " + std::to_string(level) +
                      " outside decode range");
  Value d = leaky_relu(g, apply_deconv(g, params, deconv_name(level),
                                       m_coarser));
  const Tensor& dv = g.value(d);
  const Tensor& sv = g.value(skip_b);
  const Tensor& fv = g.value(flow_up);
  if (dv.dim(1) != sv.dim(1) || dv.dim(2) != sv.dim(2) ||
      dv.dim(1) != fv.dim(1) || dv.dim(2) != fv.dim(2))
    throw ShapeError("gmc_decode_step: spatial mismatch among d, skip, flow");
  if (fv.dim(0) != 2)
    throw ShapeError("gmc_decode_step: flow input must have 2 channels");
  if (cfg.detach_flow_into_gmc) flow_up = detach(g, flow_up);
  Value cat = concat_channels(g, {d, skip_b, flow_up});
  return leaky_relu(
      g, apply_conv(g, params, match_name(level), cat, /*stride=*/1));
}

std::int64_t gmc_receptive_field(const GmcConfig& cfg, int level) {
  cfg.validate();
  if (level < 1 || level > cfg.levels)
    throw ConfigError("gmc_receptive_field: level out of range");

  // encoder: record (rf, jump) of every c^l_B and of the bottleneck
  std::int64_t rf = 1, jump = 1;
  std::vector<std::int64_t> skip_rf(cfg.levels + 1, 0);
  for (int l = 1; l < cfg.levels; ++l) {
    const int k = GmcConfig::kernel_at(l);
    rf += static_cast<std::int64_t>(k - 1) * jump;  // Conv-lA
    jump *= 2;
    rf += static_cast<std::int64_t>(k - 1) * jump;  // Conv-lB
    skip_rf[l] = rf;
  }
  rf += static_cast<std::int64_t>(GmcConfig::kernel_at(cfg.levels) - 1) * jump;
  jump *= 2;  // Conv-LA

  rf += 2 * jump;  // Match-LA, 3x3 at the bottleneck
  if (level == cfg.levels) return rf;

  for (int l = cfg.levels - 1; l >= level; --l) {
    rf += jump;   // Deconv-l: two adjacent coarse units per axis
    jump /= 2;
    rf = std::max(rf, skip_rf[l]);  // skip path joins at the concat
    rf += 2 * jump;                 // Match-l, 3x3
  }
  return rf;
}

}  // namespace hmflow
