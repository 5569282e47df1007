#include "hmflow/pyramid.hpp"

#include <string>

namespace hmflow {

namespace {

std::string level_name(int l, int which) {
  return "pyramid.l" + std::to_string(l) + ".conv" + std::to_string(which);
}

}  // namespace

void PyramidConfig::validate() const {
  if (levels < 2)
    throw ConfigError("PyramidConfig: need at least 2 levels, got " +
                      std::to_string(levels));
  if (static_cast<int>(channels.size()) != levels)
    throw ConfigError("PyramidConfig: " + std::to_string(channels.size()) +
                      " channel counts for " + std::to_string(levels) +
                      " levels");
  for (int c : channels)
    if (c <= 0) throw ConfigError("PyramidConfig: channel counts must be > 0");
  if (input_channels <= 0)
    throw ConfigError("PyramidConfig: input_channels must be > 0");
}

int PyramidConfig::channels_at(int level) const {
  if (level < 1 || level > levels)
    throw ConfigError("PyramidConfig: level " + std::to_string(level) +
                      " out of range 1.." + std::to_string(levels));
  return channels[level - 1];
}

void declare_pyramid_params(const PyramidConfig& cfg, ParamStore& params) {
  cfg.validate();
  int in = cfg.input_channels;
  for (int l = 1; l <= cfg.levels; ++l) {
    const int out = cfg.channels_at(l);
    declare_conv(params, level_name(l, 1), in, out, 3);
    declare_conv(params, level_name(l, 2), out, out, 3);
    in = out;
  }
}

std::int64_t count_pyramid_params(const PyramidConfig& cfg) {
  if (cfg.levels == 0) return 0;
  cfg.validate();
  std::int64_t total = 0;
  int in = cfg.input_channels;
  for (int l = 1; l <= cfg.levels; ++l) {
    const int out = cfg.channels_at(l);
    total += conv_param_count(in, out, 3) + conv_param_count(out, out, 3);
    in = out;
  }
  return total;
}

std::vector<Value> extract_pyramid(Graph& g, Value image,
                                   const PyramidConfig& cfg,
                                   ParamLeaves& params) {
  cfg.validate();
  const Tensor& img = g.value(image);
  if (img.rank() != 3 || img.dim(0) != cfg.input_channels)
    throw ShapeError("extract_pyramid: expected {" +
                     std::to_string(cfg.input_channels) + ", H, W} input");
  const int div = 1 << cfg.levels;
  if (img.dim(1) % div != 0 || img.dim(2) % div != 0)
    throw ShapeError("extract_pyramid: input " + std::to_string(img.dim(2)) +
                     "x" + std::to_string(img.dim(1)) +
                     " not divisible by 2^" + std::to_string(cfg.levels));

  std::vector<Value> levels;
  levels.reserve(cfg.levels);
  Value x = image;
  for (int l = 1; l <= cfg.levels; ++l) {
    x = leaky_relu(g, apply_conv(g, params, level_name(l, 1), x, /*stride=*/2));
    x = leaky_relu(g, apply_conv(g, params, level_name(l, 2), x, /*stride=*/1));
    levels.push_back(x);
  }
  return levels;
}

}  // namespace hmflow
