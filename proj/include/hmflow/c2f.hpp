#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hmflow/flowio.hpp"
#include "hmflow/gmc.hpp"
#include "hmflow/ops.hpp"
#include "hmflow/pyramid.hpp"

namespace hmflow {

/// hybrid: global || local matching features; local_only: the plain
/// coarse-to-fine baseline; global_only: global features with warping and
/// cost volumes removed entirely (the -G ablation).
enum class Mode { hybrid, local_only, global_only };

std::string mode_to_string(Mode m);
Mode mode_from_string(const std::string& s);

/// Complete model layout. The pyramid and global-matching configurations
/// are derived from these fields, which keeps their level/channel
/// settings consistent by construction.
struct HmflowConfig {
  Mode mode = Mode::hybrid;
  int levels = 6;        // L: coarsest pyramid level
  int radius = 4;        // local search radius r (pixels at each level)
  int finest_level = 2;  // l0: finest level with an estimator
  std::vector<int> estimator_widths = {128, 128, 96, 64, 32};
  std::vector<int> feature_channels = {16, 32, 64, 96, 128, 196};
  int input_channels = 3;
  bool detach_flow_into_gmc = false;

  void validate() const;
  PyramidConfig pyramid_config() const;
  GmcConfig gmc_config() const;

  bool uses_gmc() const { return mode != Mode::local_only; }
  bool uses_local() const { return mode != Mode::global_only; }
  int channels_at(int level) const;
  int local_match_channels() const {
    return (2 * radius + 1) * (2 * radius + 1);
  }
  int matching_channels(int level) const;
  int unmatching_channels(int level) const;

  nlohmann::json to_json() const;
  static HmflowConfig from_json(const nlohmann::json& j);
};

/// Per-level matching state (inputs of one estimator stage).
struct MatchingBundle {
  int level = 0;
  Value m_local;   // (2r+1)^2 channels, invalid in global_only mode
  Value m_global;  // c_l channels, invalid in local_only mode
  Value m_hybrid;  // m_global || m_local, hybrid mode only
  Value u;         // unmatching features F1 || f_up
};

/// Flow estimates as graph nodes, per level plus the upsampled
/// full-resolution field.
struct ForwardFlows {
  std::map<int, Value> per_level;  // keys finest_level..levels
  Value final_flow;
};

/// Flow estimates as plain flow fields (inference output).
struct MultiScaleFlows {
  int finest_level = 0;
  std::map<int, FlowField> per_level;
  FlowField final_flow;
};

/// m_local = cost_volume(F1, warp(F2, f_up), r); u = F1 || f_up.
/// At the top level callers pass a zero flow.
std::pair<Value, Value> local_matching(Graph& g, Value f1, Value f2,
                                       Value flow_up, int radius);

/// Channel concatenation m_G || m_local (order fixed: global first).
Value hybrid_concat(Graph& g, Value m_global, Value m_local);

/// The rectified estimator at one level: a densely connected stack of
/// 3x3 convolutions (each layer consumes the input plus every previous
/// layer's output) followed by a linear 2-channel head. Emits the
/// absolute flow at that level, not a residual.
Value estimate_level(Graph& g, const HmflowConfig& cfg, ParamLeaves& params,
                     int level, Value m, Value u);

void declare_hmflow_params(const HmflowConfig& cfg, ParamStore& params);
std::int64_t count_hmflow_params(const HmflowConfig& cfg);

/// Full forward pass over an image pair ({C, H, W} nodes, spatial size
/// divisible by 2^L). Runs the mode-specific pipeline: coarse-to-fine
/// estimation with the global decoder staged level by level so each
/// Match layer sees the freshly upsampled flow.
ForwardFlows hmflow_forward(Graph& g, const HmflowConfig& cfg,
                            ParamLeaves& params, Value i1, Value i2);

/// Owns configuration plus weights; thin convenience wrapper.
class HmflowModel {
 public:
  explicit HmflowModel(HmflowConfig cfg, std::uint64_t init_seed = 0x5eed);

  const HmflowConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  ForwardFlows forward(Graph& g, ParamLeaves& leaves, Value i1,
                       Value i2) const {
    return hmflow_forward(g, cfg_, leaves, i1, i2);
  }

  /// Untracked forward from plain tensors.
  MultiScaleFlows infer(const Tensor& i1, const Tensor& i2) const;

 private:
  HmflowConfig cfg_;
  ParamStore params_;
};

}  // namespace hmflow
