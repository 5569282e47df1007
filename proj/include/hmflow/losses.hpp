#pragma once

#include <map>

#include <json.hpp>

#include "hmflow/c2f.hpp"

namespace hmflow {

enum class LossMode { multiscale_l2, robust };

std::string loss_mode_to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);

/// Training-objective settings. alpha maps a pyramid level to its term
/// weight; gamma is the decay coefficient applied as gamma * sum(theta^2)
/// inside the loss; epsilon and q shape the robust penalty.
struct LossConfig {
  LossMode mode = LossMode::multiscale_l2;
  std::map<int, double> alpha = {
      {2, 0.005}, {3, 0.01}, {4, 0.02}, {5, 0.08}, {6, 0.32}};
  double gamma = 0.0004;
  double epsilon = 0.01;
  double q = 0.4;

  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);

  /// The published per-level weights re-anchored at the coarsest level:
  /// alpha(L) = 0.32, alpha(L-1) = 0.08, then 0.02, 0.01, 0.005. Lets
  /// smaller pyramids keep the same coarse-to-fine weighting pattern.
  static std::map<int, double> anchored_alphas(int levels, int finest_level);
};

/// w^l_GT: average-pool the full-resolution field by 2^level and scale
/// the vectors by 1/2^level. level = 0 is the identity.
FlowField downsample_gt(const FlowField& gt, int level);

// Per-level penalty terms (target enters as data, not as a graph node).
Value flow_loss_l2(Graph& g, Value pred, const Tensor& target);
Value flow_loss_l1(Graph& g, Value pred, const Tensor& target);
Value flow_loss_robust(Graph& g, Value pred, const Tensor& target,
                       double epsilon, double q);

/// Sum of alpha_l * sum_x |pred_l(x) - gt_l(x)|_2 over supervised levels
/// plus gamma * sum(theta^2) over every parameter in the store.
Value multiscale_loss(Graph& g, const ForwardFlows& preds, const FlowField& gt,
                      ParamLeaves& params, const LossConfig& cfg);

/// Sum of alpha_l * sum_x (|pred_l(x) - gt_l(x)|_1 + epsilon)^q plus the
/// same decay term.
Value robust_loss(Graph& g, const ForwardFlows& preds, const FlowField& gt,
                  ParamLeaves& params, const LossConfig& cfg);

/// Dispatches on cfg.mode.
Value training_loss(Graph& g, const ForwardFlows& preds, const FlowField& gt,
                    ParamLeaves& params, const LossConfig& cfg);

}  // namespace hmflow
