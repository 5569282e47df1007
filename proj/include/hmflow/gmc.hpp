#pragma once

#include <vector>

#include "hmflow/nn.hpp"

namespace hmflow {

/// Global matching component: a small U-Net over the concatenated image
/// pair. The encoder halves resolution per level (Conv-lA stride 2,
/// Conv-lB stride 1; 7x7 kernels at level 1, 5x5 at level 2, 3x3 above,
/// only Conv-LA at the top). The decoder emits matching features m^l_G,
/// each Match layer conditioned on the estimator's upsampled flow.
struct GmcConfig {
  int levels = 6;
  std::vector<int> channels = {16, 32, 64, 96, 128, 196};
  int input_channels = 6;     // two RGB images, channel-concatenated
  int min_decode_level = 2;   // finest level the decoder produces
  bool detach_flow_into_gmc = false;

  void validate() const;
  int channels_at(int level) const;   // 1-based
  static int kernel_at(int level) { return level == 1 ? 7 : level == 2 ? 5 : 3; }
};

/// Encoder outputs: skip features c^1_B .. c^{L-1}_B plus the bottleneck
/// c^L (which has no B convolution).
struct GmcEncoderState {
  std::vector<Value> skip_b;  // skip_b[l-1] = c^l_B, l = 1..L-1
  Value bottleneck;           // c^L
};

void declare_gmc_params(const GmcConfig& cfg, ParamStore& params);
std::int64_t count_gmc_params(const GmcConfig& cfg);

/// Runs the encoder on an image pair ({3, H, W} each, H and W divisible
/// by 2^L).
GmcEncoderState gmc_encode(Graph& g, Value i1, Value i2, const GmcConfig& cfg,
                           ParamLeaves& params);

/// Match-LA on the bottleneck: m^L_G, c_L channels at 1/2^L.
Value gmc_decode_top(Graph& g, const GmcEncoderState& state,
                     const GmcConfig& cfg, ParamLeaves& params);

/// One decoder stage: d^l = deconv(m^{l+1}_G), then
/// m^l_G = Match-l(d^l || c^l_B || f^l_up). All three share spatial size
/// 1/2^l. Differentiable in every input; flow gradients can be cut with
/// cfg.detach_flow_into_gmc.
Value gmc_decode_step(Graph& g, int level, Value m_coarser, Value skip_b,
                      Value flow_up, const GmcConfig& cfg,
                      ParamLeaves& params);

/// Theoretical receptive field (input pixels, one axis) of m^l_G, by the
/// usual recurrence rf += (k-1)*jump, jump *= stride through the encoder,
/// then back up the decoder taking the max of deep and skip paths.
std::int64_t gmc_receptive_field(const GmcConfig& cfg, int level);

}  // namespace hmflow
