#pragma once

#include <vector>

#include "hmflow/nn.hpp"

namespace hmflow {

/// Layout of the Siamese feature extractor: L levels, c_l output channels
/// at level l (spatial size input / 2^l).
struct PyramidConfig {
  int levels = 6;
  std::vector<int> channels = {16, 32, 64, 96, 128, 196};
  int input_channels = 3;

  void validate() const;
  int channels_at(int level) const;  // level is 1-based
};

/// Registers the extractor's parameters (two 3x3 convolutions per level,
/// the first with stride 2) under "pyramid.l<l>.conv<1|2>.{w,b}".
void declare_pyramid_params(const PyramidConfig& cfg, ParamStore& params);

/// Exact number of scalars declared by declare_pyramid_params.
std::int64_t count_pyramid_params(const PyramidConfig& cfg);

/// Runs the extractor on a {C, H, W} image node. Returns F^1..F^L
/// (index 0 holds F^1). The same ParamStore serves both images of a
/// pair — that sharing is the Siamese contract.
std::vector<Value> extract_pyramid(Graph& g, Value image,
                                   const PyramidConfig& cfg,
                                   ParamLeaves& params);

}  // namespace hmflow
