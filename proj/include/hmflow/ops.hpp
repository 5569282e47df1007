#pragma once

#include <cstdint>

#include "hmflow/graph.hpp"

namespace hmflow {

// Flow convention used everywhere: flow(x) points from an image-1 pixel x to
// its correspondence in image 2, so image-2 features are backward-warped.
// Flow tensors are {2,H,W} with channel 0 = u (horizontal), 1 = v (vertical),
// in pixels at the tensor's own resolution.

// Bilinear backward warp. Samples falling outside the source rectangle
// contribute zero. Differentiable in both the source values and the flow.
Value warp(Graph& g, Value source, Value flow);

// Partial cost volume: output has (2r+1)^2 channels; channel
// (dy+r)*(2r+1)+(dx+r) holds (1/C) * sum_c f1_c(x) * f2w_c(x+d) with
// out-of-bounds positions contributing zero.
Value cost_volume(Graph& g, Value f1, Value f2_warped, int radius);

// Doubles the spatial size bilinearly and doubles the values (pixel units
// rescale with resolution).
Value upsample_flow_2x(Graph& g, Value flow);

// Plain-tensor variants of the forward kernels (used by the dataset
// validator and evaluation paths; no graph bookkeeping).
Tensor warp_tensor(const Tensor& source, const Tensor& flow);
Tensor upsample_flow_2x_tensor(const Tensor& flow);
Tensor avg_pool_2x(const Tensor& x);

// Search-range arithmetic for an r-pixel cost volume at pyramid level l:
// the covered range at full resolution is r * 2^l pixels.
std::int64_t search_range_full_res_px(int radius, int level);

// A one-pixel motion at the top level of an L-level pyramid spans 2^(L-1)
// pixels at full resolution.
std::int64_t top_level_pixel_span(int levels);

// Invocation counters for the matching kernels; used to assert that modes
// which must not touch a kernel really do not.
struct KernelStats {
  static thread_local std::uint64_t warp_calls;
  static thread_local std::uint64_t cost_volume_calls;
  static void reset();
};

}  // namespace hmflow
