#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hmflow/errors.hpp"
#include "hmflow/image.hpp"
#include "hmflow/tensor.hpp"

namespace hmflow {

/// Dense 2-D displacement field in pixels at its own resolution.
/// u is the horizontal component, v the vertical one; storage is
/// 32-bit float, (u, v) interleaved, row-major — the `.flo` layout.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  FlowField() = default;
  FlowField(int w, int h);

  float& u(int y, int x) { return data[idx(y, x)]; }
  float& v(int y, int x) { return data[idx(y, x) + 1]; }
  float u(int y, int x) const { return data[idx(y, x)]; }
  float v(int y, int x) const { return data[idx(y, x) + 1]; }

  bool all_finite() const;

  /// Conversion to/from the {2, H, W} double tensors used by the network.
  static FlowField from_tensor(const Tensor& t);
  Tensor to_tensor() const;

 private:
  std::size_t idx(int y, int x) const {
    return 2 * (static_cast<std::size_t>(y) * width + x);
  }
};

/// Boolean pixel mask with a region label: "background" or "object-<k>".
struct RegionMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;
  std::string label;

  RegionMask() = default;
  RegionMask(int w, int h, std::string lbl);

  bool at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x] != 0;
  }
  void set(int y, int x, bool on) {
    data[static_cast<std::size_t>(y) * width + x] = on ? 1 : 0;
  }
  std::int64_t count() const;
  bool is_background() const { return label == "background"; }
  /// Parses the trailing integer of an "object-<k>" label (-1 for background).
  int object_id() const;
};

std::string make_object_label(int k);

/// Region-resolved endpoint-error summary (the usual All / Background /
/// Objects table row, plus per-object detail).
struct EvalReport {
  double aee_all = 0.0;
  double aee_bg = 0.0;
  double aee_obj = 0.0;
  std::vector<std::pair<int, double>> per_object;
  std::map<std::string, std::int64_t> pixel_counts;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// ---- Middlebury .flo container ----
// 4-byte float tag 202021.25, then int32 width, int32 height, then
// height*width*2 little-endian float32, (u, v) interleaved, row-major.

FlowField read_flo(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> write_flo(const FlowField& flow);
FlowField read_flo_file(const std::string& path);
void write_flo_file(const FlowField& flow, const std::string& path);

/// Color-codes a flow field with the 55-bin Middlebury color wheel:
/// white at zero motion, hue from direction, saturation from magnitude
/// clipped at max_magnitude. Pass max_magnitude <= 0 to use the field's
/// 99th-percentile magnitude.
Image flow_to_color(const FlowField& flow, double max_magnitude = 0.0);

/// Average endpoint error over all pixels / over a mask's pixels.
double aee(const FlowField& pred, const FlowField& gt);
double aee(const FlowField& pred, const FlowField& gt, const RegionMask& mask);

/// Builds the region table from a mask partition (one background mask plus
/// the object masks; together they must cover each pixel exactly once).
EvalReport region_report(const FlowField& pred, const FlowField& gt,
                         const std::vector<RegionMask>& masks);

}  // namespace hmflow
