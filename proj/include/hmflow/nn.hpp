#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hmflow/graph.hpp"

namespace hmflow {

// ---- differentiable layers -------------------------------------------------
//
// Shapes: activations {C,H,W}; conv weights {Cout,Cin,K,K}; transposed-conv
// weights {Cin,Cout,K,K}; biases {C}. Odd kernels use pad = (K-1)/2 so
// stride 1 preserves the spatial size and stride 2 halves it exactly for
// even inputs.

Value conv2d(Graph& g, Value x, Value w, Value b, int stride);
Value deconv2d(Graph& g, Value x, Value w, Value b);  // kernel 4, stride 2, pad 1
Value leaky_relu(Graph& g, Value x, double slope = 0.1);
Value concat_channels(Graph& g, const std::vector<Value>& parts);

// ---- parameters ------------------------------------------------------------

inline std::int64_t conv_param_count(int in_ch, int out_ch, int kernel) {
  return static_cast<std::int64_t>(out_ch) * in_ch * kernel * kernel + out_ch;
}

// Named parameter arrays in registration order. Registration order is the
// initialization and serialization order, so it must be deterministic for a
// given config.
class ParamStore {
 public:
  Tensor& declare(const std::string& name, std::vector<int> shape);
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::int64_t total_parameters() const;

  // He-normal weights (rank >= 2, fan-in from dims 1..), zero biases.
  void init_random(std::uint64_t seed, double leaky_slope = 0.1);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> tensors_;
};

// Per-graph leaf nodes for a ParamStore. Each parameter is materialized at
// most once per graph; touched() lists what the forward actually used.
class ParamLeaves {
 public:
  ParamLeaves(Graph& g, const ParamStore& store, bool track = true)
      : g_(&g), store_(&store), track_(track) {}

  Value operator()(const std::string& name);
  const std::vector<std::pair<std::string, Value>>& touched() const {
    return touched_;
  }
  const ParamStore& store() const { return *store_; }

 private:
  Graph* g_;
  const ParamStore* store_;
  bool track_;
  std::unordered_map<std::string, Value> cache_;
  std::vector<std::pair<std::string, Value>> touched_;
};

// declare + apply helpers for the conv/deconv + leaky-rectifier blocks the
// networks are assembled from.
void declare_conv(ParamStore& s, const std::string& prefix, int in_ch, int out_ch,
                  int kernel);
void declare_deconv(ParamStore& s, const std::string& prefix, int in_ch,
                    int out_ch, int kernel = 4);
Value apply_conv(Graph& g, ParamLeaves& p, const std::string& prefix, Value x,
                 int stride);
Value apply_deconv(Graph& g, ParamLeaves& p, const std::string& prefix, Value x);

}  // namespace hmflow
