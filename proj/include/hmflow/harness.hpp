#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hmflow/c2f.hpp"
#include "hmflow/losses.hpp"
#include "hmflow/sfchairs.hpp"

namespace hmflow {

// Experiment plumbing: a deterministic single-worker training loop with an
// adaptive-moment optimizer, region-resolved evaluation in the All/Bg/Obj
// table shape, input-saliency maps, and the three-mode ablation runner.

/// {3, H, W} tensor in [0, 1] from an 8-bit image (gray replicates).
Tensor tensor_from_image(const Image& img);

struct LrSchedule {
  /// Piecewise-constant (start_iteration, rate) stops; first stop must sit
  /// at iteration 0 and iterations must be strictly increasing.
  std::vector<std::pair<std::int64_t, double>> stops = {{0, 1e-4}};

  double rate_at(std::int64_t iteration) const;
  void validate() const;
  nlohmann::json to_json() const;
  static LrSchedule from_json(const nlohmann::json& j);
  /// Default mini-schedule: base rate halved at 50% and again at 75%.
  static LrSchedule halved_twice(std::int64_t iterations, double base = 1e-4);
};

struct TrainConfig {
  HmflowConfig model;
  LossConfig loss;
  std::string dataset_dir;
  std::string train_split = "train";
  std::string eval_split = "test";
  int batch_size = 8;
  std::int64_t iterations = 20000;
  LrSchedule schedule;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::int64_t eval_every = 0;        // 0: no mid-training evaluation
  int eval_samples = 0;               // 0: the whole eval split
  std::string device = "cpu";
  std::string out_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Adam with bias correction; parameters without a gradient entry are left
/// untouched (the regularizer keeps every used parameter in the graph, so
/// absence means the forward never consumed the tensor).
class Adam {
 public:
  explicit Adam(ParamStore& store, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);
  void step(const std::map<std::string, Tensor>& grads, double lr);
  std::int64_t steps() const { return t_; }

 private:
  ParamStore* store_;
  double beta1_, beta2_, epsilon_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct MetricsEntry {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  // negative when no evaluation ran at this entry
  double aee_all = -1.0, aee_bg = -1.0, aee_obj = -1.0;
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  std::vector<MetricsEntry> metrics;
  std::vector<double> loss_history;  // one entry per iteration
};

/// Runs the configured optimization. Writes line-delimited JSON metrics and
/// checkpoints under out_dir; a non-finite loss aborts with a diagnostic
/// snapshot (TrainingError). Bitwise-deterministic for a fixed config.
TrainResult train(const TrainConfig& cfg);

/// Pixel-weighted aggregate of region_report over a dataset split.
struct SplitReport {
  double aee_all = 0.0, aee_bg = 0.0, aee_obj = 0.0;
  std::int64_t pixels_all = 0, pixels_bg = 0, pixels_obj = 0;
  int samples = 0;
  nlohmann::json to_json() const;
};

using Predictor = std::function<FlowField(const SampleRecord&)>;

/// Evaluation against flow_fg with the sample's masks (plus the implied
/// background complement); `limit` > 0 caps the number of samples.
SplitReport evaluate_with(const Predictor& predict,
                          const std::string& dataset_dir,
                          const std::string& split, int limit = 0);
SplitReport evaluate(const HmflowConfig& model, const ParamStore& params,
                     const std::string& dataset_dir, const std::string& split,
                     int limit = 0);
SplitReport evaluate(const std::string& checkpoint_path,
                     const std::string& dataset_dir, const std::string& split,
                     int limit = 0);

struct SaliencyResult {
  Tensor map1, map2;  // {H, W} heat maps in [0, 1]
  double raw_max1 = 0.0, raw_max2 = 0.0;
  bool degenerate1 = false, degenerate2 = false;
};

/// Gradient of the region-restricted mean flow magnitude w.r.t. each input
/// image, reduced per pixel by the maximum over color channels and
/// normalized to [0, 1]. Empty regions raise DegenerateRegionError; an
/// (effectively) zero gradient is flagged degenerate instead of normalized.
SaliencyResult saliency_map(const HmflowConfig& model, const ParamStore& params,
                            const Image& i1, const Image& i2,
                            const RegionMask& region);

struct AblationRow {
  Mode mode = Mode::hybrid;
  SplitReport train_report, test_report;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Trains every mode with the same data, schedule and seed, evaluating each
/// on both splits. Runs land under base.out_dir/<mode>/.
AblationTable ablation_suite(const TrainConfig& base,
                             const std::vector<Mode>& modes = {
                                 Mode::local_only, Mode::global_only,
                                 Mode::hybrid});

}  // namespace hmflow
