#include "hmflow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "hmflow/checkpoint.hpp"

namespace fs = std::filesystem;

namespace hmflow {

Tensor tensor_from_image(const Image& img) {
  Tensor t = Tensor::chw(3, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) =
            img.at(y, x, img.channels == 3 ? c : 0) / 255.0;
  return t;
}

// ---- schedule and config -----------------------------------------------------

double LrSchedule::rate_at(std::int64_t iteration) const {
  double rate = stops.front().second;
  for (const auto& [start, r] : stops) {
    if (start > iteration) break;
    rate = r;
  }
  return rate;
}

void LrSchedule::validate() const {
  if (stops.empty()) throw ConfigError("schedule: needs at least one stop");
  if (stops.front().first != 0)
    throw ConfigError("schedule: first stop must be at iteration 0");
  for (std::size_t i = 0; i < stops.size(); ++i) {
    if (stops[i].second <= 0.0)
      throw ConfigError("schedule: rates must be positive");
    if (i > 0 && stops[i].first <= stops[i - 1].first)
      throw ConfigError("schedule: iterations must be strictly increasing");
  }
}

nlohmann::json LrSchedule::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [start, rate] : stops) arr.push_back({start, rate});
  return arr;
}

LrSchedule LrSchedule::from_json(const nlohmann::json& j) {
  // canonical form is a bare [[iteration, rate], ...] array; an object
  // wrapping it under "stops" is accepted for hand-written configs
  const nlohmann::json& arr =
      j.is_object() && j.contains("stops") ? j.at("stops") : j;
  LrSchedule s;
  s.stops.clear();
  for (const auto& e : arr)
    s.stops.emplace_back(e.at(0).get<std::int64_t>(), e.at(1).get<double>());
  return s;
}

LrSchedule LrSchedule::halved_twice(std::int64_t iterations, double base) {
  LrSchedule s;
  s.stops = {{0, base}};
  if (iterations >= 4) {
    s.stops.emplace_back(iterations / 2, base / 2);
    s.stops.emplace_back(3 * iterations / 4, base / 4);
  }
  return s;
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  schedule.validate();
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
  if (eval_samples < 0 || checkpoint_every < 0 || eval_every < 0)
    throw ConfigError("train: cadence fields must be >= 0");
  if (device != "cpu")
    throw ConfigError("train: unknown device '" + device + "' (only cpu)");
  if (dataset_dir.empty()) throw ConfigError("train: dataset_dir is required");
  if (out_dir.empty()) throw ConfigError("train: out_dir is required");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"loss", loss.to_json()},
          {"dataset_dir", dataset_dir},
          {"train_split", train_split},
          {"eval_split", eval_split},
          {"batch_size", batch_size},
          {"iterations", iterations},
          {"schedule", schedule.to_json()},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"eval_every", eval_every},
          {"eval_samples", eval_samples},
          {"device", device},
          {"out_dir", out_dir}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("model")) c.model = HmflowConfig::from_json(j.at("model"));
  if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
  c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
  c.train_split = j.value("train_split", c.train_split);
  c.eval_split = j.value("eval_split", c.eval_split);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iterations = j.value("iterations", c.iterations);
  if (j.contains("schedule")) c.schedule = LrSchedule::from_json(j.at("schedule"));
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.eval_samples = j.value("eval_samples", c.eval_samples);
  c.device = j.value("device", c.device);
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

// ---- optimizer ---------------------------------------------------------------

Adam::Adam(ParamStore& store, double beta1, double beta2, double epsilon)
    : store_(&store), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Adam::step(const std::map<std::string, Tensor>& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Tensor& theta = store_->at(name);
    if (!theta.same_shape(g))
      throw ShapeError("adam: gradient shape mismatch for " + name);
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor(g.shape(), 0.0)).first;
      v_.emplace(name, Tensor(g.shape(), 0.0));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + epsilon_);
    }
  }
}

// ---- training ----------------------------------------------------------------

nlohmann::json MetricsEntry::to_json() const {
  nlohmann::json j = {{"iteration", iteration}, {"loss", loss}, {"lr", lr}};
  if (aee_all >= 0.0) {
    j["aee_all"] = aee_all;
    j["aee_bg"] = aee_bg;
    j["aee_obj"] = aee_obj;
  }
  return j;
}

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<RegionMask> with_background(const SampleRecord& rec) {
  RegionMask bg(rec.flow_fg.width, rec.flow_fg.height, "background");
  for (int y = 0; y < bg.height; ++y)
    for (int x = 0; x < bg.width; ++x) {
      bool covered = false;
      for (const RegionMask& m : rec.masks) covered = covered || m.at(y, x);
      bg.set(y, x, !covered);
    }
  std::vector<RegionMask> masks;
  masks.push_back(std::move(bg));
  masks.insert(masks.end(), rec.masks.begin(), rec.masks.end());
  return masks;
}

void check_dataset_compatible(const TrainConfig& cfg,
                              const DatasetManifest& manifest) {
  const int div = 1 << cfg.model.levels;
  if (manifest.config.width % div != 0 || manifest.config.height % div != 0)
    throw ConfigError("train: dataset resolution " +
                      std::to_string(manifest.config.width) + "x" +
                      std::to_string(manifest.config.height) +
                      " is not divisible by 2^levels of the model");
}

FlowField infer_flow(const HmflowConfig& model, const ParamStore& params,
                     const SampleRecord& rec) {
  Graph g;
  ParamLeaves leaves(g, params, /*track=*/false);
  ForwardFlows out =
      hmflow_forward(g, model, leaves, g.constant(tensor_from_image(rec.i1)),
                     g.constant(tensor_from_image(rec.i2)));
  return FlowField::from_tensor(g.value(out.final_flow));
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const DatasetManifest manifest = read_manifest(cfg.dataset_dir);
  check_dataset_compatible(cfg, manifest);
  const auto entries = manifest.split_entries(cfg.train_split);
  if (entries.empty())
    throw ConfigError("train: split '" + cfg.train_split + "' is empty");

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec)
    throw IoError("cannot create directory " + cfg.out_dir + ": " +
                  ec.message());

  ParamStore store;
  declare_hmflow_params(cfg.model, store);
  store.init_random(cfg.seed);
  Adam opt(store);
  std::mt19937_64 data_rng(mix64(cfg.seed));
  std::uniform_int_distribution<std::size_t> draw(0, entries.size() - 1);

  TrainResult result;
  result.metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics_out(result.metrics_path,
                            std::ios::binary | std::ios::trunc);
  if (!metrics_out)
    throw IoError("cannot open for writing: " + result.metrics_path);

  auto log_entry = [&](std::int64_t iteration, double loss, double lr,
                       bool with_eval) {
    MetricsEntry e;
    e.iteration = iteration;
    e.loss = loss;
    e.lr = lr;
    if (with_eval) {
      const SplitReport rep = evaluate(cfg.model, store, cfg.dataset_dir,
                                       cfg.eval_split, cfg.eval_samples);
      e.aee_all = rep.aee_all;
      e.aee_bg = rep.aee_bg;
      e.aee_obj = rep.aee_obj;
    }
    result.metrics.push_back(e);
    metrics_out << e.to_json().dump() << "\n";
    metrics_out.flush();
  };

  for (std::int64_t it = 0; it < cfg.iterations; ++it) {
    const double lr = cfg.schedule.rate_at(it);
    std::map<std::string, Tensor> grads;
    double iter_loss = 0.0;
    std::vector<int> batch_indices;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& entry = entries[draw(data_rng)];
      batch_indices.push_back(entry.index);
      const SampleRecord rec =
          load_sample((fs::path(cfg.dataset_dir) / entry.dir).string());
      Graph g;
      ParamLeaves leaves(g, store);
      ForwardFlows out = hmflow_forward(
          g, cfg.model, leaves, g.constant(tensor_from_image(rec.i1)),
          g.constant(tensor_from_image(rec.i2)));
      Value loss = training_loss(g, out, rec.flow_fg, leaves, cfg.loss);
      Value scaled = scale(g, loss, 1.0 / cfg.batch_size);
      iter_loss += g.value(scaled)[0];
      g.backward(scaled);
      for (const auto& [name, leaf] : leaves.touched()) {
        const Tensor& grad = g.grad(leaf);
        auto git = grads.find(name);
        if (git == grads.end())
          grads.emplace(name, grad);
        else
          git->second.axpy(1.0, grad);
      }
    }

    if (!std::isfinite(iter_loss)) {
      nlohmann::json snap = {{"iteration", it + 1},
                             {"loss", iter_loss},
                             {"lr", lr},
                             {"batch", batch_indices}};
      const std::string snap_path =
          (fs::path(cfg.out_dir) / "diagnostic.json").string();
      std::ofstream(snap_path) << snap.dump(2) << "\n";
      throw TrainingError("loss is not finite at iteration " +
                          std::to_string(it + 1) + "; diagnostic written to " +
                          snap_path);
    }

    result.loss_history.push_back(iter_loss);
    opt.step(grads, lr);

    const std::int64_t shown = it + 1;
    const bool eval_point =
        cfg.eval_every > 0 &&
        (shown % cfg.eval_every == 0 || shown == cfg.iterations);
    if (shown == 1 || shown == cfg.iterations || eval_point)
      log_entry(shown, iter_loss, lr, eval_point);

    if (cfg.checkpoint_every > 0 && shown % cfg.checkpoint_every == 0 &&
        shown != cfg.iterations) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06lld.hmfc",
                    static_cast<long long>(shown));
      save_checkpoint((fs::path(cfg.out_dir) / name).string(), store,
                      {{"model", cfg.model.to_json()},
                       {"train", cfg.to_json()},
                       {"iteration", shown}});
    }
  }

  result.checkpoint_path = (fs::path(cfg.out_dir) / "ckpt_final.hmfc").string();
  save_checkpoint(result.checkpoint_path, store,
                  {{"model", cfg.model.to_json()},
                   {"train", cfg.to_json()},
                   {"iteration", cfg.iterations}});
  return result;
}

// ---- evaluation --------------------------------------------------------------

nlohmann::json SplitReport::to_json() const {
  return {{"aee_all", aee_all},     {"aee_bg", aee_bg},
          {"aee_obj", aee_obj},     {"pixels_all", pixels_all},
          {"pixels_bg", pixels_bg}, {"pixels_obj", pixels_obj},
          {"samples", samples}};
}

SplitReport evaluate_with(const Predictor& predict,
                          const std::string& dataset_dir,
                          const std::string& split, int limit) {
  const DatasetManifest manifest = read_manifest(dataset_dir);
  auto entries = manifest.split_entries(split);
  if (entries.empty())
    throw ConfigError("evaluate: split '" + split + "' is empty");
  if (limit > 0 && static_cast<int>(entries.size()) > limit)
    entries.resize(limit);

  SplitReport agg;
  double sum_all = 0.0, sum_bg = 0.0, sum_obj = 0.0;
  for (const auto& entry : entries) {
    const SampleRecord rec =
        load_sample((fs::path(dataset_dir) / entry.dir).string());
    const FlowField pred = predict(rec);
    const EvalReport rep =
        region_report(pred, rec.flow_fg, with_background(rec));
    const std::int64_t all = rep.pixel_counts.at("all");
    const std::int64_t bg = rep.pixel_counts.at("background");
    sum_all += rep.aee_all * all;
    sum_bg += rep.aee_bg * bg;
    sum_obj += rep.aee_obj * (all - bg);
    agg.pixels_all += all;
    agg.pixels_bg += bg;
    agg.pixels_obj += all - bg;
    ++agg.samples;
  }
  agg.aee_all = sum_all / agg.pixels_all;
  agg.aee_bg = sum_bg / agg.pixels_bg;
  agg.aee_obj = agg.pixels_obj > 0 ? sum_obj / agg.pixels_obj : 0.0;
  return agg;
}

SplitReport evaluate(const HmflowConfig& model, const ParamStore& params,
                     const std::string& dataset_dir, const std::string& split,
                     int limit) {
  return evaluate_with(
      [&](const SampleRecord& rec) { return infer_flow(model, params, rec); },
      dataset_dir, split, limit);
}

SplitReport evaluate(const std::string& checkpoint_path,
                     const std::string& dataset_dir, const std::string& split,
                     int limit) {
  ParamStore store;
  const nlohmann::json config = load_checkpoint(checkpoint_path, store);
  const HmflowConfig model = HmflowConfig::from_json(
      config.contains("model") ? config.at("model") : config);
  return evaluate(model, store, dataset_dir, split, limit);
}

// ---- saliency ----------------------------------------------------------------

namespace {

// mean flow magnitude over the region's pixels, with a hand-written backward
Value region_mean_magnitude(Graph& g, Value flow, const RegionMask& region) {
  const Tensor& f = g.value(flow);
  if (f.shape().size() != 3 || f.shape()[0] != 2 ||
      f.shape()[1] != region.height || f.shape()[2] != region.width)
    throw ShapeError("saliency: flow/region shape mismatch");
  const std::int64_t n = region.count();
  if (n == 0)
    throw DegenerateRegionError("saliency: the region mask is empty");

  double sum = 0.0;
  for (int y = 0; y < region.height; ++y)
    for (int x = 0; x < region.width; ++x)
      if (region.at(y, x))
        sum += std::hypot(f.at(0, y, x), f.at(1, y, x));
  RegionMask mask = region;
  return g.make(Tensor::scalar(sum / n), {flow},
                [flow, mask = std::move(mask), n](Graph& gg, Value self) {
                  if (!gg.needs_grad(flow)) return;
                  const double go = gg.grad(self)[0] / n;
                  const Tensor& f = gg.value(flow);
                  Tensor& gf = gg.grad_buffer(flow);
                  for (int y = 0; y < mask.height; ++y)
                    for (int x = 0; x < mask.width; ++x) {
                      if (!mask.at(y, x)) continue;
                      const double u = f.at(0, y, x), v = f.at(1, y, x);
                      const double norm = std::hypot(u, v);
                      if (norm < 1e-12) continue;
                      gf.at(0, y, x) += go * u / norm;
                      gf.at(1, y, x) += go * v / norm;
                    }
                });
}

}  // namespace

SaliencyResult saliency_map(const HmflowConfig& model, const ParamStore& params,
                            const Image& i1, const Image& i2,
                            const RegionMask& region) {
  Graph g;
  ParamLeaves leaves(g, params, /*track=*/false);
  Value v1 = g.leaf(tensor_from_image(i1));
  Value v2 = g.leaf(tensor_from_image(i2));
  ForwardFlows out = hmflow_forward(g, model, leaves, v1, v2);
  Value objective = region_mean_magnitude(g, out.final_flow, region);
  g.backward(objective);

  SaliencyResult res;
  auto reduce = [&](Value v, Tensor& map, double& raw_max, bool& degenerate) {
    const Tensor& grad = g.grad(v);
    const int h = grad.shape()[1], w = grad.shape()[2];
    map = Tensor({h, w});
    raw_max = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double m = 0.0;
        for (int c = 0; c < grad.shape()[0]; ++c)
          m = std::max(m, std::abs(grad.at(c, y, x)));
        map[static_cast<std::int64_t>(y) * w + x] = m;
        raw_max = std::max(raw_max, m);
      }
    degenerate = raw_max < 1e-12;
    if (!degenerate)
      for (std::int64_t i = 0; i < map.numel(); ++i) map[i] /= raw_max;
    else
      for (std::int64_t i = 0; i < map.numel(); ++i) map[i] = 0.0;
  };
  reduce(v1, res.map1, res.raw_max1, res.degenerate1);
  reduce(v2, res.map2, res.raw_max2, res.degenerate2);
  return res;
}

// ---- ablation ----------------------------------------------------------------

nlohmann::json AblationTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const AblationRow& r : rows)
    arr.push_back({{"mode", mode_to_string(r.mode)},
                   {"train", r.train_report.to_json()},
                   {"test", r.test_report.to_json()}});
  return {{"rows", std::move(arr)}};
}

std::string AblationTable::to_text() const {
  std::string out =
      "mode         train_all train_bg  train_obj test_all  test_bg   "
      "test_obj\n";
  char line[160];
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof(line),
                  "%-12s %-9.4f %-9.4f %-9.4f %-9.4f %-9.4f %-9.4f\n",
                  mode_to_string(r.mode).c_str(), r.train_report.aee_all,
                  r.train_report.aee_bg, r.train_report.aee_obj,
                  r.test_report.aee_all, r.test_report.aee_bg,
                  r.test_report.aee_obj);
    out += line;
  }
  return out;
}

AblationTable ablation_suite(const TrainConfig& base,
                             const std::vector<Mode>& modes) {
  AblationTable table;
  for (Mode mode : modes) {
    TrainConfig cfg = base;
    cfg.model.mode = mode;
    cfg.out_dir =
        (fs::path(base.out_dir) / mode_to_string(mode)).string();
    const TrainResult run = train(cfg);
    AblationRow row;
    row.mode = mode;
    row.train_report =
        evaluate(run.checkpoint_path, cfg.dataset_dir, cfg.train_split);
    row.test_report =
        evaluate(run.checkpoint_path, cfg.dataset_dir, cfg.eval_split);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace hmflow
