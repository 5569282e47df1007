// Command-line surface over the library: dataset generation and validation,
// training, evaluation, the mode ablation, flow visualization and .flo
// inspection, and saliency-map export.
//
// Exit codes: 0 success, 1 domain errors (one machine-parseable JSON line on
// stderr), 2 usage errors.
#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "hmflow/checkpoint.hpp"
#include "hmflow/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw hmflow::IoError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw hmflow::FormatError(std::string("config is not valid JSON: ") +
                              e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out.good()) throw hmflow::IoError("cannot write " + path);
  out << text;
}

bool same_category(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

/// Applies one `key=value` override to a config document. The dotted key
/// path must already exist (configs always carry every field), and the value
/// must match the type of the field it replaces.
void apply_override(json& doc, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw hmflow::ConfigError("--set expects key=value, got '" + spec + "'");
  const std::string key = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);

  json* cur = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string seg = key.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object() || !cur->contains(seg))
      throw hmflow::ConfigError("--set: unknown config key '" + key + "'");
    cur = &cur->at(seg);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  json value;
  bool parsed = true;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    parsed = false;
  }
  if (parsed && same_category(value, *cur)) {
    *cur = value;
  } else if (cur->is_string()) {
    *cur = raw;  // unquoted strings are taken verbatim
  } else {
    throw hmflow::ConfigError("--set: value '" + raw + "' does not match the type of '" + key + "'");
  }
}

json load_config(const std::string& path, const std::vector<std::string>& sets) {
  json doc = read_json_or_throw(path);
  for (const std::string& s : sets) apply_override(doc, s);
  return doc;
}

/// Decodes a config object, mapping JSON type errors onto the domain
/// taxonomy so they exit with code 1 and a parseable line.
template <typename Config>
Config decode(const json& doc) {
  try {
    return Config::from_json(doc);
  } catch (const json::exception& e) {
    throw hmflow::FormatError(std::string("bad config: ") + e.what());
  }
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

hmflow::Image gray_from_map(const hmflow::Tensor& map) {
  const int h = map.shape()[0];
  const int w = map.shape()[1];
  hmflow::Image img(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = map[static_cast<std::int64_t>(y) * w + x];
      img.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  return img;
}

struct Args {
  std::string config, out, data, split = "test", ckpt, flo, sample, prefix;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int n = 0, limit = 0, object = 0;
  double max_magnitude = 0.0;
  bool text = false;
};

int cmd_gen_data(const Args& a) {
  hmflow::GeneratorConfig cfg =
      decode<hmflow::GeneratorConfig>(load_config(a.config, a.sets));
  if (a.seed_given) cfg.seed = a.seed;
  const hmflow::DatasetManifest manifest =
      hmflow::generate_dataset(cfg, a.n, a.out);
  emit({{"out", a.out},
        {"n", manifest.n},
        {"train", manifest.split_entries("train").size()},
        {"test", manifest.split_entries("test").size()}});
  return 0;
}

int cmd_validate_data(const Args& a) {
  const hmflow::DatasetManifest manifest = hmflow::read_manifest(a.data);
  json failures = json::array();
  int checked = 0;
  for (const auto& entry : manifest.samples) {
    if (a.limit > 0 && checked >= a.limit) break;
    const hmflow::SampleRecord rec =
        hmflow::load_sample((fs::path(a.data) / entry.dir).string());
    const hmflow::ValidationReport report =
        hmflow::validate_sample(rec, manifest.config);
    ++checked;
    if (report.all_pass()) continue;
    json bad = json::array();
    for (const auto& c : report.checks)
      if (!c.pass) bad.push_back(c.name);
    failures.push_back({{"dir", entry.dir}, {"checks", bad}});
  }
  emit({{"samples", checked},
        {"passed", checked - static_cast<int>(failures.size())},
        {"failures", failures}});
  if (!failures.empty())
    throw hmflow::ValueError(std::to_string(failures.size()) +
                             " sample(s) failed validation");
  return 0;
}

int cmd_train(const Args& a) {
  const hmflow::TrainConfig cfg =
      decode<hmflow::TrainConfig>(load_config(a.config, a.sets));
  const hmflow::TrainResult res = hmflow::train(cfg);
  emit({{"checkpoint", res.checkpoint_path},
        {"metrics", res.metrics_path},
        {"iterations", cfg.iterations},
        {"final_loss",
         res.loss_history.empty() ? -1.0 : res.loss_history.back()}});
  return 0;
}

int cmd_eval(const Args& a) {
  const hmflow::SplitReport report =
      hmflow::evaluate(a.ckpt, a.data, a.split, a.limit);
  json j = report.to_json();
  j["split"] = a.split;
  if (!a.out.empty()) write_text_file(a.out, j.dump(2) + "\n");
  emit(j);
  return 0;
}

int cmd_ablate(const Args& a) {
  const hmflow::TrainConfig base =
      decode<hmflow::TrainConfig>(load_config(a.config, a.sets));
  const hmflow::AblationTable table = hmflow::ablation_suite(base);
  if (!a.out.empty()) write_text_file(a.out, table.to_json().dump(2) + "\n");
  if (a.text)
    std::cout << table.to_text();
  else
    emit(table.to_json());
  return 0;
}

int cmd_viz_flow(const Args& a) {
  const hmflow::FlowField flow = hmflow::read_flo_file(a.flo);
  hmflow::write_png(hmflow::flow_to_color(flow, a.max_magnitude), a.out);
  emit({{"out", a.out}, {"width", flow.width}, {"height", flow.height}});
  return 0;
}

int cmd_flo_info(const Args& a) {
  const hmflow::FlowField flow = hmflow::read_flo_file(a.flo);
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      const double m = std::hypot(static_cast<double>(flow.u(y, x)),
                                  static_cast<double>(flow.v(y, x)));
      lo = first ? m : std::min(lo, m);
      hi = first ? m : std::max(hi, m);
      first = false;
    }
  emit({{"width", flow.width},
        {"height", flow.height},
        {"min_magnitude", lo},
        {"max_magnitude", hi}});
  return 0;
}

int cmd_saliency(const Args& a) {
  hmflow::ParamStore params;
  const json meta = hmflow::load_checkpoint(a.ckpt, params);
  const json& model_json = meta.contains("model") ? meta.at("model") : meta;
  const hmflow::HmflowConfig model = hmflow::HmflowConfig::from_json(model_json);

  const hmflow::SampleRecord rec =
      hmflow::load_sample((fs::path(a.data) / a.sample).string());
  if (a.object < 0 || a.object >= static_cast<int>(rec.masks.size()))
    throw hmflow::ValueError("sample has no object " + std::to_string(a.object));
  const hmflow::SaliencyResult res = hmflow::saliency_map(
      model, params, rec.i1, rec.i2, rec.masks[a.object]);

  const std::string out1 = a.prefix + "_map1.png";
  const std::string out2 = a.prefix + "_map2.png";
  hmflow::write_png(gray_from_map(res.map1), out1);
  hmflow::write_png(gray_from_map(res.map2), out2);
  emit({{"map1", out1},
        {"map2", out2},
        {"raw_max1", res.raw_max1},
        {"raw_max2", res.raw_max2},
        {"degenerate1", res.degenerate1},
        {"degenerate2", res.degenerate2}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hmflow: hybrid-matching optical flow toolkit"};
  app.require_subcommand(1);
  Args a;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a dataset");
  gen->add_option("--config", a.config, "generator config JSON")->required();
  gen->add_option("--out", a.out, "output dataset directory")->required();
  gen->add_option("--n", a.n, "number of samples")->required();
  gen->add_option("--seed", a.seed, "override the config seed")
      ->each([&a](const std::string&) { a.seed_given = true; });
  gen->add_option("--set", a.sets, "config override key=value");

  CLI::App* val = app.add_subcommand("validate-data", "Re-check invariants");
  val->add_option("--data", a.data, "dataset directory")->required();
  val->add_option("--limit", a.limit, "check at most N samples");

  CLI::App* tr = app.add_subcommand("train", "Run an optimization");
  tr->add_option("--config", a.config, "train config JSON")->required();
  tr->add_option("--set", a.sets, "config override key=value");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", a.ckpt, "checkpoint file")->required();
  ev->add_option("--data", a.data, "dataset directory")->required();
  ev->add_option("--split", a.split, "dataset split (default test)");
  ev->add_option("--limit", a.limit, "evaluate at most N samples");
  ev->add_option("--out", a.out, "also write the report to a file");

  CLI::App* ab = app.add_subcommand("ablate", "Train and compare all modes");
  ab->add_option("--config", a.config, "base train config JSON")->required();
  ab->add_option("--set", a.sets, "config override key=value");
  ab->add_option("--out", a.out, "also write the table to a file");
  ab->add_flag("--text", a.text, "print the fixed-width table instead");

  CLI::App* viz = app.add_subcommand("viz-flow", "Render a .flo as PNG");
  viz->add_option("--flo", a.flo, "input .flo file")->required();
  viz->add_option("--out", a.out, "output PNG")->required();
  viz->add_option("--max-magnitude", a.max_magnitude,
                  "color saturation cap (0: per-field max)");

  CLI::App* sal = app.add_subcommand("saliency", "Input-saliency maps");
  sal->add_option("--ckpt", a.ckpt, "checkpoint file")->required();
  sal->add_option("--data", a.data, "dataset directory")->required();
  sal->add_option("--sample", a.sample, "sample dir relative to the dataset")
      ->required();
  sal->add_option("--object", a.object, "object index (default 0)");
  sal->add_option("--out-prefix", a.prefix, "prefix for the two PNGs")
      ->required();

  CLI::App* flo = app.add_subcommand("flo", ".flo utilities");
  flo->require_subcommand(1);
  CLI::App* info = flo->add_subcommand("info", "Print size and magnitudes");
  info->add_option("file", a.flo, "input .flo file")->required();
  CLI::App* topng = flo->add_subcommand("to-png", "Render as PNG");
  topng->add_option("file", a.flo, "input .flo file")->required();
  topng->add_option("out", a.out, "output PNG")->required();
  topng->add_option("--max-magnitude", a.max_magnitude,
                    "color saturation cap (0: per-field max)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump()
              << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(a);
    if (val->parsed()) return cmd_validate_data(a);
    if (tr->parsed()) return cmd_train(a);
    if (ev->parsed()) return cmd_eval(a);
    if (ab->parsed()) return cmd_ablate(a);
    if (viz->parsed()) return cmd_viz_flow(a);
    if (sal->parsed()) return cmd_saliency(a);
    if (flo->parsed()) {
      if (info->parsed()) return cmd_flo_info(a);
      if (topng->parsed()) return cmd_viz_flow(a);
    }
    std::cerr << json{{"error", "usage"}, {"message", "no verb"}}.dump()
              << "\n";
    return 2;
  } catch (const hmflow::Error& e) {
    std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump()
              << "\n";
    return 1;
  }
}
