#include "hmflow/flowio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hmflow {

namespace {

constexpr float kFloMagic = 202021.25f;

void append_bytes(std::vector<std::uint8_t>& out, const void* src,
                  std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(src);
  out.insert(out.end(), p, p + n);
}

template <typename T>
T read_raw(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

FlowField::FlowField(int w, int h)
    : width(w), height(h),
      data(2 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h),
           0.0f) {
  if (w <= 0 || h <= 0)
    throw ShapeError("FlowField: nonpositive dimensions " + std::to_string(w) +
                     "x" + std::to_string(h));
}

bool FlowField::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](float v) { return std::isfinite(v); });
}

FlowField FlowField::from_tensor(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 2)
    throw ShapeError("FlowField::from_tensor: expected {2, H, W}");
  FlowField f(t.dim(2), t.dim(1));
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      f.u(y, x) = static_cast<float>(t.at(0, y, x));
      f.v(y, x) = static_cast<float>(t.at(1, y, x));
    }
  return f;
}

Tensor FlowField::to_tensor() const {
  Tensor t({2, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      t.at(0, y, x) = u(y, x);
      t.at(1, y, x) = v(y, x);
    }
  return t;
}

RegionMask::RegionMask(int w, int h, std::string lbl)
    : width(w), height(h),
      data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0),
      label(std::move(lbl)) {
  if (w <= 0 || h <= 0)
    throw ShapeError("RegionMask: nonpositive dimensions");
}

std::int64_t RegionMask::count() const {
  return std::count_if(data.begin(), data.end(),
                       [](std::uint8_t b) { return b != 0; });
}

int RegionMask::object_id() const {
  const std::string prefix = "object-";
  if (label.rfind(prefix, 0) != 0) return -1;
  try {
    return std::stoi(label.substr(prefix.size()));
  } catch (const std::exception&) {
    throw ValueError("RegionMask: malformed object label '" + label + "'");
  }
}

std::string make_object_label(int k) { return "object-" + std::to_string(k); }

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per;
  for (const auto& [id, err] : per_object)
    per.push_back({{"object", id}, {"aee", err}});
  if (per.is_null()) per = nlohmann::json::array();
  return nlohmann::json{{"aee_all", aee_all},
                        {"aee_bg", aee_bg},
                        {"aee_obj", aee_obj},
                        {"per_object", per},
                        {"pixel_counts", pixel_counts}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.aee_all = j.at("aee_all").get<double>();
  r.aee_bg = j.at("aee_bg").get<double>();
  r.aee_obj = j.at("aee_obj").get<double>();
  for (const auto& e : j.at("per_object"))
    r.per_object.emplace_back(e.at("object").get<int>(),
                              e.at("aee").get<double>());
  r.pixel_counts =
      j.at("pixel_counts").get<std::map<std::string, std::int64_t>>();
  return r;
}

FlowField read_flo(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12)
    throw LengthError("read_flo: header needs 12 bytes, got " +
                      std::to_string(bytes.size()));
  const float magic = read_raw<float>(bytes, 0);
  if (magic != kFloMagic)
    throw FormatError("read_flo: bad magic tag " + std::to_string(magic));
  const std::int32_t w = read_raw<std::int32_t>(bytes, 4);
  const std::int32_t h = read_raw<std::int32_t>(bytes, 8);
  if (w <= 0 || h <= 0)
    throw ShapeError("read_flo: nonpositive dimensions " + std::to_string(w) +
                     "x" + std::to_string(h));
  const std::size_t payload = 8u * static_cast<std::size_t>(w) * h;
  if (bytes.size() != 12 + payload)
    throw LengthError("read_flo: expected " + std::to_string(12 + payload) +
                      " bytes for " + std::to_string(w) + "x" +
                      std::to_string(h) + ", got " +
                      std::to_string(bytes.size()));
  FlowField f(w, h);
  std::memcpy(f.data.data(), bytes.data() + 12, payload);
  return f;
}

std::vector<std::uint8_t> write_flo(const FlowField& flow) {
  if (flow.width <= 0 || flow.height <= 0)
    throw ShapeError("write_flo: empty flow");
  if (!flow.all_finite())
    throw ValueError("write_flo: flow contains NaN or Inf");
  std::vector<std::uint8_t> out;
  out.reserve(12 + flow.data.size() * 4);
  const std::int32_t w = flow.width, h = flow.height;
  append_bytes(out, &kFloMagic, 4);
  append_bytes(out, &w, 4);
  append_bytes(out, &h, 4);
  append_bytes(out, flow.data.data(), flow.data.size() * 4);
  return out;
}

FlowField read_flo_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_flo_file: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  return read_flo(bytes);
}

void write_flo_file(const FlowField& flow, const std::string& path) {
  const std::vector<std::uint8_t> bytes = write_flo(flow);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_flo_file: cannot open '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write_flo_file: short write to '" + path + "'");
}

// ---- color coding ----

namespace {

// 55-entry Middlebury color wheel (RY 15, YG 6, GC 4, CB 11, BM 13, MR 6).
std::vector<std::array<int, 3>> make_color_wheel() {
  const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
  std::vector<std::array<int, 3>> wheel;
  wheel.reserve(RY + YG + GC + CB + BM + MR);
  for (int i = 0; i < RY; ++i) wheel.push_back({255, 255 * i / RY, 0});
  for (int i = 0; i < YG; ++i) wheel.push_back({255 - 255 * i / YG, 255, 0});
  for (int i = 0; i < GC; ++i) wheel.push_back({0, 255, 255 * i / GC});
  for (int i = 0; i < CB; ++i) wheel.push_back({0, 255 - 255 * i / CB, 255});
  for (int i = 0; i < BM; ++i) wheel.push_back({255 * i / BM, 0, 255});
  for (int i = 0; i < MR; ++i) wheel.push_back({255, 0, 255 - 255 * i / MR});
  return wheel;
}

}  // namespace

Image flow_to_color(const FlowField& flow, double max_magnitude) {
  static const std::vector<std::array<int, 3>> wheel = make_color_wheel();
  const int ncols = static_cast<int>(wheel.size());

  double maxrad = max_magnitude;
  if (maxrad <= 0.0) {
    // auto-scale: 99th-percentile magnitude (nearest-rank)
    std::vector<double> mags;
    mags.reserve(static_cast<std::size_t>(flow.width) * flow.height);
    for (int y = 0; y < flow.height; ++y)
      for (int x = 0; x < flow.width; ++x)
        mags.push_back(std::hypot(static_cast<double>(flow.u(y, x)),
                                  static_cast<double>(flow.v(y, x))));
    std::sort(mags.begin(), mags.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.99 * static_cast<double>(mags.size())));
    maxrad = mags[rank == 0 ? 0 : rank - 1];
  }
  if (maxrad <= 0.0) maxrad = 1.0;  // all-zero field: stays white

  Image img(flow.width, flow.height, 3);
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      const double u = flow.u(y, x);
      const double v = flow.v(y, x);
      const double rad = std::min(std::hypot(u, v) / maxrad, 1.0);
      const double a = std::atan2(-v, -u) / M_PI;  // [-1, 1]
      const double fk = (a + 1.0) / 2.0 * (ncols - 1);
      const int k0 = static_cast<int>(std::floor(fk));
      const int k1 = (k0 + 1) % ncols;
      const double f = fk - k0;
      for (int c = 0; c < 3; ++c) {
        const double col0 = wheel[k0][c] / 255.0;
        const double col1 = wheel[k1][c] / 255.0;
        double col = (1.0 - f) * col0 + f * col1;
        col = 1.0 - rad * (1.0 - col);  // desaturate toward white at zero
        img.at(y, x, c) = static_cast<std::uint8_t>(std::floor(255.0 * col));
      }
    }
  return img;
}

// ---- metrics ----

namespace {

void check_same_dims(const FlowField& a, const FlowField& b) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeError("aee: flow dimensions differ (" + std::to_string(a.width) +
                     "x" + std::to_string(a.height) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height) +
                     ")");
}

}  // namespace

double aee(const FlowField& pred, const FlowField& gt) {
  check_same_dims(pred, gt);
  double sum = 0.0;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x)
      // promote before subtracting: accumulate the metric in double
      sum += std::hypot(static_cast<double>(pred.u(y, x)) - gt.u(y, x),
                        static_cast<double>(pred.v(y, x)) - gt.v(y, x));
  return sum / (static_cast<double>(pred.width) * pred.height);
}

double aee(const FlowField& pred, const FlowField& gt, const RegionMask& mask) {
  check_same_dims(pred, gt);
  if (mask.width != pred.width || mask.height != pred.height)
    throw ShapeError("aee: mask dimensions differ from flow");
  double sum = 0.0;
  std::int64_t n = 0;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x)
      if (mask.at(y, x)) {
        sum += std::hypot(static_cast<double>(pred.u(y, x)) - gt.u(y, x),
                          static_cast<double>(pred.v(y, x)) - gt.v(y, x));
        ++n;
      }
  if (n == 0)
    throw DegenerateRegionError("aee: mask '" + mask.label +
                                "' selects no pixels");
  return sum / static_cast<double>(n);
}

EvalReport region_report(const FlowField& pred, const FlowField& gt,
                         const std::vector<RegionMask>& masks) {
  check_same_dims(pred, gt);
  const int w = pred.width, h = pred.height;

  // the masks must cover every pixel exactly once
  std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
  const RegionMask* bg = nullptr;
  for (const RegionMask& m : masks) {
    if (m.width != w || m.height != h)
      throw ShapeError("region_report: mask '" + m.label +
                       "' dimensions differ from flow");
    if (m.is_background()) {
      if (bg) throw PartitionError("region_report: two background masks");
      bg = &m;
    }
    for (std::size_t i = 0; i < cover.size(); ++i) cover[i] += m.data[i] ? 1 : 0;
  }
  if (!bg) throw PartitionError("region_report: no background mask");
  for (std::size_t i = 0; i < cover.size(); ++i) {
    if (cover[i] > 1)
      throw PartitionError("region_report: masks overlap at pixel " +
                           std::to_string(i));
    if (cover[i] == 0)
      throw PartitionError("region_report: pixel " + std::to_string(i) +
                           " not covered by any mask");
  }

  RegionMask fg(w, h, "objects");
  for (const RegionMask& m : masks) {
    if (m.is_background()) continue;
    for (std::size_t i = 0; i < fg.data.size(); ++i)
      fg.data[i] |= m.data[i];
  }

  EvalReport rep;
  rep.aee_all = aee(pred, gt);
  rep.aee_bg = aee(pred, gt, *bg);
  rep.aee_obj = aee(pred, gt, fg);
  rep.pixel_counts["all"] = static_cast<std::int64_t>(w) * h;
  rep.pixel_counts[bg->label] = bg->count();
  for (const RegionMask& m : masks) {
    if (m.is_background()) continue;
    rep.per_object.emplace_back(m.object_id(), aee(pred, gt, m));
    rep.pixel_counts[m.label] = m.count();
  }
  std::sort(rep.per_object.begin(), rep.per_object.end());
  return rep;
}

}  // namespace hmflow
