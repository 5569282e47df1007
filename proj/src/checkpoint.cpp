#include "hmflow/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "hmflow/errors.hpp"

namespace hmflow {

namespace {

constexpr char kMagic[4] = {'H', 'M', 'F', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& config) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;  // in doubles, from the start of the data block
  for (const std::string& name : store.names()) {
    const Tensor& t = store.at(name);
    index.push_back(
        {{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel());
  }
  const std::string header =
      nlohmann::json{{"config", config}, {"tensors", std::move(index)}}.dump();

  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kMagic, kMagic + 4);
  put_u32(bytes, kVersion);
  put_u64(bytes, header.size());
  bytes.insert(bytes.end(), header.begin(), header.end());
  bytes.reserve(bytes.size() + offset * 8);
  for (const std::string& name : store.names()) {
    const Tensor& t = store.at(name);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      std::uint64_t raw;
      const double v = t[i];
      std::memcpy(&raw, &v, 8);
      put_u64(bytes, raw);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

nlohmann::json load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a checkpoint file: " + path);
  if (get_u32(bytes.data() + 4) != kVersion)
    throw FormatError("unsupported checkpoint version in " + path);
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size())
    throw FormatError("truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16,
                                   bytes.begin() + 16 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint header in " + path + ": " + e.what());
  }

  const std::size_t data_start = 16 + header_len;
  const bool fresh = store.names().empty();
  std::size_t loaded = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    Tensor* dst;
    if (fresh) {
      dst = &store.declare(name, shape);
    } else {
      if (!store.has(name))
        throw ShapeError("checkpoint tensor not in store: " + name);
      dst = &store.at(name);
      if (dst->shape() != shape)
        throw ShapeError("checkpoint shape mismatch for " + name);
    }
    const std::size_t begin = data_start + offset * 8;
    const std::size_t end = begin + static_cast<std::size_t>(dst->numel()) * 8;
    if (end > bytes.size())
      throw FormatError("truncated checkpoint data for " + name + " in " +
                        path);
    for (std::int64_t i = 0; i < dst->numel(); ++i) {
      const std::uint64_t raw = get_u64(bytes.data() + begin + i * 8);
      double v;
      std::memcpy(&v, &raw, 8);
      (*dst)[i] = v;
    }
    ++loaded;
  }
  if (!fresh && loaded != store.names().size())
    throw ShapeError("checkpoint is missing tensors the store declares");
  return header.at("config");
}

}  // namespace hmflow
