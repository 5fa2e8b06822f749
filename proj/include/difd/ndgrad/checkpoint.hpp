#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "difd/error.hpp"
#include "difd/ndgrad/param_store.hpp"

namespace difd::ndgrad {

// Layout (all integers and floats little-endian):
//   "DIFD-CKPT-1\n"
//   u64 manifest length, manifest JSON (partition labels, shapes, caller metadata)
//   u32 parameter count
//   per parameter: u32 name length, name, u8 partition, u32 rank, u64 dims[rank],
//                  f64 values[prod(dims)]
inline constexpr std::string_view kCheckpointMagic = "DIFD-CKPT-1\n";

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <class T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(U));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(u);
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorKind::data, "checkpoint truncated");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct Checkpoint {
  ParamStore store;
  nlohmann::json metadata;
};

inline std::string encode_checkpoint(const ParamStore& store, const nlohmann::json& metadata) {
  nlohmann::json manifest;
  manifest["metadata"] = metadata;
  manifest["parameters"] = nlohmann::json::array();
  for (const auto& p : store) {
    manifest["parameters"].push_back(
        {{"name", p.name}, {"partition", std::string(to_string(p.partition))}, {"shape", p.value.shape}, {"frozen_rows", p.frozen_rows}});
  }
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(p.partition));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.shape.size()));
    for (auto d : p.value.shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : p.value.data) detail::put_le<double>(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string bytes) {
  if (bytes.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) {
    fail(ErrorKind::data, "not a DIFD-CKPT-1 checkpoint");
  }
  detail::Reader in(bytes.substr(kCheckpointMagic.size()));
  const auto manifest_len = in.get<std::uint64_t>();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in.take(manifest_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("checkpoint manifest: ") + e.what());
  }
  const auto count = in.get<std::uint32_t>();
  const auto& entries = manifest.at("parameters");
  if (entries.size() != count) fail(ErrorKind::data, "checkpoint manifest/parameter count mismatch");

  Checkpoint ck;
  ck.metadata = manifest.value("metadata", nlohmann::json::object());
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = in.take(in.get<std::uint32_t>());
    const auto part = static_cast<Partition>(in.get<std::uint8_t>());
    const auto rank = in.get<std::uint32_t>();
    if (rank == 0 || rank > 2) fail(ErrorKind::data, "checkpoint: bad rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    std::vector<double> values(num_elements(shape));
    for (auto& v : values) v = in.get<double>();
    const auto& entry = entries[k];
    if (entry.at("name").get<std::string>() != name ||
        partition_from_string(entry.at("partition").get<std::string>()) != part) {
      fail(ErrorKind::data, "checkpoint manifest disagrees with payload for '" + name + "'");
    }
    auto frozen = entry.value("frozen_rows", std::vector<std::size_t>{});
    ck.store.add(std::move(name), Tensor(std::move(shape), std::move(values)), part, std::move(frozen));
  }
  if (!in.done()) fail(ErrorKind::data, "checkpoint has trailing bytes");
  return ck;
}

/// Writes to a sibling temp file and renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::data, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::data, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const nlohmann::json& metadata) {
  write_file_atomic(path, encode_checkpoint(store, metadata));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace difd::ndgrad
