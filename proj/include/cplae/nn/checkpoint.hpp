#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cplae/core/error.hpp"
#include "cplae/core/grad_check.hpp"

namespace cplae::nn {

// Checkpoint layout, all integers unsigned 32-bit little-endian:
//
//   magic   4 bytes  "CPLK"
//   version u32      = 1
//   count   u32      number of tensors
//   then per tensor:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank u32, dims u32 × rank
//     data float32 little-endian × product(dims)
//
// Tensors are written in the order given; 64-bit models are rounded to
// float32 on save.

inline constexpr std::array<char, 4> kCheckpointMagic{'C', 'P', 'L', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<unsigned char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError(path_ + ": truncated file");
  }
  const std::vector<unsigned char>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : e.data) detail::put_f32(out, f);
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& path) {
  detail::Reader r(bytes, path);
  const std::string magic = r.str(4);
  if (magic != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
    throw CheckpointError(path + ": bad magic, not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u32());
    const std::size_t n = shape_numel(e.shape);
    e.data.reserve(n);
    for (std::size_t k = 0; k < n; ++k) e.data.push_back(r.f32());
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw CheckpointError(path + ": trailing bytes after last tensor");
  return entries;
}

template <typename T>
std::vector<CheckpointEntry> to_entries(const NamedTensors<T>& tensors) {
  std::vector<CheckpointEntry> out;
  for (const auto& [name, t] : tensors) {
    CheckpointEntry e{name, t.shape(), {}};
    e.data.reserve(t.numel());
    for (T v : t.values()) e.data.push_back(static_cast<float>(v));
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("write failed for " + path.string());
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const NamedTensors<T>& tensors) {
  write_bytes(path, encode_checkpoint(to_entries(tensors)));
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_bytes(path), path.string());
}

/// Copies checkpoint values into the named tensors. Every target must be
/// present with a matching shape; extra entries are an error too.
template <typename T>
void assign_entries(const std::vector<CheckpointEntry>& entries, NamedTensors<T>& targets, const std::string& source) {
  if (entries.size() != targets.size())
    throw CheckpointError(source + ": holds " + std::to_string(entries.size()) + " tensors, model expects " +
                          std::to_string(targets.size()));
  for (auto& [name, t] : targets) {
    const CheckpointEntry* match = nullptr;
    for (const auto& e : entries)
      if (e.name == name) match = &e;
    if (!match) throw CheckpointError(source + ": missing tensor '" + name + "'");
    if (match->shape != t.shape())
      throw CheckpointError(source + ": tensor '" + name + "' has shape " + shape_str(match->shape) + ", model expects " +
                            shape_str(t.shape()));
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(match->data[i]);
  }
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, NamedTensors<T>& targets) {
  assign_entries(read_checkpoint(path), targets, path.string());
}

}  // namespace cplae::nn
