#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hypertea/nn.hpp"
#include "hypertea/optim.hpp"

namespace hypertea {

// Versioned little-endian binary container for a full training state:
//   magic "HTCK" | u32 version | u32 scalar size | i64 step | i64 epoch
//   | params section | buffers section | velocity section
// Each section is a u64 count of entries; each entry is
//   u64 name length | name bytes | u64 rank | i64 dims... | raw values.
// Velocity entries reuse the parameter names and order, making a resumed
// optimizer bit-identical to an uninterrupted one.

namespace detail_ckpt {

constexpr uint32_t kVersion = 1;

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw NumericsError("checkpoint: truncated file");
  return v;
}

inline void write_string(std::ofstream& out, const std::string& s) {
  write_pod<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::ifstream& in) {
  uint64_t n = read_pod<uint64_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw NumericsError("checkpoint: truncated file");
  return s;
}

template <typename T>
void write_values(std::ofstream& out, const std::string& name, const std::vector<int64_t>& dims,
                  const T* values, size_t count) {
  write_string(out, name);
  write_pod<uint64_t>(out, dims.size());
  for (int64_t d : dims) write_pod<int64_t>(out, d);
  out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(count * sizeof(T)));
}

}  // namespace detail_ckpt

template <typename T>
void save_checkpoint(const std::string& path, const ParamRegistry<T>& reg,
                     const std::vector<std::vector<T>>* velocity, int64_t step, int64_t epoch) {
  using namespace detail_ckpt;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NumericsError("checkpoint: cannot open " + path);
  out.write("HTCK", 4);
  write_pod<uint32_t>(out, kVersion);
  write_pod<uint32_t>(out, sizeof(T));
  write_pod<int64_t>(out, step);
  write_pod<int64_t>(out, epoch);

  write_pod<uint64_t>(out, reg.params.size());
  for (const auto& [name, p] : reg.params)
    write_values(out, name, p.shape(), p.data().data(), p.data().size());

  write_pod<uint64_t>(out, reg.buffers.size());
  for (const auto& [name, b] : reg.buffers)
    write_values(out, name, {static_cast<int64_t>(b->size())}, b->data(), b->size());

  if (velocity) {
    if (velocity->size() != reg.params.size())
      throw NumericsError("checkpoint: velocity count mismatch");
    write_pod<uint64_t>(out, velocity->size());
    for (size_t i = 0; i < velocity->size(); ++i)
      write_values(out, reg.params[i].first, {static_cast<int64_t>((*velocity)[i].size())},
                   (*velocity)[i].data(), (*velocity)[i].size());
  } else {
    write_pod<uint64_t>(out, uint64_t{0});
  }
  if (!out) throw NumericsError("checkpoint: write failed for " + path);
}

struct CheckpointMeta {
  int64_t step = 0;
  int64_t epoch = 0;
};

// Loads values into an already-constructed registry (and optimizer velocity,
// when present in both the file and the call). Name, order, and shape must
// match the saved state exactly.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamRegistry<T>& reg,
                               std::vector<std::vector<T>>* velocity) {
  using namespace detail_ckpt;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericsError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "HTCK", 4) != 0)
    throw NumericsError("checkpoint: bad magic in " + path);
  if (read_pod<uint32_t>(in) != kVersion) throw NumericsError("checkpoint: unsupported version");
  if (read_pod<uint32_t>(in) != sizeof(T))
    throw NumericsError("checkpoint: scalar size mismatch (float vs double build)");
  CheckpointMeta meta;
  meta.step = read_pod<int64_t>(in);
  meta.epoch = read_pod<int64_t>(in);

  auto read_entry_into = [&](const std::string& want_name, T* dst, size_t count,
                             const char* section) {
    std::string name = read_string(in);
    if (name != want_name)
      throw NumericsError(std::string("checkpoint: ") + section + " name mismatch: saved '" +
                          name + "', expected '" + want_name + "'");
    uint64_t rank = read_pod<uint64_t>(in);
    uint64_t n = 1;
    for (uint64_t r = 0; r < rank; ++r) {
      int64_t d = read_pod<int64_t>(in);
      n *= static_cast<uint64_t>(d);
    }
    if (n != count)
      throw NumericsError(std::string("checkpoint: ") + section + " shape mismatch for '" +
                          want_name + "'");
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(T)));
    if (!in) throw NumericsError("checkpoint: truncated file");
  };

  uint64_t n_params = read_pod<uint64_t>(in);
  if (n_params != reg.params.size()) throw NumericsError("checkpoint: parameter count mismatch");
  for (auto& [name, p] : reg.params)
    read_entry_into(name, p.data().data(), p.data().size(), "param");

  uint64_t n_buffers = read_pod<uint64_t>(in);
  if (n_buffers != reg.buffers.size()) throw NumericsError("checkpoint: buffer count mismatch");
  for (auto& [name, b] : reg.buffers) read_entry_into(name, b->data(), b->size(), "buffer");

  uint64_t n_vel = read_pod<uint64_t>(in);
  if (velocity) {
    if (n_vel != velocity->size()) throw NumericsError("checkpoint: velocity count mismatch");
    for (size_t i = 0; i < velocity->size(); ++i)
      read_entry_into(reg.params[i].first, (*velocity)[i].data(), (*velocity)[i].size(),
                      "velocity");
  }
  return meta;
}

}  // namespace hypertea
