#pragma once

// Checkpoint container. Layout (all integers little-endian):
//
//   magic "HSUN" | u32 version
//   model spec: kind string, u32 input_channels, u32 output_channels,
//               u32 stem_channels, u32 depth, activation string, u64 seed,
//               u32 h, u32 w, u32 attn_reduction, u32 attn_kernel
//   u64 tensor count
//   per tensor: u32 name length + name bytes, 4 x u32 shape,
//               numel x IEEE 754 binary64 values
//
// Strings are u32 length + bytes. Model parameters are stored in registry
// order under their registry names; trainer state rides along as extra
// tensors under reserved prefixes ("adam.", "best.", "trainer.").

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "floe/models.hpp"

namespace floe {

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'H', 'S', 'U', 'N'};

struct RawTensor {
  Shape shape{0, 0, 0, 0};
  std::vector<double> values;
};

struct RawCheckpoint {
  ModelSpec spec;
  std::vector<std::pair<std::string, RawTensor>> tensors;

  const RawTensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace ckio {

inline void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("checkpoint truncated");
  return v;
}
inline uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw IoError("checkpoint truncated");
  return v;
}
inline std::string get_str(std::istream& is) {
  uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw IoError("checkpoint string too long");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw IoError("checkpoint truncated");
  return s;
}

}  // namespace ckio

inline void write_checkpoint(const std::string& path, const ModelSpec& spec,
                             const std::vector<std::pair<std::string, RawTensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  ckio::put_u32(os, kCheckpointVersion);
  ckio::put_str(os, model_kind_name(spec.kind));
  ckio::put_u32(os, static_cast<uint32_t>(spec.input_channels));
  ckio::put_u32(os, static_cast<uint32_t>(spec.output_channels));
  ckio::put_u32(os, static_cast<uint32_t>(spec.stem_channels));
  ckio::put_u32(os, static_cast<uint32_t>(spec.depth));
  ckio::put_str(os, act_name(spec.activation));
  ckio::put_u64(os, spec.seed);
  ckio::put_u32(os, static_cast<uint32_t>(spec.h));
  ckio::put_u32(os, static_cast<uint32_t>(spec.w));
  ckio::put_u32(os, static_cast<uint32_t>(spec.attn_reduction));
  ckio::put_u32(os, static_cast<uint32_t>(spec.attn_kernel));
  ckio::put_u64(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    ckio::put_str(os, name);
    for (int d = 0; d < 4; ++d) ckio::put_u32(os, static_cast<uint32_t>(t.shape[d]));
    os.write(reinterpret_cast<const char*>(t.values.data()),
             static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

inline RawCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("bad checkpoint magic in " + path);
  const uint32_t version = ckio::get_u32(is);
  if (version != kCheckpointVersion)
    throw IoError(strprintf("unsupported checkpoint version %u", version));
  RawCheckpoint ck;
  ck.spec.kind = model_kind_from_name(ckio::get_str(is));
  ck.spec.input_channels = static_cast<int>(ckio::get_u32(is));
  ck.spec.output_channels = static_cast<int>(ckio::get_u32(is));
  ck.spec.stem_channels = static_cast<int>(ckio::get_u32(is));
  ck.spec.depth = static_cast<int>(ckio::get_u32(is));
  ck.spec.activation = act_from_name(ckio::get_str(is));
  ck.spec.seed = ckio::get_u64(is);
  ck.spec.h = static_cast<int>(ckio::get_u32(is));
  ck.spec.w = static_cast<int>(ckio::get_u32(is));
  ck.spec.attn_reduction = static_cast<int>(ckio::get_u32(is));
  ck.spec.attn_kernel = static_cast<int>(ckio::get_u32(is));
  const uint64_t count = ckio::get_u64(is);
  ck.tensors.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = ckio::get_str(is);
    RawTensor t;
    for (int d = 0; d < 4; ++d) t.shape[d] = static_cast<int>(ckio::get_u32(is));
    const long n = shape_numel(t.shape);
    if (n < 0 || n > (1L << 31)) throw IoError("checkpoint tensor too large: " + name);
    t.values.resize(static_cast<size_t>(n));
    if (!is.read(reinterpret_cast<char*>(t.values.data()),
                 static_cast<std::streamsize>(t.values.size() * sizeof(double))))
      throw IoError("checkpoint truncated in tensor " + name);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

template <class T>
RawTensor to_raw(const Tensor<T>& t) {
  RawTensor r;
  r.shape = t.shape();
  r.values.assign(t.values().begin(), t.values().end());
  return r;
}

template <class T>
void save_model(const std::string& path, const ModelState<T>& state,
                const std::vector<std::pair<std::string, RawTensor>>& extra = {}) {
  std::vector<std::pair<std::string, RawTensor>> out;
  out.reserve(state.params.items.size() + extra.size());
  for (const auto& [name, t] : state.params.items) out.emplace_back(name, to_raw(t));
  for (const auto& e : extra) out.push_back(e);
  write_checkpoint(path, state.spec, out);
}

// Rebuilds the network for the stored spec and fills every parameter by name.
// Extra tensors (reserved prefixes) are ignored here; the trainer reads them
// from the RawCheckpoint directly.
template <class T>
ModelState<T> load_model(const RawCheckpoint& ck, bool trainable = true) {
  ModelState<T> state = ModelState<T>::build(ck.spec);
  for (auto& [name, t] : state.params.items) {
    const RawTensor* r = ck.find(name);
    if (!r) throw IoError("checkpoint is missing parameter " + name);
    if (r->shape != t.shape())
      throw IoError(strprintf("checkpoint parameter %s has shape %s, expected %s",
                              name.c_str(), shape_str(r->shape).c_str(),
                              shape_str(t.shape()).c_str()));
    for (long i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(r->values[i]);
  }
  state.params.set_requires_grad(trainable);
  return state;
}

template <class T>
ModelState<T> load_model(const std::string& path, bool trainable = true) {
  return load_model<T>(read_checkpoint(path), trainable);
}

}  // namespace floe
