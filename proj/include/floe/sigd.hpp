#pragma once

// SIGD raster-stack container. Layout (little-endian):
//
//   magic "SIGD1"
//   u32 H | u32 W | u32 n_layers | u32 n_days
//   layer-name table: n_layers x (u32 length + bytes)
//   start date: u32 length + ISO-8601 "YYYY-MM-DD" bytes
//   body: n_days x n_layers grids, IEEE 754 binary32, row-major,
//         invalid cells stored as quiet NaN
//
// The NaN sentinel is written with one canonical bit pattern so identical
// stacks serialize to identical bytes. RawStack carries arbitrary layer
// names (weight maps, region rasters); GridStack is the typed variable view
// used by the data pipeline.

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "floe/grid.hpp"

namespace floe {

static_assert(std::endian::native == std::endian::little,
              "SIGD i/o assumes a little-endian host");

inline constexpr char kSigdMagic[5] = {'S', 'I', 'G', 'D', '1'};
inline constexpr uint32_t kSigdNanBits = 0x7fc00000u;

struct RawStack {
  int h = 0, w = 0;
  Date start{};
  std::vector<std::string> names;
  std::vector<Grid> grids;  // day-major: grids[day * names.size() + i]

  int days() const {
    return names.empty() ? 0 : static_cast<int>(grids.size() / names.size());
  }
};

inline void write_sigd(const std::string& path, const RawStack& stack) {
  if (stack.names.empty()) throw DataError("write_sigd: stack has no layers");
  if (stack.grids.size() % stack.names.size() != 0)
    throw DataError("write_sigd: ragged stack");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  auto put_u32 = [&os](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  os.write(kSigdMagic, 5);
  put_u32(static_cast<uint32_t>(stack.h));
  put_u32(static_cast<uint32_t>(stack.w));
  put_u32(static_cast<uint32_t>(stack.names.size()));
  put_u32(static_cast<uint32_t>(stack.days()));
  for (const std::string& name : stack.names) {
    put_u32(static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  const std::string date = format_date(stack.start);
  put_u32(static_cast<uint32_t>(date.size()));
  os.write(date.data(), static_cast<std::streamsize>(date.size()));

  std::vector<uint32_t> row(static_cast<size_t>(stack.h) * stack.w);
  for (const Grid& g : stack.grids) {
    if (g.h != stack.h || g.w != stack.w)
      throw DataError("write_sigd: grid dimensions differ from the stack header");
    for (size_t i = 0; i < g.v.size(); ++i) {
      if (g.ok[i]) {
        uint32_t bits;
        std::memcpy(&bits, &g.v[i], 4);
        row[i] = bits;
      } else {
        row[i] = kSigdNanBits;
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * 4));
  }
  if (!os) throw IoError("write failed: " + path);
}

inline RawStack read_sigd(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[5] = {};
  if (!is.read(magic, 5) || std::memcmp(magic, kSigdMagic, 5) != 0)
    throw IoError("bad SIGD magic in " + path);
  auto get_u32 = [&is, &path]() {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated SIGD: " + path);
    return v;
  };
  RawStack stack;
  stack.h = static_cast<int>(get_u32());
  stack.w = static_cast<int>(get_u32());
  const uint32_t n_layers = get_u32();
  const uint32_t n_days = get_u32();
  if (stack.h <= 0 || stack.w <= 0 || n_layers == 0 || n_layers > 64)
    throw IoError("implausible SIGD header in " + path);
  for (uint32_t i = 0; i < n_layers; ++i) {
    const uint32_t len = get_u32();
    if (len > 256) throw IoError("implausible layer name length in " + path);
    std::string name(len, '\0');
    if (len && !is.read(name.data(), len)) throw IoError("truncated SIGD: " + path);
    stack.names.push_back(std::move(name));
  }
  {
    const uint32_t len = get_u32();
    if (len > 64) throw IoError("implausible date length in " + path);
    std::string date(len, '\0');
    if (len && !is.read(date.data(), len)) throw IoError("truncated SIGD: " + path);
    stack.start = parse_date(date);
  }
  stack.grids.reserve(static_cast<size_t>(n_days) * n_layers);
  const size_t cells = static_cast<size_t>(stack.h) * stack.w;
  std::vector<float> buf(cells);
  for (uint32_t d = 0; d < n_days; ++d)
    for (uint32_t v = 0; v < n_layers; ++v) {
      if (!is.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(cells * 4)))
        throw IoError(strprintf("truncated SIGD body (day %u, layer %u): %s", d, v,
                                path.c_str()));
      Grid g(stack.h, stack.w);
      for (size_t i = 0; i < cells; ++i) {
        if (std::isnan(buf[i])) {
          g.v[i] = 0.f;
          g.ok[i] = 0;
        } else {
          g.v[i] = buf[i];
          g.ok[i] = 1;
        }
      }
      stack.grids.push_back(std::move(g));
    }
  return stack;
}

// Typed variable view used by the forecasting pipeline.
inline void write_stack(const std::string& path, const GridStack& stack) {
  RawStack raw;
  raw.h = stack.h;
  raw.w = stack.w;
  raw.start = stack.start;
  for (Var v : stack.vars) raw.names.emplace_back(var_name(v));
  raw.grids = stack.grids;
  write_sigd(path, raw);
}

inline GridStack read_stack(const std::string& path) {
  RawStack raw = read_sigd(path);
  GridStack stack;
  stack.h = raw.h;
  stack.w = raw.w;
  stack.start = raw.start;
  for (const std::string& name : raw.names) stack.vars.push_back(var_from_name(name));
  stack.grids = std::move(raw.grids);
  return stack;
}

}  // namespace floe
