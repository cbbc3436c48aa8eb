#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pushlab/tensor.hpp"
#include "pushlab/util.hpp"

namespace pushlab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

// Self-describing binary container: a magic string followed by tensor records
// (u32 name length, name bytes, u32 rank, u32 dims, float32 payload) until EOF.
struct Checkpoint {
  static constexpr const char* kEncoderMagic = "PUSHAE1";
  static constexpr const char* kAgentMagic = "PUSHRL1";

  struct Entry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
  };

  std::string magic;
  std::vector<Entry> entries;

  void add(const std::string& name, const nets::Tensor& t) {
    Entry e;
    e.name = name;
    e.dims = {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)};
    e.data = t.v;
    entries.push_back(std::move(e));
  }

  void add_scalar(const std::string& name, float value) {
    Entry e;
    e.name = name;
    e.dims = {1};
    e.data = {value};
    entries.push_back(std::move(e));
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  float scalar(const std::string& name) const {
    const Entry* e = find(name);
    if (!e || e->data.size() != 1)
      throw ConfigError("checkpoint: missing scalar '" + name + "'");
    return e->data[0];
  }

  nets::Tensor tensor(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) throw ConfigError("checkpoint: missing tensor '" + name + "'");
    if (e->dims.size() != 2) throw ConfigError("checkpoint: '" + name + "' is not 2-D");
    nets::Tensor t(static_cast<int>(e->dims[0]), static_cast<int>(e->dims[1]));
    if (t.v.size() != e->data.size())
      throw ConfigError("checkpoint: size mismatch for '" + name + "'");
    t.v = e->data;
    return t;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("checkpoint: cannot write " + path);
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    for (const auto& e : entries) {
      write_u32(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_u32(out, static_cast<std::uint32_t>(e.dims.size()));
      for (const auto d : e.dims) write_u32(out, d);
      out.write(reinterpret_cast<const char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!out) throw ConfigError("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path, const std::string& expected_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("checkpoint: cannot open " + path);
    Checkpoint ck;
    ck.magic.resize(expected_magic.size());
    in.read(ck.magic.data(), static_cast<std::streamsize>(ck.magic.size()));
    if (!in || ck.magic != expected_magic)
      throw ConfigError("checkpoint: bad magic in " + path + " (expected " + expected_magic +
                        ")");
    while (true) {
      std::uint32_t name_len = 0;
      if (!read_u32(in, name_len)) break;
      Entry e;
      e.name.resize(name_len);
      in.read(e.name.data(), name_len);
      std::uint32_t rank = 0;
      if (!read_u32(in, rank)) throw ConfigError("checkpoint: truncated " + path);
      std::uint64_t count = 1;
      for (std::uint32_t r = 0; r < rank; ++r) {
        std::uint32_t d = 0;
        if (!read_u32(in, d)) throw ConfigError("checkpoint: truncated " + path);
        e.dims.push_back(d);
        count *= d;
      }
      e.data.resize(count);
      in.read(reinterpret_cast<char*>(e.data.data()),
              static_cast<std::streamsize>(count * sizeof(float)));
      if (!in) throw ConfigError("checkpoint: truncated " + path);
      ck.entries.push_back(std::move(e));
    }
    return ck;
  }

 private:
  static void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static bool read_u32(std::ifstream& in, std::uint32_t& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return static_cast<bool>(in);
  }
};

}  // namespace pushlab
