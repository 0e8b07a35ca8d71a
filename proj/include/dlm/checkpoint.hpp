#pragma once

// Binary checkpoint container. All integers and floats are little-endian.
//
//   magic          8 bytes  "DLMCKPT\0"
//   version        u32      kCheckpointVersion
//   meta_count     u32
//     key          u32 length + UTF-8 bytes
//     value        u32 length + UTF-8 bytes
//   net_count      u32
//     name         u32 length + bytes
//     input_dim, hidden_layers, hidden_width, output_dim, activation   5 x u32
//     param_count  u64
//     params       param_count x f64 (flat layout of nn::layer_offsets)
//   array_count    u32
//     name         u32 length + bytes
//     count        u64
//     values       count x f64
//
// Metadata entries are written in key order, sections in insertion order, so
// equal checkpoints serialize to equal bytes.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dlm/errors.hpp"
#include "dlm/nn.hpp"

namespace dlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'D', 'L', 'M', 'C', 'K', 'P', 'T', '\0'};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, nn::MLPModel>> nets;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;

  const nn::MLPModel* net(const std::string& name) const {
    for (const auto& [n, m] : nets)
      if (n == name) return &m;
    return nullptr;
  }
  const std::vector<double>* array(const std::string& name) const {
    for (const auto& [n, a] : arrays)
      if (n == name) return &a;
    return nullptr;
  }
  const std::string& require_meta(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("checkpoint: missing metadata key '" + key + "'");
    return it->second;
  }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b, 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b, 8);
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& is, char* dst, std::size_t n) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError("checkpoint: truncated input");
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  read_exact(is, reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }
inline std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 24)) throw FormatError("checkpoint: implausible string length");
  std::string s(n, '\0');
  read_exact(is, s.data(), n);
  return s;
}
inline std::vector<double> get_f64_array(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1ull << 32)) throw FormatError("checkpoint: implausible array length");
  std::vector<double> v(n);
  for (auto& x : v) x = get_f64(is);
  return v;
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& os) {
  using namespace detail;
  os.write(kCheckpointMagic, 8);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    put_str(os, k);
    put_str(os, v);
  }
  put_u32(os, static_cast<std::uint32_t>(ck.nets.size()));
  for (const auto& [name, net] : ck.nets) {
    put_str(os, name);
    const auto& s = net.spec();
    put_u32(os, static_cast<std::uint32_t>(s.input_dim));
    put_u32(os, static_cast<std::uint32_t>(s.hidden_layers));
    put_u32(os, static_cast<std::uint32_t>(s.hidden_width));
    put_u32(os, static_cast<std::uint32_t>(s.output_dim));
    put_u32(os, static_cast<std::uint32_t>(s.activation));
    put_u64(os, net.size());
    for (double p : net.params()) put_f64(os, p);
  }
  put_u32(os, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& [name, values] : ck.arrays) {
    put_str(os, name);
    put_u64(os, values.size());
    for (double v : values) put_f64(os, v);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  using namespace detail;
  char magic[8];
  read_exact(is, magic, 8);
  if (!std::equal(magic, magic + 8, kCheckpointMagic)) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) throw VersionError(version, kCheckpointVersion);
  Checkpoint ck;
  for (std::uint32_t i = 0, n = get_u32(is); i < n; ++i) {
    std::string k = get_str(is);
    ck.meta[k] = get_str(is);
  }
  for (std::uint32_t i = 0, n = get_u32(is); i < n; ++i) {
    std::string name = get_str(is);
    nn::MLPSpec s;
    s.input_dim = get_u32(is);
    s.hidden_layers = get_u32(is);
    s.hidden_width = get_u32(is);
    s.output_dim = get_u32(is);
    if (get_u32(is) != static_cast<std::uint32_t>(nn::Activation::tanh))
      throw FormatError("checkpoint: unknown activation");
    auto params = get_f64_array(is);
    try {
      ck.nets.emplace_back(std::move(name), nn::MLPModel(s, std::move(params)));
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("checkpoint: invalid network section: ") + e.what());
    }
  }
  for (std::uint32_t i = 0, n = get_u32(is); i < n; ++i) {
    std::string name = get_str(is);
    ck.arrays.emplace_back(std::move(name), get_f64_array(is));
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(ck, os);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace dlm
