#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "malkit/errors.hpp"
#include "malkit/params.hpp"

// Binary checkpoint layout (all integers uint64 little-endian, all values
// IEEE-754 binary64 little-endian):
//
//   "MALCKPT1" | parameter count
//   per parameter:
//     name length | name bytes | group length | group bytes
//     rank | dims... | values
//     adam step | first moment values | second moment values
namespace malkit::nn {

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'L', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void put_values(std::ostream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.raw()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ContractError("checkpoint truncated");
  return v;
}
inline std::string get_string(std::istream& is) {
  const std::uint64_t n = get_u64(is);
  if (n > (1u << 20)) throw ContractError("checkpoint string length implausible");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n)))
    throw ContractError("checkpoint truncated");
  return s;
}
inline void get_values(std::istream& is, Tensor& t) {
  if (!is.read(reinterpret_cast<char*>(t.raw()),
               static_cast<std::streamsize>(t.size() * sizeof(double))))
    throw ContractError("checkpoint truncated");
}

}  // namespace detail

inline void write_checkpoint(const ParamStore& store, std::ostream& os) {
  os.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
  detail::put_u64(os, store.size());
  for (const Parameter& p : store.all()) {
    detail::put_string(os, p.name);
    detail::put_string(os, p.group);
    detail::put_u64(os, p.value.rank());
    for (std::size_t d : p.value.shape()) detail::put_u64(os, d);
    detail::put_values(os, p.value);
    detail::put_u64(os, p.adam.step);
    detail::put_values(os, p.adam.m);
    detail::put_values(os, p.adam.v);
  }
}

inline void write_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContractError("cannot open checkpoint for writing: " + path);
  write_checkpoint(store, os);
}

inline ParamStore read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) ||
      std::memcmp(magic, detail::kCheckpointMagic, sizeof magic) != 0) {
    throw ContractError("not a checkpoint (bad magic)");
  }
  ParamStore store;
  const std::uint64_t count = detail::get_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    Parameter p;
    p.name = detail::get_string(is);
    p.group = detail::get_string(is);
    const std::uint64_t rank = detail::get_u64(is);
    if (rank > 8) throw ContractError("checkpoint rank implausible for '" + p.name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(is);
    p.value = Tensor(shape);
    detail::get_values(is, p.value);
    p.adam.step = detail::get_u64(is);
    p.adam.m = Tensor(shape);
    p.adam.v = Tensor(shape);
    detail::get_values(is, p.adam.m);
    detail::get_values(is, p.adam.v);
    store.insert(std::move(p));
  }
  return store;
}

inline ParamStore read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace malkit::nn
