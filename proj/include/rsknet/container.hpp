#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "rsknet/tensor.hpp"

namespace rsknet {

/// Binary container shared by checkpoints, embedding archives and feature
/// caches:
///
///   "RSKN" | u32 version | u64 header length | header text (INI)
///   u64 record count | records...
///   record: u32 key length | key | u32 rank | u32 dims[rank] | f32 data
///
/// Integers and floats are little-endian.
struct Record {
  std::string key;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

struct Container {
  std::string header;
  std::vector<Record> records;

  const Record* find(const std::string& key) const {
    for (const auto& r : records)
      if (r.key == key) return &r;
    return nullptr;
  }
  const Record& at(const std::string& key) const {
    const Record* r = find(key);
    if (!r) throw DataError("container has no record '" + key + "'");
    return *r;
  }
};

inline constexpr char kContainerMagic[4] = {'R', 'S', 'K', 'N'};
inline constexpr std::uint32_t kContainerVersion = 1;

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) { put_le(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::string buf, std::string source) : buf_(std::move(buf)), src_(std::move(source)) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw DataError(src_ + ": truncated container at byte " + std::to_string(pos_));
  }
  std::string buf_;
  std::string src_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Container& c) {
  std::string out(kContainerMagic, 4);
  detail::put_le<std::uint32_t>(out, kContainerVersion);
  detail::put_le<std::uint64_t>(out, c.header.size());
  out += c.header;
  detail::put_le<std::uint64_t>(out, c.records.size());
  for (const auto& r : c.records) {
    std::size_t n = 1;
    for (auto d : r.shape) n *= d;
    if (n != r.data.size()) throw ShapeError("container record '" + r.key + "': shape does not match data");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.key.size()));
    out += r.key;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) detail::put_le<std::uint32_t>(out, d);
    for (float f : r.data) detail::put_f32(out, f);
  }
  return out;
}

inline Container deserialize(std::string bytes, const std::string& source = "container") {
  detail::Reader rd(std::move(bytes), source);
  if (rd.bytes(4) != std::string(kContainerMagic, 4)) throw DataError(source + ": bad magic");
  const auto version = rd.get<std::uint32_t>();
  if (version != kContainerVersion)
    throw DataError(source + ": unsupported container version " + std::to_string(version));
  Container c;
  c.header = rd.bytes(rd.get<std::uint64_t>());
  const auto count = rd.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    Record r;
    r.key = rd.bytes(rd.get<std::uint32_t>());
    r.shape.resize(rd.get<std::uint32_t>());
    std::size_t n = 1;
    for (auto& d : r.shape) n *= (d = rd.get<std::uint32_t>());
    r.data.resize(n);
    for (float& f : r.data) f = rd.f32();
    c.records.push_back(std::move(r));
  }
  if (!rd.done()) throw DataError(source + ": trailing bytes after last record");
  return c;
}

inline void write_container(const std::string& path, const Container& c) {
  const std::string bytes = serialize(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot rename " + tmp + " to " + path);
}

inline Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  return deserialize(std::move(bytes), path);
}

}  // namespace rsknet
