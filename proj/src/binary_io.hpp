#pragma once

// Little-endian helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rvuda/error.hpp"

namespace rvuda::detail {

inline uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline float read_f32_le(const unsigned char* p) { return std::bit_cast<float>(read_u32_le(p)); }

inline void write_u32_le(std::ostream& out, uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

inline void write_u64_le(std::ostream& out, uint64_t v) {
  write_u32_le(out, static_cast<uint32_t>(v & 0xffffffffu));
  write_u32_le(out, static_cast<uint32_t>(v >> 32));
}

inline void write_f32_le(std::ostream& out, float v) { write_u32_le(out, std::bit_cast<uint32_t>(v)); }

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::io, "read failed for " + path.string());
  return bytes;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  return out;
}

/// Bounds-checked sequential reader; running past the end throws `truncated`.
class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, Errc truncated)
      : bytes_(bytes), truncated_(truncated) {}

  const unsigned char* take(size_t n) {
    if (bytes_.size() - pos_ < n) throw Error(truncated_, "unexpected end of file");
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  uint32_t u32() { return read_u32_le(take(4)); }
  uint64_t u64() {
    const uint64_t lo = u32();
    return lo | (static_cast<uint64_t>(u32()) << 32);
  }
  float f32() { return read_f32_le(take(4)); }
  std::string str(size_t n) {
    const unsigned char* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<unsigned char>& bytes_;
  Errc truncated_;
  size_t pos_ = 0;
};

}  // namespace rvuda::detail
