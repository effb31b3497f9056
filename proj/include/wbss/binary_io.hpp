#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wbss/error.hpp"

namespace wbss::io {

namespace fs = std::filesystem;

template <typename U>
void put_le(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t b = 0; b < sizeof(U); ++b) bytes[b] = static_cast<unsigned char>((value >> (8 * b)) & 0xffu);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw IoError("unexpected end of file");
  U value = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) value |= static_cast<U>(bytes[b]) << (8 * b);
  return value;
}

inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

/// Writes a run of floats as little-endian f32.
inline void put_f32_array(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) put_f32(os, v);
  }
}

inline void get_f32_array(std::istream& is, std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()))) {
      throw IoError("unexpected end of file");
    }
  } else {
    for (float& v : out) v = get_f32(is);
  }
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PreconditionError("cannot open " + path.string());
  return is;
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

inline std::string read_text(const fs::path& path) {
  auto is = open_in(path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

/// Tracks files produced by a command. Unless commit() is reached, the
/// destructor deletes them together with the `.incomplete` marker.
class OutputGuard {
 public:
  explicit OutputGuard(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    write_text(marker(), "");
  }
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;

  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    fs::remove(marker(), ec);
  }

  fs::path track(const std::string& name) {
    files_.push_back(dir_ / name);
    return files_.back();
  }

  void commit() {
    committed_ = true;
    std::error_code ec;
    fs::remove(marker(), ec);
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path marker() const { return dir_ / ".incomplete"; }

  fs::path dir_;
  std::vector<fs::path> files_;
  bool committed_ = false;
};

}  // namespace wbss::io
