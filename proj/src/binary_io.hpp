#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vsid/error.hpp"

namespace vsid::io {

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  template <class T>
  void put_array(std::span<const T> v) {
    put_bytes(v.data(), v.size() * sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    put_bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Reads fixed-width fields; running past the end throws `short_code`.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, ErrorCode short_code)
      : bytes_(bytes), short_code_(short_code) {}

  void read(void* dst, std::size_t n) {
    if (bytes_.size() - pos_ < n) throw Error(short_code_, "unexpected end of data");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
  template <class T>
  std::vector<T> get_array(std::size_t n) {
    if ((bytes_.size() - pos_) / sizeof(T) < n) throw Error(short_code_, "array past end of data");
    std::vector<T> v(n);
    read(v.data(), n * sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (bytes_.size() - pos_ < n) throw Error(short_code_, "string past end of data");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  ErrorCode short_code_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// FNV-1a 64-bit.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes);

}  // namespace vsid::io
