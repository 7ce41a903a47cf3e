#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "densemarks/common.hpp"

namespace densemarks {

// Little-endian binary writer/reader. Read errors report the file and the
// byte offset at which parsing failed.

class BinWriter {
public:
  explicit BinWriter(const std::string& path)
      : path_(path), out_(path, std::ios::binary) {
    if (!out_) fail(ErrorKind::io, "cannot open for writing: " + path);
  }

  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), std::streamsize(n));
  }
  void magic(const char* s) { bytes(s, std::strlen(s)); }
  void u32(uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }
  void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
  void f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    u32(static_cast<uint32_t>(u));
    u32(static_cast<uint32_t>(u >> 32));
  }
  void close() {
    out_.close();
    if (!out_) fail(ErrorKind::io, "write failed: " + path_);
  }

private:
  std::string path_;
  std::ofstream out_;
};

class BinReader {
public:
  explicit BinReader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) fail(ErrorKind::io, "cannot open: " + path);
  }

  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), std::streamsize(n));
    if (in_.gcount() != std::streamsize(n))
      parse_fail("unexpected end of file");
    offset_ += n;
  }
  void magic(const char* s) {
    size_t n = std::strlen(s);
    char buf[16];
    bytes(buf, n);
    if (std::memcmp(buf, s, n) != 0)
      parse_fail(std::string("bad magic, expected ") + s, offset_ - n);
  }
  uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
           uint32_t(b[3]) << 24;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  float f32() {
    uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  double f64() {
    uint64_t lo = u32();
    uint64_t hi = u32();
    uint64_t u = lo | (hi << 32);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  size_t offset() const { return offset_; }
  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

  [[noreturn]] void parse_fail(const std::string& msg) { parse_fail(msg, offset_); }
  [[noreturn]] void parse_fail(const std::string& msg, size_t at) {
    fail(ErrorKind::input_format,
         path_ + " at byte " + std::to_string(at) + ": " + msg);
  }

private:
  std::string path_;
  std::ifstream in_;
  size_t offset_ = 0;
};

}  // namespace densemarks
