#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "gsno/grid.hpp"

namespace gsno {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian layout");

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<unsigned char>& bytes);

/// Append-only little-endian byte buffer.
class BinaryWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void f64s(const double* p, std::size_t n) { bytes(p, n * 8); }
  void vec(const VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    f64s(v.data(), static_cast<std::size_t>(v.size()));
  }

  const std::vector<unsigned char>& data() const noexcept { return buf_; }
  void save(const std::string& path) const { write_file(path, buf_); }

 private:
  std::vector<unsigned char> buf_;
};

/// Bounds-checked reader; every failure reports the byte offset.
class BinaryReader {
 public:
  explicit BinaryReader(std::vector<unsigned char> data) : buf_(std::move(data)) {}
  static BinaryReader open(const std::string& path) { return BinaryReader(read_file(path)); }

  void bytes(void* p, std::size_t n, const char* what) {
    if (n > buf_.size() - pos_) throw FormatError(std::string("truncated while reading ") + what, pos_);
    if (n == 0) return;  // p may be null for empty containers
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8(const char* what) { std::uint8_t v; bytes(&v, 1, what); return v; }
  std::uint32_t u32(const char* what) { std::uint32_t v; bytes(&v, 4, what); return v; }
  std::uint64_t u64(const char* what) { std::uint64_t v; bytes(&v, 8, what); return v; }
  double f64(const char* what) { double v; bytes(&v, 8, what); return v; }
  void f64s(double* p, std::size_t n, const char* what) {
    if (n > (buf_.size() - pos_) / 8) throw FormatError(std::string("truncated while reading ") + what, pos_);
    bytes(p, n * 8, what);
  }
  /// A length-prefixed vector; `limit` guards against absurd lengths.
  VectorXd vec(const char* what, std::uint64_t limit = 1ull << 32) {
    const std::size_t at = pos_;
    const std::uint64_t n = u64(what);
    if (n > limit) throw FormatError(std::string("implausible length for ") + what, at);
    VectorXd v(static_cast<Index>(n));
    f64s(v.data(), n, what);
    return v;
  }
  void magic(const char (&expect)[9]) {
    char got[8];
    bytes(got, 8, "magic");
    if (std::memcmp(got, expect, 8) != 0) throw FormatError("bad magic bytes", 0);
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw FormatError("trailing bytes after payload", pos_);
  }

  std::size_t offset() const noexcept { return pos_; }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

/// Worker count: GSNO_THREADS if set, else the hardware concurrency.
unsigned worker_count();

/// Run fn(i) for i in [0, n) on up to worker_count() threads. Each index runs
/// exactly once; results must be written to per-index slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gsno
