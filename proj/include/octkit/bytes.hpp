#pragma once

// Small shared utilities: byte buffers, big-endian packing, FNV-1a hashing,
// virtual-time aliases, network addresses and a minimal Expected<T>.

#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace oct {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// All clocks in this project count nanoseconds. In simulation they are
// virtual nanoseconds since the start of the run; the UDP event loop maps
// a steady clock onto the same representation.
using Duration = std::chrono::nanoseconds;
using TimePoint = std::chrono::nanoseconds;

inline constexpr TimePoint kNever = TimePoint::max();

inline ByteView view_of(const Bytes& b) { return ByteView(b.data(), b.size()); }

inline ByteView view_of(std::string_view s) {
  return ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

inline Bytes to_bytes(std::string_view s) {
  return Bytes(s.begin(), s.end());
}

inline std::string to_string(ByteView b) {
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

// Transport address. In the simulator `host` is a topology vertex id; for
// the UDP port it is an IPv4 address in host byte order.
struct NetAddress {
  std::uint32_t host = 0;
  std::uint16_t port = 0;

  auto operator<=>(const NetAddress&) const = default;
};

inline std::string to_string(const NetAddress& a) {
  return std::to_string(a.host) + ":" + std::to_string(a.port);
}

// ---- big-endian packing ----

inline void be_put16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void be_put32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void be_put64(Bytes& out, std::uint64_t v) {
  be_put32(out, static_cast<std::uint32_t>(v >> 32));
  be_put32(out, static_cast<std::uint32_t>(v));
}

inline std::uint16_t be_get16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

inline std::uint32_t be_get32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) |
         static_cast<std::uint32_t>(p[3]);
}

inline std::uint64_t be_get64(const std::uint8_t* p) {
  return (static_cast<std::uint64_t>(be_get32(p)) << 32) | be_get32(p + 4);
}

// Sequential writer/reader for the handful of internal message payloads.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { be_put16(buf_, v); }
  void u32(std::uint32_t v) { be_put32(buf_, v); }
  void u64(std::uint64_t v) { be_put64(buf_, v); }
  void i64(std::int64_t v) { be_put64(buf_, static_cast<std::uint64_t>(v)); }
  void raw(ByteView v) { buf_.insert(buf_.end(), v.begin(), v.end()); }
  void str8(std::string_view s) {
    u8(static_cast<std::uint8_t>(s.size()));
    raw(view_of(s));
  }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(view_of(s));
  }

  Bytes take() { return std::move(buf_); }
  const Bytes& bytes() const { return buf_; }

 private:
  Bytes buf_;
};

// Fail-flag reader: out-of-bounds reads latch `ok() == false` and return
// zeros, so callers can validate once at the end.
class ByteReader {
 public:
  explicit ByteReader(ByteView v) : v_(v) {}

  std::uint8_t u8() { return take(1) ? v_[pos_ - 1] : 0; }
  std::uint16_t u16() { return take(2) ? be_get16(&v_[pos_ - 2]) : 0; }
  std::uint32_t u32() { return take(4) ? be_get32(&v_[pos_ - 4]) : 0; }
  std::uint64_t u64() { return take(8) ? be_get64(&v_[pos_ - 8]) : 0; }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }

  Bytes raw(std::size_t n) {
    if (!take(n)) return {};
    return Bytes(v_.begin() + static_cast<std::ptrdiff_t>(pos_ - n),
                 v_.begin() + static_cast<std::ptrdiff_t>(pos_));
  }

  std::string str8() {
    std::size_t n = u8();
    Bytes b = raw(n);
    return std::string(b.begin(), b.end());
  }

  std::string str32() {
    std::size_t n = u32();
    Bytes b = raw(n);
    return std::string(b.begin(), b.end());
  }

  Bytes rest() { return raw(v_.size() - pos_); }

  std::size_t remaining() const { return v_.size() - pos_; }
  bool ok() const { return ok_; }
  bool done() const { return ok_ && pos_ == v_.size(); }

 private:
  bool take(std::size_t n) {
    if (!ok_ || v_.size() - pos_ < n) {
      ok_ = false;
      return false;
    }
    pos_ += n;
    return true;
  }

  ByteView v_;
  std::size_t pos_ = 0;
  bool ok_ = true;
};

// ---- FNV-1a 64 ----

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

class Fnv64 {
 public:
  void update(ByteView v) {
    for (std::uint8_t b : v) {
      h_ ^= b;
      h_ *= kFnvPrime;
    }
  }
  void update(std::string_view s) { update(view_of(s)); }
  void update_u64(std::uint64_t v) {
    for (int i = 7; i >= 0; --i) {
      h_ ^= static_cast<std::uint8_t>(v >> (8 * i));
      h_ *= kFnvPrime;
    }
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = kFnvOffset;
};

inline std::uint64_t fnv1a64(ByteView v) {
  Fnv64 f;
  f.update(v);
  return f.digest();
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(view_of(s)); }

// ---- Expected ----

// Value-or-error-string result for parsers and codecs.
template <typename T>
class Expected {
 public:
  Expected(T v) : v_(std::move(v)) {}  // NOLINT: implicit by design

  static Expected failure(std::string msg) {
    Expected e;
    e.err_ = std::move(msg);
    return e;
  }

  bool ok() const { return v_.has_value(); }
  explicit operator bool() const { return ok(); }

  T& value() { return *v_; }
  const T& value() const { return *v_; }
  T* operator->() { return &*v_; }
  const T* operator->() const { return &*v_; }

  const std::string& error() const { return err_; }

 private:
  Expected() = default;
  std::optional<T> v_;
  std::string err_;
};

}  // namespace oct
