#pragma once

// RPC envelope, carried as the payload of one GMP message:
//
//   offset 0  flags         u8   bit 0: response, bit 1: error
//   offset 1  corr_session  u32  big-endian (0 in requests)
//   offset 5  corr_seq      u32  big-endian (0 in requests)
//   offset 9  method_len    u8
//   offset 10 method        method_len bytes
//   then      body          rest of the payload
//
// A response's correlation fields equal the GMP (session, seq) of the
// request it answers.

#include <cstdint>
#include <string>

#include "octkit/bytes.hpp"

namespace oct::rpc {

inline constexpr std::uint8_t kFlagResponse = 0x01;
inline constexpr std::uint8_t kFlagError = 0x02;

struct RpcEnvelope {
  std::uint8_t flags = 0;
  std::uint32_t corr_session = 0;
  std::uint32_t corr_seq = 0;
  std::string method;
  Bytes body;

  bool is_response() const { return flags & kFlagResponse; }
  bool is_error() const { return flags & kFlagError; }

  bool operator==(const RpcEnvelope&) const = default;
};

inline Bytes encode_envelope(const RpcEnvelope& e) {
  if (e.method.size() > 255)
    throw std::length_error("rpc method name exceeds 255 bytes");
  Bytes out;
  out.reserve(10 + e.method.size() + e.body.size());
  out.push_back(e.flags);
  be_put32(out, e.corr_session);
  be_put32(out, e.corr_seq);
  out.push_back(static_cast<std::uint8_t>(e.method.size()));
  out.insert(out.end(), e.method.begin(), e.method.end());
  out.insert(out.end(), e.body.begin(), e.body.end());
  return out;
}

inline Expected<RpcEnvelope> decode_envelope(ByteView b) {
  using R = Expected<RpcEnvelope>;
  if (b.size() < 10) return R::failure("malformed envelope");
  RpcEnvelope e;
  e.flags = b[0];
  e.corr_session = be_get32(&b[1]);
  e.corr_seq = be_get32(&b[5]);
  std::uint8_t mlen = b[9];
  if (b.size() < 10u + mlen) return R::failure("malformed envelope");
  e.method.assign(reinterpret_cast<const char*>(&b[10]), mlen);
  e.body.assign(b.begin() + 10 + mlen, b.end());
  return e;
}

}  // namespace oct::rpc
