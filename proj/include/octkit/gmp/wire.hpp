#pragma once

// GMP wire format. One datagram carries one packet:
//
//   offset 0   version   u8   (currently 1)
//   offset 1   kind      u8
//   offset 2   session   u32  big-endian
//   offset 6   seq       u32  big-endian
//   offset 10  len       u16  big-endian, payload byte count
//   offset 12  payload   len bytes
//
// The full layout, including the per-kind meaning of `seq` and the payload
// encodings of the chunk sub-protocol, is documented in docs/wire.md.

#include <cstdint>

#include "octkit/bytes.hpp"

namespace oct::gmp {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::size_t kMaxPayload = 1400;

enum class PacketKind : std::uint8_t {
  Data = 0,
  Ack = 1,
  ChunkInit = 2,
  ChunkData = 3,
  ChunkAck = 4,
  ChunkFin = 5,
};

inline const char* to_string(PacketKind k) {
  switch (k) {
    case PacketKind::Data: return "DATA";
    case PacketKind::Ack: return "ACK";
    case PacketKind::ChunkInit: return "CHUNK_INIT";
    case PacketKind::ChunkData: return "CHUNK_DATA";
    case PacketKind::ChunkAck: return "CHUNK_ACK";
    case PacketKind::ChunkFin: return "CHUNK_FIN";
  }
  return "?";
}

struct GmpPacket {
  std::uint8_t version = kProtocolVersion;
  PacketKind kind = PacketKind::Data;
  std::uint32_t session_id = 0;
  std::uint32_t seq = 0;
  Bytes payload;

  bool operator==(const GmpPacket&) const = default;
};

inline Bytes encode_packet(const GmpPacket& p) {
  if (p.payload.size() > kMaxPayload)
    throw std::length_error("gmp payload exceeds 1400 bytes");
  Bytes out;
  out.reserve(kHeaderSize + p.payload.size());
  out.push_back(p.version);
  out.push_back(static_cast<std::uint8_t>(p.kind));
  be_put32(out, p.session_id);
  be_put32(out, p.seq);
  be_put16(out, static_cast<std::uint16_t>(p.payload.size()));
  out.insert(out.end(), p.payload.begin(), p.payload.end());
  return out;
}

inline Expected<GmpPacket> decode_packet(ByteView b) {
  using R = Expected<GmpPacket>;
  if (b.size() < kHeaderSize) return R::failure("truncated header");
  GmpPacket p;
  p.version = b[0];
  if (p.version != kProtocolVersion) return R::failure("unknown version");
  if (b[1] > static_cast<std::uint8_t>(PacketKind::ChunkFin))
    return R::failure("unknown kind");
  p.kind = static_cast<PacketKind>(b[1]);
  p.session_id = be_get32(&b[2]);
  p.seq = be_get32(&b[6]);
  std::uint16_t len = be_get16(&b[10]);
  if (len > kMaxPayload) return R::failure("payload too large");
  if (b.size() != kHeaderSize + len) return R::failure("payload length mismatch");
  p.payload.assign(b.begin() + kHeaderSize, b.end());
  return p;
}

}  // namespace oct::gmp
