#pragma once

// The GMP endpoint: a connectionless reliable-datagram state machine.
//
// Every message carries the sender's session id and a per-peer sequence
// number. Receivers acknowledge each DATA packet (duplicates are re-acked so
// a sender whose ACK was lost can stop), deduplicate deliveries through a
// sliding window, and discard per-peer receive state when a packet arrives
// under a new session id (peer process restart). Recently replaced session
// ids are kept in a small retired ring so stale replays are suppressed
// rather than re-delivered.
//
// Payloads above the single-datagram limit travel over a chunk sub-protocol:
// CHUNK_INIT announces (transfer id, total length, chunk size), CHUNK_DATA
// frames flow inside a selective-repeat window with per-chunk CHUNK_ACKs,
// and CHUNK_FIN releases receiver state once the sender has seen every ack.
// The receiver emits exactly one Deliver per transfer. Transfers to the same
// peer are serialized; see docs/wire.md for the frame layouts.
//
// The endpoint is a single-writer state machine: one driver (the simulator
// or the UDP event loop) calls send_message / handle_datagram / handle_timer
// from one logical thread. Message handles are safe to observe from other
// threads.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "octkit/bytes.hpp"
#include "octkit/gmp/port.hpp"
#include "octkit/gmp/wire.hpp"

namespace oct::gmp {

inline constexpr std::uint32_t kChunkIndexBits = 22;
inline constexpr std::uint32_t kChunkIndexMask = (1u << kChunkIndexBits) - 1;
inline constexpr std::uint32_t kChunkTagMask = 0x3ff;
inline constexpr std::uint32_t kMaxChunkCount = kChunkIndexMask - 1;
inline constexpr std::uint32_t kInitAckSeq = 0xffffffffu;

inline std::uint32_t chunk_seq(std::uint32_t tid, std::uint32_t index) {
  return ((tid & kChunkTagMask) << kChunkIndexBits) | index;
}
inline std::uint32_t chunk_seq_tag(std::uint32_t seq) { return seq >> kChunkIndexBits; }
inline std::uint32_t chunk_seq_index(std::uint32_t seq) { return seq & kChunkIndexMask; }

struct EndpointConfig {
  Duration rto_initial = std::chrono::milliseconds(100);
  unsigned rto_backoff_factor = 2;
  // Total transmission attempts per packet, the first send included.
  unsigned max_retries = 8;
  std::size_t max_inline_payload = kMaxPayload;
  std::size_t chunk_window = 64;
  std::size_t dedup_window = 4096;
  std::size_t retired_sessions = 16;
  std::size_t completed_transfers = 16;
  std::uint64_t max_transfer_bytes = 1ull << 30;
};

enum class SendState { Pending, Acked, Failed };
enum class SendError { None, PeerUnreachable, TransferTimeout };

inline const char* to_string(SendError e) {
  switch (e) {
    case SendError::None: return "none";
    case SendError::PeerUnreachable: return "peer unreachable";
    case SendError::TransferTimeout: return "transfer timeout";
  }
  return "?";
}

namespace detail {

struct HandleState {
  std::mutex mu;
  std::condition_variable cv;
  SendState state = SendState::Pending;
  SendError error = SendError::None;
  std::uint32_t seq = 0;  // message seq: DATA seq, or the transfer's INIT seq
  std::function<void(SendState, SendError)> on_complete;
};

}  // namespace detail

class MessageHandle {
 public:
  MessageHandle() = default;
  explicit MessageHandle(std::shared_ptr<detail::HandleState> s) : s_(std::move(s)) {}

  bool valid() const { return s_ != nullptr; }

  SendState state() const {
    std::lock_guard lk(s_->mu);
    return s_->state;
  }

  SendError error() const {
    std::lock_guard lk(s_->mu);
    return s_->error;
  }

  std::uint32_t seq() const { return s_->seq; }

  // Registers a completion callback; fires immediately if already resolved.
  // With a driver loop the callback runs on the driver thread.
  void on_complete(std::function<void(SendState, SendError)> fn) {
    SendState st;
    SendError err;
    {
      std::lock_guard lk(s_->mu);
      if (s_->state == SendState::Pending) {
        s_->on_complete = std::move(fn);
        return;
      }
      st = s_->state;
      err = s_->error;
    }
    fn(st, err);
  }

  // Blocks the calling thread (real-clock); only meaningful when a threaded
  // driver resolves the handle. Returns false on timeout.
  bool wait_for(std::chrono::milliseconds timeout) const {
    std::unique_lock lk(s_->mu);
    return s_->cv.wait_for(lk, timeout,
                           [&] { return s_->state != SendState::Pending; });
  }

 private:
  std::shared_ptr<detail::HandleState> s_;
};

struct ProtocolEvent {
  enum class Type {
    Deliver,
    DuplicateSuppressed,
    AckProcessed,
    ChunkProgress,
    Retransmit,
    SendFailed,
    Error,
  };

  Type type{};
  NetAddress from{};
  std::uint32_t session = 0;
  std::uint32_t seq = 0;
  Bytes payload;        // Deliver only
  bool chunked = false; // Deliver arrived via the chunk sub-protocol
  std::string detail;
};

struct EndpointStats {
  std::uint64_t data_sent = 0;
  std::uint64_t data_retransmits = 0;
  std::uint64_t acks_sent = 0;
  std::uint64_t delivers = 0;
  std::uint64_t duplicates_suppressed = 0;
  std::uint64_t stale_session_drops = 0;
  std::uint64_t session_resets = 0;
  std::uint64_t chunks_sent = 0;
  std::uint64_t chunk_retransmits = 0;
  std::uint64_t transfers_started = 0;
  std::uint64_t transfers_completed = 0;
  std::uint64_t transfers_failed = 0;
  std::uint64_t send_failures = 0;
  std::uint64_t malformed_datagrams = 0;
};

// Dedup window: remembers delivery of sequence numbers in a sliding range of
// `width` below the highest seq seen for the current session. Anything older
// than the window is treated as already delivered; the window comfortably
// exceeds the retransmission horizon.
class DedupWindow {
 public:
  explicit DedupWindow(std::size_t width) : width_(width ? width : 1) {
    bits_.assign((width_ + 63) / 64, 0);
  }

  bool check_and_mark(std::uint32_t seq) {  // true = fresh
    if (!any_) {
      any_ = true;
      highest_ = seq;
      set(seq);
      return true;
    }
    if (seq > highest_) {
      std::uint64_t delta = static_cast<std::uint64_t>(seq) - highest_;
      if (delta >= width_) {
        bits_.assign(bits_.size(), 0);
      } else {
        for (std::uint32_t s = highest_ + 1; s != seq; ++s) clear(s);
        clear(seq);
      }
      highest_ = seq;
      set(seq);
      return true;
    }
    if (static_cast<std::uint64_t>(highest_) - seq >= width_) return false;
    if (test(seq)) return false;
    set(seq);
    return true;
  }

  void reset() {
    any_ = false;
    highest_ = 0;
    bits_.assign(bits_.size(), 0);
  }

 private:
  std::size_t slot(std::uint32_t seq) const { return seq % width_; }
  bool test(std::uint32_t seq) const {
    std::size_t i = slot(seq);
    return (bits_[i / 64] >> (i % 64)) & 1;
  }
  void set(std::uint32_t seq) {
    std::size_t i = slot(seq);
    bits_[i / 64] |= (1ull << (i % 64));
  }
  void clear(std::uint32_t seq) {
    std::size_t i = slot(seq);
    bits_[i / 64] &= ~(1ull << (i % 64));
  }

  std::size_t width_;
  std::vector<std::uint64_t> bits_;
  std::uint32_t highest_ = 0;
  bool any_ = false;
};

class Endpoint {
 public:
  Endpoint(DatagramPort& port, std::uint32_t session_id, EndpointConfig cfg = {})
      : port_(port), cfg_(cfg), session_id_(session_id) {
    if (session_id_ == 0)
      throw std::invalid_argument("session id 0 is reserved");
    if (cfg_.max_inline_payload > kMaxPayload)
      throw std::invalid_argument("inline payload limit exceeds wire maximum");
  }

  Endpoint(const Endpoint&) = delete;
  Endpoint& operator=(const Endpoint&) = delete;

  std::uint32_t session_id() const { return session_id_; }
  const EndpointStats& stats() const { return stats_; }
  const EndpointConfig& config() const { return cfg_; }
  DatagramPort& port() { return port_; }

  MessageHandle send_message(const NetAddress& peer, ByteView payload) {
    Peer& p = peer_state(peer);
    auto st = std::make_shared<detail::HandleState>();
    if (payload.size() <= cfg_.max_inline_payload) {
      std::uint32_t seq = p.next_seq++;
      st->seq = seq;
      GmpPacket pkt;
      pkt.kind = PacketKind::Data;
      pkt.session_id = session_id_;
      pkt.seq = seq;
      pkt.payload.assign(payload.begin(), payload.end());
      Bytes wire = encode_packet(pkt);
      // Record the retransmit entry before transmitting so drivers that
      // reschedule timers on send observe the new deadline.
      TxEntry& e = p.tx[{TxLane::Data, seq}];
      e = TxEntry{std::move(wire), port_.now() + cfg_.rto_initial, 1, st, 0};
      ++stats_.data_sent;
      port_.send(peer, view_of(e.wire));
    } else {
      start_large(peer, p, payload, st);
    }
    flush_callbacks();
    return MessageHandle(st);
  }

  std::vector<ProtocolEvent> handle_datagram(const NetAddress& from,
                                             ByteView datagram, TimePoint now) {
    std::vector<ProtocolEvent> events;
    auto decoded = decode_packet(datagram);
    if (!decoded) {
      ++stats_.malformed_datagrams;
      events.push_back(make_error(from, decoded.error()));
      return events;
    }
    const GmpPacket& pkt = decoded.value();
    switch (pkt.kind) {
      case PacketKind::Ack:
      case PacketKind::ChunkAck:
        handle_ack(from, pkt, events);
        break;
      case PacketKind::Data:
      case PacketKind::ChunkInit:
      case PacketKind::ChunkData:
      case PacketKind::ChunkFin:
        handle_from_sender(from, pkt, now, events);
        break;
    }
    flush_callbacks();
    return events;
  }

  std::vector<ProtocolEvent> handle_timer(TimePoint now) {
    std::vector<ProtocolEvent> events;
    for (auto& [addr, p] : peers_) {
      std::vector<TxKey> due;
      for (const auto& [key, e] : p.tx)
        if (e.deadline <= now) due.push_back(key);
      for (const TxKey& key : due) {
        auto it = p.tx.find(key);
        if (it == p.tx.end()) continue;  // removed by an earlier transfer failure
        TxEntry& e = it->second;
        if (e.attempts >= cfg_.max_retries) {
          if (key.lane == TxLane::Data) {
            ProtocolEvent ev;
            ev.type = ProtocolEvent::Type::SendFailed;
            ev.from = addr;
            ev.session = session_id_;
            ev.seq = key.id;
            ev.detail = to_string(SendError::PeerUnreachable);
            events.push_back(std::move(ev));
            resolve(e.handle, SendState::Failed, SendError::PeerUnreachable);
            ++stats_.send_failures;
            p.tx.erase(it);
          } else {
            fail_transfer(addr, p, e.transfer, events);
          }
        } else {
          ++e.attempts;
          e.deadline = now + backoff_delay(e.attempts);
          port_.send(addr, view_of(e.wire));
          if (key.lane == TxLane::Data)
            ++stats_.data_retransmits;
          else
            ++stats_.chunk_retransmits;
          ProtocolEvent ev;
          ev.type = ProtocolEvent::Type::Retransmit;
          ev.from = addr;
          ev.session = session_id_;
          ev.seq = key.id;
          events.push_back(std::move(ev));
        }
      }
    }
    flush_callbacks();
    return events;
  }

  std::optional<TimePoint> next_deadline() const {
    std::optional<TimePoint> min;
    for (const auto& [addr, p] : peers_)
      for (const auto& [key, e] : p.tx)
        if (!min || e.deadline < *min) min = e.deadline;
    return min;
  }

  std::size_t pending_entries() const {
    std::size_t n = 0;
    for (const auto& [addr, p] : peers_) n += p.tx.size();
    return n;
  }

 private:
  enum class TxLane : std::uint8_t { Data = 0, ChunkInit = 1, Chunk = 2 };

  struct TxKey {
    TxLane lane;
    std::uint32_t id;  // Data: seq; ChunkInit: transfer id; Chunk: tagged chunk seq
    auto operator<=>(const TxKey&) const = default;
  };

  struct TxEntry {
    Bytes wire;
    TimePoint deadline;
    unsigned attempts = 0;  // transmissions performed so far
    std::shared_ptr<detail::HandleState> handle;
    std::uint32_t transfer = 0;  // owning transfer id, 0 for plain DATA
  };

  struct OutTransfer {
    std::uint32_t tid = 0;
    std::uint32_t init_seq = 0;
    Bytes payload;
    std::uint32_t chunk_count = 0;
    std::uint32_t next_chunk = 0;
    std::uint32_t acked = 0;
    std::uint32_t inflight = 0;
    bool activated = false;
    bool init_acked = false;
    std::shared_ptr<detail::HandleState> handle;
  };

  struct InTransfer {
    std::uint32_t tid = 0;
    std::uint32_t init_seq = 0;
    std::uint64_t total = 0;
    std::uint16_t chunk_size = 0;
    std::uint32_t chunk_count = 0;
    Bytes buf;
    std::vector<bool> have;
    std::uint32_t have_count = 0;
    bool delivered = false;
  };

  struct Peer {
    explicit Peer(std::size_t dedup_width) : dedup(dedup_width) {}
    // transmit side
    std::uint32_t next_seq = 1;
    std::map<TxKey, TxEntry> tx;
    std::deque<OutTransfer> transfers;  // front is active; others queued
    // receive side
    bool rx_known = false;
    std::uint32_t rx_session = 0;
    DedupWindow dedup;
    std::optional<InTransfer> in;
    std::deque<std::uint32_t> retired;    // replaced sender sessions
    std::deque<std::uint32_t> completed;  // finished inbound transfer ids
  };

  Peer& peer_state(const NetAddress& a) {
    auto it = peers_.find(a);
    if (it == peers_.end())
      it = peers_.emplace(a, Peer(cfg_.dedup_window)).first;
    return it->second;
  }

  static ProtocolEvent make_error(const NetAddress& from, std::string detail) {
    ProtocolEvent ev;
    ev.type = ProtocolEvent::Type::Error;
    ev.from = from;
    ev.detail = std::move(detail);
    return ev;
  }

  Duration backoff_delay(unsigned attempts_done) const {
    // Wait after the k-th transmission is rto_initial * backoff^(k-1).
    Duration d = cfg_.rto_initial;
    for (unsigned i = 1; i < attempts_done && i < 30; ++i)
      d *= cfg_.rto_backoff_factor;
    return d;
  }

  void send_packet(const NetAddress& to, PacketKind kind, std::uint32_t session,
                   std::uint32_t seq, Bytes payload) {
    GmpPacket pkt;
    pkt.kind = kind;
    pkt.session_id = session;
    pkt.seq = seq;
    pkt.payload = std::move(payload);
    Bytes wire = encode_packet(pkt);
    port_.send(to, view_of(wire));
  }

  // ---- large-message transmit side ----

  void start_large(const NetAddress& addr, Peer& p, ByteView payload,
                   std::shared_ptr<detail::HandleState> st) {
    if (payload.size() > cfg_.max_transfer_bytes)
      throw std::length_error("payload exceeds transfer limit");
    OutTransfer t;
    t.tid = next_transfer_id_++;
    t.init_seq = p.next_seq++;  // reserved now so the handle's seq is stable
    t.payload.assign(payload.begin(), payload.end());
    std::uint64_t chunk = cfg_.max_inline_payload;
    t.chunk_count =
        static_cast<std::uint32_t>((t.payload.size() + chunk - 1) / chunk);
    if (t.chunk_count > kMaxChunkCount)
      throw std::length_error("payload exceeds chunk index space");
    t.handle = st;
    st->seq = t.init_seq;
    p.transfers.push_back(std::move(t));
    ++stats_.transfers_started;
    if (p.transfers.size() == 1) activate_transfer(addr, p);
  }

  void activate_transfer(const NetAddress& addr, Peer& p) {
    OutTransfer& t = p.transfers.front();
    t.activated = true;
    ByteWriter w;
    w.u32(t.tid);
    w.u64(t.payload.size());
    w.u16(static_cast<std::uint16_t>(cfg_.max_inline_payload));
    GmpPacket pkt;
    pkt.kind = PacketKind::ChunkInit;
    pkt.session_id = session_id_;
    pkt.seq = t.init_seq;
    pkt.payload = w.take();
    Bytes wire = encode_packet(pkt);
    TxEntry& e = p.tx[{TxLane::ChunkInit, t.tid}];
    e = TxEntry{std::move(wire), port_.now() + cfg_.rto_initial, 1, nullptr, t.tid};
    port_.send(addr, view_of(e.wire));
  }

  void fill_window(const NetAddress& addr, Peer& p) {
    if (p.transfers.empty()) return;
    OutTransfer& t = p.transfers.front();
    if (!t.init_acked) return;
    while (t.next_chunk < t.chunk_count && t.inflight < cfg_.chunk_window) {
      std::uint32_t idx = t.next_chunk++;
      std::uint64_t chunk = cfg_.max_inline_payload;
      std::uint64_t off = static_cast<std::uint64_t>(idx) * chunk;
      std::uint64_t len = std::min<std::uint64_t>(chunk, t.payload.size() - off);
      GmpPacket pkt;
      pkt.kind = PacketKind::ChunkData;
      pkt.session_id = session_id_;
      pkt.seq = chunk_seq(t.tid, idx);
      pkt.payload.assign(t.payload.begin() + static_cast<std::ptrdiff_t>(off),
                         t.payload.begin() + static_cast<std::ptrdiff_t>(off + len));
      Bytes wire = encode_packet(pkt);
      port_.send(addr, view_of(wire));
      ++stats_.chunks_sent;
      p.tx[{TxLane::Chunk, pkt.seq}] =
          TxEntry{std::move(wire), port_.now() + cfg_.rto_initial, 1, nullptr, t.tid};
      ++t.inflight;
    }
  }

  void fail_transfer(const NetAddress& addr, Peer& p, std::uint32_t tid,
                     std::vector<ProtocolEvent>& events) {
    std::vector<TxKey> doomed;
    for (const auto& [key, e] : p.tx)
      if (e.transfer == tid) doomed.push_back(key);
    for (const TxKey& k : doomed) p.tx.erase(k);
    for (auto it = p.transfers.begin(); it != p.transfers.end(); ++it) {
      if (it->tid != tid) continue;
      ProtocolEvent ev;
      ev.type = ProtocolEvent::Type::SendFailed;
      ev.from = addr;
      ev.session = session_id_;
      ev.seq = it->init_seq;
      ev.detail = to_string(SendError::TransferTimeout);
      events.push_back(std::move(ev));
      resolve(it->handle, SendState::Failed, SendError::TransferTimeout);
      ++stats_.transfers_failed;
      bool was_front = it == p.transfers.begin();
      p.transfers.erase(it);
      if (was_front && !p.transfers.empty() && !p.transfers.front().activated)
        activate_transfer(addr, p);
      return;
    }
  }

  // ---- acknowledgment path ----

  void handle_ack(const NetAddress& from, const GmpPacket& pkt,
                  std::vector<ProtocolEvent>& events) {
    // Acks echo the data sender's session id; anything else is stale.
    if (pkt.session_id != session_id_) return;
    auto pit = peers_.find(from);
    if (pit == peers_.end()) return;
    Peer& p = pit->second;

    if (pkt.kind == PacketKind::Ack) {
      auto it = p.tx.find({TxLane::Data, pkt.seq});
      if (it == p.tx.end()) return;  // duplicate ack: no state change
      resolve(it->second.handle, SendState::Acked, SendError::None);
      p.tx.erase(it);
      ProtocolEvent ev;
      ev.type = ProtocolEvent::Type::AckProcessed;
      ev.from = from;
      ev.session = pkt.session_id;
      ev.seq = pkt.seq;
      events.push_back(std::move(ev));
      return;
    }

    // CHUNK_ACK: payload is the transfer id.
    if (pkt.payload.size() != 4) return;
    std::uint32_t tid = be_get32(pkt.payload.data());
    if (p.transfers.empty() || p.transfers.front().tid != tid) return;
    OutTransfer& t = p.transfers.front();

    if (pkt.seq == kInitAckSeq) {
      auto it = p.tx.find({TxLane::ChunkInit, tid});
      if (it == p.tx.end()) return;
      p.tx.erase(it);
      t.init_acked = true;
      fill_window(from, p);
      events.push_back(chunk_progress(from, pkt.seq, "init acked"));
      return;
    }

    auto it = p.tx.find({TxLane::Chunk, pkt.seq});
    if (it == p.tx.end() || it->second.transfer != tid) return;
    p.tx.erase(it);
    ++t.acked;
    if (t.inflight > 0) --t.inflight;
    events.push_back(chunk_progress(from, pkt.seq, "chunk acked"));
    if (t.acked == t.chunk_count) {
      ByteWriter w;
      w.u32(tid);
      send_packet(from, PacketKind::ChunkFin, session_id_, 0, w.take());
      resolve(t.handle, SendState::Acked, SendError::None);
      ++stats_.transfers_completed;
      p.transfers.pop_front();
      if (!p.transfers.empty() && !p.transfers.front().activated)
        activate_transfer(from, p);
    } else {
      fill_window(from, p);
    }
  }

  static ProtocolEvent chunk_progress(const NetAddress& from, std::uint32_t seq,
                                      const char* what) {
    ProtocolEvent ev;
    ev.type = ProtocolEvent::Type::ChunkProgress;
    ev.from = from;
    ev.seq = seq;
    ev.detail = what;
    return ev;
  }

  // ---- receive path for sender-identified packets ----

  void handle_from_sender(const NetAddress& from, const GmpPacket& pkt,
                          TimePoint /*now*/, std::vector<ProtocolEvent>& events) {
    Peer& p = peer_state(from);

    if (!p.rx_known) {
      p.rx_known = true;
      p.rx_session = pkt.session_id;
      p.dedup.reset();
    } else if (pkt.session_id != p.rx_session) {
      bool stale = false;
      for (std::uint32_t s : p.retired)
        if (s == pkt.session_id) { stale = true; break; }
      if (stale) {
        ++stats_.stale_session_drops;
        if (pkt.kind == PacketKind::Data) {
          // Re-ack so a zombie sender stops retransmitting.
          send_packet(from, PacketKind::Ack, pkt.session_id, pkt.seq, {});
          ++stats_.acks_sent;
        }
        ProtocolEvent ev;
        ev.type = ProtocolEvent::Type::DuplicateSuppressed;
        ev.from = from;
        ev.session = pkt.session_id;
        ev.seq = pkt.seq;
        ev.detail = "stale session";
        events.push_back(std::move(ev));
        return;
      }
      // Peer restarted: retire the old session and drop its receive state.
      p.retired.push_back(p.rx_session);
      while (p.retired.size() > cfg_.retired_sessions) p.retired.pop_front();
      p.rx_session = pkt.session_id;
      p.dedup.reset();
      p.in.reset();
      p.completed.clear();
      ++stats_.session_resets;
    }

    switch (pkt.kind) {
      case PacketKind::Data: handle_data(from, p, pkt, events); break;
      case PacketKind::ChunkInit: handle_chunk_init(from, p, pkt, events); break;
      case PacketKind::ChunkData: handle_chunk_data(from, p, pkt, events); break;
      case PacketKind::ChunkFin: handle_chunk_fin(p, pkt, events); break;
      default: break;
    }
  }

  void handle_data(const NetAddress& from, Peer& p, const GmpPacket& pkt,
                   std::vector<ProtocolEvent>& events) {
    bool fresh = p.dedup.check_and_mark(pkt.seq);
    // Always ack, duplicates included: the sender may have missed the first.
    send_packet(from, PacketKind::Ack, pkt.session_id, pkt.seq, {});
    ++stats_.acks_sent;
    ProtocolEvent ev;
    ev.from = from;
    ev.session = pkt.session_id;
    ev.seq = pkt.seq;
    if (fresh) {
      ev.type = ProtocolEvent::Type::Deliver;
      ev.payload = pkt.payload;
      ++stats_.delivers;
    } else {
      ev.type = ProtocolEvent::Type::DuplicateSuppressed;
      ++stats_.duplicates_suppressed;
    }
    events.push_back(std::move(ev));
  }

  void ack_init(const NetAddress& to, std::uint32_t session, std::uint32_t tid) {
    ByteWriter w;
    w.u32(tid);
    send_packet(to, PacketKind::ChunkAck, session, kInitAckSeq, w.take());
  }

  void handle_chunk_init(const NetAddress& from, Peer& p, const GmpPacket& pkt,
                         std::vector<ProtocolEvent>& events) {
    ByteReader r(view_of(pkt.payload));
    std::uint32_t tid = r.u32();
    std::uint64_t total = r.u64();
    std::uint16_t csize = r.u16();
    if (!r.done() || total == 0 || csize == 0 || csize > kMaxPayload) {
      ++stats_.malformed_datagrams;
      events.push_back(make_error(from, "malformed chunk init"));
      return;
    }
    if (p.in && p.in->tid == tid) {
      ack_init(from, pkt.session_id, tid);
      events.push_back(chunk_progress(from, pkt.seq, "init replay"));
      return;
    }
    for (std::uint32_t done : p.completed) {
      if (done == tid) {
        ack_init(from, pkt.session_id, tid);
        events.push_back(chunk_progress(from, pkt.seq, "init replay"));
        return;
      }
    }
    std::uint64_t count = (total + csize - 1) / csize;
    if (total > cfg_.max_transfer_bytes || count > kMaxChunkCount) {
      events.push_back(make_error(from, "oversized transfer"));
      return;
    }
    InTransfer t;
    t.tid = tid;
    t.init_seq = pkt.seq;
    t.total = total;
    t.chunk_size = csize;
    t.chunk_count = static_cast<std::uint32_t>(count);
    t.buf.assign(total, 0);
    t.have.assign(t.chunk_count, false);
    p.in = std::move(t);
    ack_init(from, pkt.session_id, tid);
    events.push_back(chunk_progress(from, pkt.seq, "init accepted"));
  }

  void handle_chunk_data(const NetAddress& from, Peer& p, const GmpPacket& pkt,
                         std::vector<ProtocolEvent>& events) {
    if (!p.in) return;  // no transfer context; the sender will retry or time out
    InTransfer& t = *p.in;
    if (chunk_seq_tag(pkt.seq) != (t.tid & kChunkTagMask)) return;  // stale frame
    std::uint32_t idx = chunk_seq_index(pkt.seq);
    if (idx >= t.chunk_count) {
      events.push_back(make_error(from, "chunk index out of range"));
      return;
    }
    std::uint64_t off = static_cast<std::uint64_t>(idx) * t.chunk_size;
    std::uint64_t expect = std::min<std::uint64_t>(t.chunk_size, t.total - off);
    if (pkt.payload.size() != expect) {
      events.push_back(make_error(from, "chunk size mismatch"));
      return;
    }
    if (!t.delivered && !t.have[idx]) {
      std::copy(pkt.payload.begin(), pkt.payload.end(),
                t.buf.begin() + static_cast<std::ptrdiff_t>(off));
      t.have[idx] = true;
      ++t.have_count;
    }
    ByteWriter w;
    w.u32(t.tid);
    send_packet(from, PacketKind::ChunkAck, pkt.session_id, pkt.seq, w.take());
    events.push_back(chunk_progress(from, pkt.seq, "chunk stored"));
    if (!t.delivered && t.have_count == t.chunk_count) {
      t.delivered = true;
      ProtocolEvent ev;
      ev.type = ProtocolEvent::Type::Deliver;
      ev.from = from;
      ev.session = pkt.session_id;
      ev.seq = t.init_seq;
      ev.payload = std::move(t.buf);
      ev.chunked = true;
      ++stats_.delivers;
      events.push_back(std::move(ev));
    }
  }

  void handle_chunk_fin(Peer& p, const GmpPacket& pkt,
                        std::vector<ProtocolEvent>& events) {
    if (pkt.payload.size() != 4) return;
    std::uint32_t tid = be_get32(pkt.payload.data());
    if (p.in && p.in->tid == tid) {
      p.completed.push_back(tid);
      while (p.completed.size() > cfg_.completed_transfers) p.completed.pop_front();
      p.in.reset();
      events.push_back(chunk_progress({}, pkt.seq, "transfer closed"));
    }
  }

  // ---- handle resolution ----

  void resolve(const std::shared_ptr<detail::HandleState>& st, SendState state,
               SendError error) {
    if (!st) return;
    std::function<void(SendState, SendError)> cb;
    {
      std::lock_guard lk(st->mu);
      if (st->state != SendState::Pending) return;
      st->state = state;
      st->error = error;
      cb = std::move(st->on_complete);
    }
    st->cv.notify_all();
    if (cb)
      deferred_.push_back([cb = std::move(cb), state, error] { cb(state, error); });
  }

  // Completion callbacks run after the endpoint's own state is consistent.
  void flush_callbacks() {
    while (!deferred_.empty()) {
      auto batch = std::move(deferred_);
      deferred_.clear();
      for (auto& fn : batch) fn();
    }
  }

  DatagramPort& port_;
  EndpointConfig cfg_;
  std::uint32_t session_id_;
  std::uint32_t next_transfer_id_ = 1;
  std::map<NetAddress, Peer> peers_;
  std::vector<std::function<void()>> deferred_;
  EndpointStats stats_;
};

}  // namespace oct::gmp
