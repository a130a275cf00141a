#pragma once

// Request/response layer on GMP. A request rides in one GMP message and the
// caller awaits the correlated response; all retransmission is delegated to
// GMP, so a request keeps its (session, seq) identity for its whole life.
// The server side executes each request identity at most once: responses are
// cached in a bounded LRU and re-delivered identities (possible only across
// session resets) are answered from the cache without re-execution.

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "octkit/gmp/endpoint.hpp"
#include "octkit/rpc/envelope.hpp"

namespace oct::rpc {

class DuplicateMethodError : public std::logic_error {
 public:
  explicit DuplicateMethodError(const std::string& m)
      : std::logic_error("method already registered: " + m) {}
};

enum class CallStatus { Pending, Ok, Error, Timeout, Unreachable };

inline const char* to_string(CallStatus s) {
  switch (s) {
    case CallStatus::Pending: return "pending";
    case CallStatus::Ok: return "ok";
    case CallStatus::Error: return "error";
    case CallStatus::Timeout: return "timeout";
    case CallStatus::Unreachable: return "unreachable";
  }
  return "?";
}

namespace detail {
struct CallState {
  std::mutex mu;
  std::condition_variable cv;
  CallStatus status = CallStatus::Pending;
  Bytes response;
  std::string error;
};
}  // namespace detail

class CallHandle {
 public:
  CallHandle() = default;
  explicit CallHandle(std::shared_ptr<detail::CallState> s) : s_(std::move(s)) {}

  bool valid() const { return s_ != nullptr; }

  CallStatus status() const {
    std::lock_guard lk(s_->mu);
    return s_->status;
  }

  bool done() const { return status() != CallStatus::Pending; }

  const Bytes& response() const { return s_->response; }
  const std::string& error() const { return s_->error; }

  bool wait_for(std::chrono::milliseconds timeout) const {
    std::unique_lock lk(s_->mu);
    return s_->cv.wait_for(lk, timeout,
                           [&] { return s_->status != CallStatus::Pending; });
  }

 private:
  std::shared_ptr<detail::CallState> s_;
};

struct RpcStats {
  std::uint64_t calls_issued = 0;
  std::uint64_t calls_ok = 0;
  std::uint64_t calls_error = 0;
  std::uint64_t calls_timeout = 0;
  std::uint64_t calls_unreachable = 0;
  std::uint64_t requests_received = 0;
  std::uint64_t handler_executions = 0;
  std::uint64_t cache_replays = 0;
  std::uint64_t error_responses = 0;
};

class RpcNode {
 public:
  using Handler = std::function<Bytes(ByteView body)>;
  using Callback = std::function<void(CallStatus, Bytes response, std::string error)>;

  explicit RpcNode(gmp::Endpoint& ep, std::size_t cache_capacity = 1024)
      : ep_(ep), cache_capacity_(cache_capacity) {}

  void register_handler(const std::string& method, Handler h) {
    if (method.empty()) throw std::invalid_argument("empty method name");
    if (handlers_.contains(method)) throw DuplicateMethodError(method);
    handlers_[method] = std::move(h);
  }

  // Issues a request. The returned handle resolves to the response body, an
  // application error, Timeout, or Unreachable (propagated from GMP). The
  // optional callback fires on the driver thread at resolution.
  CallHandle call_async(const NetAddress& peer, std::string_view method,
                        ByteView body, Duration timeout, Callback cb = nullptr) {
    if (method.empty()) throw std::invalid_argument("empty method name");
    RpcEnvelope env;
    env.flags = 0;
    env.method.assign(method);
    env.body.assign(body.begin(), body.end());
    Bytes wire = encode_envelope(env);

    auto st = std::make_shared<detail::CallState>();
    gmp::MessageHandle mh = ep_.send_message(peer, view_of(wire));
    std::uint32_t seq = mh.seq();
    Pending p;
    p.state = st;
    p.deadline = ep_.port().now() + timeout;
    p.cb = std::move(cb);
    pending_.emplace(std::make_pair(peer, seq), std::move(p));
    ++stats_.calls_issued;

    mh.on_complete([this, peer, seq](gmp::SendState s, gmp::SendError) {
      if (s == gmp::SendState::Failed)
        fail_pending(peer, seq, CallStatus::Unreachable, "peer unreachable");
    });
    return CallHandle(st);
  }

  // Routes one protocol event from the endpoint driver.
  void on_event(const gmp::ProtocolEvent& ev, TimePoint /*now*/) {
    if (ev.type != gmp::ProtocolEvent::Type::Deliver) return;
    auto decoded = decode_envelope(view_of(ev.payload));
    if (!decoded) {
      send_error(ev.from, ev.session, ev.seq, decoded.error());
      return;
    }
    RpcEnvelope& env = decoded.value();
    if (env.is_response())
      handle_response(ev.from, env);
    else
      handle_request(ev.from, ev.session, ev.seq, env);
  }

  // Expires pending calls; drivers invoke this alongside endpoint timers.
  void handle_time(TimePoint now) {
    std::vector<std::pair<NetAddress, std::uint32_t>> expired;
    for (const auto& [key, p] : pending_)
      if (p.deadline <= now) expired.push_back(key);
    for (const auto& key : expired)
      fail_pending(key.first, key.second, CallStatus::Timeout, "timeout");
  }

  std::optional<TimePoint> next_timeout() const {
    std::optional<TimePoint> min;
    for (const auto& [key, p] : pending_)
      if (!min || p.deadline < *min) min = p.deadline;
    return min;
  }

  std::size_t pending_count() const { return pending_.size(); }
  const RpcStats& stats() const { return stats_; }
  gmp::Endpoint& endpoint() { return ep_; }

 private:
  struct Pending {
    std::shared_ptr<detail::CallState> state;
    TimePoint deadline{};
    Callback cb;
  };

  using CacheKey = std::tuple<std::uint64_t, std::uint32_t, std::uint32_t>;

  static std::uint64_t addr_key(const NetAddress& a) {
    return (static_cast<std::uint64_t>(a.host) << 16) | a.port;
  }

  void handle_response(const NetAddress& from, RpcEnvelope& env) {
    if (env.corr_session != ep_.session_id()) return;  // not ours
    auto it = pending_.find(std::make_pair(from, env.corr_seq));
    if (it == pending_.end()) return;  // late or duplicate response
    Pending p = std::move(it->second);
    pending_.erase(it);
    if (env.is_error()) {
      ++stats_.calls_error;
      settle(p, CallStatus::Error, {}, to_string(view_of(env.body)));
    } else {
      ++stats_.calls_ok;
      settle(p, CallStatus::Ok, std::move(env.body), {});
    }
  }

  void handle_request(const NetAddress& from, std::uint32_t session,
                      std::uint32_t seq, const RpcEnvelope& env) {
    ++stats_.requests_received;
    CacheKey key{addr_key(from), session, seq};
    if (auto* cached = cache_get(key)) {
      ++stats_.cache_replays;
      ep_.send_message(from, view_of(*cached));
      return;
    }

    RpcEnvelope resp;
    resp.corr_session = session;
    resp.corr_seq = seq;
    auto hit = handlers_.find(env.method);
    if (hit == handlers_.end()) {
      resp.flags = kFlagResponse | kFlagError;
      resp.body = to_bytes("unknown method: " + env.method);
      ++stats_.error_responses;
    } else {
      ++stats_.handler_executions;
      try {
        Bytes out = hit->second(view_of(env.body));
        resp.flags = kFlagResponse;
        resp.body = std::move(out);
      } catch (const std::exception& e) {
        resp.flags = kFlagResponse | kFlagError;
        resp.body = to_bytes(std::string("handler error: ") + e.what());
        ++stats_.error_responses;
      }
    }
    Bytes wire = encode_envelope(resp);
    cache_put(key, wire);
    ep_.send_message(from, view_of(wire));
  }

  void send_error(const NetAddress& to, std::uint32_t session, std::uint32_t seq,
                  const std::string& msg) {
    RpcEnvelope resp;
    resp.flags = kFlagResponse | kFlagError;
    resp.corr_session = session;
    resp.corr_seq = seq;
    resp.body = to_bytes(msg);
    ++stats_.error_responses;
    Bytes wire = encode_envelope(resp);
    ep_.send_message(to, view_of(wire));
  }

  void fail_pending(const NetAddress& peer, std::uint32_t seq, CallStatus status,
                    const std::string& msg) {
    auto it = pending_.find(std::make_pair(peer, seq));
    if (it == pending_.end()) return;
    Pending p = std::move(it->second);
    pending_.erase(it);
    if (status == CallStatus::Timeout)
      ++stats_.calls_timeout;
    else
      ++stats_.calls_unreachable;
    settle(p, status, {}, msg);
  }

  static void settle(Pending& p, CallStatus status, Bytes response,
                     std::string error) {
    {
      std::lock_guard lk(p.state->mu);
      p.state->status = status;
      p.state->error = error;
      if (!p.cb) p.state->response = response;  // callback consumers take it below
    }
    p.state->cv.notify_all();
    if (p.cb) p.cb(status, std::move(response), std::move(error));
  }

  // ---- bounded response cache (LRU) ----

  const Bytes* cache_get(const CacheKey& key) {
    auto it = cache_.find(key);
    if (it == cache_.end()) return nullptr;
    lru_.splice(lru_.end(), lru_, it->second.pos);
    return &it->second.wire;
  }

  void cache_put(const CacheKey& key, const Bytes& wire) {
    if (cache_capacity_ == 0) return;
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      it->second.wire = wire;
      lru_.splice(lru_.end(), lru_, it->second.pos);
      return;
    }
    if (cache_.size() >= cache_capacity_) {
      cache_.erase(lru_.front());
      lru_.pop_front();
    }
    lru_.push_back(key);
    cache_[key] = CacheEntry{wire, std::prev(lru_.end())};
  }

  struct CacheEntry {
    Bytes wire;
    std::list<CacheKey>::iterator pos;
  };

  gmp::Endpoint& ep_;
  std::size_t cache_capacity_;
  std::map<std::string, Handler> handlers_;
  std::map<std::pair<NetAddress, std::uint32_t>, Pending> pending_;
  std::map<CacheKey, CacheEntry> cache_;
  std::list<CacheKey> lru_;
  RpcStats stats_;
};

}  // namespace oct::rpc
