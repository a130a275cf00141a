#pragma once

// Deterministic discrete-event simulator of a hierarchical wide-area
// network. Datagrams traverse the unique tree path between two leaves; each
// edge can drop (iid), delay (fixed or uniform latency), serialize at a
// byte/s capacity (queueing behind in-flight bytes), duplicate, and jitter.
// Event order is a pure function of (topology, link specs, seed, submitted
// sends): the queue orders by (virtual time, insertion counter) and all
// randomness comes from one seeded generator drawn in submission order.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "octkit/bytes.hpp"
#include "octkit/gmp/port.hpp"
#include "octkit/rng.hpp"
#include "octkit/topology.hpp"

namespace oct::sim {

struct LinkSpec {
  Duration latency_lo{0};
  Duration latency_hi{0};           // == lo for a fixed latency
  double loss_prob = 0.0;
  std::uint64_t bandwidth_bps = 0;  // bytes per second; 0 = unlimited
  double duplicate_prob = 0.0;
  Duration reorder_jitter{0};       // extra uniform [0, jitter] delay per delivery

  static LinkSpec fixed(Duration latency, std::uint64_t bandwidth = 0,
                        double loss = 0.0) {
    LinkSpec l;
    l.latency_lo = l.latency_hi = latency;
    l.bandwidth_bps = bandwidth;
    l.loss_prob = loss;
    return l;
  }

  void validate() const {
    if (loss_prob < 0.0 || loss_prob > 1.0)
      throw std::invalid_argument("loss_prob must be within [0,1]");
    if (duplicate_prob < 0.0 || duplicate_prob > 1.0)
      throw std::invalid_argument("duplicate_prob must be within [0,1]");
    if (latency_lo.count() < 0 || latency_hi < latency_lo)
      throw std::invalid_argument("latency range must be nonnegative and ordered");
    if (reorder_jitter.count() < 0)
      throw std::invalid_argument("reorder_jitter must be nonnegative");
  }
};

// Flat record of everything the network did, for debugging, golden tests and
// independent byte accounting. Submit/Arrive/Drop conservation: every
// submitted datagram ends in exactly one Arrive or one Drop, plus one extra
// record per duplicate actually materialized.
struct Transcript {
  enum class Kind { Submit, Arrive, Drop };

  struct Rec {
    TimePoint at{};
    Kind kind{};
    std::uint32_t src = 0;
    std::uint32_t dst = 0;
    std::uint32_t size = 0;
    int edge = -1;  // Drop: edge where it died; Arrive: -1
    bool duplicate = false;
  };

  std::vector<Rec> recs;

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::Submit: return "SUB";
      case Kind::Arrive: return "ARR";
      case Kind::Drop: return "DROP";
    }
    return "?";
  }

  std::uint64_t hash() const {
    Fnv64 f;
    for (const Rec& r : recs) {
      f.update_u64(static_cast<std::uint64_t>(r.at.count()));
      f.update_u64(static_cast<std::uint64_t>(r.kind));
      f.update_u64(r.src);
      f.update_u64(r.dst);
      f.update_u64(r.size);
      f.update_u64(static_cast<std::uint64_t>(r.edge + 1));
      f.update_u64(r.duplicate ? 1 : 0);
    }
    return f.digest();
  }

  void dump(std::ostream& os, const TopologyTree& topo) const {
    for (const Rec& r : recs) {
      os << r.at.count() << ' ' << kind_name(r.kind) << ' '
         << topo.name(static_cast<int>(r.src)) << ' '
         << topo.name(static_cast<int>(r.dst)) << ' ' << r.size;
      if (r.kind == Kind::Drop && r.edge >= 0) os << " edge=" << topo.name(r.edge);
      if (r.duplicate) os << " dup";
      os << '\n';
    }
  }

  // Bytes per edge replayed from the records: an Arrive charges every path
  // edge, a Drop charges edges up to and including the one that dropped it.
  std::map<int, std::uint64_t> edge_bytes(const TopologyTree& topo) const {
    std::map<int, std::uint64_t> out;
    for (int e : topo.edges()) out[e] = 0;
    for (const Rec& r : recs) {
      if (r.kind == Kind::Submit) continue;
      auto path = topo.path_edges(static_cast<int>(r.src), static_cast<int>(r.dst));
      for (int e : path) {
        out[e] += r.size;
        if (r.kind == Kind::Drop && e == r.edge) break;
      }
    }
    return out;
  }
};

class SimNet {
 public:
  // Host callbacks; one host per leaf vertex.
  struct HostHooks {
    std::function<void(const NetAddress& from, ByteView data, TimePoint now)>
        on_datagram;
    std::function<void(TimePoint now)> on_timer;
    std::function<std::optional<TimePoint>()> next_deadline;
  };

  SimNet(TopologyTree topo, std::uint64_t seed)
      : topo_(std::move(topo)), rng_(seed), seed_(seed) {
    busy_until_.assign(topo_.size(), TimePoint{0});
    live_edge_bytes_.assign(topo_.size(), 0);
  }

  const TopologyTree& topology() const { return topo_; }
  TimePoint now() const { return clock_; }
  std::uint64_t seed() const { return seed_; }
  Rng& rng() { return rng_; }

  void set_link(int edge, const LinkSpec& spec) {
    spec.validate();
    links_[edge] = spec;
  }

  const LinkSpec& link(int edge) const {
    auto it = links_.find(edge);
    if (it == links_.end()) {
      static const LinkSpec ideal{};
      return ideal;
    }
    return it->second;
  }

  // Applies a spec to every edge whose child vertex satisfies the predicate.
  void set_links_where(const std::function<bool(int)>& pred, const LinkSpec& spec) {
    for (int e : topo_.edges())
      if (pred(e)) set_link(e, spec);
  }

  void attach_host(const std::string& leaf_name, HostHooks hooks) {
    int v = topo_.require_leaf(leaf_name);
    if (hosts_.contains(v))
      throw std::invalid_argument("host already attached: " + leaf_name);
    hosts_[v] = Host{std::move(hooks), kNever};
  }

  NetAddress address_of(const std::string& leaf_name) const {
    return NetAddress{static_cast<std::uint32_t>(topo_.require_leaf(leaf_name)), 1};
  }

  // Injects one datagram. Loss, latency, serialization and duplication are
  // drawn per edge in path order; the rng sequence is part of the contract.
  void submit(const NetAddress& from, const NetAddress& to, ByteView data) {
    int src = static_cast<int>(from.host);
    int dst = static_cast<int>(to.host);
    if (src < 0 || src >= static_cast<int>(topo_.size()) || !topo_.is_leaf(src))
      throw UnknownNodeError("#" + std::to_string(src));
    if (dst < 0 || dst >= static_cast<int>(topo_.size()) || !topo_.is_leaf(dst))
      throw UnknownNodeError("#" + std::to_string(dst));

    transcript_.recs.push_back({clock_, Transcript::Kind::Submit,
                                static_cast<std::uint32_t>(src),
                                static_cast<std::uint32_t>(dst),
                                static_cast<std::uint32_t>(data.size()), -1, false});
    route(from, to, data, false);
  }

  // Processes all events with timestamp <= until, in deterministic order.
  void advance(TimePoint until) {
    if (until < clock_)
      throw std::invalid_argument("cannot advance the clock backwards");
    while (!queue_.empty() && queue_.top().at <= until) step();
    clock_ = until;
  }

  // Runs until `stop` returns true, the queue drains, or `cap` is reached.
  // Returns true if `stop` was satisfied.
  bool run_until(const std::function<bool()>& stop, TimePoint cap) {
    while (!stop()) {
      if (queue_.empty() || queue_.top().at > cap) {
        if (clock_ < cap && !queue_.empty()) clock_ = cap;
        return false;
      }
      step();
    }
    return true;
  }

  bool idle() const { return queue_.empty(); }
  std::size_t queued_events() const { return queue_.size(); }

  const Transcript& transcript() const { return transcript_; }

  // Live per-edge byte counters, maintained as datagrams traverse edges.
  std::uint64_t edge_bytes(int edge) const { return live_edge_bytes_.at(static_cast<std::size_t>(edge)); }
  std::map<int, std::uint64_t> all_edge_bytes() const {
    std::map<int, std::uint64_t> out;
    for (int e : topo_.edges()) out[e] = live_edge_bytes_[static_cast<std::size_t>(e)];
    return out;
  }

  // Re-evaluates a host's next timer after outside interaction with its
  // endpoint (the simulator does this itself for events it delivers).
  void refresh_timer(const NetAddress& addr) { refresh_timer_for(static_cast<int>(addr.host)); }

 private:
  struct Host {
    HostHooks hooks;
    TimePoint scheduled = kNever;
  };

  struct Ev {
    TimePoint at;
    std::uint64_t ctr;
    enum class Kind { Arrival, Timer } kind;
    NetAddress from{}, to{};
    Bytes data;
    bool duplicate = false;
    int timer_vertex = -1;
  };

  struct EvOrder {
    bool operator()(const Ev& a, const Ev& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.ctr > b.ctr;
    }
  };

  void route(const NetAddress& from, const NetAddress& to, ByteView data,
             bool is_dup) {
    int src = static_cast<int>(from.host);
    int dst = static_cast<int>(to.host);
    auto path = topo_.path_edges(src, dst);
    TimePoint t = clock_;
    for (int e : path) {
      const LinkSpec& L = link(e);
      live_edge_bytes_[static_cast<std::size_t>(e)] += data.size();
      if (L.loss_prob > 0.0 && rng_.chance(L.loss_prob)) {
        transcript_.recs.push_back({clock_, Transcript::Kind::Drop,
                                    static_cast<std::uint32_t>(src),
                                    static_cast<std::uint32_t>(dst),
                                    static_cast<std::uint32_t>(data.size()), e,
                                    is_dup});
        return;
      }
      if (L.bandwidth_bps > 0) {
        TimePoint start = std::max(t, busy_until_[static_cast<std::size_t>(e)]);
        Duration ser{static_cast<std::int64_t>(
            (static_cast<std::uint64_t>(data.size()) * 1'000'000'000ull) /
            L.bandwidth_bps)};
        t = start + ser;
        busy_until_[static_cast<std::size_t>(e)] = t;
      }
      if (L.latency_hi > L.latency_lo)
        t += rng_.uniform(L.latency_lo, L.latency_hi);
      else
        t += L.latency_lo;
    }

    bool duplicated = false;
    if (!path.empty()) {
      const LinkSpec& last = link(path.back());
      if (last.duplicate_prob > 0.0 && rng_.chance(last.duplicate_prob))
        duplicated = true;
      if (last.reorder_jitter.count() > 0)
        t += rng_.uniform(Duration{0}, last.reorder_jitter);
    }

    push_arrival(from, to, data, t, is_dup);
    if (duplicated && !is_dup) route(from, to, data, true);
  }

  void push_arrival(const NetAddress& from, const NetAddress& to, ByteView data,
                    TimePoint at, bool dup) {
    Ev ev;
    ev.at = at;
    ev.ctr = ctr_++;
    ev.kind = Ev::Kind::Arrival;
    ev.from = from;
    ev.to = to;
    ev.data.assign(data.begin(), data.end());
    ev.duplicate = dup;
    queue_.push(std::move(ev));
  }

  void step() {
    Ev ev = queue_.top();
    queue_.pop();
    clock_ = ev.at;
    if (ev.kind == Ev::Kind::Arrival) {
      transcript_.recs.push_back({clock_, Transcript::Kind::Arrive, ev.from.host,
                                  ev.to.host,
                                  static_cast<std::uint32_t>(ev.data.size()), -1,
                                  ev.duplicate});
      auto it = hosts_.find(static_cast<int>(ev.to.host));
      if (it != hosts_.end() && it->second.hooks.on_datagram) {
        it->second.hooks.on_datagram(ev.from, view_of(ev.data), clock_);
        refresh_timer_for(static_cast<int>(ev.to.host));
        refresh_timer_for(static_cast<int>(ev.from.host));
      }
    } else {
      auto it = hosts_.find(ev.timer_vertex);
      if (it != hosts_.end()) {
        it->second.scheduled = kNever;
        if (it->second.hooks.on_timer) it->second.hooks.on_timer(clock_);
        refresh_timer_for(ev.timer_vertex);
      }
    }
  }

  void refresh_timer_for(int vertex) {
    auto it = hosts_.find(vertex);
    if (it == hosts_.end()) return;
    Host& h = it->second;
    if (!h.hooks.next_deadline) return;
    auto d = h.hooks.next_deadline();
    if (!d) return;
    TimePoint when = std::max(*d, clock_);
    if (when >= h.scheduled) return;
    Ev ev;
    ev.at = when;
    ev.ctr = ctr_++;
    ev.kind = Ev::Kind::Timer;
    ev.timer_vertex = vertex;
    queue_.push(std::move(ev));
    h.scheduled = when;
  }

  TopologyTree topo_;
  Rng rng_;
  std::uint64_t seed_;
  std::map<int, LinkSpec> links_;
  std::map<int, Host> hosts_;
  std::priority_queue<Ev, std::vector<Ev>, EvOrder> queue_;
  std::vector<TimePoint> busy_until_;
  std::vector<std::uint64_t> live_edge_bytes_;
  Transcript transcript_;
  TimePoint clock_{0};
  std::uint64_t ctr_ = 0;
};

// Datagram port bound to one simulated node.
class SimPort final : public gmp::DatagramPort {
 public:
  SimPort(SimNet& net, NetAddress self) : net_(net), self_(self) {}

  void send(const NetAddress& to, ByteView datagram) override {
    net_.submit(self_, to, datagram);
  }

  TimePoint now() const override { return net_.now(); }

  const NetAddress& address() const { return self_; }

 private:
  SimNet& net_;
  NetAddress self_;
};

}  // namespace oct::sim
