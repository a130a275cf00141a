#pragma once

// Datagram port abstraction. An endpoint only needs a way to transmit one
// datagram and a clock; how inbound datagrams reach the endpoint is the
// driver's business (the simulator pushes them, the UDP event loop polls a
// PollablePort).

#include <optional>

#include "octkit/bytes.hpp"

namespace oct::gmp {

class DatagramPort {
 public:
  virtual ~DatagramPort() = default;

  virtual void send(const NetAddress& to, ByteView datagram) = 0;
  virtual TimePoint now() const = 0;
};

class PollablePort : public DatagramPort {
 public:
  struct Datagram {
    NetAddress from;
    Bytes data;
  };

  // Blocks up to `wait` for one datagram; nullopt on timeout.
  virtual std::optional<Datagram> receive(Duration wait) = 0;
};

}  // namespace oct::gmp
