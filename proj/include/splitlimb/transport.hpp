#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "splitlimb/wire.hpp"

namespace splitlimb {

using Frame = std::vector<std::uint8_t>;
using Millis = std::chrono::milliseconds;

inline constexpr Millis kDefaultTimeout{30'000};
inline constexpr std::uint16_t kDefaultPort = 7401;
inline constexpr std::size_t kLoopbackCapacity = 64;

enum class TransportErrorKind { Closed, PeerClosed, Timeout, FrameTooLarge, BindFailed, ConnectFailed, Io };

inline const char* to_string(TransportErrorKind k) noexcept {
  switch (k) {
    case TransportErrorKind::Closed: return "channel closed";
    case TransportErrorKind::PeerClosed: return "peer closed";
    case TransportErrorKind::Timeout: return "timeout";
    case TransportErrorKind::FrameTooLarge: return "frame too large";
    case TransportErrorKind::BindFailed: return "bind failed";
    case TransportErrorKind::ConnectFailed: return "connection failed";
    case TransportErrorKind::Io: return "i/o error";
  }
  return "?";
}

class TransportError : public std::runtime_error {
 public:
  TransportError(TransportErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string("transport: ") + to_string(kind) + ": " + detail), kind_(kind) {}
  TransportErrorKind kind() const noexcept { return kind_; }

 private:
  TransportErrorKind kind_;
};

/// One endpoint of a reliable, ordered, frame-preserving duplex channel.
/// An endpoint is owned by a single party; it may be moved across threads
/// but is not meant to be shared.
class Channel {
 public:
  virtual ~Channel() = default;

  /// Blocks while the peer is not draining (backpressure).
  virtual void send(std::span<const std::uint8_t> frame, Millis timeout = kDefaultTimeout) = 0;
  /// Next frame in FIFO order.
  virtual Frame recv(Millis timeout = kDefaultTimeout) = 0;
  virtual void close() noexcept = 0;
  virtual bool is_open() const noexcept = 0;

 protected:
  static void check_size(std::span<const std::uint8_t> frame) {
    if (frame.size() > kMaxFrameBytes) {
      throw TransportError(TransportErrorKind::FrameTooLarge,
                           std::to_string(frame.size()) + " bytes exceeds the 64 MiB frame limit");
    }
  }
};

inline void send_message(Channel& ch, const Message& msg, std::uint64_t session_id) {
  const Frame f = encode(msg, session_id);
  ch.send(f);
}

inline Envelope recv_envelope(Channel& ch, Millis timeout = kDefaultTimeout) {
  const Frame f = ch.recv(timeout);
  return decode(f);
}

// ---------------------------------------------------------------------------
// Loopback

namespace loopback_detail {

// One direction of a loopback pair.
struct Pipe {
  std::mutex mu;
  std::condition_variable readable;
  std::condition_variable writable;
  std::deque<Frame> frames;
  bool writer_closed = false;
  bool reader_closed = false;
};

}  // namespace loopback_detail

class LoopbackChannel final : public Channel {
 public:
  using Pipe = loopback_detail::Pipe;

  LoopbackChannel(std::shared_ptr<Pipe> out, std::shared_ptr<Pipe> in) : out_(std::move(out)), in_(std::move(in)) {}
  ~LoopbackChannel() override { close(); }
  LoopbackChannel(const LoopbackChannel&) = delete;
  LoopbackChannel& operator=(const LoopbackChannel&) = delete;

  void send(std::span<const std::uint8_t> frame, Millis timeout = kDefaultTimeout) override {
    check_size(frame);
    if (!open_) throw TransportError(TransportErrorKind::Closed, "send on closed loopback channel");
    std::unique_lock lock(out_->mu);
    const bool ready = out_->writable.wait_for(lock, timeout, [&] {
      return out_->reader_closed || out_->frames.size() < kLoopbackCapacity;
    });
    if (out_->reader_closed) throw TransportError(TransportErrorKind::PeerClosed, "loopback peer closed");
    if (!ready) throw TransportError(TransportErrorKind::Timeout, "loopback queue stayed full");
    out_->frames.emplace_back(frame.begin(), frame.end());
    out_->readable.notify_one();
  }

  Frame recv(Millis timeout = kDefaultTimeout) override {
    if (!open_) throw TransportError(TransportErrorKind::Closed, "recv on closed loopback channel");
    std::unique_lock lock(in_->mu);
    const bool ready =
        in_->readable.wait_for(lock, timeout, [&] { return !in_->frames.empty() || in_->writer_closed; });
    if (!in_->frames.empty()) {
      Frame f = std::move(in_->frames.front());
      in_->frames.pop_front();
      in_->writable.notify_one();
      return f;
    }
    if (in_->writer_closed) throw TransportError(TransportErrorKind::PeerClosed, "loopback peer closed");
    (void)ready;
    throw TransportError(TransportErrorKind::Timeout, "no frame within " + std::to_string(timeout.count()) + " ms");
  }

  void close() noexcept override {
    if (!open_) return;
    open_ = false;
    {
      std::lock_guard lock(out_->mu);
      out_->writer_closed = true;
      out_->readable.notify_all();
    }
    {
      std::lock_guard lock(in_->mu);
      in_->reader_closed = true;
      in_->writable.notify_all();
    }
  }

  bool is_open() const noexcept override { return open_; }

 private:
  std::shared_ptr<Pipe> out_;
  std::shared_ptr<Pipe> in_;
  bool open_ = true;
};

inline std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_loopback_pair() {
  auto a_to_b = std::make_shared<loopback_detail::Pipe>();
  auto b_to_a = std::make_shared<loopback_detail::Pipe>();
  return {std::make_unique<LoopbackChannel>(a_to_b, b_to_a), std::make_unique<LoopbackChannel>(b_to_a, a_to_b)};
}

/// Named rendezvous for in-process channels: listen(key) waits for a
/// connect(key) and each side receives one end of a fresh pair.
class LoopbackRegistry {
 public:
  std::unique_ptr<Channel> listen(const std::string& key, Millis timeout = kDefaultTimeout) {
    std::unique_lock lock(mu_);
    auto& slot = listeners_[key];
    if (slot) throw TransportError(TransportErrorKind::BindFailed, "loopback key '" + key + "' already bound");
    slot = std::make_shared<Slot>();
    auto mine = slot;
    cv_.notify_all();
    const bool ok = cv_.wait_for(lock, timeout, [&] { return mine->channel != nullptr; });
    listeners_.erase(key);
    if (!ok) throw TransportError(TransportErrorKind::Timeout, "no peer connected to '" + key + "'");
    return std::move(mine->channel);
  }

  std::unique_ptr<Channel> connect(const std::string& key, Millis timeout = Millis{0}) {
    std::unique_lock lock(mu_);
    const bool ok = cv_.wait_for(lock, timeout, [&] {
      auto it = listeners_.find(key);
      return it != listeners_.end() && it->second && !it->second->channel;
    });
    if (!ok) throw TransportError(TransportErrorKind::ConnectFailed, "nothing listening on loopback key '" + key + "'");
    auto [server_end, client_end] = make_loopback_pair();
    listeners_[key]->channel = std::move(server_end);
    cv_.notify_all();
    return std::move(client_end);
  }

 private:
  struct Slot {
    std::unique_ptr<Channel> channel;
  };
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::shared_ptr<Slot>> listeners_;
};

// ---------------------------------------------------------------------------
// TCP. Frames travel back to back; the header is self-delimiting.

struct Address {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;

  std::string str() const { return host + ":" + std::to_string(port); }
};

inline Address parse_address(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) return {text, kDefaultPort};
  Address a;
  a.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  if (port.empty() || port.find_first_not_of("0123456789") != std::string::npos || std::stoul(port) > 65535) {
    throw std::invalid_argument("bad port in address '" + text + "'");
  }
  a.port = static_cast<std::uint16_t>(std::stoul(port));
  return a;
}

namespace tcp_detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline std::string errno_text() { return std::strerror(errno); }

using Clock = std::chrono::steady_clock;

// Waits for `events` on fd until the deadline. Returns false on timeout.
inline bool wait_fd(int fd, short events, Clock::time_point deadline) {
  for (;;) {
    const auto left = std::chrono::ceil<Millis>(deadline - Clock::now()).count();
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::max<long long>(left, 0)));
    if (rc > 0) return true;
    if (rc == 0 && Clock::now() >= deadline) return false;
    if (rc == 0) continue;
    if (errno != EINTR) throw TransportError(TransportErrorKind::Io, "poll: " + errno_text());
  }
}

inline sockaddr_in resolve(const Address& addr) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(addr.host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || !res) {
    throw TransportError(TransportErrorKind::ConnectFailed, "cannot resolve '" + addr.host + "': " + gai_strerror(rc));
  }
  sockaddr_in sa{};
  std::memcpy(&sa, res->ai_addr, sizeof(sa));
  ::freeaddrinfo(res);
  sa.sin_port = htons(addr.port);
  return sa;
}

}  // namespace tcp_detail

class TcpChannel final : public Channel {
 public:
  explicit TcpChannel(tcp_detail::Fd fd) : fd_(std::move(fd)) {
    int one = 1;
    ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpChannel() override { close(); }

  void send(std::span<const std::uint8_t> frame, Millis timeout = kDefaultTimeout) override {
    check_size(frame);
    std::lock_guard lock(send_mu_);
    if (!fd_) throw TransportError(TransportErrorKind::Closed, "send on closed tcp channel");
    const auto deadline = tcp_detail::Clock::now() + timeout;
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t n = ::send(fd_.get(), frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL | MSG_DONTWAIT);
      if (n > 0) {
        sent += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
        if (!tcp_detail::wait_fd(fd_.get(), POLLOUT, deadline)) {
          throw TransportError(TransportErrorKind::Timeout, "peer not draining");
        }
        continue;
      }
      if (errno == EPIPE || errno == ECONNRESET) throw TransportError(TransportErrorKind::PeerClosed, "tcp peer closed");
      throw TransportError(TransportErrorKind::Io, "send: " + tcp_detail::errno_text());
    }
  }

  Frame recv(Millis timeout = kDefaultTimeout) override {
    if (!fd_) throw TransportError(TransportErrorKind::Closed, "recv on closed tcp channel");
    const auto deadline = tcp_detail::Clock::now() + timeout;
    Frame frame(kFrameHeaderBytes);
    read_exact(frame.data(), kFrameHeaderBytes, deadline, /*frame_started=*/false);
    std::size_t total = 0;
    try {
      total = frame_length_from_header(frame);
    } catch (...) {
      close();  // the byte stream cannot be resynchronised
      throw;
    }
    frame.resize(total);
    read_exact(frame.data() + kFrameHeaderBytes, total - kFrameHeaderBytes, deadline, true);
    return frame;
  }

  void close() noexcept override {
    if (fd_) {
      ::shutdown(fd_.get(), SHUT_RDWR);
      fd_.reset();
    }
  }

  bool is_open() const noexcept override { return static_cast<bool>(fd_); }

 private:
  void read_exact(std::uint8_t* dst, std::size_t n, tcp_detail::Clock::time_point deadline, bool frame_started) {
    std::size_t got = 0;
    while (got < n) {
      if (!tcp_detail::wait_fd(fd_.get(), POLLIN, deadline)) {
        if (frame_started || got > 0) close();
        throw TransportError(TransportErrorKind::Timeout, "no complete frame before the deadline");
      }
      const ssize_t r = ::recv(fd_.get(), dst + got, n - got, 0);
      if (r > 0) {
        got += static_cast<std::size_t>(r);
      } else if (r == 0) {
        close();
        throw TransportError(TransportErrorKind::PeerClosed, "tcp peer closed");
      } else if (errno != EINTR && errno != EAGAIN) {
        close();
        throw TransportError(TransportErrorKind::Io, "recv: " + tcp_detail::errno_text());
      }
    }
  }

  tcp_detail::Fd fd_;
  std::mutex send_mu_;
};

class TcpListener {
 public:
  explicit TcpListener(const Address& addr) {
    fd_ = tcp_detail::Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd_) throw TransportError(TransportErrorKind::BindFailed, "socket: " + tcp_detail::errno_text());
    int one = 1;
    ::setsockopt(fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in sa = tcp_detail::resolve(addr);
    if (::bind(fd_.get(), reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      throw TransportError(TransportErrorKind::BindFailed, addr.str() + ": " + tcp_detail::errno_text());
    }
    if (::listen(fd_.get(), 16) != 0) {
      throw TransportError(TransportErrorKind::BindFailed, "listen: " + tcp_detail::errno_text());
    }
    socklen_t len = sizeof(sa);
    ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&sa), &len);
    port_ = ntohs(sa.sin_port);
  }

  std::uint16_t port() const noexcept { return port_; }

  std::unique_ptr<Channel> accept(Millis timeout = kDefaultTimeout) {
    const auto deadline = tcp_detail::Clock::now() + timeout;
    if (!tcp_detail::wait_fd(fd_.get(), POLLIN, deadline)) {
      throw TransportError(TransportErrorKind::Timeout, "no peer connected within " + std::to_string(timeout.count()) + " ms");
    }
    tcp_detail::Fd c(::accept(fd_.get(), nullptr, nullptr));
    if (!c) throw TransportError(TransportErrorKind::Io, "accept: " + tcp_detail::errno_text());
    return std::make_unique<TcpChannel>(std::move(c));
  }

 private:
  tcp_detail::Fd fd_;
  std::uint16_t port_ = 0;
};

/// Connects to a listening peer. Refused connections are retried until
/// `retry_for` elapses (0: a single attempt).
inline std::unique_ptr<Channel> tcp_connect(const Address& addr, Millis retry_for = Millis{0}) {
  const auto deadline = tcp_detail::Clock::now() + retry_for;
  const sockaddr_in sa = tcp_detail::resolve(addr);
  for (;;) {
    tcp_detail::Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd) throw TransportError(TransportErrorKind::ConnectFailed, "socket: " + tcp_detail::errno_text());
    if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) == 0) {
      return std::make_unique<TcpChannel>(std::move(fd));
    }
    const std::string why = tcp_detail::errno_text();
    if (tcp_detail::Clock::now() >= deadline) {
      throw TransportError(TransportErrorKind::ConnectFailed, addr.str() + ": " + why);
    }
    std::this_thread::sleep_for(Millis{50});
  }
}

}  // namespace splitlimb
