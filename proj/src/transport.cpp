/*
 * Copyright 2026 The glasu Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "glasu/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <utility>

namespace glasu {
namespace {

constexpr std::string_view kMagic = "GLSU";

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

// ---- encoding --------------------------------------------------------------

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

void put_indices(std::string& out, const IndexList& nodes) {
  put_u32(out, static_cast<std::uint32_t>(nodes.size()));
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (k > 0 && nodes[k] <= nodes[k - 1]) {
      throw ProtocolError("cannot send an index set that is not strictly ascending");
    }
    put_u32(out, nodes[k]);
  }
}

void put_matrix(std::string& out, const Matrix& m) {
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) {
    if (!std::isfinite(v)) throw ProtocolError("cannot send a matrix with a non-finite entry");
    put_f64(out, v);
  }
}

std::string encode_payload(const Message& msg) {
  std::string out;
  std::visit(Overloaded{
                 [&](const SampleBroadcast& m) { put_indices(out, m.nodes); },
                 [&](const IndexUpload& m) { put_indices(out, m.nodes); },
                 [&](const IndexUnionBroadcast& m) { put_indices(out, m.nodes); },
                 [&](const ReprUpload& m) {
                   put_u8(out, m.layer);
                   put_matrix(out, m.h);
                 },
                 [&](const ReprBroadcast& m) {
                   put_u8(out, m.layer);
                   put_matrix(out, m.h);
                 },
                 [&](const CotangentBroadcast& m) { put_matrix(out, m.g); },
                 [&](const Control& m) {
                   put_u8(out, static_cast<std::uint8_t>(m.code));
                   put_u32(out, m.value);
                 },
             },
             msg);
  return out;
}

// ---- decoding --------------------------------------------------------------

// Cursor over a frame; every error reports the absolute byte offset.
class Cursor {
 public:
  Cursor(std::string_view bytes, std::size_t pos, std::size_t end) : bytes_(bytes), pos_(pos), end_(end) {}

  std::uint8_t u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8, "f64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  IndexList indices() {
    const std::size_t at = pos_;
    const std::uint32_t count = u32();
    if (static_cast<std::uint64_t>(count) * 4 > end_ - pos_) {
      throw ProtocolError("index set of " + std::to_string(count) + " ids exceeds the payload", at);
    }
    IndexList out(count);
    for (std::uint32_t k = 0; k < count; ++k) {
      const std::size_t here = pos_;
      out[k] = u32();
      if (k > 0 && out[k] <= out[k - 1]) throw ProtocolError("index set is not strictly ascending", here);
    }
    return out;
  }
  Matrix matrix() {
    const std::size_t at = pos_;
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    const std::uint64_t cells = static_cast<std::uint64_t>(rows) * cols;
    if (cells * 8 > end_ - pos_) {
      throw ProtocolError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " exceeds the payload", at);
    }
    Matrix m(rows, cols);
    for (double& v : m.values()) {
      const std::size_t here = pos_;
      v = f64();
      if (!std::isfinite(v)) throw ProtocolError("matrix entry is not finite", here);
    }
    return m;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n) throw ProtocolError(std::string("truncated payload reading ") + what, pos_);
  }

  std::string_view bytes_;
  std::size_t pos_;
  std::size_t end_;
};

// ---- in-process channel ----------------------------------------------------

struct FrameQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> frames;
  bool closed = false;

  void push(std::string frame) {
    {
      std::lock_guard lock(mu);
      if (closed) throw ChannelClosed();
      frames.push_back(std::move(frame));
    }
    cv.notify_one();
  }
  std::string pop() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return closed || !frames.empty(); });
    if (frames.empty()) throw ChannelClosed();
    std::string f = std::move(frames.front());
    frames.pop_front();
    return f;
  }
  void close() {
    {
      std::lock_guard lock(mu);
      closed = true;
    }
    cv.notify_all();
  }
};

class InProcessChannel final : public Channel {
 public:
  InProcessChannel(std::shared_ptr<FrameQueue> out, std::shared_ptr<FrameQueue> in)
      : out_(std::move(out)), in_(std::move(in)) {}
  ~InProcessChannel() override { close(); }

  void send(std::string frame) override { out_->push(std::move(frame)); }
  std::string receive() override { return in_->pop(); }
  void close() override {
    out_->close();
    in_->close();
  }

 private:
  std::shared_ptr<FrameQueue> out_;
  std::shared_ptr<FrameQueue> in_;
};

// ---- TCP channel -----------------------------------------------------------

[[noreturn]] void throw_errno(const std::string& what) {
  throw ProtocolError(what + ": " + std::strerror(errno));
}

class TcpChannel final : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void send(std::string frame) override {
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ChannelClosed();
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::string receive() override {
    std::string frame(kFrameHeaderSize, '\0');
    read_exact(frame.data(), kFrameHeaderSize);
    const std::size_t len = frame_payload_length(frame);
    frame.resize(kFrameHeaderSize + len);
    read_exact(frame.data() + kFrameHeaderSize, len);
    return frame;
  }

  void close() override {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  void read_exact(char* dst, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
      if (r == 0) throw ChannelClosed();
      if (r < 0) {
        if (errno == EINTR) continue;
        throw ChannelClosed();
      }
      got += static_cast<std::size_t>(r);
    }
  }

  int fd_;
};

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw ConfigError("cannot resolve host '" + host + "'");
  }
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  ::freeaddrinfo(res);
  addr.sin_port = htons(port);
  return addr;
}

}  // namespace

std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::SampleBroadcast: return "SampleBroadcast";
    case MessageKind::IndexUpload: return "IndexUpload";
    case MessageKind::IndexUnionBroadcast: return "IndexUnionBroadcast";
    case MessageKind::ReprUpload: return "ReprUpload";
    case MessageKind::ReprBroadcast: return "ReprBroadcast";
    case MessageKind::CotangentBroadcast: return "CotangentBroadcast";
    case MessageKind::Control: return "Control";
  }
  return "Unknown";
}

MessageKind kind_of(const Message& msg) { return static_cast<MessageKind>(msg.index() + 1); }

std::string serialize(const Message& msg) {
  const std::string payload = encode_payload(msg);
  std::string out;
  out.reserve(kFrameHeaderSize + payload.size());
  out.append(kMagic);
  put_u8(out, kWireVersion);
  put_u8(out, static_cast<std::uint8_t>(kind_of(msg)));
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out.append(payload);
  return out;
}

std::size_t frame_payload_length(std::string_view header) {
  if (header.size() < kFrameHeaderSize) {
    throw ProtocolError("truncated frame header: " + std::to_string(header.size()) + " of " +
                            std::to_string(kFrameHeaderSize) + " bytes",
                        header.size());
  }
  if (header.substr(0, 4) != kMagic) throw ProtocolError("bad magic, expected \"GLSU\"", 0);
  const auto version = static_cast<std::uint8_t>(header[4]);
  if (version != kWireVersion) {
    throw ProtocolError("unsupported wire version " + std::to_string(version), 4);
  }
  const auto tag = static_cast<std::uint8_t>(header[5]);
  if (tag < 1 || tag > kNumMessageKinds) throw ProtocolError("unknown message tag " + std::to_string(tag), 5);
  Cursor c(header, 6, kFrameHeaderSize);
  return c.u32();
}

Message deserialize(std::string_view frame) {
  const std::size_t len = frame_payload_length(frame);
  const std::size_t end = kFrameHeaderSize + len;
  if (end > frame.size()) {
    throw ProtocolError("truncated frame: payload length " + std::to_string(len) + " exceeds the " +
                            std::to_string(frame.size() - kFrameHeaderSize) + " bytes available",
                        6);
  }
  if (end < frame.size()) throw ProtocolError("trailing bytes after frame", end);
  Cursor c(frame, kFrameHeaderSize, end);
  Message msg;
  switch (static_cast<MessageKind>(static_cast<std::uint8_t>(frame[5]))) {
    case MessageKind::SampleBroadcast: msg = SampleBroadcast{c.indices()}; break;
    case MessageKind::IndexUpload: msg = IndexUpload{c.indices()}; break;
    case MessageKind::IndexUnionBroadcast: msg = IndexUnionBroadcast{c.indices()}; break;
    case MessageKind::ReprUpload: {
      const auto layer = c.u8();
      msg = ReprUpload{layer, c.matrix()};
      break;
    }
    case MessageKind::ReprBroadcast: {
      const auto layer = c.u8();
      msg = ReprBroadcast{layer, c.matrix()};
      break;
    }
    case MessageKind::CotangentBroadcast: msg = CotangentBroadcast{c.matrix()}; break;
    case MessageKind::Control: {
      const std::size_t at = c.pos();
      const auto code = c.u8();
      if (code < 1 || code > 4) throw ProtocolError("unknown control code " + std::to_string(code), at);
      msg = Control{static_cast<ControlCode>(code), c.u32()};
      break;
    }
  }
  if (!c.done()) throw ProtocolError("payload has unread bytes", c.pos());
  return msg;
}

// ---- ledger ----------------------------------------------------------------

std::size_t count_of(const CommCounts& c, MessageKind kind, Direction dir) {
  return c[static_cast<std::size_t>(kind) - 1][static_cast<std::size_t>(dir)];
}

std::size_t total_messages(const CommCounts& c) {
  std::size_t n = 0;
  for (const auto& row : c) n += row[0] + row[1];
  return n;
}

std::size_t aggregation_messages(const CommCounts& c) {
  return count_of(c, MessageKind::ReprUpload, Direction::Up) +
         count_of(c, MessageKind::ReprUpload, Direction::Down) +
         count_of(c, MessageKind::ReprBroadcast, Direction::Up) +
         count_of(c, MessageKind::ReprBroadcast, Direction::Down);
}

void CommLedger::begin_round(std::size_t round) {
  if (rounds_.size() <= round) rounds_.resize(round + 1);
}

void CommLedger::record(MessageKind kind, Direction dir, std::size_t payload_bytes, std::size_t receivers) {
  if (kind == MessageKind::Control) return;
  if (rounds_.empty()) rounds_.emplace_back();
  auto& r = rounds_.back();
  const auto k = static_cast<std::size_t>(kind) - 1;
  const auto d = static_cast<std::size_t>(dir);
  r.counts[k][d] += 1;
  r.bytes[k][d] += payload_bytes * receivers;
}

void CommLedger::record(const Message& msg, Direction dir, std::size_t receivers) {
  if (kind_of(msg) == MessageKind::Control) return;
  record(kind_of(msg), dir, encode_payload(msg).size(), receivers);
}

CommCounts CommLedger::counts() const {
  CommCounts out{};
  for (const auto& r : rounds_) {
    for (std::size_t k = 0; k < kNumMessageKinds; ++k) {
      for (std::size_t d = 0; d < 2; ++d) out[k][d] += r.counts[k][d];
    }
  }
  return out;
}

CommCounts CommLedger::bytes() const {
  CommCounts out{};
  for (const auto& r : rounds_) {
    for (std::size_t k = 0; k < kNumMessageKinds; ++k) {
      for (std::size_t d = 0; d < 2; ++d) out[k][d] += r.bytes[k][d];
    }
  }
  return out;
}

CommCounts expected_counts(const LayerPlan& plan, std::size_t num_clients, std::size_t rounds,
                           std::size_t /*local_steps*/, LabelMode mode) {
  plan.validate();
  CommCounts c{};
  auto add = [&](MessageKind kind, Direction dir, std::size_t n) {
    c[static_cast<std::size_t>(kind) - 1][static_cast<std::size_t>(dir)] += n * rounds;
  };
  add(MessageKind::SampleBroadcast, Direction::Down, 1);
  if (mode == LabelMode::SingleHolder) add(MessageKind::IndexUpload, Direction::Up, 1);
  const std::size_t boundaries = plan.sync_boundaries().size();
  add(MessageKind::IndexUpload, Direction::Up, boundaries * num_clients);
  add(MessageKind::IndexUnionBroadcast, Direction::Down, boundaries);
  add(MessageKind::ReprUpload, Direction::Up, plan.num_agg() * num_clients);
  add(MessageKind::ReprBroadcast, Direction::Down, plan.num_agg());
  if (mode == LabelMode::SingleHolder) {
    add(MessageKind::CotangentBroadcast, Direction::Up, 1);
    add(MessageKind::CotangentBroadcast, Direction::Down, 1);
  }
  return c;
}

// ---- channels --------------------------------------------------------------

void send_message(Channel& ch, const Message& msg) { ch.send(serialize(msg)); }

Message receive_message(Channel& ch) { return deserialize(ch.receive()); }

ChannelPair make_inprocess_pair() {
  auto up = std::make_shared<FrameQueue>();
  auto down = std::make_shared<FrameQueue>();
  return {std::make_unique<InProcessChannel>(down, up), std::make_unique<InProcessChannel>(up, down)};
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  sockaddr_in addr = resolve(host, port);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    throw_errno("bind " + host + ":" + std::to_string(port));
  }
  if (::listen(fd_, 64) != 0) {
    ::close(fd_);
    throw_errno("listen");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::vector<std::unique_ptr<Channel>> TcpListener::accept_clients(std::size_t num_clients) {
  std::vector<std::unique_ptr<Channel>> out(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    int fd = -1;
    do {
      fd = ::accept(fd_, nullptr, nullptr);
    } while (fd < 0 && errno == EINTR);
    if (fd < 0) throw_errno("accept");
    auto ch = std::make_unique<TcpChannel>(fd);
    const Message hello = receive_message(*ch);
    const auto* ctl = std::get_if<Control>(&hello);
    if (ctl == nullptr || ctl->code != ControlCode::Hello) {
      throw ProtocolError("expected a Hello control frame from a new client");
    }
    if (ctl->value >= num_clients || out[ctl->value]) {
      throw ProtocolError("invalid or duplicate client id " + std::to_string(ctl->value) + " in Hello");
    }
    out[ctl->value] = std::move(ch);
  }
  return out;
}

std::unique_ptr<Channel> tcp_connect(const std::string& host, std::uint16_t port, std::size_t client_id) {
  sockaddr_in addr = resolve(host, port);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw_errno("socket");
  int rc = -1;
  do {
    rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  } while (rc != 0 && errno == EINTR);
  if (rc != 0) {
    const int err = errno;
    ::close(fd);
    errno = err;
    throw_errno("connect " + host + ":" + std::to_string(port));
  }
  auto ch = std::make_unique<TcpChannel>(fd);
  send_message(*ch, Control{ControlCode::Hello, static_cast<std::uint32_t>(client_id)});
  return ch;
}

}  // namespace glasu
