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

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "glasu/error.hpp"
#include "glasu/linalg.hpp"
#include "glasu/sampling.hpp"

namespace glasu {

// ---------------------------------------------------------------------------
// Messages and wire format
// ---------------------------------------------------------------------------

enum class MessageKind : std::uint8_t {
  SampleBroadcast = 1,
  IndexUpload = 2,
  IndexUnionBroadcast = 3,
  ReprUpload = 4,
  ReprBroadcast = 5,
  CotangentBroadcast = 6,
  Control = 7,
};

inline constexpr std::size_t kNumMessageKinds = 7;
std::string_view to_string(MessageKind kind);

struct SampleBroadcast {
  IndexList nodes;
  friend bool operator==(const SampleBroadcast&, const SampleBroadcast&) = default;
};
struct IndexUpload {
  IndexList nodes;
  friend bool operator==(const IndexUpload&, const IndexUpload&) = default;
};
struct IndexUnionBroadcast {
  IndexList nodes;
  friend bool operator==(const IndexUnionBroadcast&, const IndexUnionBroadcast&) = default;
};
struct ReprUpload {
  std::uint8_t layer = 0;
  Matrix h;
  friend bool operator==(const ReprUpload&, const ReprUpload&) = default;
};
struct ReprBroadcast {
  std::uint8_t layer = 0;
  Matrix h;
  friend bool operator==(const ReprBroadcast&, const ReprBroadcast&) = default;
};
struct CotangentBroadcast {
  Matrix g;
  friend bool operator==(const CotangentBroadcast&, const CotangentBroadcast&) = default;
};

enum class ControlCode : std::uint8_t { Hello = 1, RoundBegin = 2, RoundEnd = 3, Shutdown = 4 };

struct Control {
  ControlCode code = ControlCode::Hello;
  std::uint32_t value = 0;
  friend bool operator==(const Control&, const Control&) = default;
};

using Message = std::variant<SampleBroadcast, IndexUpload, IndexUnionBroadcast, ReprUpload,
                             ReprBroadcast, CotangentBroadcast, Control>;

MessageKind kind_of(const Message& msg);

// Frame: "GLSU", u8 version (1), u8 kind tag, u32 LE payload length, payload.
inline constexpr std::size_t kFrameHeaderSize = 10;
inline constexpr std::uint8_t kWireVersion = 1;

std::string serialize(const Message& msg);
// Parses exactly one frame; trailing bytes are an error.
Message deserialize(std::string_view frame);
// Validates a frame header and returns its payload length.
std::size_t frame_payload_length(std::string_view header);

// ---------------------------------------------------------------------------
// Communication ledger
// ---------------------------------------------------------------------------

enum class Direction : std::uint8_t { Up = 0, Down = 1 };

// counts[kind - 1][direction]
using CommCounts = std::array<std::array<std::size_t, 2>, kNumMessageKinds>;

std::size_t count_of(const CommCounts& c, MessageKind kind, Direction dir);
std::size_t total_messages(const CommCounts& c);
// ReprUpload + ReprBroadcast in both directions.
std::size_t aggregation_messages(const CommCounts& c);

struct LedgerRound {
  CommCounts counts{};
  CommCounts bytes{};  // payload bytes; broadcasts count once per receiver
  friend bool operator==(const LedgerRound&, const LedgerRound&) = default;
};

// Logical messages and payload bytes per round, kind and direction. One
// upload or one broadcast is one message whatever the fan-out; the byte
// column multiplies broadcast payloads by their receiver count. Control
// frames are protocol housekeeping and are not recorded.
class CommLedger {
 public:
  void begin_round(std::size_t round);
  void record(MessageKind kind, Direction dir, std::size_t payload_bytes, std::size_t receivers = 1);
  void record(const Message& msg, Direction dir, std::size_t receivers = 1);

  std::size_t num_rounds() const { return rounds_.size(); }
  const LedgerRound& round(std::size_t t) const { return rounds_.at(t); }
  CommCounts counts() const;
  CommCounts bytes() const;
  std::size_t total_count() const { return total_messages(counts()); }
  std::size_t total_bytes() const { return total_messages(bytes()); }
  bool empty() const { return total_count() == 0; }

  friend bool operator==(const CommLedger&, const CommLedger&) = default;

 private:
  std::vector<LedgerRound> rounds_;
};

// Messages a training run sends: per round, the sampling messages
// (SampleBroadcast, plus the batch IndexUpload from client 0 in SingleHolder
// mode, plus M IndexUpload and one IndexUnionBroadcast per union boundary),
// M ReprUpload and one ReprBroadcast per aggregation layer, and in
// SingleHolder mode one cotangent upload and one broadcast. The Q - 1 later
// local steps send nothing; everything scales with T.
CommCounts expected_counts(const LayerPlan& plan, std::size_t num_clients, std::size_t rounds,
                           std::size_t local_steps, LabelMode mode);

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

// Ordered, reliable frame pipe between the server and one client.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(std::string frame) = 0;
  // Blocks until a frame arrives; throws ChannelClosed once the peer is gone.
  virtual std::string receive() = 0;
  // Unblocks both ends; later sends and receives throw.
  virtual void close() = 0;
};

class ChannelClosed : public ProtocolError {
 public:
  ChannelClosed() : ProtocolError("channel closed by peer") {}
};

void send_message(Channel& ch, const Message& msg);
Message receive_message(Channel& ch);

struct ChannelPair {
  std::unique_ptr<Channel> server_end;
  std::unique_ptr<Channel> client_end;
};

// Two unbounded in-memory queues.
ChannelPair make_inprocess_pair();

// TCP: one long-lived connection per client. The listener binds host:port
// (port 0 picks a free one); clients introduce themselves with a Hello
// control frame carrying their id.
inline constexpr std::uint16_t kDefaultPort = 7431;

class TcpListener {
 public:
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  // Accepts num_clients connections and orders them by the id each sends.
  std::vector<std::unique_ptr<Channel>> accept_clients(std::size_t num_clients);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<Channel> tcp_connect(const std::string& host, std::uint16_t port, std::size_t client_id);

}  // namespace glasu
