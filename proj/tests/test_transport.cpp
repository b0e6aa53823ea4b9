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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <thread>

#include "glasu/error.hpp"
#include "glasu/transport.hpp"
#include "test_util.hpp"

namespace glasu {
namespace {

std::string bytes(std::initializer_list<int> values) {
  std::string out;
  for (int v : values) out.push_back(static_cast<char>(v));
  return out;
}

std::vector<Message> one_of_each() {
  Rng rng(1);
  return {
      SampleBroadcast{{0, 3, 9}},
      IndexUpload{{}},
      IndexUnionBroadcast{{1, 2, 4294967295u}},
      ReprUpload{3, testing::random_matrix(2, 3, rng)},
      ReprBroadcast{0, testing::random_matrix(4, 1, rng)},
      CotangentBroadcast{Matrix(0, 5)},
      Control{ControlCode::RoundEnd, 17},
  };
}

TEST(Wire, RoundTripEveryVariant) {
  for (const Message& m : one_of_each()) {
    const std::string frame = serialize(m);
    EXPECT_EQ(deserialize(frame), m);
    EXPECT_EQ(serialize(deserialize(frame)), frame);
    EXPECT_EQ(frame_payload_length(frame), frame.size() - kFrameHeaderSize);
  }
}

TEST(Wire, KindTagsMatchVariantOrder) {
  const auto all = one_of_each();
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(static_cast<std::size_t>(kind_of(all[i])), i + 1);
    EXPECT_EQ(static_cast<unsigned char>(serialize(all[i])[5]), i + 1);
  }
}

TEST(Wire, EmptyIndexSetHasFourBytePayload) {
  const std::string frame = serialize(IndexUpload{{}});
  EXPECT_EQ(frame.size(), kFrameHeaderSize + 4);
  EXPECT_EQ(frame.substr(kFrameHeaderSize), bytes({0, 0, 0, 0}));
}

TEST(Wire, ScalarMatrixLayout) {
  const std::string frame = serialize(CotangentBroadcast{Matrix::from_rows({{2.5}})});
  ASSERT_EQ(frame.size(), kFrameHeaderSize + 16);
  const double v = 2.5;
  std::uint64_t raw = 0;
  std::memcpy(&raw, &v, sizeof raw);
  std::string le;
  for (int i = 0; i < 8; ++i) le.push_back(static_cast<char>((raw >> (8 * i)) & 0xff));
  EXPECT_EQ(frame.substr(kFrameHeaderSize, 8), bytes({1, 0, 0, 0, 1, 0, 0, 0}));
  EXPECT_EQ(frame.substr(kFrameHeaderSize + 8), le);
  EXPECT_EQ(le, bytes({0, 0, 0, 0, 0, 0, 0x04, 0x40}));
}

TEST(Wire, GoldenReprUploadFrame) {
  // Layer 2, 1x2 matrix [1.0, -0.5].
  const std::string golden = bytes({'G', 'L', 'S', 'U', 1, 4, 25, 0, 0, 0,  // header
                                    2,                                       // layer
                                    1, 0, 0, 0, 2, 0, 0, 0,                  // rows, cols
                                    0, 0, 0, 0, 0, 0, 0xf0, 0x3f,            // 1.0
                                    0, 0, 0, 0, 0, 0, 0xe0, 0xbf});          // -0.5
  const Message want = ReprUpload{2, Matrix::from_rows({{1.0, -0.5}})};
  EXPECT_EQ(deserialize(golden), want);
  EXPECT_EQ(serialize(want), golden);
}

TEST(Wire, BadMagicNamesExpectedMagic) {
  std::string frame = serialize(SampleBroadcast{{1}});
  frame[1] = 'X';
  try {
    deserialize(frame);
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("GLSU"), std::string::npos);
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Wire, BadVersionAndTagAreProtocolErrors) {
  std::string frame = serialize(SampleBroadcast{{1}});
  std::string v2 = frame;
  v2[4] = 2;
  std::string tag = frame;
  tag[5] = 9;
  EXPECT_THROW(deserialize(v2), ProtocolError);
  EXPECT_THROW(deserialize(tag), ProtocolError);
}

TEST(Wire, LengthBeyondBufferIsTruncation) {
  std::string frame = serialize(SampleBroadcast{{1, 2}});
  frame[6] = 100;
  try {
    deserialize(frame);
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("trunc"), std::string::npos);
  }
  EXPECT_THROW(deserialize(frame.substr(0, 7)), ProtocolError);
}

TEST(Wire, MalformedPayloadsAreProtocolErrors) {
  // Payload length disagrees with the declared element count.
  EXPECT_THROW(deserialize(bytes({'G', 'L', 'S', 'U', 1, 1, 4, 0, 0, 0, 2, 0, 0, 0})), ProtocolError);
  // Unsorted ids.
  EXPECT_THROW(deserialize(bytes({'G', 'L', 'S', 'U', 1, 1, 12, 0, 0, 0, 2, 0, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0})),
               ProtocolError);
  // Non-finite matrix entry.
  std::string nan_frame = serialize(CotangentBroadcast{Matrix::from_rows({{1.0}})});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(nan_frame.data() + kFrameHeaderSize + 8, &nan, 8);
  EXPECT_THROW(deserialize(nan_frame), ProtocolError);
  // Unknown control code.
  EXPECT_THROW(deserialize(bytes({'G', 'L', 'S', 'U', 1, 7, 5, 0, 0, 0, 9, 0, 0, 0, 0})), ProtocolError);
}

TEST(Wire, InvalidMessagesAreRejectedOnSerialize) {
  EXPECT_THROW(serialize(SampleBroadcast{{3, 1}}), ProtocolError);
  EXPECT_THROW(serialize(CotangentBroadcast{Matrix(1, 1, std::numeric_limits<double>::infinity())}),
               ProtocolError);
}

TEST(Ledger, TotalsEqualSumOfRounds) {
  CommLedger ledger;
  Rng rng(3);
  for (std::size_t t = 0; t < 5; ++t) {
    ledger.begin_round(t);
    for (int i = 0; i < 20; ++i) {
      const auto kind = static_cast<MessageKind>(1 + rng.below(6));
      ledger.record(kind, rng.below(2) ? Direction::Up : Direction::Down, rng.below(100), 1 + rng.below(3));
    }
  }
  CommCounts sum_counts{}, sum_bytes{};
  for (std::size_t t = 0; t < ledger.num_rounds(); ++t) {
    for (std::size_t k = 0; k < kNumMessageKinds; ++k) {
      for (std::size_t d = 0; d < 2; ++d) {
        sum_counts[k][d] += ledger.round(t).counts[k][d];
        sum_bytes[k][d] += ledger.round(t).bytes[k][d];
      }
    }
  }
  EXPECT_EQ(ledger.counts(), sum_counts);
  EXPECT_EQ(ledger.bytes(), sum_bytes);
  EXPECT_EQ(ledger.total_count(), 100u);
}

TEST(Ledger, BroadcastBytesScaleWithReceiversAndControlIsFree) {
  CommLedger ledger;
  ledger.begin_round(0);
  const Message msg = ReprBroadcast{1, Matrix(2, 2)};
  ledger.record(msg, Direction::Down, 3);
  ledger.record(Control{ControlCode::RoundBegin, 0}, Direction::Down, 3);
  EXPECT_EQ(count_of(ledger.counts(), MessageKind::ReprBroadcast, Direction::Down), 1u);
  EXPECT_EQ(ledger.total_bytes(), 3u * (1 + 8 + 32));
  EXPECT_EQ(ledger.total_count(), 1u);
}

TEST(Ledger, EmptyWithoutRecords) {
  CommLedger ledger;
  EXPECT_TRUE(ledger.empty());
  EXPECT_EQ(ledger.num_rounds(), 0u);
}

TEST(ExpectedCounts, EveryLayerInferenceCost) {
  const CommCounts c = expected_counts(LayerPlan::every_layer(4), 3, 1, 1, LabelMode::AllClients);
  EXPECT_EQ(aggregation_messages(c), 16u);
  EXPECT_EQ(count_of(c, MessageKind::SampleBroadcast, Direction::Down), 1u);
  EXPECT_EQ(count_of(c, MessageKind::CotangentBroadcast, Direction::Up), 0u);
}

TEST(ExpectedCounts, LazyAggregationSavingFactor) {
  const std::size_t M = 3, T = 7;
  const auto lazy = expected_counts(LayerPlan::uniform(4, 2), M, T, 4, LabelMode::AllClients);
  const auto dense = expected_counts(LayerPlan::every_layer(4), M, T, 1, LabelMode::AllClients);
  // Aggregation messages per model update: lazy has Q = 4 updates per round.
  const double lazy_per_update = static_cast<double>(aggregation_messages(lazy)) / (T * 4);
  const double dense_per_update = static_cast<double>(aggregation_messages(dense)) / (T * 1);
  EXPECT_DOUBLE_EQ(lazy_per_update / dense_per_update, 1.0 / 8.0);
}

TEST(ExpectedCounts, IndependentOfLocalSteps) {
  const LayerPlan plan = LayerPlan::uniform(3, 2);
  EXPECT_EQ(expected_counts(plan, 4, 5, 1, LabelMode::SingleHolder),
            expected_counts(plan, 4, 5, 9, LabelMode::SingleHolder));
}

TEST(ExpectedCounts, SingleHolderAddsBatchUploadAndCotangent) {
  const LayerPlan plan = LayerPlan::uniform(3, 1);
  const auto all = expected_counts(plan, 2, 1, 1, LabelMode::AllClients);
  const auto single = expected_counts(plan, 2, 1, 1, LabelMode::SingleHolder);
  EXPECT_EQ(total_messages(single), total_messages(all) + 3);
  EXPECT_EQ(count_of(single, MessageKind::IndexUpload, Direction::Up), 1u);
  EXPECT_EQ(count_of(single, MessageKind::CotangentBroadcast, Direction::Up), 1u);
  EXPECT_EQ(count_of(single, MessageKind::CotangentBroadcast, Direction::Down), 1u);
}

TEST(ExpectedCounts, ZeroRoundsIsEmpty) {
  EXPECT_EQ(total_messages(expected_counts(LayerPlan::uniform(2, 1), 3, 0, 1, LabelMode::AllClients)), 0u);
}

TEST(InProcess, DeliversInOrderAndSignalsClose) {
  ChannelPair pair = make_inprocess_pair();
  const auto all = one_of_each();
  for (const Message& m : all) send_message(*pair.client_end, m);
  for (const Message& m : all) EXPECT_EQ(receive_message(*pair.server_end), m);
  send_message(*pair.server_end, Control{ControlCode::Shutdown, 0});
  EXPECT_EQ(receive_message(*pair.client_end), Message(Control{ControlCode::Shutdown, 0}));
  pair.client_end->close();
  EXPECT_THROW(receive_message(*pair.server_end), ChannelClosed);
}

TEST(Tcp, ClientsAreOrderedByHelloId) {
  TcpListener listener("127.0.0.1", 0);
  ASSERT_NE(listener.port(), 0);
  std::vector<std::unique_ptr<Channel>> clients(3);
  std::thread connector([&] {
    for (std::size_t id : {2u, 0u, 1u}) clients[id] = tcp_connect("127.0.0.1", listener.port(), id);
  });
  connector.join();
  auto server = listener.accept_clients(3);
  ASSERT_EQ(server.size(), 3u);
  for (std::size_t m = 0; m < 3; ++m) {
    send_message(*clients[m], IndexUpload{{static_cast<Index>(m)}});
  }
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(receive_message(*server[m]), Message(IndexUpload{{static_cast<Index>(m)}}));
  }
  Rng rng(4);
  const Message big = ReprBroadcast{1, testing::random_matrix(300, 40, rng)};
  for (auto& s : server) send_message(*s, big);
  for (auto& c : clients) EXPECT_EQ(receive_message(*c), big);
  clients[0]->close();
  EXPECT_THROW(receive_message(*server[0]), ChannelClosed);
}

TEST(Tcp, DuplicateHelloIdIsProtocolError) {
  TcpListener listener("127.0.0.1", 0);
  std::vector<std::unique_ptr<Channel>> clients;
  clients.push_back(tcp_connect("127.0.0.1", listener.port(), 1));
  clients.push_back(tcp_connect("127.0.0.1", listener.port(), 1));
  EXPECT_THROW(listener.accept_clients(2), ProtocolError);
}

}  // namespace
}  // namespace glasu
