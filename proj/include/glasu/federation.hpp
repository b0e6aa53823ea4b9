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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glasu/graph.hpp"
#include "glasu/linalg.hpp"
#include "glasu/model.hpp"
#include "glasu/sampling.hpp"
#include "glasu/transport.hpp"

namespace glasu {

// ---------------------------------------------------------------------------
// Server aggregation
// ---------------------------------------------------------------------------

enum class AggKind { Average, Concat };

struct AggSpec {
  AggKind kind = AggKind::Average;
  std::vector<std::size_t> widths;  // Concat: block width per client, in client order

  static AggSpec average() { return {}; }
  static AggSpec concat(std::vector<std::size_t> widths) { return {AggKind::Concat, std::move(widths)}; }

  // Column offset of client m's block (Concat).
  std::size_t offset(std::size_t client) const;
  friend bool operator==(const AggSpec&, const AggSpec&) = default;
};

// Average: element-wise mean (parts summed in client order, then divided by
// M). Concat: column concatenation in client order.
Matrix aggregate(std::span<const Matrix> parts, const AggSpec& spec);

// What a client keeps from an aggregation it took part in: the server's
// aggregate and the part it uploaded. The "all but m" contribution is
// determined by the pair; keeping both instead of their difference lets
// composing with the unchanged own part return the aggregate exactly.
struct StaleBlock {
  Matrix aggregate;
  Matrix own;
};

// H_{-m} as a matrix: Average -> aggregate - own / M; Concat -> every
// column block except client m's.
Matrix extract(const Matrix& h_agg, const Matrix& h_plus, const AggSpec& spec, std::size_t num_clients,
               std::size_t client);
// Inverse of extract: Average -> h_minus + h_plus / M; Concat -> h_plus
// reinserted at client m's block.
Matrix local_compose(const Matrix& h_minus, const Matrix& h_plus, const AggSpec& spec,
                     std::size_t num_clients, std::size_t client);

StaleBlock make_stale(const Matrix& h_agg, const Matrix& h_plus, const AggSpec& spec,
                      std::size_t num_clients, std::size_t client);
Matrix stale_value(const StaleBlock& block, const AggSpec& spec, std::size_t num_clients, std::size_t client);
// Aggregate recomputed with client m's part replaced by h_plus and every
// other part held fixed. Entries whose own part is unchanged come back
// bitwise equal to the stored aggregate; with M == 1 the result is h_plus.
Matrix local_compose(const StaleBlock& block, const Matrix& h_plus, const AggSpec& spec,
                     std::size_t num_clients, std::size_t client);

// Share of an aggregate's cotangent owed to each client: Average -> grad / M,
// Concat -> the client's column block.
std::vector<Matrix> server_backward_route(const Matrix& grad_agg, const AggSpec& spec, std::size_t num_clients);
Matrix route_to_client(const Matrix& grad_agg, const AggSpec& spec, std::size_t num_clients, std::size_t client);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct FederationConfig {
  LayerPlan plan;
  LayerKind kind;
  std::size_t hidden_dim = 16;
  AggSpec agg;  // Concat with empty widths splits hidden_dim like feature blocks
  LabelMode label_mode = LabelMode::AllClients;
  SamplerConfig sampler;
  std::size_t rounds = 1;       // T
  std::size_t local_steps = 1;  // Q
  double eta = 0.1;
  std::uint64_t seed = 0;

  // Checks every constraint for num_clients clients and fills in default
  // Concat widths. Throws ConfigError.
  void validate(std::size_t num_clients);
};

ModelShape client_model_shape(const FederationConfig& cfg, std::size_t client, std::size_t num_clients,
                              std::size_t input_dim, std::size_t num_classes);
// Initial weights of client m; a single-client federation and the
// monolithic trainer draw identical weights from the same seed.
ClientModel init_weights(const FederationConfig& cfg, std::size_t client, std::size_t num_clients,
                         std::size_t input_dim, std::size_t num_classes);

// ---------------------------------------------------------------------------
// Client protocol state machine
// ---------------------------------------------------------------------------

struct LocalResult {
  double loss = 0.0;
  Matrix output;      // H_m[L] as seen by the client
  ClientModel grads;  // gradient of the local objective
};

// One client's side of the protocol. It holds a view of its shard (the
// caller keeps features, adjacency and labels alive) and owns its weights.
// A round runs: set_schedule, then joint inference via start_forward /
// advance / supply_aggregate, then (SingleHolder) the cotangent exchange,
// then Q calls to local_step.
class FederatedClient {
 public:
  FederatedClient(std::size_t id, std::size_t num_clients, const FederationConfig& cfg,
                  const Matrix& features, const NormalizedAdj& adj, std::span<const int> labels,
                  ClientModel model);

  std::size_t id() const { return id_; }
  bool holds_labels() const;
  const ClientModel& model() const { return model_; }
  ClientModel& model() { return model_; }

  // S_m[0..L] for the current round; builds the sampled bipartite blocks.
  void set_schedule(std::vector<IndexList> sets);
  const std::vector<IndexList>& schedule() const { return sets_; }

  // Joint inference with the current weights. advance() runs layers until
  // one ends in an aggregation and returns the part to upload, or returns
  // nothing once H[L] is reached.
  void start_forward();
  std::optional<ReprUpload> advance();
  void supply_aggregate(const ReprBroadcast& agg);
  bool forward_done() const { return layer_ == num_layers(); }
  const Matrix& joint_output() const;

  // SingleHolder: client 0 computes the cotangent of its loss with respect
  // to H[L] after joint inference; every client then receives it.
  Matrix holder_cotangent() const;
  void set_cotangent(Matrix g);

  // The local objective (own classifier loss, or <g, H_m[L]> for a
  // SingleHolder non-holder) and its gradient at the given weights, with
  // the stored aggregates substituted by local_compose and held constant.
  LocalResult local_objective(const ClientModel& weights) const;
  // One local iteration at the current weights: objective, then
  // W <- W - eta * grad. Returns the objective value and forward output.
  LocalResult local_step(double eta);

  const std::vector<StaleBlock>& stale_blocks() const { return stale_; }

 private:
  std::size_t num_layers() const { return cfg_.plan.num_layers; }
  Matrix input_rows() const;
  Matrix batch_labels_grad(const Matrix& h, const Matrix& classifier, double* loss, Matrix* grad_cls) const;
  std::size_t identity_offset(std::size_t layer) const;

  std::size_t id_;
  std::size_t num_clients_;
  FederationConfig cfg_;
  const Matrix* features_;
  const NormalizedAdj* adj_;
  std::span<const int> labels_;
  ClientModel model_;

  std::vector<IndexList> sets_;
  std::vector<SparseBlock> blocks_;
  std::vector<IndexList> residual_rows_;  // rows of S_m[0] for S_m[l+1]
  std::vector<StaleBlock> stale_;                         // one per aggregation layer
  std::optional<Matrix> cotangent_;

  // Joint inference cursor.
  std::size_t layer_ = 0;
  Matrix h_;
  Matrix h0_;
  std::optional<Matrix> pending_;  // uploaded part awaiting its aggregate
  bool in_forward_ = false;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct LossRecord {
  std::size_t round = 0;
  std::size_t step = 0;
  std::size_t client = 0;
  double loss = 0.0;
  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct AccuracyRecord {
  std::size_t round = 0;
  double accuracy = 0.0;
  friend bool operator==(const AccuracyRecord&, const AccuracyRecord&) = default;
};

struct TrainHistory {
  std::vector<LossRecord> losses;        // ordered by (round, step, client)
  std::vector<AccuracyRecord> accuracy;  // rounds where evaluation ran
  CommLedger ledger;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

// Losses compared through their bit patterns (so NaN == NaN and 0 != -0).
bool bitwise_equal(const TrainHistory& a, const TrainHistory& b);

enum class TransportKind { Serial, InProcess, Tcp };

struct TrainOptions {
  TransportKind transport = TransportKind::InProcess;
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;  // 0 picks a free port
  std::size_t eval_every = 0;         // 0: no per-round evaluation
  std::size_t eval_batch_size = 256;
};

struct TrainResult {
  std::vector<ClientModel> models;
  TrainHistory history;
};

// Prepared per-client inputs shared by the drivers and evaluation.
struct FederationData {
  const PartitionedDataset* part = nullptr;
  std::vector<NormalizedAdj> adjs;

  explicit FederationData(const PartitionedDataset& p);
};

// Rounds of sampling, joint inference and Q local updates. Serial runs the
// protocol in one thread without a transport; InProcess and Tcp run one
// worker per client plus a server worker exchanging serialized frames. All
// three produce bitwise-identical results for the same seed.
TrainResult train(const PartitionedDataset& part, FederationConfig cfg, const TrainOptions& opts = {});
TrainResult train(const PartitionedDataset& part, FederationConfig cfg, std::vector<ClientModel> init,
                  const TrainOptions& opts = {});

// Single-model reference trainer on a plain dataset: per round it draws the
// same sampled schedule as a one-client federation and takes Q plain SGD
// steps on it. No messages are exchanged.
struct CentralizedResult {
  ClientModel model;
  std::vector<LossRecord> losses;
};
CentralizedResult train_centralized(const Dataset& ds, const FederationConfig& cfg);

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

// Split forward pass of every client on a given schedule; returns H_m[L]
// per client.
std::vector<Matrix> joint_inference(std::span<const ClientModel> models, const FederationData& data,
                                    const FederationConfig& cfg, const SampleSchedule& schedule);

// Predicted class per node: argmax of client 0's logits in SingleHolder
// mode, of the clients' mean logits in AllClients mode. Full neighborhoods,
// mini-batches of batch_size nodes.
std::vector<int> predict(std::span<const ClientModel> models, const FederationData& data,
                         const FederationConfig& cfg, std::span<const Index> nodes, std::size_t batch_size = 256);

// Fraction of nodes predicted correctly; 1.0 (with a warning on stderr) for
// an empty node set.
double evaluate(std::span<const ClientModel> models, const FederationData& data, const FederationConfig& cfg,
                std::span<const Index> nodes, std::size_t batch_size = 256);

// Accuracy of one monolithic model on a plain dataset.
double evaluate_centralized(const ClientModel& model, const Dataset& ds, const FederationConfig& cfg,
                            std::span<const Index> nodes, std::size_t batch_size = 256);

}  // namespace glasu
