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

#include "glasu/federation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <iostream>
#include <mutex>
#include <numeric>
#include <thread>
#include <utility>

#include "glasu/error.hpp"

namespace glasu {
namespace {

constexpr std::uint64_t kInitLabel = 0x696e6974ULL;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape " + dims(a) + " vs " + dims(b));
}

std::vector<int> labels_at(std::span<const int> labels, const IndexList& nodes) {
  std::vector<int> out;
  out.reserve(nodes.size());
  for (Index i : nodes) out.push_back(labels[i]);
  return out;
}

// Positions of each node of `subset` inside the sorted `superset`.
IndexList positions_in(const IndexList& superset, const IndexList& subset) {
  IndexList pos;
  pos.reserve(subset.size());
  for (Index i : subset) {
    const auto it = std::lower_bound(superset.begin(), superset.end(), i);
    if (it == superset.end() || *it != i) {
      throw ConfigError("schedule: node " + std::to_string(i) + " of an upper layer is missing from layer 0");
    }
    pos.push_back(static_cast<Index>(it - superset.begin()));
  }
  return pos;
}

void scatter_add_rows(Matrix& dst, const Matrix& src, const IndexList& rows) {
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto d = dst.row(rows[k]);
    const auto s = src.row(k);
    for (std::size_t j = 0; j < s.size(); ++j) d[j] += s[j];
  }
}

int argmax_row(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

template <class T>
T expect(Channel& ch, const char* who) {
  Message msg = receive_message(ch);
  if (auto* v = std::get_if<T>(&msg)) return std::move(*v);
  throw ProtocolError(std::string(who) + ": unexpected " + std::string(to_string(kind_of(msg))) + " frame");
}

}  // namespace

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

std::size_t AggSpec::offset(std::size_t client) const {
  require(client < widths.size(), "AggSpec: no block width for client " + std::to_string(client));
  return std::accumulate(widths.begin(), widths.begin() + static_cast<std::ptrdiff_t>(client), std::size_t{0});
}

Matrix aggregate(std::span<const Matrix> parts, const AggSpec& spec) {
  require(!parts.empty(), "aggregate: no parts");
  for (const auto& p : parts) {
    require(p.rows() == parts[0].rows(), "aggregate: parts have different row counts");
  }
  if (spec.kind == AggKind::Concat) {
    if (!spec.widths.empty()) {
      require(spec.widths.size() == parts.size(), "aggregate: block widths do not match client count");
      for (std::size_t m = 0; m < parts.size(); ++m) {
        require(parts[m].cols() == spec.widths[m],
                "aggregate: client " + std::to_string(m) + " block has " + std::to_string(parts[m].cols()) +
                    " columns, expected " + std::to_string(spec.widths[m]));
      }
    }
    return hconcat(parts);
  }
  for (const auto& p : parts) require_same_shape(p, parts[0], "aggregate");
  Matrix acc = parts[0];
  for (std::size_t m = 1; m < parts.size(); ++m) acc += parts[m];
  if (parts.size() > 1) acc /= static_cast<double>(parts.size());
  return acc;
}

Matrix extract(const Matrix& h_agg, const Matrix& h_plus, const AggSpec& spec, std::size_t num_clients,
               std::size_t client) {
  require(client < num_clients, "extract: client id out of range");
  if (spec.kind == AggKind::Concat) {
    const std::size_t off = spec.offset(client);
    const std::size_t w = spec.widths[client];
    require(h_plus.rows() == h_agg.rows() && h_plus.cols() == w && off + w <= h_agg.cols(),
            "extract: block " + dims(h_plus) + " does not fit aggregate " + dims(h_agg));
    const Matrix parts[] = {column_block(h_agg, 0, off), column_block(h_agg, off + w, h_agg.cols() - off - w)};
    return hconcat(parts);
  }
  require_same_shape(h_agg, h_plus, "extract");
  Matrix out(h_agg.rows(), h_agg.cols());
  const double m = static_cast<double>(num_clients);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = h_agg.values()[i] - h_plus.values()[i] / m;
  return out;
}

Matrix local_compose(const Matrix& h_minus, const Matrix& h_plus, const AggSpec& spec, std::size_t num_clients,
                     std::size_t client) {
  require(client < num_clients, "local_compose: client id out of range");
  if (spec.kind == AggKind::Concat) {
    const std::size_t off = spec.offset(client);
    require(h_plus.rows() == h_minus.rows() && h_plus.cols() == spec.widths[client] && off <= h_minus.cols(),
            "local_compose: block " + dims(h_plus) + " does not fit " + dims(h_minus));
    const Matrix parts[] = {column_block(h_minus, 0, off), h_plus,
                            column_block(h_minus, off, h_minus.cols() - off)};
    return hconcat(parts);
  }
  require_same_shape(h_minus, h_plus, "local_compose");
  Matrix out(h_minus.rows(), h_minus.cols());
  const double m = static_cast<double>(num_clients);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = h_minus.values()[i] + h_plus.values()[i] / m;
  return out;
}

StaleBlock make_stale(const Matrix& h_agg, const Matrix& h_plus, const AggSpec& spec, std::size_t num_clients,
                      std::size_t client) {
  require(client < num_clients, "make_stale: client id out of range");
  if (spec.kind == AggKind::Concat) {
    require(h_plus.rows() == h_agg.rows() && h_plus.cols() == spec.widths[client] &&
                spec.offset(client) + h_plus.cols() <= h_agg.cols(),
            "make_stale: block " + dims(h_plus) + " does not fit aggregate " + dims(h_agg));
  } else {
    require_same_shape(h_agg, h_plus, "make_stale");
  }
  return {h_agg, h_plus};
}

Matrix stale_value(const StaleBlock& block, const AggSpec& spec, std::size_t num_clients, std::size_t client) {
  return extract(block.aggregate, block.own, spec, num_clients, client);
}

Matrix local_compose(const StaleBlock& block, const Matrix& h_plus, const AggSpec& spec, std::size_t num_clients,
                     std::size_t client) {
  require_same_shape(block.own, h_plus, "local_compose");
  if (spec.kind == AggKind::Concat) {
    Matrix out = block.aggregate;
    set_column_block(out, spec.offset(client), h_plus);
    return out;
  }
  if (num_clients == 1) return h_plus;
  // aggregate + (h_plus - own) / M == (aggregate - own / M) + h_plus / M.
  Matrix out = block.aggregate;
  const double m = static_cast<double>(num_clients);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double delta = h_plus.values()[i] - block.own.values()[i];
    if (delta != 0.0) out.values()[i] += delta / m;
  }
  return out;
}

std::vector<Matrix> server_backward_route(const Matrix& grad_agg, const AggSpec& spec, std::size_t num_clients) {
  std::vector<Matrix> out;
  out.reserve(num_clients);
  for (std::size_t m = 0; m < num_clients; ++m) out.push_back(route_to_client(grad_agg, spec, num_clients, m));
  return out;
}

Matrix route_to_client(const Matrix& grad_agg, const AggSpec& spec, std::size_t num_clients, std::size_t client) {
  require(client < num_clients, "route_to_client: client id out of range");
  if (spec.kind == AggKind::Concat) return column_block(grad_agg, spec.offset(client), spec.widths[client]);
  return grad_agg / static_cast<double>(num_clients);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void FederationConfig::validate(std::size_t num_clients) {
  require(num_clients >= 1, "need at least one client");
  plan.validate();
  kind.validate();
  require(hidden_dim >= 1, "hidden_dim must be positive");
  require(sampler.batch_size >= 1, "batch_size must be positive");
  require(sampler.fanout >= 1, "fanout must be positive");
  require(local_steps >= 1, "Q (local steps) must be at least 1");
  require(std::isfinite(eta) && eta >= 0.0, "eta must be a finite non-negative step size");
  if (label_mode == LabelMode::SingleHolder) {
    require(plan.aggregates(plan.num_layers - 1),
            "SingleHolder mode needs the last layer (" + std::to_string(plan.num_layers - 1) +
                ") in the aggregation set");
  }
  if (agg.kind == AggKind::Concat) {
    if (agg.widths.empty()) {
      require(hidden_dim >= num_clients, "Concat needs hidden_dim >= M for positive block widths");
      agg.widths = feature_block_widths(hidden_dim, num_clients);
    }
    require(agg.widths.size() == num_clients, "Concat needs one block width per client");
    std::size_t sum = 0;
    for (std::size_t w : agg.widths) {
      require(w >= 1, "Concat block widths must be positive");
      sum += w;
    }
    require(sum == hidden_dim, "Concat block widths must sum to hidden_dim");
  } else {
    for (std::size_t w : agg.widths) require(w == hidden_dim, "Average needs equal hidden widths on every client");
  }
}

ModelShape client_model_shape(const FederationConfig& cfg, std::size_t client, std::size_t num_clients,
                              std::size_t input_dim, std::size_t num_classes) {
  require(client < num_clients, "client id out of range");
  ModelShape shape;
  shape.kind = cfg.kind;
  shape.input_dim = input_dim;
  shape.hidden_dim = cfg.hidden_dim;
  shape.num_classes = num_classes;
  shape.with_classifier = cfg.label_mode == LabelMode::AllClients || client == 0;
  const bool concat = cfg.agg.kind == AggKind::Concat;
  for (std::size_t l = 0; l < cfg.plan.num_layers; ++l) {
    const bool block = concat && cfg.plan.aggregates(l);
    shape.layer_out.push_back(block ? cfg.agg.widths.at(client) : cfg.hidden_dim);
    shape.identity_offset.push_back(block ? cfg.agg.offset(client) : 0);
  }
  return shape;
}

ClientModel init_weights(const FederationConfig& cfg, std::size_t client, std::size_t num_clients,
                         std::size_t input_dim, std::size_t num_classes) {
  const ModelShape shape = client_model_shape(cfg, client, num_clients, input_dim, num_classes);
  return init_client_model(shape, Rng(cfg.seed).derive(kInitLabel).derive(client));
}

// ---------------------------------------------------------------------------
// FederatedClient
// ---------------------------------------------------------------------------

FederatedClient::FederatedClient(std::size_t id, std::size_t num_clients, const FederationConfig& cfg,
                                 const Matrix& features, const NormalizedAdj& adj, std::span<const int> labels,
                                 ClientModel model)
    : id_(id),
      num_clients_(num_clients),
      cfg_(cfg),
      features_(&features),
      adj_(&adj),
      labels_(labels),
      model_(std::move(model)) {
  require(id < num_clients, "client id out of range");
  require(features.rows() == adj.num_nodes(), "client features and adjacency disagree on the node count");
  require(model_.layers.size() == cfg_.plan.num_layers, "client model depth differs from the layer plan");
  if (holds_labels()) {
    require(model_.classifier.has_value(), "label-holding client needs a classifier");
    require(labels_.size() == features.rows(), "label-holding client needs one label per node");
  }
}

bool FederatedClient::holds_labels() const { return cfg_.label_mode == LabelMode::AllClients || id_ == 0; }

std::size_t FederatedClient::identity_offset(std::size_t layer) const {
  return (cfg_.agg.kind == AggKind::Concat && cfg_.plan.aggregates(layer)) ? cfg_.agg.offset(id_) : 0;
}

void FederatedClient::set_schedule(std::vector<IndexList> sets) {
  require(sets.size() == num_layers() + 1, "schedule depth differs from the layer plan");
  sets_ = std::move(sets);
  blocks_.clear();
  residual_rows_.clear();
  for (std::size_t l = 0; l < num_layers(); ++l) {
    blocks_.push_back(bipartite_block(*adj_, sets_[l + 1], sets_[l]));
    if (cfg_.kind.backbone == Backbone::Gcnii) residual_rows_.push_back(positions_in(sets_[0], sets_[l + 1]));
  }
  stale_.clear();
  cotangent_.reset();
  pending_.reset();
  in_forward_ = false;
  layer_ = 0;
}

Matrix FederatedClient::input_rows() const {
  require(!sets_.empty(), "no schedule set for this round");
  return gather_rows(*features_, sets_[0]);
}

void FederatedClient::start_forward() {
  h_ = input_rows();
  if (cfg_.kind.backbone == Backbone::Gcnii) {
    h0_ = relu(matmul(h_, *model_.input_projection));
    h_ = h0_;
  }
  stale_.clear();
  cotangent_.reset();
  pending_.reset();
  layer_ = 0;
  in_forward_ = true;
}

std::optional<ReprUpload> FederatedClient::advance() {
  if (!in_forward_) throw ProtocolError("advance called before start_forward");
  if (pending_) throw ProtocolError("advance called while an aggregate is outstanding");
  const bool gcnii = cfg_.kind.backbone == Backbone::Gcnii;
  while (layer_ < num_layers()) {
    const std::size_t l = layer_;
    const Matrix h0 = gcnii ? gather_rows(h0_, residual_rows_[l]) : Matrix();
    LayerOutput out = layer_forward(h_, blocks_[l], model_.layers[l], cfg_.kind, l, h0, identity_offset(l));
    if (cfg_.plan.aggregates(l)) {
      pending_ = out.h_out;
      return ReprUpload{static_cast<std::uint8_t>(l), std::move(out.h_out)};
    }
    h_ = std::move(out.h_out);
    ++layer_;
  }
  return std::nullopt;
}

void FederatedClient::supply_aggregate(const ReprBroadcast& agg) {
  if (!pending_) throw ProtocolError("aggregate received with no upload outstanding");
  if (agg.layer != layer_) {
    throw ProtocolError("aggregate for layer " + std::to_string(agg.layer) + " while waiting on layer " +
                        std::to_string(layer_));
  }
  const std::size_t want_cols = cfg_.agg.kind == AggKind::Concat ? cfg_.hidden_dim : pending_->cols();
  if (agg.h.rows() != pending_->rows() || agg.h.cols() != want_cols) {
    throw ProtocolError("aggregate " + dims(agg.h) + " is misaligned with client " + std::to_string(id_) +
                        " rows at layer " + std::to_string(layer_));
  }
  stale_.push_back(make_stale(agg.h, *pending_, cfg_.agg, num_clients_, id_));
  h_ = agg.h;
  pending_.reset();
  ++layer_;
}

const Matrix& FederatedClient::joint_output() const {
  if (!in_forward_ || !forward_done() || pending_) throw ProtocolError("joint inference has not finished");
  return h_;
}

Matrix FederatedClient::batch_labels_grad(const Matrix& h, const Matrix& classifier, double* loss,
                                          Matrix* grad_cls) const {
  const std::vector<int> y = labels_at(labels_, sets_.back());
  const LossAndGrad lg = loss_and_grad(classify(h, classifier), y);
  *loss = lg.loss;
  if (grad_cls != nullptr) *grad_cls = matmul(transpose(h), lg.grad_logits);
  return matmul(lg.grad_logits, transpose(classifier));
}

Matrix FederatedClient::holder_cotangent() const {
  require(cfg_.label_mode == LabelMode::SingleHolder && id_ == 0, "only the label holder computes the cotangent");
  double loss = 0.0;
  return batch_labels_grad(joint_output(), *model_.classifier, &loss, nullptr);
}

void FederatedClient::set_cotangent(Matrix g) {
  if (g.rows() != sets_.back().size() || g.cols() != cfg_.hidden_dim) {
    throw ProtocolError("cotangent " + dims(g) + " does not match the batch representation");
  }
  cotangent_ = std::move(g);
}

LocalResult FederatedClient::local_objective(const ClientModel& w) const {
  require(!sets_.empty(), "no schedule set for this round");
  require(stale_.size() == cfg_.plan.num_agg(), "local update needs the aggregates of this round's joint inference");
  const bool gcnii = cfg_.kind.backbone == Backbone::Gcnii;
  const std::size_t L = num_layers();

  // Forward with stored aggregates standing in for the other clients.
  const Matrix x0 = input_rows();
  Matrix pre0;
  Matrix h0;
  Matrix h = x0;
  if (gcnii) {
    pre0 = matmul(x0, *w.input_projection);
    h0 = relu(pre0);
    h = h0;
  }
  std::vector<LayerTape> tapes;
  tapes.reserve(L);
  std::size_t k = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix h0s = gcnii ? gather_rows(h0, residual_rows_[l]) : Matrix();
    LayerOutput out = layer_forward(h, blocks_[l], w.layers[l], cfg_.kind, l, h0s, identity_offset(l));
    tapes.push_back(std::move(out.tape));
    h = cfg_.plan.aggregates(l) ? local_compose(stale_[k++], out.h_out, cfg_.agg, num_clients_, id_)
                                : std::move(out.h_out);
  }

  LocalResult r;
  r.grads = w.zeros_like();
  Matrix grad_h;
  if (holds_labels()) {
    grad_h = batch_labels_grad(h, *w.classifier, &r.loss, &*r.grads.classifier);
  } else {
    if (!cotangent_) throw ProtocolError("non-holder local update needs the broadcast cotangent");
    r.loss = frobenius_dot(*cotangent_, h);
    grad_h = *cotangent_;
  }
  r.output = std::move(h);

  // Backward through client-local operations; stored aggregates are constants.
  Matrix grad_h0;
  if (gcnii) grad_h0 = Matrix(h0.rows(), h0.cols());
  for (std::size_t l = L; l-- > 0;) {
    const Matrix g = cfg_.plan.aggregates(l) ? route_to_client(grad_h, cfg_.agg, num_clients_, id_) : grad_h;
    LayerGrads lg = layer_backward(g, tapes[l]);
    r.grads.layers[l] = std::move(lg.w);
    if (gcnii) scatter_add_rows(grad_h0, lg.h0, residual_rows_[l]);
    grad_h = std::move(lg.h_in);
  }
  if (gcnii) {
    grad_h0 += grad_h;
    r.grads.input_projection = matmul(transpose(x0), relu_backward(grad_h0, pre0));
  }
  return r;
}

LocalResult FederatedClient::local_step(double eta) {
  LocalResult r = local_objective(model_);
  sgd_step(model_, r.grads, eta);
  return r;
}

// ---------------------------------------------------------------------------
// Training drivers
// ---------------------------------------------------------------------------

bool bitwise_equal(const TrainHistory& a, const TrainHistory& b) {
  if (a.losses.size() != b.losses.size() || a.accuracy.size() != b.accuracy.size()) return false;
  for (std::size_t i = 0; i < a.losses.size(); ++i) {
    const auto& x = a.losses[i];
    const auto& y = b.losses[i];
    if (x.round != y.round || x.step != y.step || x.client != y.client ||
        std::bit_cast<std::uint64_t>(x.loss) != std::bit_cast<std::uint64_t>(y.loss)) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.accuracy.size(); ++i) {
    if (a.accuracy[i].round != b.accuracy[i].round ||
        std::bit_cast<std::uint64_t>(a.accuracy[i].accuracy) != std::bit_cast<std::uint64_t>(b.accuracy[i].accuracy)) {
      return false;
    }
  }
  return a.ledger == b.ledger;
}

FederationData::FederationData(const PartitionedDataset& p) : part(&p) {
  adjs.reserve(p.num_clients());
  for (const auto& shard : p.shards) adjs.push_back(normalize_adjacency(shard.graph));
}

namespace {

std::vector<FederatedClient> make_clients(const FederationData& data, const FederationConfig& cfg,
                                          std::vector<ClientModel> models) {
  const auto& part = *data.part;
  std::vector<FederatedClient> clients;
  clients.reserve(part.num_clients());
  for (std::size_t m = 0; m < part.num_clients(); ++m) {
    clients.emplace_back(m, part.num_clients(), cfg, part.shards[m].features, data.adjs[m],
                         std::span<const int>(part.labels), std::move(models[m]));
  }
  return clients;
}

bool eval_round(const TrainOptions& opts, std::size_t t) {
  return opts.eval_every > 0 && (t + 1) % opts.eval_every == 0;
}

const IndexList& eval_nodes(const PartitionedDataset& part) {
  return part.masks.val.empty() ? part.masks.test : part.masks.val;
}

struct Snapshot {
  std::size_t round;
  std::vector<ClientModel> models;
};

void finish_history(TrainHistory& h, const std::vector<Snapshot>& snaps, const FederationData& data,
                    const FederationConfig& cfg, const TrainOptions& opts) {
  std::stable_sort(h.losses.begin(), h.losses.end(), [](const LossRecord& a, const LossRecord& b) {
    return std::tie(a.round, a.step, a.client) < std::tie(b.round, b.step, b.client);
  });
  for (const auto& s : snaps) {
    h.accuracy.push_back({s.round, evaluate(s.models, data, cfg, eval_nodes(*data.part), opts.eval_batch_size)});
  }
}

// Drives all clients in one thread, recording the messages the distributed
// run would send.
TrainResult train_serial(const FederationData& data, const FederationConfig& cfg, std::vector<ClientModel> init,
                         const TrainOptions& opts) {
  const auto& part = *data.part;
  const std::size_t M = part.num_clients();
  const std::size_t L = cfg.plan.num_layers;
  auto clients = make_clients(data, cfg, std::move(init));
  TrainHistory hist;
  std::vector<Snapshot> snaps;
  CommLedger& ledger = hist.ledger;

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    ledger.begin_round(t);
    const IndexList batch = sample_batch(part.masks.train, cfg.sampler.batch_size, batch_stream(cfg.seed, t));
    if (cfg.label_mode == LabelMode::SingleHolder) ledger.record(IndexUpload{batch}, Direction::Up);
    ledger.record(SampleBroadcast{batch}, Direction::Down, M);

    std::vector<std::vector<IndexList>> sets(M, std::vector<IndexList>(L + 1));
    for (auto& s : sets) s[L] = batch;
    std::size_t top = L;
    for (std::size_t b : cfg.plan.sync_boundaries()) {
      std::vector<IndexList> uploads;
      for (std::size_t m = 0; m < M; ++m) {
        sample_segment(data.adjs[m], sets[m], top, b, cfg.sampler.fanout, cfg.seed, t, m);
        ledger.record(IndexUpload{sets[m][b]}, Direction::Up);
        uploads.push_back(sets[m][b]);
      }
      IndexList merged = union_sets(uploads);
      ledger.record(IndexUnionBroadcast{merged}, Direction::Down, M);
      for (auto& s : sets) s[b] = merged;
      top = b;
    }
    for (std::size_t m = 0; m < M; ++m) {
      sample_segment(data.adjs[m], sets[m], top, 0, cfg.sampler.fanout, cfg.seed, t, m);
      clients[m].set_schedule(std::move(sets[m]));
      clients[m].start_forward();
    }

    for (std::size_t l : cfg.plan.agg_layers) {
      std::vector<Matrix> parts;
      for (auto& c : clients) {
        std::optional<ReprUpload> up = c.advance();
        if (!up || up->layer != l) throw ProtocolError("client skipped aggregation layer " + std::to_string(l));
        ledger.record(*up, Direction::Up);
        parts.push_back(std::move(up->h));
      }
      const ReprBroadcast down{static_cast<std::uint8_t>(l), aggregate(parts, cfg.agg)};
      ledger.record(down, Direction::Down, M);
      for (auto& c : clients) c.supply_aggregate(down);
    }
    for (auto& c : clients) {
      if (c.advance()) throw ProtocolError("unexpected aggregation after the last planned layer");
    }
    if (cfg.label_mode == LabelMode::SingleHolder) {
      const CotangentBroadcast g{clients[0].holder_cotangent()};
      ledger.record(g, Direction::Up);
      ledger.record(g, Direction::Down, M);
      for (auto& c : clients) c.set_cotangent(g.g);
    }

    for (std::size_t q = 0; q < cfg.local_steps; ++q) {
      for (std::size_t m = 0; m < M; ++m) {
        const LocalResult r = clients[m].local_step(cfg.eta);
        if (clients[m].holds_labels()) hist.losses.push_back({t, q, m, r.loss});
      }
    }
    if (eval_round(opts, t)) {
      Snapshot s{t, {}};
      for (const auto& c : clients) s.models.push_back(c.model());
      snaps.push_back(std::move(s));
    }
  }

  TrainResult result;
  for (auto& c : clients) result.models.push_back(std::move(c.model()));
  finish_history(hist, snaps, data, cfg, opts);
  result.history = std::move(hist);
  return result;
}

// Collects the first failure of any worker and tears the channels down so
// that every other worker unblocks.
class FailureLatch {
 public:
  explicit FailureLatch(std::vector<Channel*> channels) : channels_(std::move(channels)) {}

  void fail(std::exception_ptr e, bool secondary) {
    {
      std::lock_guard lock(mu_);
      if (secondary) {
        if (!secondary_) secondary_ = e;
      } else if (!primary_) {
        primary_ = e;
      }
    }
    for (Channel* c : channels_) c->close();
  }

  template <class F>
  void guard(F&& body) {
    try {
      body();
    } catch (const ChannelClosed&) {
      fail(std::current_exception(), true);
    } catch (...) {
      fail(std::current_exception(), false);
    }
  }

  void rethrow() const {
    if (primary_) std::rethrow_exception(primary_);
    if (secondary_) std::rethrow_exception(secondary_);
  }

 private:
  std::mutex mu_;
  std::vector<Channel*> channels_;
  std::exception_ptr primary_;
  std::exception_ptr secondary_;
};

void broadcast(std::vector<std::unique_ptr<Channel>>& chans, const Message& msg, CommLedger* ledger) {
  const std::string frame = serialize(msg);
  if (ledger != nullptr) ledger->record(kind_of(msg), Direction::Down, frame.size() - kFrameHeaderSize, chans.size());
  for (auto& c : chans) c->send(frame);
}

template <class T>
T receive_up(Channel& ch, CommLedger& ledger) {
  const std::string frame = ch.receive();
  Message msg = deserialize(frame);
  if (auto* v = std::get_if<T>(&msg)) {
    ledger.record(kind_of(msg), Direction::Up, frame.size() - kFrameHeaderSize);
    return std::move(*v);
  }
  throw ProtocolError("server: unexpected " + std::string(to_string(kind_of(msg))) + " frame");
}

void run_server(std::vector<std::unique_ptr<Channel>>& chans, const PartitionedDataset& part,
                const FederationConfig& cfg, CommLedger& ledger) {
  const std::size_t M = chans.size();
  const std::size_t L = cfg.plan.num_layers;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    ledger.begin_round(t);
    broadcast(chans, Control{ControlCode::RoundBegin, static_cast<std::uint32_t>(t)}, nullptr);

    IndexList batch;
    if (cfg.label_mode == LabelMode::SingleHolder) {
      batch = receive_up<IndexUpload>(*chans[0], ledger).nodes;
    } else {
      batch = sample_batch(part.masks.train, cfg.sampler.batch_size, batch_stream(cfg.seed, t));
    }
    std::vector<std::size_t> shared_rows(L + 1, 0);
    shared_rows[L] = batch.size();
    broadcast(chans, SampleBroadcast{std::move(batch)}, &ledger);

    for (std::size_t b : cfg.plan.sync_boundaries()) {
      std::vector<IndexList> uploads;
      for (auto& c : chans) uploads.push_back(receive_up<IndexUpload>(*c, ledger).nodes);
      IndexList merged = union_sets(uploads);
      shared_rows[b] = merged.size();
      broadcast(chans, IndexUnionBroadcast{std::move(merged)}, &ledger);
    }

    for (std::size_t l : cfg.plan.agg_layers) {
      std::vector<Matrix> parts;
      for (std::size_t m = 0; m < M; ++m) {
        ReprUpload up = receive_up<ReprUpload>(*chans[m], ledger);
        if (up.layer != l) {
          throw ProtocolError("client " + std::to_string(m) + " uploaded layer " + std::to_string(up.layer) +
                              ", expected " + std::to_string(l));
        }
        const std::size_t want_cols = cfg.agg.kind == AggKind::Concat ? cfg.agg.widths[m] : cfg.hidden_dim;
        if (up.h.rows() != shared_rows[l + 1] || up.h.cols() != want_cols) {
          throw ProtocolError("client " + std::to_string(m) + " representation " + dims(up.h) +
                              " is misaligned at layer " + std::to_string(l) + " (expected " +
                              std::to_string(shared_rows[l + 1]) + "x" + std::to_string(want_cols) + ")");
        }
        parts.push_back(std::move(up.h));
      }
      broadcast(chans, ReprBroadcast{static_cast<std::uint8_t>(l), aggregate(parts, cfg.agg)}, &ledger);
    }

    if (cfg.label_mode == LabelMode::SingleHolder) {
      CotangentBroadcast g = receive_up<CotangentBroadcast>(*chans[0], ledger);
      broadcast(chans, g, &ledger);
    }
  }
  broadcast(chans, Control{ControlCode::Shutdown, 0}, nullptr);
}

struct ClientOutcome {
  std::vector<LossRecord> losses;
  std::vector<std::pair<std::size_t, ClientModel>> snapshots;
};

void run_client(Channel& ch, FederatedClient& client, const FederationData& data, const FederationConfig& cfg,
                const TrainOptions& opts, ClientOutcome& out) {
  const auto& part = *data.part;
  const std::size_t m = client.id();
  const std::size_t L = cfg.plan.num_layers;
  for (;;) {
    const Control ctl = expect<Control>(ch, "client");
    if (ctl.code == ControlCode::Shutdown) return;
    if (ctl.code != ControlCode::RoundBegin) throw ProtocolError("client: unexpected control code");
    const std::size_t t = ctl.value;

    if (cfg.label_mode == LabelMode::SingleHolder && m == 0) {
      send_message(ch, IndexUpload{sample_batch(part.masks.train, cfg.sampler.batch_size, batch_stream(cfg.seed, t))});
    }
    std::vector<IndexList> sets(L + 1);
    sets[L] = expect<SampleBroadcast>(ch, "client").nodes;
    std::size_t top = L;
    for (std::size_t b : cfg.plan.sync_boundaries()) {
      sample_segment(data.adjs[m], sets, top, b, cfg.sampler.fanout, cfg.seed, t, m);
      send_message(ch, IndexUpload{sets[b]});
      sets[b] = expect<IndexUnionBroadcast>(ch, "client").nodes;
      top = b;
    }
    sample_segment(data.adjs[m], sets, top, 0, cfg.sampler.fanout, cfg.seed, t, m);
    client.set_schedule(std::move(sets));

    client.start_forward();
    while (std::optional<ReprUpload> up = client.advance()) {
      send_message(ch, *up);
      client.supply_aggregate(expect<ReprBroadcast>(ch, "client"));
    }
    if (cfg.label_mode == LabelMode::SingleHolder) {
      if (m == 0) send_message(ch, CotangentBroadcast{client.holder_cotangent()});
      client.set_cotangent(expect<CotangentBroadcast>(ch, "client").g);
    }

    for (std::size_t q = 0; q < cfg.local_steps; ++q) {
      const LocalResult r = client.local_step(cfg.eta);
      if (client.holds_labels()) out.losses.push_back({t, q, m, r.loss});
    }
    if (eval_round(opts, t)) out.snapshots.emplace_back(t, client.model());
  }
}

TrainResult train_distributed(const FederationData& data, const FederationConfig& cfg,
                              std::vector<ClientModel> init, const TrainOptions& opts) {
  const std::size_t M = data.part->num_clients();
  auto clients = make_clients(data, cfg, std::move(init));
  std::vector<std::unique_ptr<Channel>> server_ends(M);
  std::vector<std::unique_ptr<Channel>> client_ends(M);
  std::vector<ClientOutcome> outcomes(M);
  TrainHistory hist;

  if (opts.transport == TransportKind::InProcess) {
    for (std::size_t m = 0; m < M; ++m) {
      auto pair = make_inprocess_pair();
      server_ends[m] = std::move(pair.server_end);
      client_ends[m] = std::move(pair.client_end);
    }
  } else {
    TcpListener listener(opts.host, opts.port);
    std::vector<std::thread> connectors;
    std::vector<std::exception_ptr> errors(M);
    for (std::size_t m = 0; m < M; ++m) {
      connectors.emplace_back([&, m] {
        try {
          client_ends[m] = tcp_connect(opts.host, listener.port(), m);
        } catch (...) {
          errors[m] = std::current_exception();
        }
      });
    }
    for (auto& th : connectors) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    server_ends = listener.accept_clients(M);
  }

  std::vector<Channel*> all;
  for (auto& c : server_ends) all.push_back(c.get());
  for (auto& c : client_ends) all.push_back(c.get());
  FailureLatch latch(all);

  std::vector<std::thread> workers;
  workers.emplace_back([&] { latch.guard([&] { run_server(server_ends, *data.part, cfg, hist.ledger); }); });
  for (std::size_t m = 0; m < M; ++m) {
    workers.emplace_back([&, m] {
      latch.guard([&] { run_client(*client_ends[m], clients[m], data, cfg, opts, outcomes[m]); });
    });
  }
  for (auto& w : workers) w.join();
  latch.rethrow();

  std::vector<Snapshot> snaps;
  for (std::size_t m = 0; m < M; ++m) {
    hist.losses.insert(hist.losses.end(), outcomes[m].losses.begin(), outcomes[m].losses.end());
    for (std::size_t k = 0; k < outcomes[m].snapshots.size(); ++k) {
      if (snaps.size() <= k) snaps.push_back({outcomes[m].snapshots[k].first, {}});
      snaps[k].models.push_back(std::move(outcomes[m].snapshots[k].second));
    }
  }
  TrainResult result;
  for (auto& c : clients) result.models.push_back(std::move(c.model()));
  finish_history(hist, snaps, data, cfg, opts);
  result.history = std::move(hist);
  return result;
}

}  // namespace

TrainResult train(const PartitionedDataset& part, FederationConfig cfg, const TrainOptions& opts) {
  cfg.validate(part.num_clients());
  std::vector<ClientModel> init;
  for (std::size_t m = 0; m < part.num_clients(); ++m) {
    init.push_back(init_weights(cfg, m, part.num_clients(), part.shards[m].features.cols(),
                                static_cast<std::size_t>(part.num_classes)));
  }
  return train(part, std::move(cfg), std::move(init), opts);
}

TrainResult train(const PartitionedDataset& part, FederationConfig cfg, std::vector<ClientModel> init,
                  const TrainOptions& opts) {
  cfg.validate(part.num_clients());
  require(init.size() == part.num_clients(), "need one initial model per client");
  require(!part.masks.train.empty() || cfg.rounds == 0, "training mask is empty");
  const FederationData data(part);
  if (opts.transport == TransportKind::Serial) return train_serial(data, cfg, std::move(init), opts);
  return train_distributed(data, cfg, std::move(init), opts);
}

// ---------------------------------------------------------------------------
// Monolithic reference trainer
// ---------------------------------------------------------------------------

namespace {

struct CentralForward {
  Matrix x0;
  Matrix pre0;
  Matrix h0;
  std::vector<LayerTape> tapes;
  Matrix out;
};

CentralForward central_forward(const ClientModel& w, const Matrix& features, const std::vector<IndexList>& sets,
                               const std::vector<SparseBlock>& blocks,
                               const std::vector<IndexList>& res_rows, const LayerKind& kind) {
  CentralForward f;
  f.x0 = gather_rows(features, sets[0]);
  Matrix h = f.x0;
  const bool gcnii = kind.backbone == Backbone::Gcnii;
  if (gcnii) {
    f.pre0 = matmul(f.x0, *w.input_projection);
    f.h0 = relu(f.pre0);
    h = f.h0;
  }
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const Matrix h0s = gcnii ? gather_rows(f.h0, res_rows[l]) : Matrix();
    LayerOutput o = layer_forward(h, blocks[l], w.layers[l], kind, l, h0s);
    f.tapes.push_back(std::move(o.tape));
    h = std::move(o.h_out);
  }
  f.out = std::move(h);
  return f;
}

void central_blocks(const NormalizedAdj& adj, const std::vector<IndexList>& sets, const LayerKind& kind,
                    std::vector<SparseBlock>& blocks, std::vector<IndexList>& res_rows) {
  blocks.clear();
  res_rows.clear();
  for (std::size_t l = 0; l + 1 < sets.size(); ++l) {
    blocks.push_back(bipartite_block(adj, sets[l + 1], sets[l]));
    if (kind.backbone == Backbone::Gcnii) res_rows.push_back(positions_in(sets[0], sets[l + 1]));
  }
}

}  // namespace

CentralizedResult train_centralized(const Dataset& ds, const FederationConfig& cfg_in) {
  FederationConfig cfg = cfg_in;
  cfg.agg = AggSpec::average();
  cfg.validate(1);
  const NormalizedAdj adj = normalize_adjacency(ds.graph);
  CentralizedResult res;
  res.model = init_weights(cfg, 0, 1, ds.feature_dim(), static_cast<std::size_t>(ds.num_classes));
  ClientModel& w = res.model;
  const bool gcnii = cfg.kind.backbone == Backbone::Gcnii;
  std::vector<SparseBlock> blocks;
  std::vector<IndexList> res_rows;

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const std::span<const NormalizedAdj> adjs(&adj, 1);
    SampleSchedule sched = sample_round(adjs, ds.masks.train, cfg.plan, cfg.sampler, cfg.seed, t, cfg.label_mode);
    const std::vector<IndexList>& sets = sched.sets[0];
    central_blocks(adj, sets, cfg.kind, blocks, res_rows);
    const std::vector<int> y = labels_at(ds.labels, sets.back());

    for (std::size_t q = 0; q < cfg.local_steps; ++q) {
      CentralForward f = central_forward(w, ds.features, sets, blocks, res_rows, cfg.kind);
      const LossAndGrad lg = loss_and_grad(classify(f.out, *w.classifier), y);
      res.losses.push_back({t, q, 0, lg.loss});

      ClientModel g = w.zeros_like();
      g.classifier = matmul(transpose(f.out), lg.grad_logits);
      Matrix grad_h = matmul(lg.grad_logits, transpose(*w.classifier));
      Matrix grad_h0;
      if (gcnii) grad_h0 = Matrix(f.h0.rows(), f.h0.cols());
      for (std::size_t l = blocks.size(); l-- > 0;) {
        LayerGrads lgr = layer_backward(grad_h, f.tapes[l]);
        g.layers[l] = std::move(lgr.w);
        if (gcnii) scatter_add_rows(grad_h0, lgr.h0, res_rows[l]);
        grad_h = std::move(lgr.h_in);
      }
      if (gcnii) {
        grad_h0 += grad_h;
        g.input_projection = matmul(transpose(f.x0), relu_backward(grad_h0, f.pre0));
      }
      sgd_step(w, g, cfg.eta);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

std::vector<Matrix> joint_inference(std::span<const ClientModel> models, const FederationData& data,
                                    const FederationConfig& cfg, const SampleSchedule& schedule) {
  const std::size_t M = data.part->num_clients();
  require(models.size() == M, "joint_inference: need one model per client");
  require(schedule.num_clients() == M, "joint_inference: schedule covers a different client count");
  auto clients = make_clients(data, cfg, std::vector<ClientModel>(models.begin(), models.end()));
  for (std::size_t m = 0; m < M; ++m) {
    clients[m].set_schedule(schedule.sets[m]);
    clients[m].start_forward();
  }
  for (std::size_t l : cfg.plan.agg_layers) {
    std::vector<Matrix> parts;
    for (auto& c : clients) {
      std::optional<ReprUpload> up = c.advance();
      if (!up || up->layer != l) throw ProtocolError("client skipped aggregation layer " + std::to_string(l));
      parts.push_back(std::move(up->h));
    }
    for (std::size_t m = 1; m < M; ++m) {
      if (parts[m].rows() != parts[0].rows()) {
        throw ProtocolError("row misalignment at aggregation layer " + std::to_string(l));
      }
    }
    const ReprBroadcast down{static_cast<std::uint8_t>(l), aggregate(parts, cfg.agg)};
    for (auto& c : clients) c.supply_aggregate(down);
  }
  std::vector<Matrix> out;
  for (auto& c : clients) {
    if (c.advance()) throw ProtocolError("unexpected aggregation after the last planned layer");
    out.push_back(c.joint_output());
  }
  return out;
}

namespace {

IndexList sorted_unique(std::span<const Index> nodes) {
  IndexList s(nodes.begin(), nodes.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

template <class F>
std::vector<int> predict_batched(std::span<const Index> nodes, std::size_t num_nodes, std::size_t batch_size,
                                 F&& logits_of) {
  require(batch_size >= 1, "evaluation batch size must be positive");
  const IndexList order = sorted_unique(nodes);
  std::vector<int> by_node(num_nodes, -1);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const IndexList batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                          order.begin() + static_cast<std::ptrdiff_t>(end));
    const Matrix logits = logits_of(batch);
    for (std::size_t k = 0; k < batch.size(); ++k) by_node[batch[k]] = argmax_row(logits.row(k));
  }
  std::vector<int> out;
  out.reserve(nodes.size());
  for (Index i : nodes) out.push_back(by_node[i]);
  return out;
}

double accuracy_of(std::span<const Index> nodes, const std::vector<int>& pred, std::span<const int> labels) {
  if (nodes.empty()) {
    std::cerr << "warning: accuracy over an empty node set is reported as 1.0\n";
    return 1.0;
  }
  std::size_t correct = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) correct += pred[k] == labels[nodes[k]] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

}  // namespace

std::vector<int> predict(std::span<const ClientModel> models, const FederationData& data,
                         const FederationConfig& cfg_in, std::span<const Index> nodes, std::size_t batch_size) {
  FederationConfig cfg = cfg_in;
  cfg.validate(data.part->num_clients());
  const std::size_t M = data.part->num_clients();
  for (Index i : nodes) require(i < data.part->num_nodes(), "predict: node out of range");
  return predict_batched(nodes, data.part->num_nodes(), batch_size, [&](const IndexList& batch) {
    const SampleSchedule sched = full_schedule(data.adjs, batch, cfg.plan);
    const std::vector<Matrix> hs = joint_inference(models, data, cfg, sched);
    if (cfg.label_mode == LabelMode::SingleHolder) return classify(hs[0], *models[0].classifier);
    Matrix sum = classify(hs[0], *models[0].classifier);
    for (std::size_t m = 1; m < M; ++m) sum += classify(hs[m], *models[m].classifier);
    if (M > 1) sum /= static_cast<double>(M);
    return sum;
  });
}

double evaluate(std::span<const ClientModel> models, const FederationData& data, const FederationConfig& cfg,
                std::span<const Index> nodes, std::size_t batch_size) {
  if (nodes.empty()) return accuracy_of(nodes, {}, data.part->labels);
  return accuracy_of(nodes, predict(models, data, cfg, nodes, batch_size), data.part->labels);
}

double evaluate_centralized(const ClientModel& model, const Dataset& ds, const FederationConfig& cfg,
                            std::span<const Index> nodes, std::size_t batch_size) {
  if (nodes.empty()) return accuracy_of(nodes, {}, ds.labels);
  for (Index i : nodes) require(i < ds.num_nodes(), "evaluate: node out of range");
  const NormalizedAdj adj = normalize_adjacency(ds.graph);
  std::vector<SparseBlock> blocks;
  std::vector<IndexList> res_rows;
  const auto pred = predict_batched(nodes, ds.num_nodes(), batch_size, [&](const IndexList& batch) {
    const std::span<const NormalizedAdj> adjs(&adj, 1);
    const SampleSchedule sched = full_schedule(adjs, batch, cfg.plan);
    central_blocks(adj, sched.sets[0], cfg.kind, blocks, res_rows);
    const CentralForward f = central_forward(model, ds.features, sched.sets[0], blocks, res_rows, cfg.kind);
    return classify(f.out, *model.classifier);
  });
  return accuracy_of(nodes, pred, ds.labels);
}

}  // namespace glasu
