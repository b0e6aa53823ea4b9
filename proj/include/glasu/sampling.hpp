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
#include <limits>
#include <span>
#include <vector>

#include "glasu/graph.hpp"
#include "glasu/linalg.hpp"
#include "glasu/rng.hpp"

namespace glasu {

// Which of the L layers end in a server aggregation. Layer l maps
// H[l] (rows S[l]) to H[l+1] (rows S[l+1]); aggregating layer l therefore
// requires every client to hold the same S[l+1].
struct LayerPlan {
  std::size_t num_layers = 0;
  std::vector<std::size_t> agg_layers;  // strictly increasing, each < num_layers

  bool aggregates(std::size_t layer) const;
  std::size_t num_agg() const { return agg_layers.size(); }
  void validate() const;

  // Node-set indices l + 1 (l aggregated) that lie below L, in descending
  // order. Each needs one union round during sampling; S[L] is covered by
  // the batch broadcast.
  std::vector<std::size_t> sync_boundaries() const;

  // K aggregation layers spread evenly and always including the last layer:
  // K = 1 -> {L-1}; K = 2, L = 4 -> {1, 3}; K = L -> every layer.
  static LayerPlan uniform(std::size_t num_layers, std::size_t num_agg);
  static LayerPlan every_layer(std::size_t num_layers) { return uniform(num_layers, num_layers); }

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

enum class LabelMode { AllClients, SingleHolder };

inline constexpr std::size_t kFullNeighborhood = std::numeric_limits<std::size_t>::max();

struct SamplerConfig {
  std::size_t batch_size = 16;
  std::size_t fanout = 3;  // kFullNeighborhood keeps every neighbor
};

// sets[m][l] = S_m[l] for l = 0..L, each sorted ascending.
struct SampleSchedule {
  std::vector<std::vector<IndexList>> sets;

  std::size_t num_clients() const { return sets.size(); }
  std::size_t num_layers() const { return sets.empty() ? 0 : sets.front().size() - 1; }
  const IndexList& at(std::size_t client, std::size_t layer) const { return sets[client][layer]; }

  friend bool operator==(const SampleSchedule&, const SampleSchedule&) = default;
};

Rng batch_stream(std::uint64_t seed, std::size_t round);
Rng neighbor_stream(std::uint64_t seed, std::size_t round, std::size_t client, std::size_t layer);

// min(S, |train|) training nodes drawn uniformly without replacement, sorted.
IndexList sample_batch(std::span<const Index> train, std::size_t batch_size, Rng rng);

// The nodes of out_set plus, for each of them, min(fanout, degree) distinct
// neighbors drawn uniformly from adj. Sorted.
IndexList sample_neighbors(const NormalizedAdj& adj, std::span<const Index> out_set,
                           std::size_t fanout, Rng rng);

IndexList union_sets(std::span<const IndexList> sets);

// Given sets[top], fills sets[top-1] down to sets[bottom] for one client.
void sample_segment(const NormalizedAdj& adj, std::vector<IndexList>& sets, std::size_t top,
                    std::size_t bottom, std::size_t fanout, std::uint64_t seed, std::size_t round,
                    std::size_t client);

// One round of layer-wise sampling across all clients, with union rounds at
// every aggregation boundary. The result does not depend on who draws the
// batch, so both label modes yield the same schedule.
SampleSchedule sample_round(std::span<const NormalizedAdj> client_adjs, std::span<const Index> train,
                            const LayerPlan& plan, const SamplerConfig& cfg, std::uint64_t seed,
                            std::size_t round, LabelMode mode = LabelMode::AllClients);

// Deterministic full-neighborhood schedule rooted at the given batch.
SampleSchedule full_schedule(std::span<const NormalizedAdj> client_adjs, std::span<const Index> batch,
                             const LayerPlan& plan);

// Sampling messages per round in AllClients mode: the batch broadcast plus M
// uploads and one broadcast per union boundary.
std::size_t count_sync_messages(const LayerPlan& plan, std::size_t num_clients);

}  // namespace glasu
