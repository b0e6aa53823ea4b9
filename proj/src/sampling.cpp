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

#include "glasu/sampling.hpp"

#include <algorithm>
#include <string>

#include "glasu/error.hpp"

namespace glasu {
namespace {

constexpr std::uint64_t kSamplingStream = 0x73616d706c65ULL;
constexpr std::uint64_t kBatchLabel = 0xbac4ULL;
constexpr std::uint64_t kNeighborLabel = 0x6e6272ULL;

void sample_down(std::span<const NormalizedAdj> adjs, std::vector<std::vector<IndexList>>& sets,
                 const LayerPlan& plan, std::size_t fanout, std::uint64_t seed, std::size_t round,
                 bool with_rng) {
  const std::size_t clients = adjs.size();
  std::size_t top = plan.num_layers;
  auto segment = [&](std::size_t bottom) {
    for (std::size_t m = 0; m < clients; ++m) {
      if (with_rng) {
        sample_segment(adjs[m], sets[m], top, bottom, fanout, seed, round, m);
      } else {
        for (std::size_t l = top; l-- > bottom;) {
          sets[m][l] = sample_neighbors(adjs[m], sets[m][l + 1], kFullNeighborhood, Rng(0));
        }
      }
    }
  };
  for (std::size_t boundary : plan.sync_boundaries()) {
    segment(boundary);
    std::vector<IndexList> uploads;
    uploads.reserve(clients);
    for (std::size_t m = 0; m < clients; ++m) uploads.push_back(sets[m][boundary]);
    const IndexList merged = union_sets(uploads);
    for (std::size_t m = 0; m < clients; ++m) sets[m][boundary] = merged;
    top = boundary;
  }
  segment(0);
}

}  // namespace

bool LayerPlan::aggregates(std::size_t layer) const {
  return std::binary_search(agg_layers.begin(), agg_layers.end(), layer);
}

void LayerPlan::validate() const {
  if (num_layers == 0) throw ConfigError("layer plan: need at least one layer");
  if (num_layers > 255) throw ConfigError("layer plan: at most 255 layers fit a wire frame");
  if (agg_layers.empty()) throw ConfigError("layer plan: aggregation set must not be empty");
  for (std::size_t k = 0; k < agg_layers.size(); ++k) {
    if (agg_layers[k] >= num_layers) {
      throw ConfigError("layer plan: aggregation layer " + std::to_string(agg_layers[k]) +
                        " is not below L = " + std::to_string(num_layers));
    }
    if (k > 0 && agg_layers[k] <= agg_layers[k - 1]) {
      throw ConfigError("layer plan: aggregation layers must be strictly increasing");
    }
  }
}

std::vector<std::size_t> LayerPlan::sync_boundaries() const {
  std::vector<std::size_t> out;
  for (auto it = agg_layers.rbegin(); it != agg_layers.rend(); ++it) {
    if (*it + 1 < num_layers) out.push_back(*it + 1);
  }
  return out;
}

LayerPlan LayerPlan::uniform(std::size_t num_layers, std::size_t num_agg) {
  if (num_agg == 0 || num_agg > num_layers) {
    throw ConfigError("layer plan: K must lie in [1, L]");
  }
  LayerPlan plan{num_layers, {}};
  for (std::size_t k = 1; k <= num_agg; ++k) plan.agg_layers.push_back(k * num_layers / num_agg - 1);
  return plan;
}

Rng batch_stream(std::uint64_t seed, std::size_t round) {
  return Rng(seed).derive(kSamplingStream).derive(round).derive(kBatchLabel);
}

Rng neighbor_stream(std::uint64_t seed, std::size_t round, std::size_t client, std::size_t layer) {
  return Rng(seed).derive(kSamplingStream).derive(round).derive(kNeighborLabel).derive(client).derive(layer);
}

IndexList sample_batch(std::span<const Index> train, std::size_t batch_size, Rng rng) {
  if (train.empty()) throw ConfigError("sample_batch: training mask is empty");
  IndexList pool(train.begin(), train.end());
  const std::size_t take = std::min(batch_size, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  return pool;
}

IndexList sample_neighbors(const NormalizedAdj& adj, std::span<const Index> out_set,
                           std::size_t fanout, Rng rng) {
  IndexList result(out_set.begin(), out_set.end());
  IndexList candidates;
  for (Index i : out_set) {
    if (i >= adj.num_nodes()) throw ConfigError("sample_neighbors: node out of range");
    candidates.clear();
    for (Index j : adj.columns(i)) {
      if (j != i) candidates.push_back(j);
    }
    if (fanout >= candidates.size()) {
      result.insert(result.end(), candidates.begin(), candidates.end());
      continue;
    }
    for (std::size_t k = 0; k < fanout; ++k) {
      const auto j = k + rng.below(candidates.size() - k);
      std::swap(candidates[k], candidates[j]);
      result.push_back(candidates[k]);
    }
  }
  std::sort(result.begin(), result.end());
  result.erase(std::unique(result.begin(), result.end()), result.end());
  return result;
}

IndexList union_sets(std::span<const IndexList> sets) {
  IndexList out;
  for (const auto& s : sets) out.insert(out.end(), s.begin(), s.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void sample_segment(const NormalizedAdj& adj, std::vector<IndexList>& sets, std::size_t top,
                    std::size_t bottom, std::size_t fanout, std::uint64_t seed, std::size_t round,
                    std::size_t client) {
  for (std::size_t l = top; l-- > bottom;) {
    sets[l] = sample_neighbors(adj, sets[l + 1], fanout, neighbor_stream(seed, round, client, l));
  }
}

SampleSchedule sample_round(std::span<const NormalizedAdj> client_adjs, std::span<const Index> train,
                            const LayerPlan& plan, const SamplerConfig& cfg, std::uint64_t seed,
                            std::size_t round, LabelMode /*mode*/) {
  plan.validate();
  if (client_adjs.empty()) throw ConfigError("sample_round: no clients");
  if (cfg.batch_size == 0 || cfg.fanout == 0) {
    throw ConfigError("sample_round: batch size and fanout must be positive");
  }
  // In SingleHolder mode client 1 draws the batch; it uses the same stream
  // the server would, so the schedule is mode independent.
  const IndexList batch = sample_batch(train, cfg.batch_size, batch_stream(seed, round));
  SampleSchedule schedule;
  schedule.sets.assign(client_adjs.size(), std::vector<IndexList>(plan.num_layers + 1));
  for (auto& sets : schedule.sets) sets[plan.num_layers] = batch;
  sample_down(client_adjs, schedule.sets, plan, cfg.fanout, seed, round, true);
  return schedule;
}

SampleSchedule full_schedule(std::span<const NormalizedAdj> client_adjs, std::span<const Index> batch,
                             const LayerPlan& plan) {
  plan.validate();
  IndexList root(batch.begin(), batch.end());
  std::sort(root.begin(), root.end());
  root.erase(std::unique(root.begin(), root.end()), root.end());
  SampleSchedule schedule;
  schedule.sets.assign(client_adjs.size(), std::vector<IndexList>(plan.num_layers + 1));
  for (auto& sets : schedule.sets) sets[plan.num_layers] = root;
  sample_down(client_adjs, schedule.sets, plan, kFullNeighborhood, 0, 0, false);
  return schedule;
}

std::size_t count_sync_messages(const LayerPlan& plan, std::size_t num_clients) {
  return 1 + plan.sync_boundaries().size() * (num_clients + 1);
}

}  // namespace glasu
