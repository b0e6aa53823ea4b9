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

#include <stdexcept>
#include <utility>
#include <vector>

#include "glasu/federation.hpp"

namespace glasu::testing {

// Clients of one federation driven directly through the client state
// machine, with the server's aggregation done inline.
struct ProtocolFixture {
  PartitionedDataset part;
  FederationData data;
  FederationConfig cfg;
  std::vector<FederatedClient> clients;

  ProtocolFixture(const Dataset& ds, std::size_t M, FederationConfig c, double keep = 0.8,
                  std::uint64_t partition_seed = 17)
      : part(partition_dataset(ds, M, keep, partition_seed)), data(part), cfg(std::move(c)) {
    cfg.validate(M);
    for (std::size_t m = 0; m < M; ++m) {
      clients.emplace_back(m, M, cfg, part.shards[m].features, data.adjs[m], part.labels,
                           init_weights(cfg, m, M, part.shards[m].features.cols(), part.num_classes));
    }
  }

  SampleSchedule schedule(std::size_t round) const {
    return sample_round(data.adjs, part.masks.train, cfg.plan, cfg.sampler, cfg.seed, round, cfg.label_mode);
  }

  // Sampling, joint inference and (SingleHolder) the cotangent exchange of
  // one round.
  void begin_round(std::size_t round) {
    const SampleSchedule s = schedule(round);
    for (std::size_t m = 0; m < clients.size(); ++m) clients[m].set_schedule(s.sets[m]);
    for (auto& c : clients) c.start_forward();
    while (true) {
      std::vector<Matrix> parts;
      std::uint8_t layer = 0;
      for (auto& c : clients) {
        if (auto up = c.advance()) {
          layer = up->layer;
          parts.push_back(std::move(up->h));
        }
      }
      if (parts.empty()) break;
      if (parts.size() != clients.size()) throw std::logic_error("clients disagree on aggregation layers");
      const ReprBroadcast agg{layer, aggregate(parts, cfg.agg)};
      for (auto& c : clients) c.supply_aggregate(agg);
    }
    if (cfg.label_mode == LabelMode::SingleHolder) {
      const Matrix g = clients[0].holder_cotangent();
      for (auto& c : clients) c.set_cotangent(g);
    }
  }
};

}  // namespace glasu::testing
