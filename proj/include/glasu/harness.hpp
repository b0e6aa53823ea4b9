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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "glasu/federation.hpp"
#include "glasu/graph.hpp"
#include "glasu/theory.hpp"

namespace glasu {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class PresetKind { Centralized, Standalone, SimCentralized, Glasu };

struct Preset {
  PresetKind kind = PresetKind::Glasu;
  std::size_t num_agg = 0;      // Glasu: K (0 keeps the configured agg_layers)
  std::size_t local_steps = 0;  // Glasu: Q (0 keeps the configured Q)

  // "centralized", "standalone", "simcentralized", "glasu" or "glasu:K:Q".
  static Preset parse(const std::string& text);
  std::string name() const;
};

// Flat experiment description; mirrors the JSON config file and CLI flags.
struct ExperimentConfig {
  std::string dataset_path;
  std::size_t M = 2;
  double edge_keep_prob = 0.8;
  std::size_t layers = 2;                 // L
  std::vector<std::size_t> agg_layers;    // I; empty -> uniform placement of K
  std::size_t K = 1;
  std::string backbone = "gcn";           // gcn | gcnii
  double alpha = 0.1;
  double lambda = 0.5;
  std::size_t hidden_dim = 16;
  std::string agg_kind = "average";       // average | concat
  std::vector<std::size_t> concat_widths;
  std::size_t batch_size = 16;
  std::size_t fanout = 3;
  std::size_t T = 100;
  std::size_t Q = 1;
  double eta = 0.1;
  std::string label_mode = "all";         // all | single
  std::optional<std::uint64_t> seed;
  bool row_normalize = false;
  std::string preset = "glasu";
  std::string transport = "inprocess";    // serial | inprocess | tcp
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
  std::size_t eval_every = 0;
  std::optional<SmoothnessConstants> constants;  // enables the step-size check

  LayerPlan plan() const;
  FederationConfig federation() const;  // requires seed
  TrainOptions train_options() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

// Rewrites the configuration for one of the training regimes:
// Centralized -> M = 1, every layer aggregated, full edge sets;
// Standalone -> every client trains alone on its own shard;
// SimCentralized -> full edge sets for every client, K = L, Q = 1;
// Glasu(K, Q) -> uniform placement of K aggregation layers, Q local steps.
ExperimentConfig apply_preset(const Preset& preset, ExperimentConfig base);

// ---------------------------------------------------------------------------
// Running experiments
// ---------------------------------------------------------------------------

struct ExperimentReport {
  nlohmann::json config;
  std::string preset;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> client_test_accuracy;  // Standalone: per client
  TrainHistory history;
  std::vector<ClientModel> models;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
};

// Partitions the dataset, trains under the configured preset and evaluates
// on the train and test masks.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const Dataset& ds);
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// Report as JSON; wall time is the only non-reproducible field.
nlohmann::json report_json(const ExperimentReport& report);

// Writes losses.csv, accuracy.csv, report.json and one checkpoint per client.
void write_outputs(const ExperimentReport& report, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void write_losses_csv(const std::vector<LossRecord>& losses, const std::filesystem::path& path);
std::vector<LossRecord> read_losses_csv(const std::filesystem::path& path);
void write_accuracy_csv(const std::vector<AccuracyRecord>& acc, const std::filesystem::path& path);
std::vector<AccuracyRecord> read_accuracy_csv(const std::filesystem::path& path);

// One dataset directory per client (client_<m>/) plus partition.json with
// the column offsets.
void save_partition(const PartitionedDataset& part, const std::filesystem::path& dir);

nlohmann::json ledger_json(const CommLedger& ledger);
nlohmann::json counts_json(const CommCounts& counts);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

// Stochastic block model: nodes_per_block nodes per block, edges with
// probability p_in inside a block and p_out across. Features: the first
// `blocks` columns hold the one-hot block indicator, the remaining d - blocks
// columns hold no signal; every entry gets N(0, 0.1^2) noise. Labels are
// block ids; masks split a random permutation 60/20/20.
Dataset make_sbm_fixture(std::size_t blocks, std::size_t nodes_per_block, double p_in, double p_out,
                         std::size_t d, std::uint64_t seed);

}  // namespace glasu
