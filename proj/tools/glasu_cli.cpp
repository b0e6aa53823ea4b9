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

// Command-line front end: fixture generation, partitioning, training,
// evaluation, bound evaluation and message-count prediction.
//
// Exit codes: 0 success, 2 configuration error, 3 protocol error, 4 data error.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "glasu/error.hpp"
#include "glasu/federation.hpp"
#include "glasu/graph.hpp"
#include "glasu/harness.hpp"
#include "glasu/model.hpp"
#include "glasu/theory.hpp"
#include "glasu/transport.hpp"

namespace {

using glasu::ExperimentConfig;

constexpr int kExitConfig = 2;
constexpr int kExitProtocol = 3;
constexpr int kExitData = 4;

// Flags that mirror the experiment config keys. Only flags given on the
// command line override the config file.
struct ConfigFlags {
  std::string config_path;
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  std::string fanout;
  std::vector<CLI::Option*> given;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* fanout_opt = nullptr;
  CLI::Option* agg_layers_opt = nullptr;

  void attach(CLI::App& app, bool seed_required) {
    app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    auto add = [&](const std::string& name, auto& field, const std::string& help) {
      given.push_back(app.add_option(name, field, help));
    };
    add("--dataset", cfg.dataset_path, "dataset directory");
    add("--M", cfg.M, "number of clients");
    add("--edge-keep-prob", cfg.edge_keep_prob, "per-client edge keep probability");
    add("--layers", cfg.layers, "number of GNN layers L");
    agg_layers_opt = app.add_option("--agg-layers", cfg.agg_layers, "aggregation layers (0-based)");
    add("--K", cfg.K, "number of aggregation layers, placed uniformly");
    add("--backbone", cfg.backbone, "gcn or gcnii");
    add("--alpha", cfg.alpha, "GCNII initial-residual weight");
    add("--lambda", cfg.lambda, "GCNII identity-mapping strength");
    add("--hidden-dim", cfg.hidden_dim, "hidden width");
    add("--agg-kind", cfg.agg_kind, "average or concat");
    add("--batch-size", cfg.batch_size, "mini-batch size S");
    fanout_opt = app.add_option("--fanout", fanout, "neighbors per node per layer, or 'full'");
    add("--T", cfg.T, "rounds");
    add("--Q", cfg.Q, "local steps per round");
    add("--eta", cfg.eta, "step size");
    add("--label-mode", cfg.label_mode, "all or single");
    add("--preset", cfg.preset, "centralized | standalone | simcentralized | glasu | glasu:K:Q");
    add("--transport", cfg.transport, "serial | inprocess | tcp");
    add("--host", cfg.host, "TCP host");
    add("--port", cfg.port, "TCP port (0 picks a free one)");
    add("--eval-every", cfg.eval_every, "evaluate on the validation mask every N rounds");
    seed_opt = app.add_option("--seed", seed, "random seed");
    if (seed_required) seed_opt->required();
  }

  ExperimentConfig resolve() const {
    ExperimentConfig base = config_path.empty() ? ExperimentConfig{} : glasu::load_config(config_path);
    nlohmann::json merged = glasu::to_json(base);
    if (!base.seed) merged.erase("seed");
    const nlohmann::json flags = glasu::to_json(cfg);
    static const std::vector<std::pair<std::string, std::string>> keys = {
        {"--dataset", "dataset_path"}, {"--M", "M"}, {"--edge-keep-prob", "edge_keep_prob"},
        {"--layers", "layers"}, {"--K", "K"}, {"--backbone", "backbone"}, {"--alpha", "alpha"},
        {"--lambda", "lambda"}, {"--hidden-dim", "hidden_dim"}, {"--agg-kind", "agg_kind"},
        {"--batch-size", "batch_size"}, {"--T", "T"}, {"--Q", "Q"}, {"--eta", "eta"},
        {"--label-mode", "label_mode"}, {"--preset", "preset"}, {"--transport", "transport"},
        {"--host", "host"}, {"--port", "port"}, {"--eval-every", "eval_every"}};
    for (const auto* opt : given) {
      if (opt->count() == 0) continue;
      for (const auto& [flag, key] : keys) {
        if (opt->check_lname(flag.substr(2))) merged[key] = flags[key];
      }
    }
    if (agg_layers_opt->count() > 0) {
      merged["agg_layers"] = cfg.agg_layers;
    } else if (std::any_of(given.begin(), given.end(),
                           [](const CLI::Option* o) { return o->check_lname("K") && o->count() > 0; })) {
      merged["agg_layers"] = nlohmann::json::array();  // an explicit K replaces configured layers
    }
    if (fanout_opt->count() > 0) {
      if (fanout == "full") {
        merged["fanout"] = "full";
      } else {
        try {
          merged["fanout"] = std::stoull(fanout);
        } catch (const std::exception&) {
          throw glasu::ConfigError("--fanout must be a count or 'full'");
        }
      }
    }
    if (seed_opt->count() > 0) merged["seed"] = seed;
    return glasu::config_from_json(merged);
  }
};

void print_counts(const glasu::CommCounts& c) {
  for (std::size_t k = 1; k < glasu::kNumMessageKinds; ++k) {
    const auto kind = static_cast<glasu::MessageKind>(k);
    std::cout << glasu::to_string(kind) << ".up=" << glasu::count_of(c, kind, glasu::Direction::Up) << '\n'
              << glasu::to_string(kind) << ".down=" << glasu::count_of(c, kind, glasu::Direction::Down) << '\n';
  }
  std::cout << "aggregation_messages=" << glasu::aggregation_messages(c) << '\n'
            << "total_messages=" << glasu::total_messages(c) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glasu: vertical federated GNN training with lazy aggregation and stale updates"};
  app.require_subcommand(1);

  // fixture
  auto* fixture = app.add_subcommand("fixture", "write a stochastic block model dataset");
  std::size_t blocks = 2, per_block = 20, dim = 8;
  double p_in = 0.5, p_out = 0.05;
  std::uint64_t fixture_seed = 0;
  std::string fixture_out;
  fixture->add_option("--blocks", blocks, "number of blocks (classes)");
  fixture->add_option("--nodes-per-block", per_block, "nodes per block");
  fixture->add_option("--p-in", p_in, "edge probability inside a block");
  fixture->add_option("--p-out", p_out, "edge probability across blocks");
  fixture->add_option("--dim", dim, "feature dimension (>= blocks)");
  fixture->add_option("--seed", fixture_seed, "random seed")->required();
  fixture->add_option("--out", fixture_out, "output directory")->required();

  // partition
  auto* partition = app.add_subcommand("partition", "split a dataset into per-client shards");
  std::string part_dataset, part_out;
  std::size_t part_m = 2;
  double part_p = 0.8;
  std::uint64_t part_seed = 0;
  partition->add_option("--dataset", part_dataset, "dataset directory")->required();
  partition->add_option("--M", part_m, "number of clients");
  partition->add_option("--edge-keep-prob", part_p, "per-client edge keep probability");
  partition->add_option("--seed", part_seed, "random seed")->required();
  partition->add_option("--out", part_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train under a preset and write CSVs, report and checkpoints");
  ConfigFlags train_flags;
  train_flags.attach(*train, true);
  std::string train_out;
  train->add_option("--out", train_out, "output directory for losses.csv, accuracy.csv, report.json");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints written by train");
  ConfigFlags eval_flags;
  eval_flags.attach(*eval, true);
  std::string ckpt_dir, eval_mask = "test";
  eval->add_option("--checkpoints", ckpt_dir, "directory holding client_<m>.glsw")->required();
  eval->add_option("--mask", eval_mask, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));

  // bound
  auto* bound = app.add_subcommand("bound", "evaluate the convergence constants and bound");
  glasu::SmoothnessConstants k;
  glasu::BoundInputs in;
  bound->add_option("--G-ell", k.g_ell, "loss gradient bound")->required();
  bound->add_option("--L-ell", k.l_ell, "loss gradient Lipschitz constant")->required();
  bound->add_option("--G-f", k.g_f, "network gradient bound")->required();
  bound->add_option("--L-f", k.l_f, "network gradient Lipschitz constant")->required();
  bound->add_option("--M", in.num_clients, "clients");
  bound->add_option("--Q", in.local_steps, "local steps");
  bound->add_option("--T", in.rounds, "rounds");
  bound->add_option("--S", in.batch_size, "batch size");
  bound->add_option("--d", in.dim, "parameter dimension");
  bound->add_option("--delta", in.delta, "failure probability");
  bound->add_option("--gap", in.gap, "initial optimality gap");
  auto* eta_opt = bound->add_option("--eta", in.eta, "step size to evaluate the bound at");

  // count-comm
  auto* count = app.add_subcommand("count-comm", "predict per-kind message counts for a configuration");
  std::size_t cc_layers = 4, cc_k = 4, cc_m = 3, cc_t = 1, cc_q = 1;
  std::vector<std::size_t> cc_agg;
  std::string cc_mode = "all";
  count->add_option("--layers", cc_layers, "number of layers L");
  count->add_option("--K", cc_k, "aggregation layers, placed uniformly");
  count->add_option("--agg-layers", cc_agg, "explicit aggregation layers");
  count->add_option("--M", cc_m, "clients");
  count->add_option("--T", cc_t, "rounds");
  count->add_option("--Q", cc_q, "local steps");
  count->add_option("--label-mode", cc_mode, "all or single")->check(CLI::IsMember({"all", "single"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (fixture->parsed()) {
      const auto ds = glasu::make_sbm_fixture(blocks, per_block, p_in, p_out, dim, fixture_seed);
      glasu::save_dataset(ds, fixture_out);
      std::cout << "nodes=" << ds.num_nodes() << "\nedges=" << ds.graph.num_edges() << "\nclasses="
                << ds.num_classes << "\nfeatures=" << ds.feature_dim() << '\n';
    } else if (partition->parsed()) {
      const auto ds = glasu::load_dataset(part_dataset);
      const auto part = glasu::partition_dataset(ds, part_m, part_p, part_seed);
      glasu::save_partition(part, part_out);
      for (std::size_t m = 0; m < part.num_clients(); ++m) {
        std::cout << "client_" << m << ".edges=" << part.shards[m].graph.num_edges() << '\n'
                  << "client_" << m << ".columns=" << part.shards[m].column_offset << ".."
                  << part.shards[m].column_offset + part.shards[m].features.cols() << '\n';
      }
    } else if (train->parsed()) {
      const ExperimentConfig cfg = train_flags.resolve();
      const auto report = glasu::run_experiment(cfg);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
      if (!train_out.empty()) glasu::write_outputs(report, train_out);
      nlohmann::json summary = glasu::report_json(report);
      summary.erase("config");
      std::cout << summary.dump(2) << '\n';
    } else if (eval->parsed()) {
      const ExperimentConfig raw = eval_flags.resolve();
      const auto preset = glasu::Preset::parse(raw.preset);
      const ExperimentConfig cfg = glasu::apply_preset(preset, raw);
      if (cfg.dataset_path.empty()) throw glasu::ConfigError("dataset_path is required");
      auto ds = glasu::load_dataset(cfg.dataset_path);
      if (cfg.row_normalize) glasu::row_normalize(ds.features);
      const auto fed = cfg.federation();
      const auto part = glasu::partition_dataset(ds, cfg.M, cfg.edge_keep_prob, *cfg.seed);
      const auto& mask = eval_mask == "train" ? part.masks.train : eval_mask == "val" ? part.masks.val : part.masks.test;
      const std::size_t n_models = preset.kind == glasu::PresetKind::Centralized ? 1 : part.num_clients();
      std::vector<glasu::ClientModel> models;
      for (std::size_t m = 0; m < n_models; ++m) {
        models.push_back(glasu::load_checkpoint(std::filesystem::path(ckpt_dir) / ("client_" + std::to_string(m) + ".glsw"),
                                                fed.kind));
      }
      double acc = 0.0;
      if (preset.kind == glasu::PresetKind::Centralized || preset.kind == glasu::PresetKind::Standalone) {
        for (std::size_t m = 0; m < n_models; ++m) {
          const double a = glasu::evaluate_centralized(models[m], glasu::shard_as_dataset(part, m), fed, mask);
          std::cout << "client_" << m << ".accuracy=" << a << '\n';
          acc += a / static_cast<double>(n_models);
        }
      } else {
        const glasu::FederationData data(part);
        acc = glasu::evaluate(models, data, fed, mask);
      }
      std::cout << "accuracy=" << acc << '\n';
    } else if (bound->parsed()) {
      const double c = glasu::c0(k);
      const double sigma = glasu::sigma_var(k, in.batch_size, in.dim, in.delta);
      const double limit = glasu::max_step_size(c, in.local_steps, in.num_clients);
      std::cout.precision(17);
      std::cout << "c0=" << c << "\nsigma=" << sigma << "\nmax_step_size=" << limit << '\n';
      if (glasu::suggested_step_applies(in.local_steps, in.num_clients, c)) {
        std::cout << "suggested_step=" << glasu::suggested_step(in, c, sigma) << '\n'
                  << "suggested_rate=" << glasu::suggested_rate(in, c, sigma) << '\n'
                  << "min_rounds_for_suggested_step=" << glasu::min_rounds_for_suggested_step(in, c, sigma) << '\n';
      } else {
        std::cout << "suggested_step=n/a (needs Q <= c0 / sqrt(M + 1))\n";
      }
      if (eta_opt->count() > 0) std::cout << "grad_norm_bound=" << glasu::grad_norm_bound(in, c, sigma) << '\n';
    } else if (count->parsed()) {
      const glasu::LayerPlan plan =
          cc_agg.empty() ? glasu::LayerPlan::uniform(cc_layers, cc_k) : glasu::LayerPlan{cc_layers, cc_agg};
      const auto mode = cc_mode == "single" ? glasu::LabelMode::SingleHolder : glasu::LabelMode::AllClients;
      std::cout << "sync_messages_per_round=" << glasu::count_sync_messages(plan, cc_m) << '\n';
      print_counts(glasu::expected_counts(plan, cc_m, cc_t, cc_q, mode));
    }
  } catch (const glasu::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const glasu::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << '\n';
    return kExitProtocol;
  } catch (const glasu::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
