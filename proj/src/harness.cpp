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

#include "glasu/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "glasu/error.hpp"
#include "glasu/rng.hpp"

namespace glasu {
namespace {

using nlohmann::json;

constexpr std::uint64_t kFixtureStream = 0x73626dULL;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
T get_as(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

Preset Preset::parse(const std::string& text) {
  const std::string t = lower(text);
  if (t == "centralized") return {PresetKind::Centralized};
  if (t == "standalone") return {PresetKind::Standalone};
  if (t == "simcentralized" || t == "sim-centralized") return {PresetKind::SimCentralized};
  if (t == "glasu") return {PresetKind::Glasu};
  if (t.rfind("glasu:", 0) == 0) {
    std::size_t k = 0;
    std::size_t q = 0;
    char tail = 0;
    if (std::sscanf(t.c_str(), "glasu:%zu:%zu%c", &k, &q, &tail) == 2 && k >= 1 && q >= 1) {
      return {PresetKind::Glasu, k, q};
    }
  }
  throw ConfigError("unknown preset '" + text +
                    "' (expected centralized, standalone, simcentralized, glasu or glasu:K:Q)");
}

std::string Preset::name() const {
  switch (kind) {
    case PresetKind::Centralized: return "centralized";
    case PresetKind::Standalone: return "standalone";
    case PresetKind::SimCentralized: return "simcentralized";
    case PresetKind::Glasu:
      if (num_agg == 0 && local_steps == 0) return "glasu";
      return "glasu:" + std::to_string(num_agg) + ":" + std::to_string(local_steps);
  }
  return "glasu";
}

ExperimentConfig apply_preset(const Preset& preset, ExperimentConfig cfg) {
  require(cfg.layers >= 1, "layers must be at least 1");
  auto every_layer = [&] {
    cfg.agg_layers = LayerPlan::every_layer(cfg.layers).agg_layers;
    cfg.K = cfg.layers;
  };
  switch (preset.kind) {
    case PresetKind::Centralized:
      cfg.M = 1;
      cfg.edge_keep_prob = 1.0;
      every_layer();
      break;
    case PresetKind::Standalone:
      require(cfg.label_mode != "single",
              "standalone training needs labels on every client; it cannot run in single-holder mode");
      break;
    case PresetKind::SimCentralized:
      cfg.edge_keep_prob = 1.0;
      every_layer();
      cfg.Q = 1;
      break;
    case PresetKind::Glasu:
      if (preset.num_agg > 0) {
        require(preset.num_agg <= cfg.layers, "preset K exceeds the number of layers");
        cfg.agg_layers = LayerPlan::uniform(cfg.layers, preset.num_agg).agg_layers;
        cfg.K = preset.num_agg;
      }
      if (preset.local_steps > 0) cfg.Q = preset.local_steps;
      break;
  }
  cfg.preset = preset.name();
  return cfg;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

LayerPlan ExperimentConfig::plan() const {
  if (!agg_layers.empty()) {
    LayerPlan p{layers, agg_layers};
    p.validate();
    return p;
  }
  return LayerPlan::uniform(layers, K);
}

FederationConfig ExperimentConfig::federation() const {
  require(seed.has_value(), "a seed is required (--seed)");
  FederationConfig f;
  f.plan = plan();
  const std::string b = lower(backbone);
  if (b == "gcn") {
    f.kind = LayerKind::gcn();
  } else if (b == "gcnii") {
    f.kind = LayerKind::gcnii(alpha, lambda);
  } else {
    throw ConfigError("backbone must be gcn or gcnii, got '" + backbone + "'");
  }
  f.hidden_dim = hidden_dim;
  const std::string a = lower(agg_kind);
  if (a == "average" || a == "mean") {
    f.agg = AggSpec::average();
  } else if (a == "concat") {
    f.agg = AggSpec::concat(concat_widths);
  } else {
    throw ConfigError("agg_kind must be average or concat, got '" + agg_kind + "'");
  }
  const std::string lm = lower(label_mode);
  if (lm == "all" || lm == "allclients") {
    f.label_mode = LabelMode::AllClients;
  } else if (lm == "single" || lm == "singleholder") {
    f.label_mode = LabelMode::SingleHolder;
  } else {
    throw ConfigError("label_mode must be all or single, got '" + label_mode + "'");
  }
  f.sampler = {batch_size, fanout};
  f.rounds = T;
  f.local_steps = Q;
  f.eta = eta;
  f.seed = *seed;
  f.validate(M);
  return f;
}

TrainOptions ExperimentConfig::train_options() const {
  TrainOptions o;
  const std::string t = lower(transport);
  if (t == "serial") {
    o.transport = TransportKind::Serial;
  } else if (t == "inprocess" || t == "in-process") {
    o.transport = TransportKind::InProcess;
  } else if (t == "tcp") {
    o.transport = TransportKind::Tcp;
  } else {
    throw ConfigError("transport must be serial, inprocess or tcp, got '" + transport + "'");
  }
  o.host = host;
  o.port = port;
  o.eval_every = eval_every;
  return o;
}

ExperimentConfig config_from_json(const json& j) {
  require(j.is_object(), "config must be a JSON object");
  static const std::set<std::string> known = {
      "dataset_path", "M",         "edge_keep_prob", "layers",     "agg_layers", "K",         "backbone",
      "alpha",        "lambda",    "hidden_dim",     "agg_kind",   "concat_widths", "batch_size", "fanout",
      "T",            "Q",         "eta",            "label_mode", "seed",       "row_normalize", "preset",
      "transport",    "host",      "port",           "eval_every", "constants"};
  for (const auto& [key, value] : j.items()) {
    require(known.count(key) == 1, "unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = get_as<std::decay_t<decltype(field)>>(j, key);
  };
  opt("dataset_path", c.dataset_path);
  opt("M", c.M);
  opt("edge_keep_prob", c.edge_keep_prob);
  opt("layers", c.layers);
  opt("agg_layers", c.agg_layers);
  opt("K", c.K);
  opt("backbone", c.backbone);
  opt("alpha", c.alpha);
  opt("lambda", c.lambda);
  opt("hidden_dim", c.hidden_dim);
  opt("agg_kind", c.agg_kind);
  opt("concat_widths", c.concat_widths);
  opt("batch_size", c.batch_size);
  if (j.contains("fanout")) {
    if (j.at("fanout").is_string()) {
      require(lower(j.at("fanout").get<std::string>()) == "full", "fanout must be a count or \"full\"");
      c.fanout = kFullNeighborhood;
    } else {
      c.fanout = get_as<std::size_t>(j, "fanout");
    }
  }
  opt("T", c.T);
  opt("Q", c.Q);
  opt("eta", c.eta);
  opt("label_mode", c.label_mode);
  if (j.contains("seed") && !j.at("seed").is_null()) c.seed = get_as<std::uint64_t>(j, "seed");
  opt("row_normalize", c.row_normalize);
  opt("preset", c.preset);
  opt("transport", c.transport);
  opt("host", c.host);
  opt("port", c.port);
  opt("eval_every", c.eval_every);
  if (j.contains("constants")) {
    const json& k = j.at("constants");
    SmoothnessConstants s;
    s.g_ell = get_as<double>(k, "G_ell");
    s.l_ell = get_as<double>(k, "L_ell");
    s.g_f = get_as<double>(k, "G_f");
    s.l_f = get_as<double>(k, "L_f");
    s.validate();
    c.constants = s;
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j = {{"dataset_path", c.dataset_path},
            {"M", c.M},
            {"edge_keep_prob", c.edge_keep_prob},
            {"layers", c.layers},
            {"agg_layers", c.agg_layers},
            {"K", c.K},
            {"backbone", c.backbone},
            {"alpha", c.alpha},
            {"lambda", c.lambda},
            {"hidden_dim", c.hidden_dim},
            {"agg_kind", c.agg_kind},
            {"concat_widths", c.concat_widths},
            {"batch_size", c.batch_size},
            {"T", c.T},
            {"Q", c.Q},
            {"eta", c.eta},
            {"label_mode", c.label_mode},
            {"row_normalize", c.row_normalize},
            {"preset", c.preset},
            {"transport", c.transport},
            {"host", c.host},
            {"port", c.port},
            {"eval_every", c.eval_every}};
  j["fanout"] = c.fanout == kFullNeighborhood ? json("full") : json(c.fanout);
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  if (c.constants) {
    j["constants"] = {{"G_ell", c.constants->g_ell},
                      {"L_ell", c.constants->l_ell},
                      {"G_f", c.constants->g_f},
                      {"L_f", c.constants->l_f}};
  }
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

ExperimentReport run_experiment(const ExperimentConfig& cfg_in) {
  require(!cfg_in.dataset_path.empty(), "dataset_path is required");
  return run_experiment(cfg_in, load_dataset(cfg_in.dataset_path));
}

ExperimentReport run_experiment(const ExperimentConfig& cfg_in, const Dataset& ds_in) {
  const auto start = std::chrono::steady_clock::now();
  require(cfg_in.seed.has_value(), "a seed is required (--seed)");
  const Preset preset = Preset::parse(cfg_in.preset);
  const ExperimentConfig cfg = apply_preset(preset, cfg_in);
  const FederationConfig fed = cfg.federation();
  const TrainOptions opts = cfg.train_options();

  ExperimentReport report;
  report.config = to_json(cfg);
  report.config["agg_layers"] = fed.plan.agg_layers;
  report.config["K"] = fed.plan.num_agg();
  report.preset = preset.name();

  if (cfg.constants) {
    const double c = c0(*cfg.constants);
    const double limit = max_step_size(c, cfg.Q, cfg.M);
    if (cfg.eta > limit) {
      report.warnings.push_back("eta = " + fmt17(cfg.eta) + " exceeds the admissible step size " + fmt17(limit) +
                                " for the supplied constants; the convergence bound does not apply");
    }
  }

  Dataset ds = ds_in;
  if (cfg.row_normalize) row_normalize(ds.features);
  const PartitionedDataset part = partition_dataset(ds, cfg.M, cfg.edge_keep_prob, *cfg.seed);

  switch (preset.kind) {
    case PresetKind::Centralized: {
      const Dataset whole = shard_as_dataset(part, 0);
      CentralizedResult r = train_centralized(whole, fed);
      report.train_accuracy = evaluate_centralized(r.model, whole, fed, whole.masks.train);
      report.test_accuracy = evaluate_centralized(r.model, whole, fed, whole.masks.test);
      report.client_test_accuracy = {report.test_accuracy};
      report.history.losses = std::move(r.losses);
      report.models.push_back(std::move(r.model));
      break;
    }
    case PresetKind::Standalone: {
      double train_sum = 0.0;
      double test_sum = 0.0;
      for (std::size_t m = 0; m < part.num_clients(); ++m) {
        const Dataset local = shard_as_dataset(part, m);
        CentralizedResult r = train_centralized(local, fed);
        train_sum += evaluate_centralized(r.model, local, fed, local.masks.train);
        const double test = evaluate_centralized(r.model, local, fed, local.masks.test);
        test_sum += test;
        report.client_test_accuracy.push_back(test);
        for (LossRecord rec : r.losses) {
          rec.client = m;
          report.history.losses.push_back(rec);
        }
        report.models.push_back(std::move(r.model));
      }
      const double M = static_cast<double>(part.num_clients());
      report.train_accuracy = train_sum / M;
      report.test_accuracy = test_sum / M;
      std::stable_sort(report.history.losses.begin(), report.history.losses.end(),
                       [](const LossRecord& a, const LossRecord& b) {
                         return std::tie(a.round, a.step, a.client) < std::tie(b.round, b.step, b.client);
                       });
      break;
    }
    case PresetKind::SimCentralized:
    case PresetKind::Glasu: {
      TrainResult r = train(part, fed, opts);
      const FederationData data(part);
      report.train_accuracy = evaluate(r.models, data, fed, part.masks.train);
      report.test_accuracy = evaluate(r.models, data, fed, part.masks.test);
      report.history = std::move(r.history);
      report.models = std::move(r.models);
      break;
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

json counts_json(const CommCounts& counts) {
  json j = json::object();
  for (std::size_t k = 1; k <= kNumMessageKinds; ++k) {
    const auto kind = static_cast<MessageKind>(k);
    if (kind == MessageKind::Control) continue;
    j[std::string(to_string(kind))] = {{"up", count_of(counts, kind, Direction::Up)},
                                       {"down", count_of(counts, kind, Direction::Down)}};
  }
  return j;
}

json ledger_json(const CommLedger& ledger) {
  return {{"rounds", ledger.num_rounds()},
          {"messages", counts_json(ledger.counts())},
          {"bytes", counts_json(ledger.bytes())},
          {"total_messages", ledger.total_count()},
          {"total_bytes", ledger.total_bytes()},
          {"aggregation_messages", aggregation_messages(ledger.counts())}};
}

json report_json(const ExperimentReport& r) {
  json j = {{"config", r.config},
            {"preset", r.preset},
            {"train_accuracy", r.train_accuracy},
            {"test_accuracy", r.test_accuracy},
            {"client_test_accuracy", r.client_test_accuracy},
            {"ledger", ledger_json(r.history.ledger)},
            {"loss_records", r.history.losses.size()},
            {"wall_seconds", r.wall_seconds},
            {"warnings", r.warnings}};
  if (!r.history.losses.empty()) j["final_loss"] = r.history.losses.back().loss;
  return j;
}

void write_outputs(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_losses_csv(report.history.losses, dir / "losses.csv");
  write_accuracy_csv(report.history.accuracy, dir / "accuracy.csv");
  open_out(dir / "report.json") << report_json(report).dump(2) << '\n';
  for (std::size_t m = 0; m < report.models.size(); ++m) {
    save_checkpoint(report.models[m], dir / ("client_" + std::to_string(m) + ".glsw"));
  }
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void write_losses_csv(const std::vector<LossRecord>& losses, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "t,q,client,loss\n";
  for (const auto& r : losses) out << r.round << ',' << r.step << ',' << r.client << ',' << fmt17(r.loss) << '\n';
}

std::vector<LossRecord> read_losses_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "t,q,client,loss") throw DataError(path.string(), 1, "bad header");
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    LossRecord r;
    char rest[64] = {0};
    if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%63s", &r.round, &r.step, &r.client, rest) != 4) {
      throw DataError(path.string(), line_no, "expected t,q,client,loss");
    }
    char* end = nullptr;
    r.loss = std::strtod(rest, &end);
    if (end == rest || *end != '\0') throw DataError(path.string(), line_no, "bad loss value");
    out.push_back(r);
  }
  return out;
}

void write_accuracy_csv(const std::vector<AccuracyRecord>& acc, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "t,accuracy\n";
  for (const auto& r : acc) out << r.round << ',' << fmt17(r.accuracy) << '\n';
}

std::vector<AccuracyRecord> read_accuracy_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "t,accuracy") throw DataError(path.string(), 1, "bad header");
  std::vector<AccuracyRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    AccuracyRecord r;
    char rest[64] = {0};
    if (std::sscanf(line.c_str(), "%zu,%63s", &r.round, rest) != 2) {
      throw DataError(path.string(), line_no, "expected t,accuracy");
    }
    char* end = nullptr;
    r.accuracy = std::strtod(rest, &end);
    if (end == rest || *end != '\0') throw DataError(path.string(), line_no, "bad accuracy value");
    out.push_back(r);
  }
  return out;
}

void save_partition(const PartitionedDataset& part, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta = {{"M", part.num_clients()}, {"num_nodes", part.num_nodes()}, {"num_classes", part.num_classes}};
  json clients = json::array();
  for (std::size_t m = 0; m < part.num_clients(); ++m) {
    const std::string name = "client_" + std::to_string(m);
    save_dataset(shard_as_dataset(part, m), dir / name);
    clients.push_back({{"dir", name},
                       {"column_offset", part.shards[m].column_offset},
                       {"width", part.shards[m].features.cols()},
                       {"edges", part.shards[m].graph.num_edges()}});
  }
  meta["clients"] = clients;
  open_out(dir / "partition.json") << meta.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

Dataset make_sbm_fixture(std::size_t blocks, std::size_t nodes_per_block, double p_in, double p_out,
                         std::size_t d, std::uint64_t seed) {
  require(blocks >= 1 && nodes_per_block >= 1, "SBM needs at least one block and one node per block");
  require(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0, "SBM probabilities must lie in [0, 1]");
  require(p_in > p_out, "SBM needs p_in > p_out");
  require(d >= blocks, "SBM feature dimension must be at least the number of blocks");
  const std::size_t n = blocks * nodes_per_block;
  const Rng root = Rng(seed).derive(kFixtureStream);

  Rng edge_rng = root.derive(1);
  std::vector<std::pair<Index, Index>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const double p = (u / nodes_per_block == v / nodes_per_block) ? p_in : p_out;
      if (edge_rng.uniform() < p) edges.emplace_back(static_cast<Index>(u), static_cast<Index>(v));
    }
  }

  Dataset ds;
  ds.graph = Graph(n, std::move(edges));
  ds.num_classes = static_cast<int>(blocks);
  ds.labels.resize(n);
  ds.features = Matrix(n, d);
  Rng noise = root.derive(2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = i / nodes_per_block;
    ds.labels[i] = static_cast<int>(b);
    for (std::size_t c = 0; c < d; ++c) ds.features(i, c) = (c == b ? 1.0 : 0.0) + 0.1 * noise.normal();
  }

  Rng perm_rng = root.derive(3);
  IndexList perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<Index>(i);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[perm_rng.below(i)]);
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;
  ds.masks.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.masks.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                      perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  ds.masks.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  std::sort(ds.masks.train.begin(), ds.masks.train.end());
  std::sort(ds.masks.val.begin(), ds.masks.val.end());
  std::sort(ds.masks.test.begin(), ds.masks.test.end());
  return ds;
}

}  // namespace glasu
