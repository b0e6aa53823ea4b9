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

#include "glasu/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>

#include "glasu/error.hpp"

namespace glasu {
namespace {

constexpr std::uint64_t kPartitionStream = 0x7061727469746eULL;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
  token = trim(token);
  if (token.empty()) return false;
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

IndexList parse_ids(const std::string& file, std::size_t line_no, std::string_view text,
                    std::size_t num_nodes) {
  IndexList ids;
  for (auto token : split_ws(text)) {
    Index id = 0;
    if (!parse_number(token, id)) {
      throw DataError(file, line_no, "malformed node id '" + std::string(token) + "'");
    }
    if (id >= num_nodes) {
      throw DataError(file, line_no, "node id " + std::to_string(id) + " out of range");
    }
    ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace

Graph::Graph(std::size_t num_nodes, std::vector<std::pair<Index, Index>> edges)
    : num_nodes_(num_nodes) {
  edges_.reserve(edges.size());
  for (auto [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw ConfigError("Graph: edge (" + std::to_string(u) + ", " + std::to_string(v) +
                        ") out of range for " + std::to_string(num_nodes) + " nodes");
    }
    if (u == v) continue;
    edges_.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
}

std::size_t PartitionedDataset::feature_dim() const {
  std::size_t d = 0;
  for (const auto& s : shards) d += s.features.cols();
  return d;
}

NormalizedAdj::NormalizedAdj(std::vector<std::size_t> offsets, std::vector<Index> columns,
                             std::vector<double> values)
    : offsets_(std::move(offsets)), columns_(std::move(columns)), values_(std::move(values)) {
  row_sums_.assign(num_nodes(), 0.0);
  for (std::size_t i = 0; i < num_nodes(); ++i) {
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) row_sums_[i] += values_[e];
  }
}

std::span<const Index> NormalizedAdj::columns(Index row) const {
  return {columns_.data() + offsets_[row], offsets_[row + 1] - offsets_[row]};
}

std::span<const double> NormalizedAdj::values(Index row) const {
  return {values_.data() + offsets_[row], offsets_[row + 1] - offsets_[row]};
}

double NormalizedAdj::at(Index row, Index col) const {
  const auto cols = columns(row);
  const auto it = std::lower_bound(cols.begin(), cols.end(), col);
  if (it == cols.end() || *it != col) return 0.0;
  return values(row)[static_cast<std::size_t>(it - cols.begin())];
}

Matrix NormalizedAdj::to_dense() const {
  Matrix m(num_nodes(), num_nodes());
  for (Index i = 0; i < num_nodes(); ++i) {
    const auto cols = columns(i);
    const auto vals = values(i);
    for (std::size_t e = 0; e < cols.size(); ++e) m(i, cols[e]) = vals[e];
  }
  return m;
}

Matrix SparseBlock::to_dense() const {
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < rows; ++k) {
    for (std::size_t e = offsets[k]; e < offsets[k + 1]; ++e) m(k, columns[e]) = values[e];
  }
  return m;
}

SparseBlock SparseBlock::from_dense(const Matrix& dense) {
  SparseBlock b;
  b.rows = dense.rows();
  b.cols = dense.cols();
  for (std::size_t k = 0; k < dense.rows(); ++k) {
    for (std::size_t j = 0; j < dense.cols(); ++j) {
      if (dense(k, j) != 0.0) {
        b.columns.push_back(static_cast<Index>(j));
        b.values.push_back(dense(k, j));
      }
    }
    b.offsets.push_back(b.columns.size());
  }
  return b;
}

Matrix spmm(const SparseBlock& block, const Matrix& h) {
  if (block.cols != h.rows()) {
    throw ConfigError("spmm: block has " + std::to_string(block.cols) + " columns, input has " +
                      std::to_string(h.rows()) + " rows");
  }
  Matrix out(block.rows, h.cols());
  for (std::size_t k = 0; k < block.rows; ++k) {
    auto dst = out.row(k);
    for (std::size_t e = block.offsets[k]; e < block.offsets[k + 1]; ++e) {
      const double a = block.values[e];
      const auto src = h.row(block.columns[e]);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += a * src[j];
    }
  }
  return out;
}

Matrix spmm_transposed(const SparseBlock& block, const Matrix& g) {
  if (block.rows != g.rows()) {
    throw ConfigError("spmm_transposed: block has " + std::to_string(block.rows) +
                      " rows, cotangent has " + std::to_string(g.rows()));
  }
  Matrix out(block.cols, g.cols());
  for (std::size_t k = 0; k < block.rows; ++k) {
    const auto src = g.row(k);
    for (std::size_t e = block.offsets[k]; e < block.offsets[k + 1]; ++e) {
      const double a = block.values[e];
      auto dst = out.row(block.columns[e]);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += a * src[j];
    }
  }
  return out;
}

NormalizedAdj normalize_adjacency(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::vector<Index>> nbrs(n);
  for (Index i = 0; i < n; ++i) nbrs[i].push_back(i);
  for (auto [u, v] : g.edges()) {
    nbrs[u].push_back(v);
    nbrs[v].push_back(u);
  }
  for (auto& row : nbrs) std::sort(row.begin(), row.end());
  std::vector<std::size_t> offsets{0};
  std::vector<Index> columns;
  std::vector<double> values;
  columns.reserve(n + 2 * g.num_edges());
  values.reserve(n + 2 * g.num_edges());
  for (Index i = 0; i < n; ++i) {
    for (Index j : nbrs[i]) {
      columns.push_back(j);
      // The degree product is an exact integer, so (i, j) and (j, i) agree bit for bit.
      const double deg_product =
          static_cast<double>(nbrs[i].size()) * static_cast<double>(nbrs[j].size());
      values.push_back(1.0 / std::sqrt(deg_product));
    }
    offsets.push_back(columns.size());
  }
  return NormalizedAdj(std::move(offsets), std::move(columns), std::move(values));
}

SparseBlock bipartite_block(const NormalizedAdj& adj, std::span<const Index> s_out,
                            std::span<const Index> s_in) {
  const bool sorted = std::is_sorted(s_in.begin(), s_in.end());
  std::unordered_map<Index, Index> position;
  if (!sorted) {
    for (std::size_t j = 0; j < s_in.size(); ++j) position.emplace(s_in[j], static_cast<Index>(j));
  }
  auto find = [&](Index node) -> std::ptrdiff_t {
    if (sorted) {
      const auto it = std::lower_bound(s_in.begin(), s_in.end(), node);
      return (it != s_in.end() && *it == node) ? it - s_in.begin() : -1;
    }
    const auto it = position.find(node);
    return it == position.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
  };

  SparseBlock block;
  block.rows = s_out.size();
  block.cols = s_in.size();
  block.offsets.reserve(s_out.size() + 1);
  std::vector<std::pair<Index, double>> row;
  for (std::size_t k = 0; k < s_out.size(); ++k) {
    const Index i = s_out[k];
    if (i >= adj.num_nodes()) {
      throw ConfigError("bipartite_block: node " + std::to_string(i) + " out of range");
    }
    const auto cols = adj.columns(i);
    const auto vals = adj.values(i);
    row.clear();
    double retained = 0.0;
    bool self_only = true;
    for (std::size_t e = 0; e < cols.size(); ++e) {
      const auto pos = find(cols[e]);
      if (pos < 0) continue;
      row.emplace_back(static_cast<Index>(pos), vals[e]);
      retained += vals[e];
      if (cols[e] != i) self_only = false;
    }
    if (row.empty() || retained <= 0.0) {
      throw ConfigError("bipartite_block: output node " + std::to_string(i) +
                        " retains no neighbor; its self index is missing from the input set");
    }
    if (!sorted) std::sort(row.begin(), row.end());
    const bool rescale = row.size() != cols.size() && !self_only;
    const double scale = rescale ? adj.row_sum(i) / retained : 1.0;
    for (auto [pos, v] : row) {
      block.columns.push_back(pos);
      block.values.push_back(rescale ? v * scale : v);
    }
    block.offsets.push_back(block.columns.size());
  }
  return block;
}

Matrix bipartite_adjacency(const NormalizedAdj& adj, std::span<const Index> s_out,
                           std::span<const Index> s_in) {
  return bipartite_block(adj, s_out, s_in).to_dense();
}

std::vector<std::size_t> feature_block_widths(std::size_t d, std::size_t num_clients) {
  if (num_clients == 0) throw ConfigError("feature_block_widths: need at least one client");
  if (d < num_clients) {
    throw ConfigError("cannot split " + std::to_string(d) + " feature columns across " +
                      std::to_string(num_clients) + " clients");
  }
  std::vector<std::size_t> widths(num_clients, d / num_clients);
  for (std::size_t m = 0; m < d % num_clients; ++m) ++widths[m];
  return widths;
}

PartitionedDataset partition_dataset(const Dataset& ds, std::size_t num_clients,
                                     double edge_keep_prob, std::uint64_t seed) {
  if (num_clients == 0) throw ConfigError("partition_dataset: M must be at least 1");
  if (!(edge_keep_prob > 0.0 && edge_keep_prob <= 1.0)) {
    throw ConfigError("partition_dataset: edge_keep_prob must lie in (0, 1]");
  }
  const auto widths = feature_block_widths(ds.feature_dim(), num_clients);
  const Rng root = Rng(seed).derive(kPartitionStream);

  PartitionedDataset part;
  part.labels = ds.labels;
  part.num_classes = ds.num_classes;
  part.masks = ds.masks;
  std::size_t offset = 0;
  for (std::size_t m = 0; m < num_clients; ++m) {
    Rng rng = root.derive(m);
    std::vector<std::pair<Index, Index>> kept;
    for (const auto& e : ds.graph.edges()) {
      if (rng.uniform() < edge_keep_prob) kept.push_back(e);
    }
    Shard shard;
    shard.graph = Graph(ds.num_nodes(), std::move(kept));
    shard.features = column_block(ds.features, offset, widths[m]);
    shard.column_offset = offset;
    offset += widths[m];
    part.shards.push_back(std::move(shard));
  }
  return part;
}

Dataset shard_as_dataset(const PartitionedDataset& part, std::size_t client) {
  if (client >= part.num_clients()) throw ConfigError("shard_as_dataset: no such client");
  Dataset ds;
  ds.graph = part.shards[client].graph;
  ds.features = part.shards[client].features;
  ds.labels = part.labels;
  ds.num_classes = part.num_classes;
  ds.masks = part.masks;
  return ds;
}

void row_normalize(Matrix& features) {
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto row = features.row(i);
    double s = 0.0;
    for (double v : row) s += std::abs(v);
    if (s > 0.0) {
      for (double& v : row) v /= s;
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;

  {
    const auto path = dir / "features.csv";
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    std::vector<double> data;
    std::size_t rows = 0;
    std::size_t cols = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      const auto fields = split(line, ',');
      if (rows == 0) cols = fields.size();
      if (fields.size() != cols) {
        throw DataError(path.string(), line_no,
                        "expected " + std::to_string(cols) + " columns, found " +
                            std::to_string(fields.size()));
      }
      for (auto f : fields) {
        double v = 0.0;
        if (!parse_number(f, v) || !std::isfinite(v)) {
          throw DataError(path.string(), line_no, "malformed value '" + std::string(f) + "'");
        }
        data.push_back(v);
      }
      ++rows;
    }
    if (rows == 0) throw DataError(path.string() + ": no feature rows");
    ds.features = Matrix(rows, cols, std::move(data));
  }
  const std::size_t n = ds.features.rows();

  {
    const auto path = dir / "labels.csv";
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      int label = 0;
      if (!parse_number(std::string_view(line), label)) {
        throw DataError(path.string(), line_no, "malformed label '" + line + "'");
      }
      if (label < 0) {
        throw DataError(path.string(), line_no, "label " + std::to_string(label) + " out of range");
      }
      ds.labels.push_back(label);
    }
    if (ds.labels.size() != n) {
      throw DataError(path.string() + ": " + std::to_string(ds.labels.size()) +
                      " labels for " + std::to_string(n) + " nodes");
    }
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  }

  {
    const auto path = dir / "edges.txt";
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::pair<Index, Index>> edges;
    while (std::getline(in, line)) {
      ++line_no;
      const auto tokens = split_ws(line);
      if (tokens.empty()) continue;
      Index u = 0;
      Index v = 0;
      if (tokens.size() != 2 || !parse_number(tokens[0], u) || !parse_number(tokens[1], v)) {
        throw DataError(path.string(), line_no, "expected \"u v\", got '" + line + "'");
      }
      if (u >= n || v >= n) {
        throw DataError(path.string(), line_no, "edge endpoint out of range for " +
                                                    std::to_string(n) + " nodes");
      }
      edges.emplace_back(u, v);
    }
    ds.graph = Graph(n, std::move(edges));
  }

  {
    const auto path = dir / "masks.txt";
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    bool seen[3] = {false, false, false};
    while (std::getline(in, line)) {
      ++line_no;
      const std::string_view text = trim(line);
      if (text.empty()) continue;
      const auto colon = text.find(':');
      if (colon == std::string_view::npos) {
        throw DataError(path.string(), line_no, "expected 'train:', 'val:' or 'test:'");
      }
      const auto key = trim(text.substr(0, colon));
      IndexList ids = parse_ids(path.string(), line_no, text.substr(colon + 1), n);
      int slot = key == "train" ? 0 : key == "val" ? 1 : key == "test" ? 2 : -1;
      if (slot < 0) {
        throw DataError(path.string(), line_no, "unknown mask '" + std::string(key) + "'");
      }
      if (seen[slot]) throw DataError(path.string(), line_no, "duplicate mask line");
      seen[slot] = true;
      (slot == 0 ? ds.masks.train : slot == 1 ? ds.masks.val : ds.masks.test) = std::move(ids);
    }
    if (!seen[0] || !seen[1] || !seen[2]) {
      throw DataError(path.string() + ": expected train, val and test lines");
    }
    std::vector<char> owner(n, 0);
    for (const IndexList* mask : {&ds.masks.train, &ds.masks.val, &ds.masks.test}) {
      for (Index id : *mask) {
        if (owner[id]) throw DataError(path.string() + ": masks overlap at node " + std::to_string(id));
        owner[id] = 1;
      }
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_output(dir / "edges.txt");
    for (auto [u, v] : ds.graph.edges()) out << u << ' ' << v << '\n';
  }
  {
    auto out = open_output(dir / "features.csv");
    for (std::size_t i = 0; i < ds.features.rows(); ++i) {
      const auto row = ds.features.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (j) out << ',';
        out << format_double(row[j]);
      }
      out << '\n';
    }
  }
  {
    auto out = open_output(dir / "labels.csv");
    for (int y : ds.labels) out << y << '\n';
  }
  {
    auto out = open_output(dir / "masks.txt");
    auto write = [&](const char* key, const IndexList& ids) {
      out << key;
      for (Index id : ids) out << ' ' << id;
      out << '\n';
    };
    write("train:", ds.masks.train);
    write("val:", ds.masks.val);
    write("test:", ds.masks.test);
  }
}

}  // namespace glasu
