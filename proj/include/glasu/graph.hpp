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
#include <span>
#include <utility>
#include <vector>

#include "glasu/linalg.hpp"

namespace glasu {

// Undirected simple graph over nodes [0, num_nodes). Edges are stored once,
// as (u, v) with u < v, sorted and deduplicated. Self pairs are dropped;
// self-loops are added by normalization.
class Graph {
 public:
  Graph() = default;
  Graph(std::size_t num_nodes, std::vector<std::pair<Index, Index>> edges);

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<std::pair<Index, Index>>& edges() const { return edges_; }

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  std::size_t num_nodes_ = 0;
  std::vector<std::pair<Index, Index>> edges_;
};

struct Masks {
  IndexList train;
  IndexList val;
  IndexList test;

  friend bool operator==(const Masks&, const Masks&) = default;
};

struct Dataset {
  Graph graph;
  Matrix features;  // N x d
  std::vector<int> labels;
  int num_classes = 0;
  Masks masks;

  std::size_t num_nodes() const { return graph.num_nodes(); }
  std::size_t feature_dim() const { return features.cols(); }
};

// What client m holds: its sampled edge set and its contiguous feature block.
struct Shard {
  Graph graph;
  Matrix features;  // N x d_m
  std::size_t column_offset = 0;
};

struct PartitionedDataset {
  std::vector<Shard> shards;
  std::vector<int> labels;
  int num_classes = 0;
  Masks masks;

  std::size_t num_clients() const { return shards.size(); }
  std::size_t num_nodes() const { return labels.size(); }
  std::size_t feature_dim() const;
};

// D^{-1/2} (A + I) D^{-1/2} in CSR form; D is the degree of A + I. Rows keep
// their columns sorted ascending and always contain the diagonal entry.
class NormalizedAdj {
 public:
  NormalizedAdj() = default;
  NormalizedAdj(std::vector<std::size_t> offsets, std::vector<Index> columns,
                std::vector<double> values);

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::span<const Index> columns(Index row) const;
  std::span<const double> values(Index row) const;
  double row_sum(Index row) const { return row_sums_[row]; }
  double at(Index row, Index col) const;
  Matrix to_dense() const;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<Index> columns_;
  std::vector<double> values_;
  std::vector<double> row_sums_;
};

// Sparse bipartite block A(E(S_out, S_in)) in CSR layout.
struct SparseBlock {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<Index> columns;
  std::vector<double> values;

  Matrix to_dense() const;
  static SparseBlock from_dense(const Matrix& dense);
};

// block * h, accumulating stored entries left to right.
Matrix spmm(const SparseBlock& block, const Matrix& h);
// block^T * g.
Matrix spmm_transposed(const SparseBlock& block, const Matrix& g);

NormalizedAdj normalize_adjacency(const Graph& g);

// Rows s_out, columns s_in of the normalized adjacency, rescaled so each row
// keeps the mass of its full row: row k is multiplied by
// row_sum(s_out[k]) / (sum of retained entries). Rows whose whole
// neighborhood is retained, and rows that retain only their self entry, are
// left unscaled.
SparseBlock bipartite_block(const NormalizedAdj& adj, std::span<const Index> s_out,
                            std::span<const Index> s_in);
Matrix bipartite_adjacency(const NormalizedAdj& adj, std::span<const Index> s_out,
                           std::span<const Index> s_in);

// Widths of the M contiguous feature blocks: the first d % M blocks get one
// extra column.
std::vector<std::size_t> feature_block_widths(std::size_t d, std::size_t num_clients);

// Each client keeps every edge independently with probability edge_keep_prob
// (one RNG stream per client) and receives one contiguous feature block.
PartitionedDataset partition_dataset(const Dataset& ds, std::size_t num_clients,
                                     double edge_keep_prob, std::uint64_t seed);

// Reverse of partition for the M == 1 case and for standalone training.
Dataset shard_as_dataset(const PartitionedDataset& part, std::size_t client);

void row_normalize(Matrix& features);

// Directory layout: edges.txt, features.csv, labels.csv, masks.txt.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

}  // namespace glasu
