#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "fedlog/tensor.hpp"

namespace fedlog::graphio {

using tensor::Csr;
using tensor::Tensor;

using Edge = std::pair<std::size_t, std::size_t>;

/// Undirected simple graph with dense node features and one label per node.
/// Immutable once built; safe to share across threads.
class Graph {
 public:
  Graph() = default;

  /// Validates and normalises `edges`: both directions stored, duplicates
  /// dropped. Self-loops and out-of-range endpoints are a FormatError, as are
  /// labels outside [0, n_classes).
  Graph(Tensor features, std::vector<int> labels, std::size_t n_classes,
        std::span<const Edge> edges);

  std::size_t num_nodes() const { return labels_.size(); }
  std::size_t num_classes() const { return n_classes_; }
  std::size_t feature_dim() const { return features_.cols(); }
  /// Undirected edge count.
  std::size_t num_edges() const { return adj_.indices.size() / 2; }

  const Tensor& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  int label(std::size_t v) const { return labels_[v]; }
  const Csr& adjacency() const { return adj_; }
  std::size_t degree(std::size_t v) const { return adj_.degree(v); }
  std::span<const std::size_t> neighbors(std::size_t v) const { return adj_.neighbors(v); }

  /// Each undirected edge once, with first < second, in ascending order.
  std::vector<Edge> edge_list() const;

  bool operator==(const Graph&) const = default;

 private:
  Tensor features_;
  std::vector<int> labels_;
  std::size_t n_classes_ = 0;
  Csr adj_;
};

/// Reads nodes.tsv and edges.tsv from `dir`. An optional meta.json with
/// {"n_classes": C} declares the class count; otherwise it is max label + 1.
Graph load_graph(const std::filesystem::path& dir);

/// Writes nodes.tsv, edges.tsv and meta.json; features use shortest
/// round-trip formatting so load_graph(save_graph(g)) == g.
void save_graph(const Graph& g, const std::filesystem::path& dir);

struct SbmSpec {
  std::vector<std::size_t> block_sizes;
  double p_intra = 0.1;
  double p_inter = 0.01;
  std::size_t feature_dim = 16;
  /// Distance of each class mean from the origin; features are the class
  /// mean plus unit-variance Gaussian noise.
  double separation = 1.0;
  std::uint64_t seed = 0;
};

/// Block b is class b. Nodes are numbered block by block.
Graph generate_sbm(const SbmSpec& spec);

std::vector<std::size_t> class_counts(const Graph& g, std::span<const std::size_t> nodes);

/// r[c] = share of `nodes` labelled c.
std::vector<double> class_rates(const Graph& g, std::span<const std::size_t> nodes);

struct DegreeSplit {
  std::vector<std::size_t> head;  // degree > lambda
  std::vector<std::size_t> tail;  // degree <= lambda
};

DegreeSplit degree_headness_split(const Graph& g, double lambda);
/// Same split restricted to `nodes`, preserving their order.
DegreeSplit degree_headness_split(const Graph& g, double lambda,
                                  std::span<const std::size_t> nodes);

/// A graph induced on a node subset; local id i corresponds to global id
/// global_ids[i].
struct Subgraph {
  Graph graph;
  std::vector<std::size_t> global_ids;

  /// Local ids of the given global ids. Throws ContractError for nodes that
  /// are not in the subgraph.
  std::vector<std::size_t> to_local(std::span<const std::size_t> global) const;
};

/// Keeps every edge of `g` whose endpoints are both in `nodes`. Node order
/// follows `nodes`.
Subgraph induced_subgraph(const Graph& g, std::span<const std::size_t> nodes);

/// Nodes reachable from `seeds` within `hops` steps, excluding the seeds,
/// in ascending id order. When `allowed` is non-empty, the walk only enters
/// nodes whose flag is set.
std::vector<std::size_t> hop_neighborhood(const Graph& g, std::span<const std::size_t> seeds,
                                          std::size_t hops,
                                          const std::vector<bool>& allowed = {});

}  // namespace fedlog::graphio
