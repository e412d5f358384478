#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedlog/graphio.hpp"

namespace fedlog::partition {

using graphio::Graph;
using NodeList = std::vector<std::size_t>;

/// Splits all nodes into `parts` disjoint sets by seeded BFS region growing.
/// Seeds are picked by repeated farthest-node selection starting from the
/// highest-degree node; regions then claim one frontier node per turn,
/// preferring the node with the most neighbours already in the region, and
/// a greedy boundary pass lowers the cut further. Every part stays within
/// +-20% of n/P. Each part is sorted ascending.
std::vector<NodeList> partition_graph(const Graph& g, std::size_t parts, std::uint64_t seed);

/// Number of edges whose endpoints fall in different parts.
std::size_t edge_cut(const Graph& g, const std::vector<NodeList>& parts);

/// Smallest present classes, in ascending (count, id) order, until their
/// node total reaches `min_nodes`. Classes with count 0 are never selected.
std::vector<int> select_missing_classes(std::span<const std::size_t> counts,
                                        std::size_t min_nodes = 5);

struct SplitRatios {
  double train = 0.4;
  double valid = 0.3;
};

struct Split {
  NodeList train, valid, test;
};

/// Per-class split: round(train * n_c) train nodes (at least one when
/// n_c >= 1), round(valid * n_c) valid nodes, remainder test. Each list is
/// sorted ascending.
Split stratified_split(const Graph& g, std::span<const std::size_t> nodes, SplitRatios ratios,
                       Rng& rng);

struct ClientPart {
  /// Local graph nodes (global ids) after missing-class excision.
  NodeList nodes;
  Split split;
  /// Classes with no training nodes at this client: the selected classes
  /// plus classes absent from the client's part.
  std::vector<int> missing_classes;
  /// Part nodes removed because their class was selected as missing (V_k^uc).
  NodeList excised;
  /// Unseen nodes (V_k^u): closed set, h-hop expansion of `nodes` over the
  /// client parts plus `excised`; open set, cropped nodes within h hops.
  NodeList unseen;

  bool is_missing(int c) const;
};

struct NewClientPart {
  NodeList nodes;
  Split split;
};

struct ScenarioOptions {
  std::size_t clients = 3;
  bool open_set = false;
  std::size_t hops = 2;
  std::size_t min_missing_nodes = 5;
  SplitRatios ratios;
  double crop_fraction = 0.2;
  bool excise_missing = true;
  std::uint64_t seed = 0;
};

struct FederatedScenario {
  ScenarioOptions options;
  std::size_t n_nodes = 0;
  std::size_t n_classes = 0;
  std::vector<ClientPart> clients;
  NewClientPart new_client;
  NodeList crop;

  bool operator==(const FederatedScenario&) const;
};

/// Pure function of (graph, options). Throws ScenarioError when a client part
/// has fewer nodes than there are classes or a single present class.
FederatedScenario build_scenario(const Graph& g, const ScenarioOptions& options);

// Evaluation node sets for client k, all global ids in ascending order.
/// Nodes of the graph the model sees at test time for the unseen settings.
NodeList expanded_nodes(const FederatedScenario& s, std::size_t k);
/// Unseen nodes whose label is one of k's missing classes.
NodeList missing_class_test(const Graph& g, const FederatedScenario& s, std::size_t k);
/// Unseen nodes with any other label.
NodeList unseen_node_test(const Graph& g, const FederatedScenario& s, std::size_t k);

enum class ContributorMode { HeadDegree, TailDegree, BalancedDegree, ClassImbalance };

std::string to_string(ContributorMode m);
ContributorMode contributor_mode_from_string(const std::string& s);

struct ReliabilityConfig {
  std::size_t receiver = 0;
  ContributorMode mode = ContributorMode::HeadDegree;
  double imbalance_rate = 0.0;  // r_imb in [-5, 5]
  int target_class = 0;
  double lambda = 3.0;
};

/// n_t + (r_imb / 10) * min_count, rounded to nearest and clamped at 0.
std::size_t imbalance_count(std::size_t n_target, std::size_t min_count, double imbalance_rate);

/// Builds a scenario without missing-class excision, then removes the target
/// class from the receiver's training split and reshapes every contributor's
/// training split according to `config`. Validation and test splits are left
/// as built. Throws ScenarioError when a contributor cannot satisfy the mode.
FederatedScenario build_reliability_scenario(const Graph& g, const ScenarioOptions& options,
                                             const ReliabilityConfig& config);

nlohmann::json to_json(const FederatedScenario& s);
FederatedScenario scenario_from_json(const nlohmann::json& j);
void save_scenario(const FederatedScenario& s, const std::filesystem::path& file);
FederatedScenario load_scenario(const std::filesystem::path& file);

/// Per-client class-count table (train/valid/test/unseen-node/missing-class
/// columns) plus a "New Client" block, as plain text.
std::string statistics_table(const Graph& g, const FederatedScenario& s);

}  // namespace fedlog::partition
