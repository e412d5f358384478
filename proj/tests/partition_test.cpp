#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "fedlog/errors.hpp"
#include "fedlog/partition.hpp"

namespace fedlog::partition {
namespace {

using graphio::Edge;
using graphio::generate_sbm;
using graphio::Tensor;

Graph two_cliques(std::size_t size) {
  std::vector<Edge> e;
  for (std::size_t base : {std::size_t{0}, size}) {
    for (std::size_t a = 0; a < size; ++a) {
      for (std::size_t b = a + 1; b < size; ++b) e.emplace_back(base + a, base + b);
    }
  }
  std::vector<int> labels(2 * size, 0);
  for (std::size_t v = size; v < 2 * size; ++v) labels[v] = 1;
  return Graph(Tensor(2 * size, 1), labels, 2, e);
}

Graph sbm_fixture(std::uint64_t seed = 1) {
  return generate_sbm({.block_sizes = {60, 50, 40, 30},
                       .p_intra = 0.15,
                       .p_inter = 0.01,
                       .feature_dim = 4,
                       .seed = seed});
}

NodeList set_union_of(const NodeList& a, const NodeList& b) {
  NodeList out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

void expect_disjoint_cover(const std::vector<NodeList>& parts, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& p : parts) {
    for (std::size_t v : p) ++seen[v];
  }
  for (std::size_t v = 0; v < n; ++v) EXPECT_EQ(seen[v], 1) << "node " << v;
}

// Exhaustive minimum balanced bisection.
std::size_t brute_force_min_bisection(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::size_t best = SIZE_MAX;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != n / 2) continue;
    std::size_t cut = 0;
    for (auto [a, b] : g.edge_list()) cut += ((mask >> a) & 1) != ((mask >> b) & 1);
    best = std::min(best, cut);
  }
  return best;
}

TEST(PartitionGraph, SinglePartIsEverything) {
  Graph g = sbm_fixture();
  auto parts = partition_graph(g, 1, 0);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].size(), g.num_nodes());
}

TEST(PartitionGraph, DisconnectedCliquesSplitExactly) {
  Graph small = two_cliques(6);
  auto parts = partition_graph(small, 2, 3);
  EXPECT_EQ(edge_cut(small, parts), brute_force_min_bisection(small));

  Graph g = two_cliques(50);
  for (std::uint64_t seed : {0, 1, 2}) {
    auto p = partition_graph(g, 2, seed);
    EXPECT_EQ(edge_cut(g, p), 0u);
    EXPECT_EQ(p[0].size(), 50u);
  }
}

TEST(PartitionGraph, DisjointBalancedDeterministic) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Graph g = sbm_fixture(seed);
    for (std::size_t P : {2, 3, 4, 7}) {
      auto parts = partition_graph(g, P, seed);
      ASSERT_EQ(parts.size(), P);
      expect_disjoint_cover(parts, g.num_nodes());
      const double ideal = static_cast<double>(g.num_nodes()) / P;
      for (const auto& p : parts) {
        EXPECT_LE(std::abs(static_cast<double>(p.size()) - ideal), 0.2 * ideal);
      }
      EXPECT_EQ(parts, partition_graph(g, P, seed));
    }
  }
}

TEST(PartitionGraph, CutBeatsRandomAssignment) {
  Graph g = sbm_fixture(5);
  auto parts = partition_graph(g, 4, 5);
  std::vector<NodeList> striped(4);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) striped[v % 4].push_back(v);
  EXPECT_LT(edge_cut(g, parts), edge_cut(g, striped) / 2);
}

TEST(PartitionGraph, TooManyParts) {
  Graph g = two_cliques(3);
  EXPECT_THROW(partition_graph(g, 7, 0), ContractError);
  EXPECT_THROW(partition_graph(g, 0, 0), ContractError);
}

TEST(SelectMissing, Examples) {
  std::size_t a[] = {100, 5, 40};
  EXPECT_EQ(select_missing_classes(a), (std::vector<int>{1}));
  std::size_t b[] = {100, 2, 3};
  EXPECT_EQ(select_missing_classes(b), (std::vector<int>{1, 2}));
  std::size_t c[] = {100, 0, 7, 30};
  EXPECT_EQ(select_missing_classes(c), (std::vector<int>{2}));
  std::size_t only[] = {0, 12, 0};
  EXPECT_THROW(select_missing_classes(only), ContractError);
}

TEST(SelectMissing, NeverRemovesEveryClass) {
  std::size_t tiny[] = {1, 1, 1};
  EXPECT_EQ(select_missing_classes(tiny).size(), 2u);
}

TEST(StratifiedSplit, ProportionsWithinOneNode) {
  Graph g = sbm_fixture(2);
  NodeList all(g.num_nodes());
  for (std::size_t v = 0; v < all.size(); ++v) all[v] = v;
  Rng rng(4);
  Split s = stratified_split(g, all, {}, rng);
  auto tr = graphio::class_counts(g, s.train);
  auto va = graphio::class_counts(g, s.valid);
  auto te = graphio::class_counts(g, s.test);
  auto total = graphio::class_counts(g, all);
  for (std::size_t c = 0; c < g.num_classes(); ++c) {
    EXPECT_EQ(tr[c] + va[c] + te[c], total[c]);
    EXPECT_LE(std::abs(static_cast<double>(tr[c]) - 0.4 * total[c]), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(va[c]) - 0.3 * total[c]), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(te[c]) - 0.3 * total[c]), 1.0);
  }
}

void expect_scenario_invariants(const Graph& g, const FederatedScenario& s) {
  std::vector<NodeList> roles;
  for (const auto& c : s.clients) roles.push_back(set_union_of(c.nodes, c.excised));
  roles.push_back(s.new_client.nodes);
  roles.push_back(s.crop);
  expect_disjoint_cover(roles, g.num_nodes());

  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    const ClientPart& c = s.clients[k];
    for (const NodeList* set : {&c.nodes, &c.split.train, &c.split.valid, &c.split.test}) {
      for (std::size_t v : *set) EXPECT_FALSE(c.is_missing(g.label(v))) << "leak at client " << k;
    }
    for (std::size_t v : missing_class_test(g, s, k)) EXPECT_TRUE(c.is_missing(g.label(v)));
    for (std::size_t v : unseen_node_test(g, s, k)) EXPECT_FALSE(c.is_missing(g.label(v)));
    for (std::size_t v : c.excised) EXPECT_TRUE(c.is_missing(g.label(v)));
    // Unseen nodes never overlap the client's own local graph.
    NodeList inter;
    std::set_intersection(c.nodes.begin(), c.nodes.end(), c.unseen.begin(), c.unseen.end(),
                          std::back_inserter(inter));
    EXPECT_TRUE(inter.empty());
    if (!s.options.open_set) {
      EXPECT_TRUE(std::includes(c.unseen.begin(), c.unseen.end(), c.excised.begin(), c.excised.end()));
    }
  }
}

// Classes mixed across communities, as in citation graphs.
Graph mixed_fixture(std::uint64_t seed) {
  return generate_sbm({.block_sizes = {50, 45, 40, 35, 30},
                       .p_intra = 0.08,
                       .p_inter = 0.02,
                       .feature_dim = 4,
                       .seed = seed});
}

TEST(Scenario, ClosedSetInvariants) {
  Graph g = mixed_fixture(7);
  FederatedScenario s = build_scenario(g, {.clients = 3, .seed = 7});
  EXPECT_EQ(s.clients.size(), 3u);
  EXPECT_TRUE(s.crop.empty());
  expect_scenario_invariants(g, s);
  for (const auto& c : s.clients) EXPECT_FALSE(c.missing_classes.empty());
}

TEST(Scenario, OpenSetCropsTwentyPercent) {
  auto g = generate_sbm({.block_sizes = {25, 25, 25, 25}, .p_intra = 0.2, .p_inter = 0.02, .seed = 3});
  FederatedScenario s = build_scenario(g, {.clients = 2, .open_set = true, .seed = 3});
  EXPECT_EQ(s.crop.size(), 20u);
  expect_scenario_invariants(g, s);
  for (const auto& c : s.clients) {
    for (std::size_t v : c.unseen) {
      EXPECT_TRUE(std::binary_search(s.crop.begin(), s.crop.end(), v));
    }
  }
}

TEST(Scenario, ZeroHopsLeavesOnlyExcised) {
  Graph g = mixed_fixture(8);
  FederatedScenario s = build_scenario(g, {.clients = 3, .hops = 0, .seed = 8});
  for (const auto& c : s.clients) EXPECT_EQ(c.unseen, c.excised);
}

TEST(Scenario, Deterministic) {
  Graph g = mixed_fixture(9);
  ScenarioOptions o{.clients = 3, .seed = 9};
  EXPECT_EQ(build_scenario(g, o), build_scenario(g, o));
  o.seed = 10;
  EXPECT_FALSE(build_scenario(g, o) == build_scenario(g, {.clients = 3, .seed = 9}));
}

TEST(Scenario, JsonRoundTrip) {
  Graph g = mixed_fixture(4);
  FederatedScenario s = build_scenario(g, {.clients = 3, .open_set = true, .seed = 4});
  auto file = std::filesystem::temp_directory_path() / "fedlog_scenario_roundtrip.json";
  save_scenario(s, file);
  FederatedScenario back = load_scenario(file);
  std::filesystem::remove(file);
  EXPECT_EQ(back, s);
  EXPECT_EQ(back.clients[1].unseen, s.clients[1].unseen);
  EXPECT_THROW(scenario_from_json(nlohmann::json{{"format", "other"}}), FormatError);
}

TEST(Scenario, DegenerateClientNamed) {
  auto g = generate_sbm({.block_sizes = {4, 4, 4}, .p_intra = 0.5, .p_inter = 0.1, .seed = 1});
  try {
    build_scenario(g, {.clients = 5, .seed = 1});
    FAIL() << "expected ScenarioError";
  } catch (const ScenarioError& e) {
    EXPECT_NE(std::string(e.what()).find("client"), std::string::npos);
  }
}

TEST(Scenario, StatisticsTableHasNewClientBlock) {
  Graph g = mixed_fixture(3);
  auto s = build_scenario(g, {.clients = 1, .seed = 3});
  std::string t = statistics_table(g, s);
  EXPECT_NE(t.find("Client 0"), std::string::npos);
  EXPECT_NE(t.find("New Client"), std::string::npos);
  EXPECT_EQ(t.find("Client 1"), std::string::npos);
}

TEST(Reliability, ImbalanceFormula) {
  EXPECT_EQ(imbalance_count(20, 50, 0.0), 20u);
  EXPECT_EQ(imbalance_count(20, 50, -5.0), 0u);
  EXPECT_EQ(imbalance_count(20, 50, 5.0), 45u);
  EXPECT_EQ(imbalance_count(10, 40, -2.0), 2u);
}

Graph reliability_fixture() {
  return generate_sbm({.block_sizes = {90, 90, 90},
                       .p_intra = 0.06,
                       .p_inter = 0.03,
                       .feature_dim = 4,
                       .seed = 21});
}

std::size_t local_degree(const Graph& g, const NodeList& nodes, std::size_t v) {
  std::size_t d = 0;
  for (std::size_t u : g.neighbors(v)) d += std::binary_search(nodes.begin(), nodes.end(), u);
  return d;
}

TEST(Reliability, DegreeModesFilterContributors) {
  Graph g = reliability_fixture();
  ScenarioOptions o{.clients = 3, .seed = 21};
  for (auto mode : {ContributorMode::HeadDegree, ContributorMode::TailDegree,
                    ContributorMode::BalancedDegree}) {
    ReliabilityConfig cfg{.receiver = 0, .mode = mode, .target_class = 1};
    FederatedScenario s = build_reliability_scenario(g, o, cfg);
    for (std::size_t v : s.clients[0].split.train) EXPECT_NE(g.label(v), 1);
    for (std::size_t k = 1; k < 3; ++k) {
      const auto& c = s.clients[k];
      EXPECT_FALSE(c.split.train.empty());
      std::size_t head = 0;
      for (std::size_t v : c.split.train) {
        bool is_head = local_degree(g, c.nodes, v) > 3;
        head += is_head;
        if (mode == ContributorMode::HeadDegree) EXPECT_TRUE(is_head);
        if (mode == ContributorMode::TailDegree) EXPECT_FALSE(is_head);
      }
      if (mode == ContributorMode::BalancedDegree) {
        EXPECT_LE(std::abs(2.0 * head - static_cast<double>(c.split.train.size())),
                  static_cast<double>(g.num_classes()));
      }
    }
  }
  // Same training-set size across degree modes.
  auto size_for = [&](ContributorMode m) {
    return build_reliability_scenario(g, o, {.mode = m, .target_class = 1}).clients[1].split.train.size();
  };
  EXPECT_EQ(size_for(ContributorMode::HeadDegree), size_for(ContributorMode::TailDegree));
}

TEST(Reliability, ImbalanceModeCounts) {
  Graph g = reliability_fixture();
  ScenarioOptions o{.clients = 3, .seed = 21};
  FederatedScenario zero = build_reliability_scenario(
      g, o, {.mode = ContributorMode::ClassImbalance, .imbalance_rate = 0, .target_class = 2});
  for (std::size_t k = 1; k < 3; ++k) {
    auto counts = graphio::class_counts(g, zero.clients[k].split.train);
    for (std::size_t c = 0; c < 3; ++c) {
      if (counts[c] > 0) EXPECT_EQ(counts[c], counts[2]) << "client " << k << " class " << c;
    }
  }
  FederatedScenario head = build_reliability_scenario(
      g, o, {.mode = ContributorMode::ClassImbalance, .imbalance_rate = -5, .target_class = 2});
  FederatedScenario tail = build_reliability_scenario(
      g, o, {.mode = ContributorMode::ClassImbalance, .imbalance_rate = 5, .target_class = 2});
  auto h = graphio::class_rates(g, head.clients[1].split.train);
  auto t = graphio::class_rates(g, tail.clients[1].split.train);
  EXPECT_GT(h[2], t[2]);
}

TEST(Reliability, UnsatisfiableModeIsScenarioError) {
  // Star graph: the only target-class nodes are leaves, so no head-degree
  // target nodes exist anywhere.
  std::vector<Edge> e;
  std::vector<int> labels(60, 0);
  for (std::size_t v = 0; v < 60; ++v) labels[v] = static_cast<int>(v % 2);
  for (std::size_t hub : {0, 20, 40}) {
    for (std::size_t leaf = hub + 1; leaf < hub + 20; ++leaf) e.emplace_back(hub, leaf);
  }
  for (std::size_t hub : {0, 20, 40}) labels[hub] = 0;
  Graph g(Tensor(60, 1), labels, 2, e);
  ScenarioOptions o{.clients = 2, .seed = 1};
  EXPECT_THROW(build_reliability_scenario(g, o, {.mode = ContributorMode::HeadDegree, .target_class = 1}),
               ScenarioError);
}

}  // namespace
}  // namespace fedlog::partition
