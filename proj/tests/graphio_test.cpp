#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <queue>
#include <string>

#include "fedlog/errors.hpp"
#include "fedlog/graphio.hpp"

namespace fedlog::graphio {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("fedlog_graphio_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  void write(const std::string& name, const std::string& content) const {
    std::ofstream(path_ / name, std::ios::binary) << content;
  }

 private:
  fs::path path_;
};

std::size_t count_components(const Graph& g) {
  std::vector<bool> seen(g.num_nodes(), false);
  std::size_t comps = 0;
  for (std::size_t s = 0; s < g.num_nodes(); ++s) {
    if (seen[s]) continue;
    ++comps;
    std::queue<std::size_t> q;
    q.push(s);
    seen[s] = true;
    while (!q.empty()) {
      std::size_t v = q.front();
      q.pop();
      for (std::size_t u : g.neighbors(v)) {
        if (!seen[u]) {
          seen[u] = true;
          q.push(u);
        }
      }
    }
  }
  return comps;
}

void expect_simple_undirected(const Graph& g) {
  std::size_t degree_sum = 0;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    auto nb = g.neighbors(v);
    degree_sum += nb.size();
    EXPECT_EQ(g.degree(v), nb.size());
    for (std::size_t i = 0; i < nb.size(); ++i) {
      EXPECT_NE(nb[i], v) << "self-loop";
      if (i) EXPECT_LT(nb[i - 1], nb[i]) << "duplicate or unsorted";
      auto back = g.neighbors(nb[i]);
      EXPECT_TRUE(std::binary_search(back.begin(), back.end(), v)) << "asymmetric";
    }
  }
  EXPECT_EQ(degree_sum, 2 * g.num_edges());
}

TEST(Graph, TwoNodeOneEdge) {
  TempDir dir;
  dir.write("nodes.tsv", "node_id\tlabel\tfeatures\n0\t0\t1.0,2.0\n1\t1\t3.0,4.0\n");
  dir.write("edges.tsv", "src\tdst\n0\t1\n");
  Graph g = load_graph(dir.path());
  EXPECT_EQ(g.num_nodes(), 2u);
  EXPECT_EQ(g.num_classes(), 2u);
  EXPECT_EQ(g.feature_dim(), 2u);
  EXPECT_EQ(g.degree(0), 1u);
  EXPECT_EQ(g.degree(1), 1u);
  EXPECT_EQ(g.features()(1, 0), 3.0);
}

TEST(Graph, DuplicateAndReversedEdgesCollapse) {
  TempDir dir;
  dir.write("nodes.tsv", "node_id\tlabel\tfeatures\n0\t0\t0\n1\t0\t0\n2\t0\t0\n");
  dir.write("edges.tsv", "src\tdst\n0\t1\n1\t0\n0\t1\n1\t2\n");
  Graph g = load_graph(dir.path());
  EXPECT_EQ(g.num_edges(), 2u);
  EXPECT_EQ(g.degree(1), 2u);
  expect_simple_undirected(g);
}

TEST(Graph, MalformedRowReportsLine) {
  TempDir dir;
  dir.write("nodes.tsv", "node_id\tlabel\tfeatures\n0\t0\t1.0\n1\tx\t2.0\n");
  dir.write("edges.tsv", "src\tdst\n");
  try {
    load_graph(dir.path());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Graph, BadFeatureValueReportsLine) {
  TempDir dir;
  dir.write("nodes.tsv", "node_id\tlabel\tfeatures\n0\t0\t1.0,abc\n");
  dir.write("edges.tsv", "src\tdst\n");
  try {
    load_graph(dir.path());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Graph, InconsistentFeatureDimIsFormatError) {
  TempDir dir;
  dir.write("nodes.tsv", "node_id\tlabel\tfeatures\n0\t0\t1.0,2.0\n1\t0\t2.0\n");
  dir.write("edges.tsv", "src\tdst\n");
  EXPECT_THROW(load_graph(dir.path()), FormatError);
}

TEST(Graph, LabelAboveDeclaredClassCountIsFormatError) {
  TempDir dir;
  dir.write("nodes.tsv", "node_id\tlabel\tfeatures\n0\t0\t1\n1\t3\t1\n");
  dir.write("edges.tsv", "src\tdst\n");
  dir.write("meta.json", "{\"n_classes\": 3}\n");
  EXPECT_THROW(load_graph(dir.path()), FormatError);
}

TEST(Graph, EdgeEndpointOutOfRange) {
  TempDir dir;
  dir.write("nodes.tsv", "node_id\tlabel\tfeatures\n0\t0\t1\n");
  dir.write("edges.tsv", "src\tdst\n0\t5\n");
  EXPECT_THROW(load_graph(dir.path()), FormatError);
}

TEST(Graph, SelfLoopsDroppedOnLoad) {
  TempDir dir;
  dir.write("nodes.tsv", "node_id\tlabel\tfeatures\n0\t0\t1\n1\t0\t1\n");
  dir.write("edges.tsv", "src\tdst\n0\t0\n0\t1\n");
  Graph g = load_graph(dir.path());
  EXPECT_EQ(g.num_edges(), 1u);
}

TEST(Graph, ConstructorRejectsSelfLoop) {
  std::vector<Edge> e{{0, 0}};
  EXPECT_THROW(Graph(Tensor(1, 1), {0}, 1, e), FormatError);
}

TEST(Graph, SaveLoadRoundTrip) {
  TempDir dir;
  Graph g = generate_sbm({.block_sizes = {30, 20, 25},
                          .p_intra = 0.2,
                          .p_inter = 0.02,
                          .feature_dim = 7,
                          .separation = 2.0,
                          .seed = 9});
  save_graph(g, dir.path());
  Graph back = load_graph(dir.path());
  EXPECT_EQ(back, g);
}

TEST(Graph, RoundTripKeepsDeclaredEmptyClass) {
  TempDir dir;
  std::vector<Edge> e{{0, 1}};
  Graph g(Tensor(2, 1, 0.5), {0, 1}, 4, e);
  save_graph(g, dir.path());
  EXPECT_EQ(load_graph(dir.path()).num_classes(), 4u);
}

TEST(Sbm, NoInterEdgesGivesBlockComponents) {
  Graph g = generate_sbm({.block_sizes = {40, 40}, .p_intra = 0.5, .p_inter = 0.0, .seed = 1});
  EXPECT_EQ(count_components(g), 2u);
  for (auto [a, b] : g.edge_list()) EXPECT_EQ(g.label(a), g.label(b));
}

TEST(Sbm, Deterministic) {
  SbmSpec spec{.block_sizes = {50, 60}, .p_intra = 0.1, .p_inter = 0.01, .seed = 3};
  EXPECT_EQ(generate_sbm(spec), generate_sbm(spec));
  SbmSpec other = spec;
  other.seed = 4;
  EXPECT_NE(generate_sbm(spec), generate_sbm(other));
}

TEST(Sbm, EdgeCountsWithinThreeSigmaOfBinomial) {
  Graph g = generate_sbm({.block_sizes = {100, 100}, .p_intra = 0.3, .p_inter = 0.01, .seed = 11});
  std::size_t intra[2] = {0, 0}, inter = 0;
  for (auto [a, b] : g.edge_list()) {
    if (g.label(a) == g.label(b)) {
      ++intra[g.label(a)];
    } else {
      ++inter;
    }
  }
  const double pairs = 100.0 * 99.0 / 2.0;
  const double mean = 0.3 * pairs, sd = std::sqrt(pairs * 0.3 * 0.7);
  for (std::size_t c : intra) EXPECT_LT(std::abs(static_cast<double>(c) - mean), 3 * sd);
  const double imean = 0.01 * 100 * 100, isd = std::sqrt(100.0 * 100 * 0.01 * 0.99);
  EXPECT_LT(std::abs(static_cast<double>(inter) - imean), 3 * isd);
  expect_simple_undirected(g);
}

TEST(Sbm, EmptyBlockIsContractError) {
  EXPECT_THROW(generate_sbm({.block_sizes = {10, 0}}), ContractError);
  EXPECT_THROW(generate_sbm({.block_sizes = {10}, .p_intra = 1.5}), ContractError);
}

TEST(Sbm, ClassMeansSeparate) {
  Graph g = generate_sbm({.block_sizes = {200, 200}, .feature_dim = 4, .separation = 3.0, .seed = 2});
  std::vector<double> m0(4, 0.0), m1(4, 0.0);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    auto& m = g.label(v) == 0 ? m0 : m1;
    for (std::size_t j = 0; j < 4; ++j) m[j] += g.features()(v, j) / 200.0;
  }
  double n0 = 0, n1 = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    n0 += m0[j] * m0[j];
    n1 += m1[j] * m1[j];
  }
  EXPECT_NEAR(std::sqrt(n0), 3.0, 0.3);
  EXPECT_NEAR(std::sqrt(n1), 3.0, 0.3);
}

Graph labelled(std::vector<int> labels, std::size_t n_classes) {
  std::size_t n = labels.size();
  return Graph(Tensor(n, 1), std::move(labels), n_classes, {});
}

TEST(ClassRates, Examples) {
  std::vector<std::size_t> all{0, 1, 2, 3};
  EXPECT_EQ(class_rates(labelled({0, 0, 1, 1}, 2), all), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(class_rates(labelled({0, 0, 0, 1}, 2), all), (std::vector<double>{0.75, 0.25}));
  EXPECT_EQ(class_rates(labelled({2, 2, 2, 2}, 3), all), (std::vector<double>{0, 0, 1}));
  EXPECT_THROW(class_rates(labelled({0}, 1), std::vector<std::size_t>{}), ContractError);
}

TEST(ClassRates, SumToOne) {
  Graph g = generate_sbm({.block_sizes = {13, 29, 7, 51}, .seed = 5});
  std::vector<std::size_t> nodes;
  for (std::size_t v = 0; v < g.num_nodes(); v += 3) nodes.push_back(v);
  auto r = class_rates(g, nodes);
  EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-12);
  for (double x : r) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
}

// Star-like fixture with degrees [1, 3, 4] on nodes 0..2.
Graph degree_fixture() {
  // Node 0: degree 1, node 1: degree 3, node 2: degree 4; leaves 3..6.
  std::vector<Edge> e{{0, 2}, {1, 2}, {1, 3}, {1, 4}, {2, 5}, {2, 6}};
  return Graph(Tensor(7, 1), std::vector<int>(7, 0), 1, e);
}

TEST(DegreeSplit, ThresholdIsInclusiveForTail) {
  Graph g = degree_fixture();
  ASSERT_EQ(g.degree(0), 1u);
  ASSERT_EQ(g.degree(1), 3u);
  ASSERT_EQ(g.degree(2), 4u);
  std::vector<std::size_t> subset{0, 1, 2};
  auto s = degree_headness_split(g, 3, subset);
  EXPECT_EQ(s.tail, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.head, (std::vector<std::size_t>{2}));
}

TEST(DegreeSplit, Boundaries) {
  std::vector<Edge> e{{0, 1}};
  Graph g(Tensor(3, 1), {0, 0, 0}, 1, e);
  auto zero = degree_headness_split(g, 0);
  EXPECT_EQ(zero.tail, (std::vector<std::size_t>{2}));
  auto big = degree_headness_split(degree_fixture(), 4);
  EXPECT_TRUE(big.head.empty());
  EXPECT_EQ(big.tail.size(), 7u);
}

TEST(Subgraph, InducedKeepsInternalEdgesOnly) {
  Graph g = degree_fixture();
  std::vector<std::size_t> nodes{2, 1, 3};
  Subgraph s = induced_subgraph(g, nodes);
  EXPECT_EQ(s.graph.num_nodes(), 3u);
  EXPECT_EQ(s.graph.num_edges(), 2u);  // 2-1 and 1-3
  EXPECT_EQ(s.graph.degree(1), 2u);    // local 1 == global 1
  EXPECT_EQ(s.to_local(std::vector<std::size_t>{3, 2}), (std::vector<std::size_t>{2, 0}));
  EXPECT_THROW(s.to_local(std::vector<std::size_t>{0}), ContractError);
  expect_simple_undirected(s.graph);
}

TEST(HopNeighborhood, RespectsHopsAndMask) {
  // Path 0-1-2-3-4.
  std::vector<Edge> e{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  Graph g(Tensor(5, 1), std::vector<int>(5, 0), 1, e);
  std::vector<std::size_t> seed{0};
  EXPECT_TRUE(hop_neighborhood(g, seed, 0).empty());
  EXPECT_EQ(hop_neighborhood(g, seed, 2), (std::vector<std::size_t>{1, 2}));
  std::vector<bool> allowed{true, true, false, true, true};
  EXPECT_EQ(hop_neighborhood(g, seed, 4, allowed), (std::vector<std::size_t>{1}));
}

}  // namespace
}  // namespace fedlog::graphio
