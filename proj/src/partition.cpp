#include "fedlog/partition.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "fedlog/errors.hpp"
#include "fedlog/rng.hpp"

namespace fedlog::partition {

namespace {

constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max();

NodeList sorted(NodeList v) {
  std::sort(v.begin(), v.end());
  return v;
}

NodeList set_union(const NodeList& a, const NodeList& b) {
  NodeList out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<bool> mask_of(std::size_t n, const NodeList& nodes) {
  std::vector<bool> m(n, false);
  for (std::size_t v : nodes) m[v] = true;
  return m;
}

// Degree of each node of `nodes` inside the graph induced on `nodes`.
std::vector<std::size_t> induced_degrees(const Graph& g, const NodeList& nodes) {
  auto in = mask_of(g.num_nodes(), nodes);
  std::vector<std::size_t> deg(g.num_nodes(), 0);
  for (std::size_t v : nodes) {
    for (std::size_t u : g.neighbors(v)) deg[v] += in[u] ? 1 : 0;
  }
  return deg;
}

class RegionGrower {
 public:
  RegionGrower(const Graph& g, std::size_t parts, std::uint64_t seed)
      : g_(g), parts_(parts), owner_(g.num_nodes(), -1), regions_(parts) {
    const std::size_t n = g.num_nodes();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    shuffle(perm.begin(), perm.end(), rng);
    rank_.resize(n);
    for (std::size_t i = 0; i < n; ++i) rank_[perm[i]] = i;
    by_degree_.resize(n);
    std::iota(by_degree_.begin(), by_degree_.end(), 0);
    std::sort(by_degree_.begin(), by_degree_.end(), [&](std::size_t a, std::size_t b) {
      if (g.degree(a) != g.degree(b)) return g.degree(a) > g.degree(b);
      return rank_[a] < rank_[b];
    });
  }

  std::vector<NodeList> run() {
    const std::size_t n = g_.num_nodes();
    std::vector<std::size_t> seeds{by_degree_[0]};
    claim(0, seeds[0]);
    while (seeds.size() < parts_) {
      auto dist = distances_from(seeds);
      std::size_t best = kInf, best_dist = 0;
      for (std::size_t v : by_degree_) {
        if (owner_[v] >= 0) continue;
        if (best == kInf || dist[v] > best_dist) {
          best = v;
          best_dist = dist[v];
        }
      }
      claim(seeds.size(), best);
      seeds.push_back(best);
    }
    std::size_t assigned = parts_;
    while (assigned < n) {
      for (std::size_t p = 0; p < parts_ && assigned < n; ++p) {
        auto& frontier = regions_[p].frontier;
        std::size_t v;
        if (!frontier.empty()) {
          v = std::get<2>(*frontier.begin());
        } else {
          while (owner_[by_degree_[jump_]] >= 0) ++jump_;
          v = by_degree_[jump_];
        }
        claim(p, v);
        ++assigned;
      }
    }
    refine();
    std::vector<NodeList> out(parts_);
    for (std::size_t v = 0; v < n; ++v) out[static_cast<std::size_t>(owner_[v])].push_back(v);
    return out;
  }

 private:
  struct Region {
    // (-gain, rank, node): begin() is the node with most claimed neighbours.
    std::set<std::tuple<long, std::size_t, std::size_t>> frontier;
    std::unordered_map<std::size_t, long> gain;
  };

  std::vector<std::size_t> distances_from(const std::vector<std::size_t>& sources) const {
    std::vector<std::size_t> dist(g_.num_nodes(), kInf);
    std::queue<std::size_t> q;
    for (std::size_t s : sources) {
      dist[s] = 0;
      q.push(s);
    }
    while (!q.empty()) {
      std::size_t v = q.front();
      q.pop();
      for (std::size_t u : g_.neighbors(v)) {
        if (dist[u] == kInf) {
          dist[u] = dist[v] + 1;
          q.push(u);
        }
      }
    }
    return dist;
  }

  void claim(std::size_t p, std::size_t v) {
    owner_[v] = static_cast<int>(p);
    for (Region& r : regions_) {
      if (auto it = r.gain.find(v); it != r.gain.end()) {
        r.frontier.erase({-it->second, rank_[v], v});
        r.gain.erase(it);
      }
    }
    Region& r = regions_[p];
    for (std::size_t u : g_.neighbors(v)) {
      if (owner_[u] >= 0) continue;
      long& gain = r.gain[u];
      if (gain > 0) r.frontier.erase({-gain, rank_[u], u});
      ++gain;
      r.frontier.insert({-gain, rank_[u], u});
    }
  }

  // Greedy boundary moves: a node joins the part holding most of its
  // neighbours when that strictly lowers the cut and both parts stay within
  // +-20% of n/P.
  void refine(std::size_t max_passes = 20) {
    const std::size_t n = g_.num_nodes();
    const double ideal = static_cast<double>(n) / static_cast<double>(parts_);
    const auto hi = std::max<std::size_t>(static_cast<std::size_t>(std::floor(1.2 * ideal)),
                                          (n + parts_ - 1) / parts_);
    const auto lo = std::min<std::size_t>(static_cast<std::size_t>(std::ceil(0.8 * ideal)),
                                          n / parts_);
    std::vector<std::size_t> size(parts_, 0);
    for (int o : owner_) ++size[static_cast<std::size_t>(o)];
    std::vector<std::size_t> order(n);
    for (std::size_t v = 0; v < n; ++v) order[rank_[v]] = v;
    std::vector<long> links(parts_, 0);
    for (std::size_t pass = 0; pass < max_passes; ++pass) {
      bool moved = false;
      for (std::size_t v : order) {
        std::fill(links.begin(), links.end(), 0);
        for (std::size_t u : g_.neighbors(v)) ++links[static_cast<std::size_t>(owner_[u])];
        const auto own = static_cast<std::size_t>(owner_[v]);
        std::size_t best = own;
        for (std::size_t q = 0; q < parts_; ++q) {
          if (links[q] > links[best] && size[q] + 1 <= hi) best = q;
        }
        if (best == own || size[own] <= lo) continue;
        owner_[v] = static_cast<int>(best);
        --size[own];
        ++size[best];
        moved = true;
      }
      if (!moved) break;
    }
  }

  const Graph& g_;
  std::size_t parts_;
  std::vector<int> owner_;
  std::vector<Region> regions_;
  std::vector<std::size_t> rank_;
  std::vector<std::size_t> by_degree_;
  std::size_t jump_ = 0;
};

}  // namespace

std::vector<NodeList> partition_graph(const Graph& g, std::size_t parts, std::uint64_t seed) {
  if (parts == 0) throw ContractError("partition_graph: need at least one part");
  if (parts > g.num_nodes()) {
    throw ContractError("partition_graph: " + std::to_string(parts) + " parts for " +
                        std::to_string(g.num_nodes()) + " nodes");
  }
  return RegionGrower(g, parts, seed).run();
}

std::size_t edge_cut(const Graph& g, const std::vector<NodeList>& parts) {
  std::vector<std::size_t> owner(g.num_nodes(), kInf);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (std::size_t v : parts[p]) owner[v] = p;
  }
  std::size_t cut = 0;
  for (auto [a, b] : g.edge_list()) cut += owner[a] != owner[b] ? 1 : 0;
  return cut;
}

std::vector<int> select_missing_classes(std::span<const std::size_t> counts,
                                        std::size_t min_nodes) {
  std::vector<int> present;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) present.push_back(static_cast<int>(c));
  }
  if (present.size() < 2) {
    throw ContractError("select_missing_classes: need at least two present classes, got " +
                        std::to_string(present.size()));
  }
  std::stable_sort(present.begin(), present.end(),
                   [&](int a, int b) { return counts[a] < counts[b]; });
  std::vector<int> out;
  std::size_t total = 0;
  for (int c : present) {
    if (out.size() + 1 == present.size()) break;
    out.push_back(c);
    total += counts[c];
    if (total >= min_nodes) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

Split stratified_split(const Graph& g, std::span<const std::size_t> nodes, SplitRatios ratios,
                       Rng& rng) {
  std::vector<NodeList> by_class(g.num_classes());
  for (std::size_t v : nodes) by_class[static_cast<std::size_t>(g.label(v))].push_back(v);
  Split s;
  for (NodeList& members : by_class) {
    const std::size_t n = members.size();
    if (n == 0) continue;
    shuffle(members.begin(), members.end(), rng);
    std::size_t n_train =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratios.train * n)));
    n_train = std::min(n_train, n);
    std::size_t n_valid =
        std::min(n - n_train, static_cast<std::size_t>(std::lround(ratios.valid * n)));
    s.train.insert(s.train.end(), members.begin(), members.begin() + n_train);
    s.valid.insert(s.valid.end(), members.begin() + n_train, members.begin() + n_train + n_valid);
    s.test.insert(s.test.end(), members.begin() + n_train + n_valid, members.end());
  }
  s.train = sorted(std::move(s.train));
  s.valid = sorted(std::move(s.valid));
  s.test = sorted(std::move(s.test));
  return s;
}

bool ClientPart::is_missing(int c) const {
  return std::binary_search(missing_classes.begin(), missing_classes.end(), c);
}

bool FederatedScenario::operator==(const FederatedScenario& o) const {
  return to_json(*this) == to_json(o);
}

FederatedScenario build_scenario(const Graph& g, const ScenarioOptions& options) {
  if (options.clients == 0) throw ContractError("build_scenario: need at least one client");
  const std::size_t n = g.num_nodes();
  const std::size_t n_classes = g.num_classes();
  SeedSequence seq(options.seed);

  FederatedScenario s;
  s.options = options;
  s.n_nodes = n;
  s.n_classes = n_classes;

  std::vector<bool> cropped(n, false);
  if (options.open_set) {
    NodeList perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = seq.stream("scenario.crop");
    shuffle(perm.begin(), perm.end(), rng);
    auto m = static_cast<std::size_t>(std::lround(options.crop_fraction * n));
    s.crop = sorted(NodeList(perm.begin(), perm.begin() + std::min(m, n)));
    for (std::size_t v : s.crop) cropped[v] = true;
  }
  NodeList retained;
  for (std::size_t v = 0; v < n; ++v) {
    if (!cropped[v]) retained.push_back(v);
  }

  const std::size_t K = options.clients;
  if (K + 1 > retained.size()) {
    throw ScenarioError("cannot split " + std::to_string(retained.size()) + " nodes into " +
                        std::to_string(K + 1) + " parts");
  }
  auto sub = graphio::induced_subgraph(g, retained);
  auto local_parts = partition_graph(sub.graph, K + 1, seq.derive("scenario.partition"));
  std::vector<NodeList> parts;
  for (const NodeList& lp : local_parts) {
    NodeList gp;
    for (std::size_t i : lp) gp.push_back(sub.global_ids[i]);
    parts.push_back(sorted(std::move(gp)));
  }

  std::vector<bool> in_clients(n, false);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t v : parts[k]) in_clients[v] = true;
  }

  for (std::size_t k = 0; k < K; ++k) {
    const NodeList& part = parts[k];
    if (part.size() < n_classes) {
      throw ScenarioError("client " + std::to_string(k) + " has " + std::to_string(part.size()) +
                          " nodes, fewer than the " + std::to_string(n_classes) + " classes");
    }
    auto counts = graphio::class_counts(g, part);
    ClientPart c;
    std::vector<int> selected;
    if (options.excise_missing) {
      try {
        selected = select_missing_classes(counts, options.min_missing_nodes);
      } catch (const ContractError& e) {
        throw ScenarioError("client " + std::to_string(k) + ": " + e.what());
      }
    }
    for (std::size_t cls = 0; cls < n_classes; ++cls) {
      bool sel = std::find(selected.begin(), selected.end(), static_cast<int>(cls)) != selected.end();
      if (sel || counts[cls] == 0) c.missing_classes.push_back(static_cast<int>(cls));
    }
    for (std::size_t v : part) {
      bool sel = std::find(selected.begin(), selected.end(), g.label(v)) != selected.end();
      (sel ? c.excised : c.nodes).push_back(v);
    }
    Rng split_rng = seq.stream("scenario.split", k);
    c.split = stratified_split(g, c.nodes, options.ratios, split_rng);
    if (options.open_set) {
      std::vector<bool> allowed = cropped;
      c.unseen = graphio::hop_neighborhood(g, c.nodes, options.hops, allowed);
    } else {
      auto expansion = graphio::hop_neighborhood(g, c.nodes, options.hops, in_clients);
      c.unseen = set_union(expansion, c.excised);
    }
    s.clients.push_back(std::move(c));
  }

  s.new_client.nodes = parts[K];
  Rng split_rng = seq.stream("scenario.split", K);
  s.new_client.split = stratified_split(g, s.new_client.nodes, options.ratios, split_rng);
  return s;
}

NodeList expanded_nodes(const FederatedScenario& s, std::size_t k) {
  const ClientPart& c = s.clients.at(k);
  return set_union(c.nodes, c.unseen);
}

NodeList missing_class_test(const Graph& g, const FederatedScenario& s, std::size_t k) {
  const ClientPart& c = s.clients.at(k);
  NodeList out;
  for (std::size_t v : c.unseen) {
    if (c.is_missing(g.label(v))) out.push_back(v);
  }
  return out;
}

NodeList unseen_node_test(const Graph& g, const FederatedScenario& s, std::size_t k) {
  const ClientPart& c = s.clients.at(k);
  NodeList out;
  for (std::size_t v : c.unseen) {
    if (!c.is_missing(g.label(v))) out.push_back(v);
  }
  return out;
}

std::string to_string(ContributorMode m) {
  switch (m) {
    case ContributorMode::HeadDegree: return "head_degree";
    case ContributorMode::TailDegree: return "tail_degree";
    case ContributorMode::BalancedDegree: return "balanced_degree";
    case ContributorMode::ClassImbalance: return "class_imbalance";
  }
  return "unknown";
}

ContributorMode contributor_mode_from_string(const std::string& s) {
  for (auto m : {ContributorMode::HeadDegree, ContributorMode::TailDegree,
                 ContributorMode::BalancedDegree, ContributorMode::ClassImbalance}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown contributor mode '" + s + "'");
}

std::size_t imbalance_count(std::size_t n_target, std::size_t min_count, double imbalance_rate) {
  double x = static_cast<double>(n_target) + imbalance_rate / 10.0 * static_cast<double>(min_count);
  return x <= 0.0 ? 0 : static_cast<std::size_t>(std::lround(x));
}

FederatedScenario build_reliability_scenario(const Graph& g, const ScenarioOptions& options,
                                             const ReliabilityConfig& config) {
  if (config.imbalance_rate < -5.0 || config.imbalance_rate > 5.0) {
    throw ContractError("imbalance rate must lie in [-5, 5]");
  }
  if (config.target_class < 0 || static_cast<std::size_t>(config.target_class) >= g.num_classes()) {
    throw ContractError("target class out of range");
  }
  ScenarioOptions opts = options;
  opts.excise_missing = false;
  FederatedScenario s = build_scenario(g, opts);
  if (config.receiver >= s.clients.size()) throw ContractError("receiver id out of range");
  const int target = config.target_class;
  SeedSequence seq(options.seed);

  auto& recv = s.clients[config.receiver].split.train;
  std::erase_if(recv, [&](std::size_t v) { return g.label(v) == target; });

  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    if (k == config.receiver) continue;
    ClientPart& c = s.clients[k];
    std::vector<NodeList> pool(g.num_classes());
    for (std::size_t v : c.split.train) pool[static_cast<std::size_t>(g.label(v))].push_back(v);
    Rng rng = seq.stream("reliability.sample", k);
    for (NodeList& p : pool) shuffle(p.begin(), p.end(), rng);
    const std::string who = "contributor " + std::to_string(k);

    NodeList train;
    if (config.mode == ContributorMode::ClassImbalance) {
      std::size_t n_avail = pool[static_cast<std::size_t>(target)].size();
      std::size_t min_other = kInf;
      for (std::size_t cls = 0; cls < pool.size(); ++cls) {
        if (static_cast<int>(cls) != target && !pool[cls].empty()) {
          min_other = std::min(min_other, pool[cls].size());
        }
      }
      if (min_other == kInf) throw ScenarioError(who + " has no non-target training nodes");
      std::size_t n_t = std::min(n_avail, min_other / 2);
      if (n_t == 0) {
        throw ScenarioError(who + " cannot hold target-class nodes at imbalance rate " +
                            std::to_string(config.imbalance_rate));
      }
      std::size_t n_k = imbalance_count(n_t, min_other, config.imbalance_rate);
      for (std::size_t cls = 0; cls < pool.size(); ++cls) {
        std::size_t take = static_cast<int>(cls) == target ? n_t : std::min(n_k, pool[cls].size());
        train.insert(train.end(), pool[cls].begin(), pool[cls].begin() + take);
      }
    } else {
      auto deg = induced_degrees(g, c.nodes);
      for (std::size_t cls = 0; cls < pool.size(); ++cls) {
        NodeList head, tail;
        for (std::size_t v : pool[cls]) {
          (static_cast<double>(deg[v]) > config.lambda ? head : tail).push_back(v);
        }
        std::size_t m = std::min(head.size(), tail.size());
        if (static_cast<int>(cls) == target && m == 0) {
          throw ScenarioError(who + " lacks head- or tail-degree training nodes of class " +
                              std::to_string(target));
        }
        std::size_t from_head = 0;
        switch (config.mode) {
          case ContributorMode::HeadDegree: from_head = m; break;
          case ContributorMode::TailDegree: from_head = 0; break;
          default: from_head = (m + 1) / 2; break;
        }
        train.insert(train.end(), head.begin(), head.begin() + from_head);
        train.insert(train.end(), tail.begin(), tail.begin() + (m - from_head));
      }
    }
    c.split.train = sorted(std::move(train));
  }
  return s;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json split_json(const Split& s) {
  return {{"train", s.train}, {"valid", s.valid}, {"test", s.test}};
}

Split split_from(const nlohmann::json& j) {
  return {j.at("train").get<NodeList>(), j.at("valid").get<NodeList>(),
          j.at("test").get<NodeList>()};
}

}  // namespace

nlohmann::json to_json(const FederatedScenario& s) {
  const auto& o = s.options;
  nlohmann::json clients = nlohmann::json::array();
  for (const ClientPart& c : s.clients) {
    clients.push_back({{"nodes", c.nodes},
                       {"split", split_json(c.split)},
                       {"missing_classes", c.missing_classes},
                       {"excised", c.excised},
                       {"unseen", c.unseen}});
  }
  return {
      {"format", "fedlog-scenario"},
      {"version", 1},
      {"options",
       {{"clients", o.clients},
        {"open_set", o.open_set},
        {"hops", o.hops},
        {"min_missing_nodes", o.min_missing_nodes},
        {"train_ratio", o.ratios.train},
        {"valid_ratio", o.ratios.valid},
        {"crop_fraction", o.crop_fraction},
        {"excise_missing", o.excise_missing},
        {"seed", o.seed}}},
      {"n_nodes", s.n_nodes},
      {"n_classes", s.n_classes},
      {"clients", clients},
      {"new_client", {{"nodes", s.new_client.nodes}, {"split", split_json(s.new_client.split)}}},
      {"crop", s.crop},
  };
}

FederatedScenario scenario_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "fedlog-scenario") throw FormatError("not a scenario document");
    FederatedScenario s;
    const auto& o = j.at("options");
    s.options.clients = o.at("clients").get<std::size_t>();
    s.options.open_set = o.at("open_set").get<bool>();
    s.options.hops = o.at("hops").get<std::size_t>();
    s.options.min_missing_nodes = o.at("min_missing_nodes").get<std::size_t>();
    s.options.ratios.train = o.at("train_ratio").get<double>();
    s.options.ratios.valid = o.at("valid_ratio").get<double>();
    s.options.crop_fraction = o.at("crop_fraction").get<double>();
    s.options.excise_missing = o.at("excise_missing").get<bool>();
    s.options.seed = o.at("seed").get<std::uint64_t>();
    s.n_nodes = j.at("n_nodes").get<std::size_t>();
    s.n_classes = j.at("n_classes").get<std::size_t>();
    for (const auto& cj : j.at("clients")) {
      ClientPart c;
      c.nodes = cj.at("nodes").get<NodeList>();
      c.split = split_from(cj.at("split"));
      c.missing_classes = cj.at("missing_classes").get<std::vector<int>>();
      c.excised = cj.at("excised").get<NodeList>();
      c.unseen = cj.at("unseen").get<NodeList>();
      s.clients.push_back(std::move(c));
    }
    s.new_client.nodes = j.at("new_client").at("nodes").get<NodeList>();
    s.new_client.split = split_from(j.at("new_client").at("split"));
    s.crop = j.at("crop").get<NodeList>();
    if (s.clients.size() != s.options.clients) throw FormatError("client count mismatch");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scenario document: ") + e.what());
  }
}

void save_scenario(const FederatedScenario& s, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot write " + file.string());
  out << to_json(s).dump(1) << '\n';
}

FederatedScenario load_scenario(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

std::string statistics_table(const Graph& g, const FederatedScenario& s) {
  const std::size_t C = s.n_classes;
  using Row = std::array<std::size_t, 5>;
  auto block = [&](std::size_t k) {
    std::vector<Row> rows(C, Row{});
    const ClientPart& c = s.clients[k];
    auto add = [&](const NodeList& nodes, std::size_t col) {
      for (std::size_t v : nodes) ++rows[static_cast<std::size_t>(g.label(v))][col];
    };
    add(c.split.train, 0);
    add(c.split.valid, 1);
    add(c.split.test, 2);
    add(unseen_node_test(g, s, k), 3);
    add(missing_class_test(g, s, k), 4);
    return rows;
  };
  std::ostringstream os;
  auto emit = [&](const std::string& name, const std::vector<Row>& rows) {
    for (std::size_t c = 0; c < C; ++c) {
      os << std::left << std::setw(12) << (c == 0 ? name : "") << std::right << std::setw(6) << c;
      for (std::size_t x : rows[c]) os << std::setw(8) << x;
      os << '\n';
    }
  };
  os << std::left << std::setw(12) << "dataset" << std::right << std::setw(6) << "class"
     << std::setw(8) << "train" << std::setw(8) << "valid" << std::setw(8) << "test"
     << std::setw(8) << "unseen" << std::setw(8) << "missing" << '\n';
  std::vector<std::vector<Row>> blocks;
  std::vector<Row> global(C, Row{});
  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    blocks.push_back(block(k));
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < 5; ++i) global[c][i] += blocks.back()[c][i];
    }
  }
  emit("Global", global);
  for (std::size_t k = 0; k < blocks.size(); ++k) emit("Client " + std::to_string(k), blocks[k]);
  std::vector<Row> nc(C, Row{});
  for (std::size_t v : s.new_client.split.train) ++nc[static_cast<std::size_t>(g.label(v))][0];
  for (std::size_t v : s.new_client.split.valid) ++nc[static_cast<std::size_t>(g.label(v))][1];
  for (std::size_t v : s.new_client.split.test) ++nc[static_cast<std::size_t>(g.label(v))][2];
  emit("New Client", nc);
  return os.str();
}

}  // namespace fedlog::partition
