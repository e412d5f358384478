#include "fedlog/graphio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fedlog/errors.hpp"
#include "fedlog/rng.hpp"

namespace fedlog::graphio {

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    if (s.front() == '+') s.remove_prefix(1);
  }
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot open " + p.string());
  return in;
}

void append_double(std::string& buf, double v) {
  char tmp[32];
  auto [ptr, ec] = std::to_chars(tmp, tmp + sizeof tmp, v);
  buf.append(tmp, ptr);
}

}  // namespace

Graph::Graph(Tensor features, std::vector<int> labels, std::size_t n_classes,
             std::span<const Edge> edges)
    : features_(std::move(features)), labels_(std::move(labels)), n_classes_(n_classes) {
  const std::size_t n = labels_.size();
  if (features_.rows() != n) {
    throw FormatError("feature matrix has " + std::to_string(features_.rows()) + " rows for " +
                      std::to_string(n) + " labels");
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (labels_[v] < 0 || static_cast<std::size_t>(labels_[v]) >= n_classes_) {
      throw FormatError("node " + std::to_string(v) + " has label " + std::to_string(labels_[v]) +
                        " outside [0, " + std::to_string(n_classes_) + ")");
    }
  }
  std::vector<Edge> dir;
  dir.reserve(edges.size() * 2);
  for (auto [a, b] : edges) {
    if (a >= n || b >= n) {
      throw FormatError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                        ") references a node outside [0, " + std::to_string(n) + ")");
    }
    if (a == b) throw FormatError("self-loop on node " + std::to_string(a));
    dir.emplace_back(a, b);
    dir.emplace_back(b, a);
  }
  std::sort(dir.begin(), dir.end());
  dir.erase(std::unique(dir.begin(), dir.end()), dir.end());
  adj_.offsets.assign(n + 1, 0);
  for (auto [a, b] : dir) ++adj_.offsets[a + 1];
  for (std::size_t v = 0; v < n; ++v) adj_.offsets[v + 1] += adj_.offsets[v];
  adj_.indices.reserve(dir.size());
  for (auto [a, b] : dir) adj_.indices.push_back(b);
}

std::vector<Edge> Graph::edge_list() const {
  std::vector<Edge> out;
  out.reserve(num_edges());
  for (std::size_t v = 0; v < num_nodes(); ++v) {
    for (std::size_t u : neighbors(v)) {
      if (v < u) out.emplace_back(v, u);
    }
  }
  return out;
}

Graph load_graph(const std::filesystem::path& dir) {
  const auto nodes_path = dir / "nodes.tsv";
  const auto edges_path = dir / "edges.tsv";
  const std::string nodes_name = nodes_path.string();
  const std::string edges_name = edges_path.string();

  std::ifstream nodes_in = open_in(nodes_path);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(nodes_in, line)) throw ParseError(nodes_name, 1, "missing header");
  ++lineno;
  {
    auto cols = split(line, '\t');
    if (cols.size() != 3 || cols[0] != "node_id" || cols[1] != "label" ||
        cols[2].substr(0, 8) != "features") {
      throw ParseError(nodes_name, lineno, "expected header node_id<TAB>label<TAB>features");
    }
  }

  struct Row {
    std::size_t id;
    int label;
    std::vector<double> x;
  };
  std::vector<Row> rows;
  std::size_t dim = 0;
  bool dim_set = false;
  int max_label = -1;
  while (std::getline(nodes_in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 3) {
      throw ParseError(nodes_name, lineno,
                       "expected 3 tab-separated fields, got " + std::to_string(cols.size()));
    }
    Row r{};
    if (!parse_number(cols[0], r.id)) throw ParseError(nodes_name, lineno, "bad node_id");
    if (!parse_number(cols[1], r.label) || r.label < 0) {
      throw ParseError(nodes_name, lineno, "bad label");
    }
    if (!cols[2].empty()) {
      for (std::string_view f : split(cols[2], ',')) {
        double v;
        if (!parse_number(f, v)) {
          throw ParseError(nodes_name, lineno, "bad feature value '" + std::string(f) + "'");
        }
        r.x.push_back(v);
      }
    }
    if (!dim_set) {
      dim = r.x.size();
      dim_set = true;
    } else if (r.x.size() != dim) {
      throw FormatError(nodes_name + ":" + std::to_string(lineno) + ": node has " +
                        std::to_string(r.x.size()) + " features, expected " + std::to_string(dim));
    }
    max_label = std::max(max_label, r.label);
    rows.push_back(std::move(r));
  }

  const std::size_t n = rows.size();
  std::vector<int> labels(n, -1);
  Tensor features(n, dim);
  for (const Row& r : rows) {
    if (r.id >= n) {
      throw FormatError(nodes_name + ": node ids must be contiguous from 0; found " +
                        std::to_string(r.id) + " with " + std::to_string(n) + " nodes");
    }
    if (labels[r.id] != -1) {
      throw FormatError(nodes_name + ": duplicate node id " + std::to_string(r.id));
    }
    labels[r.id] = r.label;
    std::copy(r.x.begin(), r.x.end(), features.row(r.id).begin());
  }

  std::size_t n_classes = static_cast<std::size_t>(max_label + 1);
  if (const auto meta = dir / "meta.json"; std::filesystem::exists(meta)) {
    std::ifstream in = open_in(meta);
    nlohmann::json j;
    try {
      in >> j;
      n_classes = j.at("n_classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(meta.string() + ": " + e.what());
    }
    if (max_label >= 0 && static_cast<std::size_t>(max_label) >= n_classes) {
      throw FormatError(nodes_name + ": label " + std::to_string(max_label) +
                        " is not below the declared class count " + std::to_string(n_classes));
    }
  }

  std::ifstream edges_in = open_in(edges_path);
  lineno = 0;
  if (!std::getline(edges_in, line)) throw ParseError(edges_name, 1, "missing header");
  ++lineno;
  {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto cols = split(line, '\t');
    if (cols.size() != 2 || cols[0] != "src" || cols[1] != "dst") {
      throw ParseError(edges_name, lineno, "expected header src<TAB>dst");
    }
  }
  std::vector<Edge> edges;
  while (std::getline(edges_in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    std::size_t a, b;
    if (cols.size() != 2 || !parse_number(cols[0], a) || !parse_number(cols[1], b)) {
      throw ParseError(edges_name, lineno, "expected src<TAB>dst node ids");
    }
    if (a >= n || b >= n) {
      throw FormatError(edges_name + ":" + std::to_string(lineno) + ": edge endpoint outside [0, " +
                        std::to_string(n) + ")");
    }
    if (a != b) edges.emplace_back(a, b);
  }
  return Graph(std::move(features), std::move(labels), n_classes, edges);
}

void save_graph(const Graph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "nodes.tsv", std::ios::binary);
    std::string buf = "node_id\tlabel\tfeatures\n";
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      buf += std::to_string(v);
      buf += '\t';
      buf += std::to_string(g.label(v));
      buf += '\t';
      auto row = g.features().row(v);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (j) buf += ',';
        append_double(buf, row[j]);
      }
      buf += '\n';
    }
    out << buf;
  }
  {
    std::ofstream out(dir / "edges.tsv", std::ios::binary);
    std::string buf = "src\tdst\n";
    for (auto [a, b] : g.edge_list()) {
      buf += std::to_string(a);
      buf += '\t';
      buf += std::to_string(b);
      buf += '\n';
    }
    out << buf;
  }
  std::ofstream meta(dir / "meta.json", std::ios::binary);
  meta << nlohmann::json{{"n_classes", g.num_classes()}}.dump() << '\n';
}

Graph generate_sbm(const SbmSpec& spec) {
  if (spec.block_sizes.empty()) throw ContractError("generate_sbm: no blocks");
  for (std::size_t b : spec.block_sizes) {
    if (b == 0) throw ContractError("generate_sbm: empty block");
  }
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(spec.p_intra) || !prob_ok(spec.p_inter)) {
    throw ContractError("generate_sbm: probabilities must lie in [0, 1]");
  }
  SeedSequence seeds(spec.seed);
  const std::size_t k = spec.block_sizes.size();
  const std::size_t d = spec.feature_dim;

  std::vector<int> labels;
  for (std::size_t b = 0; b < k; ++b) labels.insert(labels.end(), spec.block_sizes[b], static_cast<int>(b));
  const std::size_t n = labels.size();

  Rng mean_rng = seeds.stream("sbm.means");
  Tensor means(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    double sq = 0.0;
    for (double& v : means.row(c)) {
      v = standard_normal(mean_rng);
      sq += v * v;
    }
    double s = sq > 0 ? spec.separation / std::sqrt(sq) : 0.0;
    for (double& v : means.row(c)) v *= s;
  }
  Rng feat_rng = seeds.stream("sbm.features");
  Tensor features(n, d);
  for (std::size_t v = 0; v < n; ++v) {
    auto mu = means.row(static_cast<std::size_t>(labels[v]));
    auto row = features.row(v);
    for (std::size_t j = 0; j < d; ++j) row[j] = mu[j] + standard_normal(feat_rng);
  }

  Rng edge_rng = seeds.stream("sbm.edges");
  std::vector<Edge> edges;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      double p = labels[a] == labels[b] ? spec.p_intra : spec.p_inter;
      if (uniform01(edge_rng) < p) edges.emplace_back(a, b);
    }
  }
  return Graph(std::move(features), std::move(labels), k, edges);
}

std::vector<std::size_t> class_counts(const Graph& g, std::span<const std::size_t> nodes) {
  std::vector<std::size_t> counts(g.num_classes(), 0);
  for (std::size_t v : nodes) ++counts[static_cast<std::size_t>(g.label(v))];
  return counts;
}

std::vector<double> class_rates(const Graph& g, std::span<const std::size_t> nodes) {
  if (nodes.empty()) throw ContractError("class_rates: empty node set");
  auto counts = class_counts(g, nodes);
  std::vector<double> r(counts.size());
  const double total = static_cast<double>(nodes.size());
  for (std::size_t c = 0; c < counts.size(); ++c) r[c] = static_cast<double>(counts[c]) / total;
  return r;
}

DegreeSplit degree_headness_split(const Graph& g, double lambda,
                                  std::span<const std::size_t> nodes) {
  DegreeSplit s;
  for (std::size_t v : nodes) {
    (static_cast<double>(g.degree(v)) > lambda ? s.head : s.tail).push_back(v);
  }
  return s;
}

DegreeSplit degree_headness_split(const Graph& g, double lambda) {
  std::vector<std::size_t> all(g.num_nodes());
  for (std::size_t v = 0; v < all.size(); ++v) all[v] = v;
  return degree_headness_split(g, lambda, all);
}

std::vector<std::size_t> Subgraph::to_local(std::span<const std::size_t> global) const {
  std::vector<std::size_t> lookup;
  std::size_t max_id = 0;
  for (std::size_t v : global_ids) max_id = std::max(max_id, v);
  lookup.assign(max_id + 1, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < global_ids.size(); ++i) lookup[global_ids[i]] = i;
  std::vector<std::size_t> out;
  out.reserve(global.size());
  for (std::size_t v : global) {
    if (v >= lookup.size() || lookup[v] == std::numeric_limits<std::size_t>::max()) {
      throw ContractError("node " + std::to_string(v) + " is not in the subgraph");
    }
    out.push_back(lookup[v]);
  }
  return out;
}

Subgraph induced_subgraph(const Graph& g, std::span<const std::size_t> nodes) {
  constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> local(g.num_nodes(), kAbsent);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] >= g.num_nodes()) throw ContractError("induced_subgraph: node out of range");
    if (local[nodes[i]] != kAbsent) throw ContractError("induced_subgraph: duplicate node");
    local[nodes[i]] = i;
  }
  Tensor x(nodes.size(), g.feature_dim());
  std::vector<int> labels(nodes.size());
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::size_t v = nodes[i];
    std::copy(g.features().row(v).begin(), g.features().row(v).end(), x.row(i).begin());
    labels[i] = g.label(v);
    for (std::size_t u : g.neighbors(v)) {
      if (local[u] != kAbsent && i < local[u]) edges.emplace_back(i, local[u]);
    }
  }
  return Subgraph{Graph(std::move(x), std::move(labels), g.num_classes(), edges),
                  std::vector<std::size_t>(nodes.begin(), nodes.end())};
}

std::vector<std::size_t> hop_neighborhood(const Graph& g, std::span<const std::size_t> seeds,
                                          std::size_t hops, const std::vector<bool>& allowed) {
  std::vector<char> seen(g.num_nodes(), 0);
  std::vector<std::size_t> frontier;
  for (std::size_t v : seeds) {
    if (!seen[v]) {
      seen[v] = 1;
      frontier.push_back(v);
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t step = 0; step < hops && !frontier.empty(); ++step) {
    std::vector<std::size_t> next;
    for (std::size_t v : frontier) {
      for (std::size_t u : g.neighbors(v)) {
        if (seen[u] || (!allowed.empty() && !allowed[u])) continue;
        seen[u] = 1;
        next.push_back(u);
        out.push_back(u);
      }
    }
    frontier = std::move(next);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fedlog::graphio
