// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// 0 when nothing failed, 1 when something failed, 77 when every selected
// criterion was skipped.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "fedlog/cli.hpp"
#include "fedlog/errors.hpp"
#include "fedlog/federation.hpp"
#include "fedlog/model.hpp"
#include "fedlog/promptgen.hpp"

namespace fs = std::filesystem;
using namespace fedlog;
using federation::Setting;
using graphio::Graph;
using model::LocalModel;
using nlohmann::json;
using partition::FederatedScenario;
using tensor::Csr;
using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) {
  return {ok ? Status::Pass : Status::Fail, std::move(detail)};
}

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("fedlog_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

Tensor uniform_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& v : t.values()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Desk fixture shared by the training criteria.

cli::RunConfig desk_config() {
  cli::RunConfig c;
  c.sbm.seed = 1;
  c.rounds = 30;
  c.per_class = 5;
  c.hidden = 32;
  c.embed = 16;
  c.lr = 2e-2;
  c.pg_inits = 2;
  c.pg_epochs = 10;
  c.pg_hidden = 32;
  c.seeds = {0, 1, 2};
  return c;
}

struct DeskRun {
  double missing_class = 0.0;
  std::vector<std::vector<double>> gamma;  // per client
  std::vector<std::vector<double>> rates;
  std::vector<std::vector<int>> missing;
  federation::CommLedger ledger;
  std::size_t shared = 0, bank = 0;
};

class Desk {
 public:
  Desk() : config_(desk_config()), dir_(scratch("desk")), graph_(cli::load_dataset(config_)) {
    std::ostringstream quiet;
    cli::cmd_partition(config_, dir_, quiet);
    cli::cmd_pretrain_pg(config_, dir_, quiet);
  }

  const cli::RunConfig& config() const { return config_; }
  const Graph& graph() const { return graph_; }

  FederatedScenario scenario(std::uint64_t seed) const {
    return partition::load_scenario(cli::seed_dir(dir_, seed) / "scenario.json");
  }

  DeskRun run(std::uint64_t seed, const std::string& variant) const {
    cli::RunConfig c = config_;
    c.variant = variant;
    FederatedScenario s = scenario(seed);
    auto bank = promptgen::load_generators(cli::seed_dir(dir_, seed) / "generators.bin");
    federation::Protocol p(graph_, s, cli::protocol_config(c, seed), bank);
    while (!p.finished()) p.step();
    auto best = p.best_models();
    DeskRun out;
    out.missing_class = federation::evaluate(best, graph_, s, Setting::MissingClass).mean.value_or(0.0);
    for (std::size_t k = 0; k < p.clients().size(); ++k) {
      out.gamma.push_back(p.clients()[k].model.gamma);
      out.rates.push_back(p.clients()[k].model.rates);
      out.missing.push_back(s.clients[k].missing_classes);
    }
    out.ledger = p.ledger();
    out.shared = p.global().shared_size();
    out.bank = p.global().config.bank_rows() * p.global().config.feature_dim;
    return out;
  }

 private:
  cli::RunConfig config_;
  fs::path dir_;
  Graph graph_;
};

// ---------------------------------------------------------------------------
// Cora criteria (1-3)

struct CoraResults {
  double fedlog_seen = 0, fedlog_mc = 0, fedavg_mc = 0, local_mc = 0, gn_seen = 0;
};

double setting_mean(const fs::path& results, const std::string& setting) {
  json j = json::parse(read_file(results));
  const json& v = j["settings"][setting]["mean"];
  return v.is_null() ? std::nan("") : v.get<double>();
}

struct CoraBudget {
  std::size_t rounds = 100;
  std::size_t pg_inits = 20;
  std::size_t pg_epochs = 100;
};

CoraResults run_cora(const fs::path& dataset, const CoraBudget& budget) {
  cli::RunConfig c;
  c.dataset = dataset.string();
  c.rounds = budget.rounds;
  c.pg_inits = budget.pg_inits;
  c.pg_epochs = budget.pg_epochs;
  fs::path out = scratch("cora");
  std::ostream& log = std::cerr;
  cli::cmd_partition(c, out, log);
  cli::cmd_pretrain_pg(c, out, log);
  CoraResults r;
  for (const char* alg : {"FedLoG", "FedAvg", "Local"}) {
    c.algorithm = alg;
    cli::cmd_train(c, out, log);
  }
  fs::path results = out / "results_FedLoG.json";
  r.fedlog_seen = setting_mean(results, "SeenGraph");
  r.fedlog_mc = setting_mean(results, "MissingClass");
  r.fedavg_mc = setting_mean(out / "results_FedAvg.json", "MissingClass");
  r.local_mc = setting_mean(out / "results_Local.json", "MissingClass");

  c.algorithm = "FedLoG";
  c.noise = {federation::NoiseMechanism::Gaussian, 0.01};
  Graph g = cli::load_dataset(c);
  std::vector<double> seen;
  for (std::uint64_t seed : c.seeds) {
    FederatedScenario s = partition::load_scenario(cli::seed_dir(out, seed) / "scenario.json");
    auto gens = promptgen::load_generators(cli::seed_dir(out, seed) / "pg_clients.bin");
    auto bank = promptgen::aggregate_generators(gens, federation::server_rates(g, s, c.noise, seed))
                    .per_class;
    federation::Protocol p(g, s, cli::protocol_config(c, seed), bank);
    while (!p.finished()) p.step();
    auto best = p.best_models();
    seen.push_back(federation::evaluate(best, g, s, Setting::SeenGraph).mean.value_or(0.0));
    log << "GN(0.01) seed " << seed << ": SeenGraph " << num(seen.back()) << "\n";
  }
  r.gn_seen = mean_of(seen);
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 7: finite differences on every primitive.

double central_rel_error(const std::function<Var(Tape&, std::vector<Var>&)>& build,
                         std::vector<Tensor> inputs, std::uint64_t seed) {
  Rng wrng(seed);
  Tensor weights;
  auto loss_of = [&](Tape& tape, std::vector<Var>& vars) {
    Var out = build(tape, vars);
    if (weights.size() == 0) weights = uniform_tensor(out.rows(), out.cols(), wrng);
    return tensor::sum(tensor::mul(out, tape.constant(weights)));
  };

  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.input(t, true));
  Var loss = loss_of(tape, vars);
  auto grads = tape.grad_wrt(loss, vars);

  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      double orig = inputs[a][i];
      auto eval = [&](double v) {
        inputs[a][i] = v;
        Tape t;
        std::vector<Var> vs;
        for (const Tensor& x : inputs) vs.push_back(t.input(x, true));
        return loss_of(t, vs).value().item();
      };
      double fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
      inputs[a][i] = orig;
      double an = grads[a][i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
  return worst;
}

Outcome criterion_autodiff() {
  using namespace tensor;
  Rng rng(7);
  auto u = [&](std::size_t r, std::size_t c) { return uniform_tensor(r, c, rng); };
  auto pos = [&](std::size_t r, std::size_t c) { return uniform_tensor(r, c, rng, 0.5, 2.0); };
  Csr adj;
  adj.offsets = {0, 2, 3, 3};
  adj.indices = {1, 2, 0};
  const std::vector<std::size_t> rows = {2, 0, 2};
  const std::vector<double> alpha = {0.2, 0.7, 0.5};

  using Build = std::function<Var(Tape&, std::vector<Var>&)>;
  struct Case {
    std::string name;
    Build build;
    std::vector<Tensor> inputs;
  };
  std::vector<Case> cases = {
      {"matmul", [](Tape&, auto& v) { return matmul(v[0], v[1]); }, {u(3, 4), u(4, 2)}},
      {"add", [](Tape&, auto& v) { return add(v[0], v[1]); }, {u(3, 4), u(3, 4)}},
      {"add_broadcast", [](Tape&, auto& v) { return add(v[0], v[1]); }, {u(3, 4), u(1, 4)}},
      {"sub", [](Tape&, auto& v) { return sub(v[0], v[1]); }, {u(3, 4), u(3, 1)}},
      {"mul", [](Tape&, auto& v) { return mul(v[0], v[1]); }, {u(3, 4), u(3, 4)}},
      {"scale", [](Tape&, auto& v) { return scale(v[0], -1.7); }, {u(3, 4)}},
      {"concat_cols", [](Tape&, auto& v) { return concat_cols(v[0], v[1]); }, {u(3, 2), u(3, 3)}},
      {"sum", [](Tape&, auto& v) { return sum(v[0]); }, {u(3, 4)}},
      {"mean_rows", [](Tape&, auto& v) { return mean_rows(v[0]); }, {u(3, 4)}},
      {"mean_cols", [](Tape&, auto& v) { return mean_cols(v[0]); }, {u(3, 4)}},
      {"row_sum", [](Tape&, auto& v) { return row_sum(v[0]); }, {u(3, 4)}},
      {"relu", [](Tape&, auto& v) { return relu(v[0]); }, {u(3, 4)}},
      {"silu", [](Tape&, auto& v) { return silu(v[0]); }, {u(3, 4)}},
      {"sigmoid", [](Tape&, auto& v) { return sigmoid(v[0]); }, {u(3, 4)}},
      {"exp", [](Tape&, auto& v) { return tensor::exp(v[0]); }, {u(3, 4)}},
      {"log", [](Tape&, auto& v) { return tensor::log(v[0]); }, {pos(3, 4)}},
      {"sq_norm", [](Tape&, auto& v) { return sq_norm(v[0]); }, {u(3, 4)}},
      {"norm", [](Tape&, auto& v) { return norm(v[0]); }, {u(3, 4)}},
      {"row_sq_norm", [](Tape&, auto& v) { return row_sq_norm(v[0]); }, {u(3, 4)}},
      {"row_norm", [](Tape&, auto& v) { return row_norm(v[0]); }, {u(3, 4)}},
      {"softmax", [](Tape&, auto& v) { return softmax(v[0]); }, {u(3, 4)}},
      {"log_softmax", [](Tape&, auto& v) { return log_softmax(v[0]); }, {u(3, 4)}},
      {"gather_rows", [&](Tape&, auto& v) { return gather_rows(v[0], rows); }, {u(3, 4)}},
      {"slice_rows", [](Tape&, auto& v) { return slice_rows(v[0], 1, 3); }, {u(3, 4)}},
      {"reshape", [](Tape&, auto& v) { return reshape(v[0], 4, 3); }, {u(3, 4)}},
      {"dropout",
       [](Tape&, auto& v) {
         Rng r(99);
         return dropout(v[0], 0.4, r, true);
       },
       {u(3, 4)}},
      {"pairwise_sq_dist", [](Tape&, auto& v) { return pairwise_sq_dist(v[0], v[1]); },
       {u(3, 4), u(2, 4)}},
      {"neighbor_mean", [&](Tape&, auto& v) { return neighbor_mean(v[0], adj); }, {u(3, 4)}},
      {"log_mix", [&](Tape&, auto& v) { return model::log_mix(log_softmax(v[0]), log_softmax(v[1]), alpha); },
       {u(3, 4), u(3, 4)}},
  };

  double worst = 0.0;
  std::string worst_name;
  std::uint64_t seed = 100;
  for (auto& c : cases) {
    double e = central_rel_error(c.build, c.inputs, seed++);
    if (e > worst) {
      worst = e;
      worst_name = c.name;
    }
  }

  // Fitting loss with respect to both synthetic banks on a 5-node graph.
  Rng mrng(12);
  model::ModelConfig mc;
  mc.feature_dim = 3;
  mc.n_classes = 2;
  mc.per_class = 2;
  mc.hidden = 4;
  mc.embed = 3;
  LocalModel m = model::init_model(mc, mrng);
  for (Parameter* b : {&m.bank_head, &m.bank_tail}) b->value = uniform_tensor(4, 3, mrng);
  std::vector<graphio::Edge> edges = {{0, 1}, {1, 2}, {2, 3}, {1, 3}};
  Graph g(uniform_tensor(5, 3, mrng), {0, 1, 0, 1, 1}, 2, edges);
  std::vector<std::size_t> nodes = {0, 1, 2, 3, 4};
  Tape tape;
  std::vector<Parameter*> banks = {&m.bank_head, &m.bank_tail};
  auto grads = tape.backward(model::fitting_loss(m, tape, g, nodes, false, mrng), banks);
  double bank_worst = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < banks[k]->value.size(); ++i) {
      double orig = banks[k]->value[i];
      auto eval = [&](double v) {
        banks[k]->value[i] = v;
        Tape t;
        return model::fitting_loss(m, t, g, nodes, false, mrng).value().item();
      };
      double fd = (eval(orig + 1e-5) - eval(orig - 1e-5)) / 2e-5;
      banks[k]->value[i] = orig;
      double an = grads[k][i];
      bank_worst = std::max(bank_worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
  return verdict(worst < 1e-4 && bank_worst < 1e-4,
                 std::to_string(cases.size()) + " primitives, worst rel err " + sci(worst) + " (" +
                     worst_name + "); bank gradients " + sci(bank_worst) + " (< 1e-4)");
}

// ---------------------------------------------------------------------------

Outcome criterion_identities() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  expect(model::branch_alpha(4.0, 3.0) == 0.5, "alpha(lambda + 1) = 0.5");

  Rng rng(3);
  const std::size_t s = 2, d = 3, classes = 2, k = 3;
  std::vector<Tensor> head, tail;
  std::vector<std::vector<double>> rates;
  for (std::size_t i = 0; i < k; ++i) {
    head.push_back(uniform_tensor(classes * s, d, rng));
    tail.push_back(uniform_tensor(classes * s, d, rng));
    rates.push_back({uniform01(rng), uniform01(rng)});
  }
  for (auto v : {federation::Variant::HH, federation::Variant::HT, federation::Variant::TH,
                 federation::Variant::TT}) {
    auto out = federation::generate_global_synthetic(head, tail, rates, s, v);
    bool uses_head = v == federation::Variant::HH || v == federation::Variant::TH;
    const auto& src = uses_head ? head : tail;
    for (std::size_t i = 0; i < out.features.size(); ++i) {
      double lo = src[0][i], hi = src[0][i];
      for (const auto& b : src) {
        lo = std::min(lo, b[i]);
        hi = std::max(hi, b[i]);
      }
      expect(out.features[i] >= lo - 1e-12 && out.features[i] <= hi + 1e-12,
             "global synthetic convexity (" + federation::to_string(v) + ")");
    }
    auto one = federation::generate_global_synthetic(std::span(head).first(1), std::span(tail).first(1),
                                                     std::span(rates).first(1), s, v);
    expect(one.features == src[0], "K = 1 identity (" + federation::to_string(v) + ")");
  }

  federation::GlobalSyntheticData gd;
  gd.features = uniform_tensor(4, 3, rng);
  gd.labels = {0, 0, 1, 1};
  std::vector<double> zero(2, 0.0), ones(2, 1.0);
  expect(federation::feature_scale(gd, zero) == gd.features, "feature scaling gamma = 0");
  Tensor full = federation::feature_scale(gd, ones);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 4; ++r) mean += gd.features(r, j) / 4.0;
      expect(std::abs(full(i, j) - mean) < 1e-12, "feature scaling gamma = 1");
    }
  }

  Tape tape;
  Var p = tensor::softmax(tensor::scale(tape.constant(Tensor::from_rows({{0.0, std::log(3.0)}})), -1.0));
  expect(std::abs(p.value()(0, 0) - 0.75) < 1e-12 && std::abs(p.value()(0, 1) - 0.25) < 1e-12,
         "softmax(-d) = (0.75, 0.25)");

  std::vector<double> r = {0.05, 0.4, 0.1, 0.3, 0.15};
  Rng nrng(5);
  auto noisy = federation::noise_rates(r, {federation::NoiseMechanism::Permutation, 0.0}, nrng);
  auto a = r, b = noisy.rates;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  expect(a == b, "random permutation preserves the multiset");

  Rng mrng(9);
  model::ModelConfig mc;
  mc.feature_dim = 4;
  mc.n_classes = 3;
  mc.per_class = 2;
  mc.hidden = 8;
  mc.embed = 4;
  LocalModel m = model::init_model(mc, mrng);
  std::vector<LocalModel> same(3, m);
  LocalModel agg = federation::aggregate_models(same);
  bool identical = true;
  auto pa = agg.shared_parameters();
  auto pb = m.shared_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) identical = identical && pa[i]->value == pb[i]->value;
  expect(identical, "aggregation of identical models");

  std::string detail = failed.empty() ? "alpha, convexity, K=1, scaling, softmax, RP, aggregation"
                                      : "failed: " + failed.front();
  return verdict(failed.empty(), detail);
}

Outcome criterion_scenarios(const Desk& desk) {
  const Graph& g = desk.graph();
  std::size_t checked = 0;
  for (std::uint64_t seed : desk.config().seeds) {
    FederatedScenario s = desk.scenario(seed);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& c : s.clients) {
      seen.insert(c.nodes.begin(), c.nodes.end());
      total += c.nodes.size();
      for (std::size_t v : c.split.train) {
        if (c.is_missing(g.label(v))) {
          return verdict(false, "seed " + std::to_string(seed) + ": missing-class node " +
                                    std::to_string(v) + " in a training split");
        }
      }
    }
    seen.insert(s.new_client.nodes.begin(), s.new_client.nodes.end());
    total += s.new_client.nodes.size();
    if (seen.size() != total) {
      return verdict(false, "seed " + std::to_string(seed) + ": client node sets overlap");
    }
    if (partition::scenario_from_json(partition::to_json(s)) != s) {
      return verdict(false, "seed " + std::to_string(seed) + ": JSON round trip differs");
    }
    if (partition::build_scenario(g, cli::scenario_options(desk.config(), seed)) != s) {
      return verdict(false, "seed " + std::to_string(seed) + ": rebuild differs");
    }
    ++checked;
  }
  return verdict(true, std::to_string(checked) +
                           " seeds: disjoint clients, no missing-class leakage, JSON round trip "
                           "and rebuild identical");
}

Outcome criterion_determinism() {
  fs::path root = scratch("determinism");
  json cfg = {{"sbm", {{"seed", 1}}}, {"rounds", 5},       {"per_class", 5},
              {"hidden", 32},         {"embed", 16},       {"pg_inits", 2},
              {"pg_epochs", 5},       {"pg_hidden", 32},   {"lr", 0.02},
              {"seeds", {0}}};
  std::ofstream(root / "config.json") << cfg.dump();
  std::ostringstream sink;
  for (const char* workers : {"1", "3"}) {
    fs::path out = root / workers;
    for (const char* cmd : {"partition", "pretrain-pg", "train"}) {
      std::vector<std::string> args = {"fedlog", "--config", (root / "config.json").string(),
                                       "--out", out.string(), "--workers", workers, cmd};
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      if (cli::run(static_cast<int>(argv.size()), argv.data(), sink, sink) != 0) {
        return verdict(false, std::string(cmd) + " failed: " + sink.str());
      }
    }
  }
  std::string serial = read_file(cli::run_dir(root / "1", 0, "FedLoG") / "metrics.csv");
  std::string parallel = read_file(cli::run_dir(root / "3", 0, "FedLoG") / "metrics.csv");
  std::size_t lines = static_cast<std::size_t>(std::count(serial.begin(), serial.end(), '\n'));
  return verdict(!serial.empty() && serial == parallel,
                 "FedLoG metrics.csv with 1 and 3 workers, " + std::to_string(lines) + " lines, " +
                     (serial == parallel ? "byte-identical" : "different"));
}

Outcome criterion_gradient_matching() {
  // l(phi, x) = (phi . x)^2 / 2, so d/dx [u . grad_phi l] = (u . x) phi + (phi . x) u.
  Rng rng(21);
  const std::size_t n = 6;
  std::vector<double> phi(n), x(n), u(n);
  for (std::size_t i = 0; i < n; ++i) {
    phi[i] = uniform01(rng) - 0.5;
    x[i] = uniform01(rng) - 0.5;
    u[i] = uniform01(rng) - 0.5;
  }
  auto dot = [](std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  };
  auto grad_x = [&](std::span<const double> p) {
    std::vector<double> out(n);
    double s = dot(p, x);
    for (std::size_t i = 0; i < n; ++i) out[i] = s * p[i];
    return out;
  };
  auto got = promptgen::mixed_derivative_fd(grad_x, phi, u);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double want = dot(u, x) * phi[i] + dot(phi, x) * u[i];
    worst = std::max(worst, std::abs(got[i] - want) / std::max(std::abs(want), 1e-12));
  }

  // One neighbour per target; a generator that outputs that neighbour's
  // features reproduces the true subgraph exactly.
  Rng grng(6);
  std::vector<graphio::Edge> e = {{0, 1}, {2, 3}};
  Graph g(uniform_tensor(4, 3, grng), {0, 1, 0, 1}, 2, e);
  auto pg = promptgen::init_generator(3, grng, 8);
  for (Parameter* p : pg.parameters()) p->value.fill(0.0);
  for (std::size_t j = 0; j < 3; ++j) pg.l3.b.value(0, j) = g.features()(1, j);
  std::vector<std::size_t> nodes = {0};
  auto samples = promptgen::pretrain_samples(g, nodes, 1);
  std::vector<LocalModel> heads;
  for (std::uint64_t i = 0; i < 3; ++i) {
    Rng r(40 + i);
    heads.push_back(model::init_model(promptgen::pretrain_head_config(3, 2), r));
  }
  auto obj = promptgen::pretrain_objective(pg, samples, heads);
  return verdict(worst < 1e-3 && obj.grad == 0.0,
                 "HVP-by-FD rel err " + sci(worst) + " (< 1e-3); L_grad on coinciding graphs " +
                     sci(obj.grad));
}

Outcome criterion_ledger(const DeskRun& run, std::size_t clients, std::size_t rounds) {
  using federation::Algorithm;
  using federation::CommLedger;
  std::uint64_t want_fedlog = 2ull * 4 * (run.shared + run.bank);
  std::uint64_t want_fedavg = 2ull * 4 * run.shared;
  CommLedger fl(Algorithm::FedLoG, run.shared, run.bank), fa(Algorithm::FedAvg, run.shared, 0);
  for (std::size_t r = 0; r < 100; ++r) {
    fl.record_round(r, clients);
    fa.record_round(r, clients);
  }
  bool closed = fl.round_bytes() == want_fedlog && fa.round_bytes() == want_fedavg;
  bool observed = run.ledger.total_bytes() == want_fedlog * clients * rounds;
  bool ordering = fl.total_bytes() > fa.total_bytes();

  // Cora-shaped architecture for scale, informational.
  model::ModelConfig cora;
  cora.feature_dim = 1433;
  cora.n_classes = 7;
  Rng rng(0);
  LocalModel m = model::init_model(cora, rng);
  CommLedger cfl(Algorithm::FedLoG, m.shared_size(), cora.bank_rows() * cora.feature_dim);
  CommLedger cfa(Algorithm::FedAvg, m.shared_size(), 0);
  for (std::size_t r = 0; r < 100; ++r) {
    cfl.record_round(r, 3);
    cfa.record_round(r, 3);
  }
  return verdict(closed && observed && ordering,
                 "FedLoG " + std::to_string(fl.round_bytes()) + " B/client/round, FedAvg " +
                     std::to_string(fa.round_bytes()) + " (closed form " +
                     (closed ? "exact" : "MISMATCH") + ", protocol run " +
                     (observed ? "exact" : "MISMATCH") + "); 100 rounds " + num(fl.total_mb(), 2) +
                     " > " + num(fa.total_mb(), 2) + " MB; Cora-shaped " + num(cfl.total_mb(), 2) +
                     " vs " + num(cfa.total_mb(), 2) + " MB");
}

Outcome criterion_gamma(const std::vector<DeskRun>& runs) {
  std::size_t pairs = 0;
  double head_sum = 0.0, max_missing = 0.0;
  for (const auto& run : runs) {
    for (std::size_t k = 0; k < run.gamma.size(); ++k) {
      const auto& r = run.rates[k];
      int head = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
      for (int c : run.missing[k]) {
        ++pairs;
        head_sum += run.gamma[k][head];
        max_missing = std::max(max_missing, run.gamma[k][c]);
        if (run.gamma[k][head] < run.gamma[k][c]) {
          return verdict(false, "client " + std::to_string(k) + ": gamma head " +
                                    num(run.gamma[k][head]) + " < missing " + num(run.gamma[k][c]));
        }
      }
    }
  }
  if (pairs == 0) return verdict(false, "no client has a missing class; criterion is vacuous");
  return verdict(true, std::to_string(pairs) +
                           " (client, missing class) pairs, each gamma[head] >= gamma[missing]; "
                           "mean gamma[head] " +
                           num(head_sum / pairs) + ", max gamma[missing] " + num(max_missing));
}

Outcome criterion_reliability(std::size_t rounds) {
  cli::RunConfig c;
  c.lr = 2e-2;
  c.reliability.rounds = rounds;
  Graph g = cli::load_dataset(c);
  using partition::ContributorMode;
  auto over_seeds = [&](ContributorMode mode, double r_imb) {
    std::vector<double> acc;
    for (std::uint64_t seed : c.seeds) {
      auto p = cli::reliability_accuracy(c, g, mode, r_imb, seed);
      if (p.classes) acc.push_back(p.accuracy);
    }
    return mean_of(acc);
  };
  double head = over_seeds(ContributorMode::HeadDegree, 0.0);
  double tail = over_seeds(ContributorMode::TailDegree, 0.0);
  double neg = over_seeds(ContributorMode::ClassImbalance, -5.0);
  double posr = over_seeds(ContributorMode::ClassImbalance, 5.0);
  return verdict(head >= tail && neg >= posr,
                 "head-degree " + num(head) + " vs tail-degree " + num(tail) + "; r_imb=-5 " +
                     num(neg) + " vs r_imb=+5 " + num(posr));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedLoG acceptance checks"};
  std::vector<int> selected;
  std::string cora_dir;
  CoraBudget budget;
  if (const char* env = std::getenv("FEDLOG_CORA_DIR")) cora_dir = env;
  app.add_option("--criteria", selected, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--cora-dir", cora_dir, "Cora in nodes.tsv/edges.tsv form (or FEDLOG_CORA_DIR)");
  app.add_option("--cora-rounds", budget.rounds, "rounds for criteria 1-3")->capture_default_str();
  app.add_option("--cora-pg-inits", budget.pg_inits, "generator pretraining heads N")
      ->capture_default_str();
  app.add_option("--cora-pg-epochs", budget.pg_epochs, "generator pretraining epochs")
      ->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::set<int> want(selected.begin(), selected.end());

  std::size_t passed = 0, failed = 0, skipped = 0;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
    if (!want.count(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    (o.status == Status::Pass ? passed : o.status == Status::Fail ? failed : skipped)++;
    std::cout << tag << " [" << std::setw(2) << id << "] " << title << ": " << o.detail << std::endl;
  };

  std::optional<CoraResults> cora;
  auto cora_once = [&]() -> std::optional<CoraResults>& {
    if (!cora && !cora_dir.empty()) cora = run_cora(cora_dir, budget);
    return cora;
  };
  const Outcome no_cora{Status::Skip, "Cora not available (set FEDLOG_CORA_DIR)"};

  report(1, "Cora FedLoG Seen Graph >= 0.80", [&] {
    if (cora_dir.empty()) return no_cora;
    auto& r = cora_once();
    return verdict(r->fedlog_seen >= 0.80, "mean " + num(r->fedlog_seen) + " over 3 seeds");
  });
  report(2, "Cora Missing Class", [&] {
    if (cora_dir.empty()) return no_cora;
    auto& r = cora_once();
    return verdict(r->fedlog_mc >= 0.35 && r->local_mc == 0.0 && r->fedlog_mc > r->fedavg_mc,
                   "FedLoG " + num(r->fedlog_mc) + " (>= 0.35), Local " + num(r->local_mc) +
                       " (= 0), FedAvg " + num(r->fedavg_mc) + " (< FedLoG)");
  });
  report(3, "Cora GN(0.01) Seen Graph within 0.04", [&] {
    if (cora_dir.empty()) return no_cora;
    auto& r = cora_once();
    double gap = std::abs(r->gn_seen - r->fedlog_seen);
    return verdict(gap <= 0.04, "GN " + num(r->gn_seen) + " vs none " + num(r->fedlog_seen) +
                                    ", gap " + num(gap));
  });

  std::optional<Desk> desk;
  std::vector<DeskRun> hh, tt;
  auto desk_runs = [&] {
    if (!desk) desk.emplace();
    if (hh.empty()) {
      for (std::uint64_t seed : desk->config().seeds) hh.push_back(desk->run(seed, "HH"));
    }
  };

  report(4, "HH >= TT Missing Class (SBM, 3 seeds)", [&] {
    desk_runs();
    for (std::uint64_t seed : desk->config().seeds) tt.push_back(desk->run(seed, "TT"));
    std::vector<double> a, b;
    for (const auto& r : hh) a.push_back(r.missing_class);
    for (const auto& r : tt) b.push_back(r.missing_class);
    return verdict(mean_of(a) >= mean_of(b), "HH " + num(mean_of(a)) + " vs TT " + num(mean_of(b)));
  });
  report(5, "gamma[head] >= gamma[missing] (SBM, K=3)", [&] {
    desk_runs();
    return criterion_gamma(hh);
  });
  report(6, "communication ledger", [&] {
    desk_runs();
    return criterion_ledger(hh.front(), desk->config().clients, desk->config().rounds);
  });
  report(7, "autodiff finite differences", criterion_autodiff);
  report(8, "closed-form identities", criterion_identities);
  report(9, "scenario invariants", [&] {
    if (!desk) desk.emplace();
    return criterion_scenarios(*desk);
  });
  report(10, "serial vs parallel determinism", criterion_determinism);
  report(11, "gradient-matching machinery", criterion_gradient_matching);
  report(12, "data reliability orderings (SBM, K=3, 30 rounds, 3 seeds)",
         [&] { return criterion_reliability(30); });

  std::cout << passed << " passed, " << failed << " failed, " << skipped << " skipped" << std::endl;
  if (failed) return 1;
  if (passed == 0 && skipped > 0) return 77;
  return 0;
}
