#include "fedlog/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "fedlog/errors.hpp"
#include "fedlog/model.hpp"

#ifndef FEDLOG_VERSION
#define FEDLOG_VERSION "unknown"
#endif

namespace fedlog::cli {

using federation::Algorithm;
using federation::Setting;
using graphio::Graph;
using nlohmann::json;
using partition::FederatedScenario;
using promptgen::PromptGenerator;
using tensor::Tensor;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + key + ": " + e.what());
    }
  }

  const json* object(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!known_.count(key)) throw ConfigError("unknown config key '" + where_ + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void write_text(const path& file, const std::string& text) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed4(std::optional<double> v) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *v;
  return s.str();
}

json opt_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

struct MeanStd {
  std::optional<double> mean;
  std::optional<double> std;
};

/// Mean and sample standard deviation of the present values.
MeanStd mean_std(const std::vector<std::optional<double>>& xs) {
  std::vector<double> v;
  for (const auto& x : xs) {
    if (x) v.push_back(*x);
  }
  if (v.empty()) return {};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {m, sd};
}

const std::vector<Setting> kAllSettings{Setting::SeenGraph, Setting::UnseenNode,
                                        Setting::MissingClass, Setting::NewClient};

void write_manifest(const RunConfig& c, const path& out) {
  json m = {{"version", version()}, {"config", to_json(c)}};
  write_text(out / "manifest.json", m.dump(2) + "\n");
}

FederatedScenario scenario_for(const RunConfig& c, const Graph& g, const path& out,
                               std::uint64_t seed) {
  FederatedScenario s = partition::build_scenario(g, scenario_options(c, seed));
  path file = seed_dir(out, seed) / "scenario.json";
  if (!std::filesystem::exists(file)) {
    std::filesystem::create_directories(file.parent_path());
    partition::save_scenario(s, file);
  }
  return s;
}

std::vector<PromptGenerator> load_bank(const path& file) {
  if (!std::filesystem::exists(file)) {
    throw ProtocolError("no prompt generator bank at " + file.string() +
                        "; run pretrain-pg first");
  }
  return promptgen::load_generators(file);
}

path checkpoint_file(const path& out, std::uint64_t seed, const std::string& alg, std::size_t k) {
  return run_dir(out, seed, alg) / "checkpoints" / ("client_" + std::to_string(k) + ".bin");
}

std::vector<model::LocalModel> load_checkpoints(const path& out, std::uint64_t seed,
                                                const std::string& alg, std::size_t clients) {
  std::vector<model::LocalModel> models;
  for (std::size_t k = 0; k < clients; ++k) {
    path f = checkpoint_file(out, seed, alg, k);
    if (!std::filesystem::exists(f)) {
      throw FormatError("missing checkpoint for client " + std::to_string(k) + " (seed " +
                        std::to_string(seed) + "): " + f.string());
    }
    models.push_back(model::load_model(f));
  }
  return models;
}

/// Per-seed evaluation of `settings`; writes results_<alg>.json and returns
/// the per-seed means (setting-major).
json evaluate_seeds(const RunConfig& c, const Graph& g, const path& out,
                    const std::vector<Setting>& settings, std::ostream& log) {
  json per_setting = json::object();
  std::map<Setting, std::vector<std::optional<double>>> means;
  std::map<Setting, json> seeds_json;
  for (std::uint64_t seed : c.seeds) {
    FederatedScenario s = scenario_for(c, g, out, seed);
    auto models = load_checkpoints(out, seed, c.algorithm, s.clients.size());
    for (Setting st : settings) {
      auto r = federation::evaluate(models, g, s, st);
      json per_client = json::array();
      for (const auto& a : r.per_client) per_client.push_back(opt_json(a));
      seeds_json[st].push_back({{"seed", seed}, {"mean", opt_json(r.mean)}, {"per_client", per_client}});
      means[st].push_back(r.mean);
    }
  }
  log << "setting        mean(std) over " << c.seeds.size() << " seed(s)\n";
  for (Setting st : settings) {
    MeanStd ms = mean_std(means[st]);
    per_setting[federation::to_string(st)] = {
        {"mean", opt_json(ms.mean)}, {"std", opt_json(ms.std)}, {"seeds", seeds_json[st]}};
    log << std::left << std::setw(14) << federation::to_string(st) << " " << fixed4(ms.mean)
        << "(" << fixed4(ms.std) << ")\n";
  }
  json results = {{"algorithm", c.algorithm}, {"settings", per_setting}};
  write_text(out / ("results_" + c.algorithm + ".json"), results.dump(2) + "\n");
  return results;
}

federation::NoiseConfig parse_noise(const json& j) {
  federation::NoiseConfig n;
  Reader r(j, "noise.");
  std::string mech = "none";
  r.get("mechanism", mech);
  r.get("a", n.a);
  r.finish();
  n.mechanism = federation::noise_from_string(mech);
  require(n.a >= 0.0, "noise.a must be non-negative");
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string version() { return FEDLOG_VERSION; }

json to_json(const RunConfig& c) {
  return {{"dataset", c.dataset},
          {"sbm",
           {{"block_sizes", c.sbm.block_sizes},
            {"p_intra", c.sbm.p_intra},
            {"p_inter", c.sbm.p_inter},
            {"feature_dim", c.sbm.feature_dim},
            {"separation", c.sbm.separation},
            {"seed", c.sbm.seed}}},
          {"clients", c.clients},
          {"rounds", c.rounds},
          {"local_epochs", c.local_epochs},
          {"per_class", c.per_class},
          {"lambda", c.lambda},
          {"beta", c.beta},
          {"tau", c.tau},
          {"hops", c.hops},
          {"pg_inits", c.pg_inits},
          {"pg_epochs", c.pg_epochs},
          {"pg_lr", c.pg_lr},
          {"pg_hidden", c.pg_hidden},
          {"variant", c.variant},
          {"noise", {{"mechanism", federation::to_string(c.noise.mechanism)}, {"a", c.noise.a}}},
          {"open_set", c.open_set},
          {"seeds", c.seeds},
          {"algorithm", c.algorithm},
          {"lr", c.lr},
          {"hidden", c.hidden},
          {"embed", c.embed},
          {"dropout", c.dropout},
          {"gamma_step", c.gamma_step},
          {"eps", c.eps},
          {"workers", c.workers},
          {"min_missing_nodes", c.min_missing_nodes},
          {"train_ratio", c.train_ratio},
          {"valid_ratio", c.valid_ratio},
          {"crop_fraction", c.crop_fraction},
          {"privacy_scales", c.privacy_scales},
          {"reliability",
           {{"rounds", c.reliability.rounds},
            {"imbalance_rates", c.reliability.imbalance_rates},
            {"modes", c.reliability.modes},
            {"receiver", c.reliability.receiver}}}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  r.get("dataset", c.dataset);
  if (const json* sbm = r.object("sbm")) {
    Reader s(*sbm, "sbm.");
    s.get("block_sizes", c.sbm.block_sizes);
    s.get("p_intra", c.sbm.p_intra);
    s.get("p_inter", c.sbm.p_inter);
    s.get("feature_dim", c.sbm.feature_dim);
    s.get("separation", c.sbm.separation);
    s.get("seed", c.sbm.seed);
    s.finish();
  }
  r.get("clients", c.clients);
  r.get("rounds", c.rounds);
  r.get("local_epochs", c.local_epochs);
  r.get("per_class", c.per_class);
  r.get("lambda", c.lambda);
  r.get("beta", c.beta);
  r.get("tau", c.tau);
  r.get("hops", c.hops);
  r.get("pg_inits", c.pg_inits);
  r.get("pg_epochs", c.pg_epochs);
  r.get("pg_lr", c.pg_lr);
  r.get("pg_hidden", c.pg_hidden);
  r.get("variant", c.variant);
  if (const json* n = r.object("noise")) c.noise = parse_noise(*n);
  r.get("open_set", c.open_set);
  r.get("seeds", c.seeds);
  r.get("algorithm", c.algorithm);
  r.get("lr", c.lr);
  r.get("hidden", c.hidden);
  r.get("embed", c.embed);
  r.get("dropout", c.dropout);
  r.get("gamma_step", c.gamma_step);
  r.get("eps", c.eps);
  r.get("workers", c.workers);
  r.get("min_missing_nodes", c.min_missing_nodes);
  r.get("train_ratio", c.train_ratio);
  r.get("valid_ratio", c.valid_ratio);
  r.get("crop_fraction", c.crop_fraction);
  r.get("privacy_scales", c.privacy_scales);
  if (const json* rel = r.object("reliability")) {
    Reader s(*rel, "reliability.");
    s.get("rounds", c.reliability.rounds);
    s.get("imbalance_rates", c.reliability.imbalance_rates);
    s.get("modes", c.reliability.modes);
    s.get("receiver", c.reliability.receiver);
    s.finish();
  }
  r.finish();

  federation::algorithm_from_string(c.algorithm);
  federation::variant_from_string(c.variant);
  for (const auto& m : c.reliability.modes) partition::contributor_mode_from_string(m);
  require(!c.sbm.block_sizes.empty(), "sbm.block_sizes must not be empty");
  require(c.clients >= 1, "clients must be >= 1");
  require(c.rounds >= 1, "rounds must be >= 1");
  require(c.local_epochs >= 1, "local_epochs must be >= 1");
  require(c.per_class >= 1, "per_class must be >= 1");
  require(c.pg_inits >= 1 && c.pg_hidden >= 1, "pg_inits and pg_hidden must be >= 1");
  require(c.hidden >= 1 && c.embed >= 1, "hidden and embed must be >= 1");
  require(c.lr > 0.0 && c.pg_lr > 0.0, "learning rates must be positive");
  require(c.dropout >= 0.0 && c.dropout < 1.0, "dropout must be in [0, 1)");
  require(c.beta >= 0.0, "beta must be non-negative");
  require(c.tau >= 0.0 && c.tau <= 1.0, "tau must be in [0, 1]");
  require(c.gamma_step >= 0.0, "gamma_step must be non-negative");
  require(c.train_ratio > 0.0 && c.valid_ratio >= 0.0 && c.train_ratio + c.valid_ratio <= 1.0,
          "train_ratio + valid_ratio must lie in (0, 1]");
  require(c.crop_fraction >= 0.0 && c.crop_fraction < 1.0, "crop_fraction must be in [0, 1)");
  require(!c.seeds.empty(), "seeds must not be empty");
  require(c.workers >= 1, "workers must be >= 1");
  for (double a : c.privacy_scales) require(a >= 0.0, "privacy_scales must be non-negative");
  for (double r : c.reliability.imbalance_rates) {
    require(r >= -5.0 && r <= 5.0, "reliability.imbalance_rates must lie in [-5, 5]");
  }
  require(c.reliability.receiver < c.clients, "reliability.receiver must be a client id");
  return c;
}

RunConfig load_config(const path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return config_from_json(j);
}

Graph load_dataset(const RunConfig& c) {
  if (!c.dataset.empty()) return graphio::load_graph(c.dataset);
  return graphio::generate_sbm(c.sbm);
}

partition::ScenarioOptions scenario_options(const RunConfig& c, std::uint64_t seed) {
  partition::ScenarioOptions o;
  o.clients = c.clients;
  o.open_set = c.open_set;
  o.hops = c.hops;
  o.min_missing_nodes = c.min_missing_nodes;
  o.ratios = {c.train_ratio, c.valid_ratio};
  o.crop_fraction = c.crop_fraction;
  o.seed = seed;
  return o;
}

federation::ProtocolConfig protocol_config(const RunConfig& c, std::uint64_t seed) {
  federation::ProtocolConfig p;
  p.algorithm = federation::algorithm_from_string(c.algorithm);
  p.rounds = c.rounds;
  p.local_epochs = c.local_epochs;
  p.model.per_class = c.per_class;
  p.model.hidden = c.hidden;
  p.model.embed = c.embed;
  p.model.dropout = c.dropout;
  p.model.lambda = c.lambda;
  p.model.beta = c.beta;
  p.lr = c.lr;
  p.variant = federation::variant_from_string(c.variant);
  p.eps = c.eps;
  p.tau = c.tau;
  p.gamma_step = c.gamma_step;
  p.noise = c.noise;
  p.workers = c.workers;
  p.seed = seed;
  return p;
}

promptgen::PretrainOptions pretrain_options(const RunConfig& c, std::uint64_t seed) {
  promptgen::PretrainOptions o;
  o.hops = c.hops;
  o.inits = c.pg_inits;
  o.epochs = c.pg_epochs;
  o.lr = c.pg_lr;
  o.hidden = c.pg_hidden;
  o.seed = seed;
  o.threads = c.workers;
  return o;
}

path seed_dir(const path& out, std::uint64_t seed) {
  return out / ("seed_" + std::to_string(seed));
}

path run_dir(const path& out, std::uint64_t seed, const std::string& algorithm) {
  return seed_dir(out, seed) / algorithm;
}

// ---------------------------------------------------------------------------

void cmd_partition(const RunConfig& c, const path& out, std::ostream& log) {
  write_manifest(c, out);
  Graph g = load_dataset(c);
  for (std::uint64_t seed : c.seeds) {
    FederatedScenario s = partition::build_scenario(g, scenario_options(c, seed));
    path dir = seed_dir(out, seed);
    std::filesystem::create_directories(dir);
    partition::save_scenario(s, dir / "scenario.json");
    std::string table = partition::statistics_table(g, s);
    write_text(dir / "stats.txt", table);
    std::vector<partition::NodeList> parts;
    for (const auto& p : s.clients) parts.push_back(p.nodes);
    parts.push_back(s.new_client.nodes);
    log << "seed " << seed << ": " << s.clients.size() << " clients, edge cut "
        << partition::edge_cut(g, parts) << "\n"
        << table;
  }
}

void cmd_pretrain_pg(const RunConfig& c, const path& out, std::ostream& log) {
  write_manifest(c, out);
  Graph g = load_dataset(c);
  for (std::uint64_t seed : c.seeds) {
    FederatedScenario s = scenario_for(c, g, out, seed);
    SeedSequence seeds(seed);
    std::vector<PromptGenerator> gens;
    std::ostringstream csv;
    csv << "client,epoch,feat_loss,grad_loss,total_loss\n";
    for (std::size_t k = 0; k < s.clients.size(); ++k) {
      auto opts = pretrain_options(c, seeds.derive("pg.client", k));
      promptgen::PretrainReport rep;
      gens.push_back(promptgen::pretrain_generator(g, s.clients[k].split.train, opts, &rep));
      for (std::size_t e = 0; e < rep.total_loss.size(); ++e) {
        csv << k << ',' << e << ',' << fmt(rep.feat_loss[e]) << ',' << fmt(rep.grad_loss[e]) << ','
            << fmt(rep.total_loss[e]) << '\n';
      }
      log << "seed " << seed << " client " << k << ": " << rep.used << " nodes ("
          << rep.skipped << " skipped), loss " << fmt(rep.total_loss.front()) << " -> "
          << fmt(rep.total_loss.back()) << "\n";
    }
    path dir = seed_dir(out, seed);
    promptgen::save_generators(gens, dir / "pg_clients.bin");
    auto agg = promptgen::aggregate_generators(gens, federation::server_rates(g, s, c.noise, seed));
    for (int cls : agg.fallback_classes) {
      log << "warning: class " << cls << " has zero rate at every client; generator is a plain mean\n";
    }
    promptgen::save_generators(agg.per_class, dir / "generators.bin");
    write_text(dir / "pg_log.csv", csv.str());
  }
}

void cmd_train(const RunConfig& c, const path& out, std::ostream& log) {
  write_manifest(c, out);
  Graph g = load_dataset(c);
  Algorithm alg = federation::algorithm_from_string(c.algorithm);
  for (std::uint64_t seed : c.seeds) {
    FederatedScenario s = scenario_for(c, g, out, seed);
    std::vector<PromptGenerator> bank;
    if (alg == Algorithm::FedLoG) bank = load_bank(seed_dir(out, seed) / "generators.bin");
    path dir = run_dir(out, seed, c.algorithm);
    std::filesystem::create_directories(dir);
    path metrics = dir / "metrics.csv";

    federation::Protocol p(g, s, protocol_config(c, seed), bank);
    if (std::filesystem::exists(dir / "state" / "state.json")) {
      p.load_state(dir / "state");
      federation::truncate_metrics(metrics, p.round());
      log << "seed " << seed << ": resuming " << c.algorithm << " at round " << p.round() << "\n";
    } else {
      std::filesystem::remove(metrics);
    }
    while (!p.finished()) {
      auto rows = p.step();
      p.save_state(dir / "state");
      federation::append_metrics(metrics, rows);
    }

    std::filesystem::create_directories(dir / "checkpoints");
    for (std::size_t k = 0; k < p.clients().size(); ++k) {
      const auto& cl = p.clients()[k];
      json extra = {{"best_round", cl.best_round ? json(*cl.best_round) : json(nullptr)},
                    {"best_valid", cl.best_valid}};
      model::save_model(cl.best_round ? cl.best : cl.model, checkpoint_file(out, seed, c.algorithm, k),
                        extra);
    }
    json ledger = p.ledger().to_json();
    ledger["total_bytes"] = p.ledger().total_bytes();
    ledger["total_mb"] = p.ledger().total_mb();
    ledger["round_bytes"] = p.ledger().round_bytes();
    write_text(dir / "ledger.json", ledger.dump(2) + "\n");
    log << "seed " << seed << ": " << c.algorithm << " done, " << fmt(p.ledger().total_mb())
        << " MB exchanged\n";
  }

  json results = evaluate_seeds(c, g, out, kAllSettings, log);
  std::ostringstream csv;
  csv << "seed,setting,accuracy\n";
  for (Setting st : kAllSettings) {
    const json& e = results["settings"][federation::to_string(st)];
    for (const auto& sj : e["seeds"]) {
      csv << sj["seed"].get<std::uint64_t>() << ',' << federation::to_string(st) << ','
          << (sj["mean"].is_null() ? "" : fmt(sj["mean"].get<double>())) << '\n';
    }
  }
  for (const char* stat : {"mean", "std"}) {
    for (Setting st : kAllSettings) {
      const json& v = results["settings"][federation::to_string(st)][stat];
      csv << stat << ',' << federation::to_string(st) << ','
          << (v.is_null() ? "" : fmt(v.get<double>())) << '\n';
    }
  }
  write_text(out / ("summary_" + c.algorithm + ".csv"), csv.str());
}

void cmd_eval(const RunConfig& c, const path& out, const std::vector<std::string>& settings,
              std::ostream& log) {
  std::vector<Setting> list;
  for (const auto& s : settings) list.push_back(federation::setting_from_string(s));
  if (list.empty()) list = kAllSettings;
  Graph g = load_dataset(c);
  evaluate_seeds(c, g, out, list, log);
}

ReliabilityPoint reliability_accuracy(const RunConfig& c, const Graph& g,
                                      partition::ContributorMode mode, double imbalance_rate,
                                      std::uint64_t seed) {
  RunConfig fedavg = c;
  fedavg.algorithm = "FedAvg";
  fedavg.rounds = c.reliability.rounds;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < g.num_classes(); ++t) {
    partition::ReliabilityConfig rc;
    rc.receiver = c.reliability.receiver;
    rc.mode = mode;
    rc.imbalance_rate = imbalance_rate;
    rc.target_class = static_cast<int>(t);
    rc.lambda = c.lambda;
    FederatedScenario s;
    try {
      s = partition::build_reliability_scenario(g, scenario_options(c, seed), rc);
    } catch (const ScenarioError&) {
      continue;
    }
    federation::Protocol p(g, s, protocol_config(fedavg, seed));
    while (!p.finished()) p.step();
    model::LocalModel global = p.final_global();
    double acc = federation::receiver_target_accuracy(global, g, s, rc.receiver, rc.target_class);
    if (std::isnan(acc)) continue;
    sum += acc;
    ++used;
  }
  return {used ? sum / static_cast<double>(used) : kNaN, used};
}

void cmd_reliability(const RunConfig& c, const path& out, std::ostream& log) {
  write_manifest(c, out);
  Graph g = load_dataset(c);
  std::ostringstream csv;
  csv << "mode,r_imb,seed,accuracy,classes\n";
  for (const auto& mode_name : c.reliability.modes) {
    auto mode = partition::contributor_mode_from_string(mode_name);
    std::vector<double> rates = mode == partition::ContributorMode::ClassImbalance
                                    ? c.reliability.imbalance_rates
                                    : std::vector<double>{kNaN};
    for (double r_imb : rates) {
      for (std::uint64_t seed : c.seeds) {
        auto point = reliability_accuracy(c, g, mode, std::isnan(r_imb) ? 0.0 : r_imb, seed);
        csv << mode_name << ',' << fmt(r_imb) << ',' << seed << ',' << fmt(point.accuracy) << ','
            << point.classes << '\n';
        log << mode_name << (std::isnan(r_imb) ? "" : " r_imb=" + fmt(r_imb)) << " seed " << seed
            << ": "
            << fixed4(point.classes ? std::optional<double>(point.accuracy) : std::nullopt)
            << " over " << point.classes << " target classes\n";
      }
    }
  }
  write_text(out / "reliability.csv", csv.str());
}

void cmd_privacy(const RunConfig& c, const path& out, std::ostream& log) {
  write_manifest(c, out);
  Graph g = load_dataset(c);
  std::vector<federation::NoiseConfig> mechanisms{{federation::NoiseMechanism::None, 0.0}};
  for (double a : c.privacy_scales) mechanisms.push_back({federation::NoiseMechanism::Gaussian, a});
  mechanisms.push_back({federation::NoiseMechanism::Permutation, 0.0});

  RunConfig fedlog = c;
  fedlog.algorithm = "FedLoG";
  std::ostringstream csv;
  csv << "mechanism,a,seed,setting,accuracy\n";
  std::map<std::pair<std::size_t, Setting>, std::vector<std::optional<double>>> acc;
  for (std::uint64_t seed : c.seeds) {
    FederatedScenario s = scenario_for(c, g, out, seed);
    path pg = seed_dir(out, seed) / "pg_clients.bin";
    if (!std::filesystem::exists(pg)) {
      throw ProtocolError("no per-client generators at " + pg.string() + "; run pretrain-pg first");
    }
    auto gens = promptgen::load_generators(pg);
    for (std::size_t m = 0; m < mechanisms.size(); ++m) {
      fedlog.noise = mechanisms[m];
      auto bank = promptgen::aggregate_generators(
                      gens, federation::server_rates(g, s, mechanisms[m], seed))
                      .per_class;
      federation::Protocol p(g, s, protocol_config(fedlog, seed), bank);
      while (!p.finished()) p.step();
      auto models = p.best_models();
      for (Setting st : {Setting::SeenGraph, Setting::MissingClass}) {
        auto r = federation::evaluate(models, g, s, st);
        acc[{m, st}].push_back(r.mean);
        csv << federation::to_string(mechanisms[m].mechanism) << ',' << fmt(mechanisms[m].a) << ','
            << seed << ',' << federation::to_string(st) << ','
            << (r.mean ? fmt(*r.mean) : "") << '\n';
      }
    }
  }
  for (std::size_t m = 0; m < mechanisms.size(); ++m) {
    log << std::left << std::setw(4) << federation::to_string(mechanisms[m].mechanism) << " a="
        << std::setw(5) << fmt(mechanisms[m].a);
    for (Setting st : {Setting::SeenGraph, Setting::MissingClass}) {
      MeanStd ms = mean_std(acc[{m, st}]);
      csv << federation::to_string(mechanisms[m].mechanism) << ',' << fmt(mechanisms[m].a)
          << ",mean," << federation::to_string(st) << ',' << (ms.mean ? fmt(*ms.mean) : "")
          << '\n';
      log << "  " << federation::to_string(st) << " " << fixed4(ms.mean) << "(" << fixed4(ms.std)
          << ")";
    }
    log << "\n";
  }
  write_text(out / "privacy.csv", csv.str());
}

void cmd_pca(const RunConfig& c, const path& out, int cls, std::size_t client, std::ostream& log) {
  if (c.algorithm != "FedLoG") throw ConfigError("pca needs FedLoG checkpoints (synthetic banks)");
  Graph g = load_dataset(c);
  if (cls < 0 || static_cast<std::size_t>(cls) >= g.num_classes()) {
    throw ConfigError("class " + std::to_string(cls) + " out of range");
  }
  if (client >= c.clients) throw ConfigError("client " + std::to_string(client) + " out of range");
  std::uint64_t seed = c.seeds.front();
  path f = checkpoint_file(out, seed, c.algorithm, client);
  if (!std::filesystem::exists(f)) {
    throw FormatError("missing checkpoint for client " + std::to_string(client) + ": " + f.string());
  }
  model::LocalModel m = model::load_model(f);
  const std::size_t d = g.feature_dim(), s = m.config.per_class;
  if (m.config.feature_dim != d) throw FormatError("checkpoint feature width differs from dataset");

  std::vector<std::size_t> nodes;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (g.label(v) == cls) nodes.push_back(v);
  }
  Tensor original(nodes.size(), d), synthetic(s, d);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::copy_n(g.features().row(nodes[i]).begin(), d, original.row(i).begin());
  }
  for (std::size_t i = 0; i < s; ++i) {
    std::copy_n(m.bank_head.value.row(static_cast<std::size_t>(cls) * s + i).begin(), d,
                synthetic.row(i).begin());
  }
  path file = out / ("pca_class" + std::to_string(cls) + "_client" + std::to_string(client) + ".csv");
  write_text(file, pca_csv(original, synthetic));
  log << "wrote " << file.string() << " (" << nodes.size() << " original, " << s
      << " synthetic rows)\n";
}

void cmd_report(const RunConfig& c, const path& out, double target, std::ostream& log) {
  std::ostringstream md;
  md << "| Algorithm | Seen Graph | Unseen Node | Missing Class | New Client | MB / run | Rounds to "
     << fmt(target) << " |\n";
  md << "|---|---|---|---|---|---|---|\n";
  bool any = false;
  for (const char* alg : {"FedLoG", "FedAvg", "Local"}) {
    path file = out / (std::string("results_") + alg + ".json");
    if (!std::filesystem::exists(file)) continue;
    any = true;
    std::ifstream in(file, std::ios::binary);
    json r = json::parse(in);
    md << "| " << alg;
    for (Setting st : kAllSettings) {
      std::string key = federation::to_string(st);
      if (!r["settings"].contains(key) || r["settings"][key]["mean"].is_null()) {
        md << " | n/a";
        continue;
      }
      md << " | " << fixed4(r["settings"][key]["mean"].get<double>()) << " +- "
         << fixed4(r["settings"][key]["std"].get<double>());
    }
    std::vector<std::optional<double>> mb, rounds;
    for (std::uint64_t seed : c.seeds) {
      path lf = run_dir(out, seed, alg) / "ledger.json";
      if (!std::filesystem::exists(lf)) continue;
      std::ifstream lin(lf, std::ios::binary);
      json lj = json::parse(lin);
      mb.push_back(lj["total_mb"].get<double>());
      auto reached = federation::CommLedger::from_json(lj).rounds_to_target(target);
      rounds.push_back(reached ? std::optional<double>(static_cast<double>(*reached)) : std::nullopt);
    }
    MeanStd mbs = mean_std(mb), rs = mean_std(rounds);
    std::ostringstream mbtxt;
    mbtxt << std::fixed << std::setprecision(2) << mbs.mean.value_or(0.0);
    md << " | " << (mbs.mean ? mbtxt.str() : "n/a") << " | "
       << (rs.mean ? fmt(*rs.mean) : "not reached") << " |\n";
  }
  if (!any) throw FormatError("no results_<algorithm>.json under " + out.string() + "; run train or eval first");
  write_text(out / "report.md", md.str());
  log << md.str();
}

// ---------------------------------------------------------------------------

Pca pca_top2(const Tensor& x, std::size_t max_iter, double tol) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 3 || d < 2) throw ContractError("pca: need at least 3 rows and 2 columns");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> X(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Eigen::RowVectorXd mean = X.colwise().mean();
  Mat centered = X.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

  Pca out;
  out.mean.assign(mean.data(), mean.data() + d);
  out.components = Tensor(2, d);
  double scale = cov.diagonal().sum();
  if (scale <= 0.0) throw ContractError("pca: data has rank < 2");

  Rng rng(0x9ca);
  for (int axis = 0; axis < 2; ++axis) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = standard_normal(rng);
    v.normalize();
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iter; ++it) {
      Eigen::VectorXd w = cov * v;
      double norm = w.norm();
      if (norm <= 1e-14 * scale) {
        lambda = 0.0;
        break;
      }
      w /= norm;
      double change = std::min((w - v).norm(), (w + v).norm());
      v = w;
      lambda = v.dot(cov * v);
      if (change < tol) break;
    }
    if (lambda <= 1e-12 * scale) throw ContractError("pca: data has rank < 2");
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    for (std::size_t j = 0; j < d; ++j) {
      out.components(static_cast<std::size_t>(axis), j) = v[static_cast<Eigen::Index>(j)];
    }
    out.eigenvalues.push_back(lambda);
    cov -= lambda * v * v.transpose();
  }

  out.projections = Tensor(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 2; ++a) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (x(i, j) - out.mean[j]) * out.components(a, j);
      out.projections(i, a) = s;
    }
  }
  return out;
}

std::string pca_csv(const Tensor& original, const Tensor& synthetic) {
  if (original.cols() != synthetic.cols()) {
    throw DimensionError("pca: original and synthetic feature widths differ");
  }
  const std::size_t d = original.cols();
  Tensor stacked(original.rows() + synthetic.rows(), d);
  std::copy(original.values().begin(), original.values().end(), stacked.values().begin());
  std::copy(synthetic.values().begin(), synthetic.values().end(),
            stacked.values().begin() + static_cast<std::ptrdiff_t>(original.size()));
  Pca p = pca_top2(stacked);
  std::ostringstream csv;
  csv << "source,pc1,pc2\n";
  for (std::size_t i = 0; i < stacked.rows(); ++i) {
    csv << (i < original.rows() ? "original" : "synthetic") << ',' << fmt(p.projections(i, 0))
        << ',' << fmt(p.projections(i, 1)) << '\n';
  }
  return csv.str();
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FedLoG subgraph federated learning simulator"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file, out_dir = "runs";
  json patch = json::object();
  std::optional<std::string> dataset, variant, noise, algorithm;
  std::optional<std::size_t> clients, rounds, local_epochs, per_class, hops, pg_inits, pg_epochs,
      workers;
  std::optional<double> lambda, beta, tau, noise_a, lr, pg_lr;
  std::vector<std::uint64_t> seeds;
  bool open_set = false;

  app.add_option("--config", config_file, "JSON run configuration");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--dataset", dataset, "dataset directory (nodes.tsv, edges.tsv)");
  app.add_option("--clients", clients, "number of clients K");
  app.add_option("--rounds", rounds, "federated rounds R");
  app.add_option("--local-epochs", local_epochs, "local epochs per round");
  app.add_option("--per-class", per_class, "synthetic nodes per class s");
  app.add_option("--lambda", lambda, "tail degree threshold");
  app.add_option("--beta", beta, "synthetic bank norm weight");
  app.add_option("--tau", tau, "adaptive factor accuracy threshold");
  app.add_option("--hops", hops, "subgraph hops h");
  app.add_option("--pg-inits", pg_inits, "random heads N for generator pretraining");
  app.add_option("--pg-epochs", pg_epochs, "generator pretraining epochs");
  app.add_option("--pg-lr", pg_lr, "generator pretraining learning rate");
  app.add_option("--variant", variant, "global synthetic data variant (HH, HT, TH, TT)");
  app.add_option("--noise", noise, "class rate noise (none, GN, RP)");
  app.add_option("--noise-a", noise_a, "Gaussian noise scale a");
  app.add_flag("--open-set", open_set, "open-set partitioning");
  app.add_option("--seed", seeds, "run seed (repeatable)");
  app.add_option("--algorithm", algorithm, "FedLoG, FedAvg or Local");
  app.add_option("--lr", lr, "local learning rate");
  app.add_option("--workers", workers, "client-level worker threads");

  std::vector<std::string> settings;
  int pca_class = 0;
  std::size_t pca_client = 0;
  double target = 0.8;
  auto* partition_cmd = app.add_subcommand("partition", "build and save the federated scenario");
  auto* pretrain_cmd = app.add_subcommand("pretrain-pg", "pretrain and aggregate prompt generators");
  auto* train_cmd = app.add_subcommand("train", "run the round protocol (resumable)");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate saved checkpoints");
  eval_cmd->add_option("--settings", settings, "SeenGraph, UnseenNode, MissingClass, NewClient");
  auto* reliability_cmd = app.add_subcommand("reliability", "data reliability experiment");
  auto* privacy_cmd = app.add_subcommand("privacy", "class rate noise experiment");
  auto* pca_cmd = app.add_subcommand("pca", "2-D PCA of original vs synthetic features");
  pca_cmd->add_option("--class", pca_class, "class id")->required();
  pca_cmd->add_option("--client", pca_client, "client id")->capture_default_str();
  auto* report_cmd = app.add_subcommand("report", "summarise results as a markdown table");
  report_cmd->add_option("--target", target, "accuracy target for rounds-to-target")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }

  try {
    json base = json::object();
    if (!config_file.empty()) {
      std::ifstream in(config_file, std::ios::binary);
      if (!in) throw ConfigError("cannot open config " + config_file);
      try {
        base = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError(config_file + ": " + e.what());
      }
      if (!base.is_object()) throw ConfigError(config_file + ": expected a JSON object");
    }
    if (dataset) base["dataset"] = *dataset;
    if (clients) base["clients"] = *clients;
    if (rounds) base["rounds"] = *rounds;
    if (local_epochs) base["local_epochs"] = *local_epochs;
    if (per_class) base["per_class"] = *per_class;
    if (lambda) base["lambda"] = *lambda;
    if (beta) base["beta"] = *beta;
    if (tau) base["tau"] = *tau;
    if (hops) base["hops"] = *hops;
    if (pg_inits) base["pg_inits"] = *pg_inits;
    if (pg_epochs) base["pg_epochs"] = *pg_epochs;
    if (pg_lr) base["pg_lr"] = *pg_lr;
    if (variant) base["variant"] = *variant;
    if (noise || noise_a) {
      json n = base.contains("noise") ? base["noise"] : json::object();
      if (noise) n["mechanism"] = *noise;
      if (noise_a) n["a"] = *noise_a;
      base["noise"] = n;
    }
    if (open_set) base["open_set"] = true;
    if (!seeds.empty()) base["seeds"] = seeds;
    if (algorithm) base["algorithm"] = *algorithm;
    if (lr) base["lr"] = *lr;
    if (workers) base["workers"] = *workers;
    RunConfig cfg = config_from_json(base);

    path o = out_dir;
    std::filesystem::create_directories(o);
    if (partition_cmd->parsed()) cmd_partition(cfg, o, out);
    if (pretrain_cmd->parsed()) cmd_pretrain_pg(cfg, o, out);
    if (train_cmd->parsed()) cmd_train(cfg, o, out);
    if (eval_cmd->parsed()) cmd_eval(cfg, o, settings, out);
    if (reliability_cmd->parsed()) cmd_reliability(cfg, o, out);
    if (privacy_cmd->parsed()) cmd_privacy(cfg, o, out);
    if (pca_cmd->parsed()) cmd_pca(cfg, o, pca_class, pca_client, out);
    if (report_cmd->parsed()) cmd_report(cfg, o, target, out);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ProtocolError& e) {
    err << "protocol error: " << e.what() << "\n";
    return 4;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ScenarioError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace fedlog::cli
