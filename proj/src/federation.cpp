#include "fedlog/federation.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "fedlog/errors.hpp"
#include "fedlog/parallel.hpp"

namespace fedlog::federation {

using model::ModelKind;
using tensor::Parameter;
using tensor::Tape;
using tensor::Var;

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<const char*, E>, N>& table,
             const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::array<std::pair<const char*, Algorithm>, 3> kAlgorithms{
    {{"FedLoG", Algorithm::FedLoG}, {"FedAvg", Algorithm::FedAvg}, {"Local", Algorithm::Local}}};
constexpr std::array<std::pair<const char*, Variant>, 4> kVariants{
    {{"HH", Variant::HH}, {"HT", Variant::HT}, {"TH", Variant::TH}, {"TT", Variant::TT}}};
constexpr std::array<std::pair<const char*, NoiseMechanism>, 3> kNoise{
    {{"none", NoiseMechanism::None},
     {"GN", NoiseMechanism::Gaussian},
     {"RP", NoiseMechanism::Permutation}}};
constexpr std::array<std::pair<const char*, Setting>, 4> kSettings{
    {{"SeenGraph", Setting::SeenGraph},
     {"UnseenNode", Setting::UnseenNode},
     {"MissingClass", Setting::MissingClass},
     {"NewClient", Setting::NewClient}}};

template <typename E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<const char*, E>, N>& table) {
  for (const auto& [name, value] : table) {
    if (v == value) return name;
  }
  return "?";
}

void check_same_architecture(const LocalModel& a, const LocalModel& b) {
  auto pa = a.shared_parameters();
  auto pb = b.shared_parameters();
  if (pa.size() != pb.size()) throw ContractError("aggregate_models: architecture mismatch");
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->name != pb[i]->name || !pa[i]->value.same_shape(pb[i]->value)) {
      throw ContractError("aggregate_models: parameter " + pa[i]->name + " differs");
    }
  }
}

void copy_shared(const LocalModel& from, LocalModel& to) {
  auto src = from.shared_parameters();
  auto dst = to.shared_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
}

bool uses_tail_bank(Variant v) { return v == Variant::HT || v == Variant::TT; }
bool inverse_weights(Variant v) { return v == Variant::TH || v == Variant::TT; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<Parameter> adam_tensors(const tensor::AdamState& st, const LocalModel& m) {
  std::vector<Parameter> out;
  auto params = m.all_parameters();
  for (std::size_t i = 0; i < st.m.size(); ++i) out.push_back({"m." + params[i]->name, st.m[i]});
  for (std::size_t i = 0; i < st.v.size(); ++i) out.push_back({"v." + params[i]->name, st.v[i]});
  return out;
}

double valid_score(double acc) { return std::isnan(acc) ? -1.0 : acc; }

}  // namespace

std::string to_string(Algorithm a) { return enum_name(a, kAlgorithms); }
std::string to_string(Variant v) { return enum_name(v, kVariants); }
std::string to_string(NoiseMechanism m) { return enum_name(m, kNoise); }
std::string to_string(Setting s) { return enum_name(s, kSettings); }
Algorithm algorithm_from_string(const std::string& s) {
  return parse_enum(s, kAlgorithms, "algorithm");
}
Variant variant_from_string(const std::string& s) { return parse_enum(s, kVariants, "variant"); }
NoiseMechanism noise_from_string(const std::string& s) {
  return parse_enum(s, kNoise, "noise mechanism");
}
Setting setting_from_string(const std::string& s) { return parse_enum(s, kSettings, "setting"); }

LocalModel aggregate_models(std::span<const LocalModel> models) {
  if (models.empty()) throw ContractError("aggregate_models: no models");
  for (const LocalModel& m : models.subspan(1)) check_same_architecture(models[0], m);
  LocalModel out = models[0];
  auto dst = out.shared_parameters();
  for (std::size_t k = 1; k < models.size(); ++k) {
    auto src = models[k].shared_parameters();
    double inv = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto d = dst[i]->value.values();
      auto s = src[i]->value.values();
      for (std::size_t j = 0; j < d.size(); ++j) {
        double diff = s[j] - d[j];
        if (diff != 0.0) d[j] += diff * inv;
      }
    }
  }
  return out;
}

std::vector<double> synthetic_weights(std::span<const std::vector<double>> rates, int c,
                                      Variant variant, double eps, bool* fallback) {
  const std::size_t K = rates.size();
  std::vector<double> w(K, 0.0);
  double total = 0.0;
  for (const auto& r : rates) total += r.at(static_cast<std::size_t>(c));
  if (fallback) *fallback = false;
  if (total <= 0.0) {
    if (fallback) *fallback = true;
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(K));
    return w;
  }
  for (std::size_t k = 0; k < K; ++k) {
    double r = rates[k][static_cast<std::size_t>(c)];
    w[k] = inverse_weights(variant) ? total / (r + eps) : r;
  }
  double norm = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= norm;
  return w;
}

GlobalSyntheticData generate_global_synthetic(std::span<const Tensor> head_banks,
                                              std::span<const Tensor> tail_banks,
                                              std::span<const std::vector<double>> rates,
                                              std::size_t per_class, Variant variant,
                                              double eps) {
  auto banks = uses_tail_bank(variant) ? tail_banks : head_banks;
  const std::size_t K = banks.size();
  if (K == 0 || rates.size() != K) {
    throw ContractError("generate_global_synthetic: need one bank and one rate vector per client");
  }
  const std::size_t rows = banks[0].rows(), d = banks[0].cols();
  if (per_class == 0 || rows % per_class != 0) {
    throw ContractError("generate_global_synthetic: bank rows not a multiple of per_class");
  }
  const std::size_t C = rows / per_class;
  for (std::size_t k = 0; k < K; ++k) {
    if (!banks[k].same_shape(banks[0])) {
      throw DimensionError("generate_global_synthetic: bank shapes differ");
    }
    if (rates[k].size() != C) throw DimensionError("generate_global_synthetic: rate length");
  }

  GlobalSyntheticData out;
  out.variant = variant;
  out.features = Tensor(rows, d);
  out.labels.resize(rows);
  for (std::size_t c = 0; c < C; ++c) {
    bool fb = false;
    auto w = synthetic_weights(rates, static_cast<int>(c), variant, eps, &fb);
    if (fb) out.fallback_classes.push_back(static_cast<int>(c));
    for (std::size_t i = c * per_class; i < (c + 1) * per_class; ++i) {
      out.labels[i] = static_cast<int>(c);
      auto dst = out.features.row(i);
      for (std::size_t k = 0; k < K; ++k) {
        if (w[k] == 0.0) continue;
        auto src = banks[k].row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] += w[k] * src[j];
      }
    }
  }
  return out;
}

Tensor feature_scale(const GlobalSyntheticData& d, std::span<const double> gamma) {
  const Tensor& x = d.features;
  const std::size_t n = x.rows(), dim = x.cols();
  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) mean[j] += x(i, j);
  }
  for (double& m : mean) m /= static_cast<double>(std::max<std::size_t>(n, 1));

  Tensor out(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    double g = gamma[static_cast<std::size_t>(d.labels[i])];
    for (std::size_t j = 0; j < dim; ++j) out(i, j) = (1.0 - g) * x(i, j) + g * mean[j];
  }
  return out;
}

std::vector<double> update_adaptive_factor(std::span<const double> gamma,
                                           std::span<const double> acc, double tau,
                                           double step) {
  if (acc.size() != gamma.size()) throw DimensionError("update_adaptive_factor: length mismatch");
  std::vector<double> out(gamma.begin(), gamma.end());
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (acc[c] > tau) out[c] = std::min(1.0, out[c] + step);
  }
  return out;
}

NoisyRates noise_rates(std::span<const double> rates, const NoiseConfig& noise, Rng& rng) {
  NoisyRates out{{rates.begin(), rates.end()}, noise};
  switch (noise.mechanism) {
    case NoiseMechanism::None:
      break;
    case NoiseMechanism::Gaussian:
      if (noise.a < 0.0) throw ConfigError("noise scale must be non-negative");
      for (double& r : out.rates) {
        double z = standard_normal(rng);
        r = std::max(0.0, r + noise.a * r * z);
      }
      break;
    case NoiseMechanism::Permutation: {
      double med = median(out.rates);
      std::vector<std::size_t> head, tail;
      for (std::size_t c = 0; c < out.rates.size(); ++c) {
        (out.rates[c] > med ? head : tail).push_back(c);
      }
      for (auto* group : {&head, &tail}) {
        std::vector<double> vals;
        for (std::size_t c : *group) vals.push_back(out.rates[c]);
        shuffle(vals.begin(), vals.end(), rng);
        for (std::size_t i = 0; i < group->size(); ++i) out.rates[(*group)[i]] = vals[i];
      }
      break;
    }
  }
  return out;
}

std::vector<std::vector<double>> server_rates(const Graph& g, const FederatedScenario& s,
                                              const NoiseConfig& noise, std::uint64_t seed) {
  SeedSequence seeds(seed);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    Rng rng = seeds.stream("noise", k);
    out.push_back(noise_rates(graphio::class_rates(g, s.clients[k].split.train), noise, rng).rates);
  }
  return out;
}

// ---------------------------------------------------------------------------

CommLedger::CommLedger(Algorithm algorithm, std::size_t model_params,
                       std::size_t synthetic_params)
    : algorithm_(algorithm), model_params_(model_params), synthetic_params_(synthetic_params) {}

std::uint64_t CommLedger::one_way_bytes() const {
  switch (algorithm_) {
    case Algorithm::FedLoG:
      return kBytesPerParam * (model_params_ + synthetic_params_);
    case Algorithm::FedAvg:
      return kBytesPerParam * model_params_;
    case Algorithm::Local:
      return 0;
  }
  return 0;
}

void CommLedger::record_round(std::size_t round, std::size_t clients) {
  for (std::size_t k = 0; k < clients; ++k) {
    entries_.push_back({round, k, one_way_bytes(), one_way_bytes()});
  }
}

void CommLedger::record_accuracy(double mean_accuracy) { curve_.push_back(mean_accuracy); }

std::uint64_t CommLedger::total_bytes() const {
  std::uint64_t t = 0;
  for (const auto& e : entries_) t += e.upload + e.download;
  return t;
}

double CommLedger::total_mb() const {
  return static_cast<double>(total_bytes()) / (1024.0 * 1024.0);
}

std::optional<std::size_t> CommLedger::rounds_to_target(double target) const {
  for (std::size_t r = 0; r < curve_.size(); ++r) {
    if (curve_[r] >= target) return r + 1;
  }
  return std::nullopt;
}

nlohmann::json CommLedger::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : entries_) entries.push_back({e.round, e.client, e.upload, e.download});
  nlohmann::json curve = nlohmann::json::array();
  for (double a : curve_) curve.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
  return {{"algorithm", federation::to_string(algorithm_)},
          {"model_params", model_params_},
          {"synthetic_params", synthetic_params_},
          {"entries", entries},
          {"accuracy_curve", curve}};
}

CommLedger CommLedger::from_json(const nlohmann::json& j) {
  CommLedger l(algorithm_from_string(j.at("algorithm").get<std::string>()),
               j.at("model_params").get<std::size_t>(),
               j.at("synthetic_params").get<std::size_t>());
  for (const auto& e : j.at("entries")) {
    l.entries_.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(),
                          e.at(2).get<std::uint64_t>(), e.at(3).get<std::uint64_t>()});
  }
  for (const auto& a : j.at("accuracy_curve")) {
    l.curve_.push_back(a.is_null() ? std::numeric_limits<double>::quiet_NaN() : a.get<double>());
  }
  return l;
}

// ---------------------------------------------------------------------------

nlohmann::json config_to_json(const ProtocolConfig& c) {
  return {{"algorithm", to_string(c.algorithm)},
          {"rounds", c.rounds},
          {"local_epochs", c.local_epochs},
          {"model", model::config_to_json(c.model)},
          {"lr", c.lr},
          {"variant", to_string(c.variant)},
          {"eps", c.eps},
          {"tau", c.tau},
          {"gamma_step", c.gamma_step},
          {"noise", {{"mechanism", to_string(c.noise.mechanism)}, {"a", c.noise.a}}},
          {"seed", c.seed}};
}

ProtocolConfig protocol_config_from_json(const nlohmann::json& j) {
  ProtocolConfig c;
  try {
    c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
    c.rounds = j.at("rounds").get<std::size_t>();
    c.local_epochs = j.at("local_epochs").get<std::size_t>();
    c.model = model::config_from_json(j.at("model"));
    c.lr = j.at("lr").get<double>();
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.eps = j.at("eps").get<double>();
    c.tau = j.at("tau").get<double>();
    c.gamma_step = j.at("gamma_step").get<double>();
    c.noise.mechanism = noise_from_string(j.at("noise").at("mechanism").get<std::string>());
    c.noise.a = j.at("noise").at("a").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("protocol config: ") + e.what());
  }
  return c;
}

ClientData client_data(const Graph& g, const FederatedScenario& s, std::size_t k) {
  const auto& part = s.clients.at(k);
  ClientData d;
  d.local = graphio::induced_subgraph(g, part.nodes);
  d.train = d.local.to_local(part.split.train);
  d.valid = d.local.to_local(part.split.valid);
  d.test = d.local.to_local(part.split.test);
  return d;
}

Graph synthetic_graph(const Tensor& x_hat, const Tensor& prompts, std::span<const int> labels,
                      std::size_t n_classes) {
  const std::size_t M = x_hat.rows(), d = x_hat.cols();
  if (!prompts.same_shape(x_hat) || labels.size() != M) {
    throw DimensionError("synthetic_graph: features, prompts and labels disagree");
  }
  Tensor x(2 * M, d);
  std::copy(x_hat.values().begin(), x_hat.values().end(), x.values().begin());
  std::copy(prompts.values().begin(), prompts.values().end(), x.values().begin() + M * d);
  std::vector<int> y(2 * M);
  std::vector<graphio::Edge> edges;
  for (std::size_t i = 0; i < M; ++i) {
    y[i] = y[M + i] = labels[i];
    edges.emplace_back(i, M + i);
  }
  return Graph(std::move(x), std::move(y), n_classes, edges);
}

Tensor class_prompts(std::span<const PromptGenerator> generators, const Tensor& x_hat,
                     std::span<const int> labels) {
  const std::size_t d = x_hat.cols();
  Tensor out(x_hat.rows(), d);
  for (std::size_t c = 0; c < generators.size(); ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == static_cast<int>(c)) rows.push_back(i);
    }
    if (rows.empty()) continue;
    Tensor in(rows.size(), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(x_hat.row(rows[r]).begin(), d, in.row(r).begin());
    }
    Tensor p = promptgen::generate_prompt(generators[c], in);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(p.row(r).begin(), d, out.row(rows[r]).begin());
    }
  }
  return out;
}

RoundStats local_round(ClientState& client, const ClientData& data, const LocalModel* global,
                       const GlobalSyntheticData* d_global,
                       std::span<const PromptGenerator> generators, std::size_t round,
                       const ProtocolConfig& config) {
  LocalModel& m = client.model;
  const std::size_t C = m.config.n_classes;
  const bool generalize =
      config.algorithm == Algorithm::FedLoG && m.config.kind == ModelKind::FedLoG && round >= 1;
  if (generalize) {
    if (!d_global) throw ProtocolError("local_round: no global synthetic data at round >= 1");
    if (generators.size() != C) {
      throw ProtocolError("local_round: prompt generator bank has " +
                          std::to_string(generators.size()) + " generators for " +
                          std::to_string(C) + " classes");
    }
  }

  if (global) copy_shared(*global, m);
  client.adam.options.lr = config.lr;
  auto params = m.all_parameters();
  const Graph& g = data.local.graph;
  SeedSequence seeds(config.seed);
  RoundStats stats;

  Rng fit_rng = seeds.stream("fit", round, client.id);
  for (std::size_t e = 0; e < config.local_epochs; ++e) {
    Tape tape;
    Var loss = model::fitting_loss(m, tape, g, data.train, true, fit_rng);
    auto grads = tape.backward(loss, params);
    tensor::adam_step(client.adam, params, grads);
    stats.fit_loss = loss.value().item();
  }

  if (generalize) {
    Tensor x_hat = feature_scale(*d_global, m.gamma);
    Tensor prompts = class_prompts(generators, x_hat, d_global->labels);
    Graph sg = synthetic_graph(x_hat, prompts, d_global->labels, C);
    const std::size_t M = x_hat.rows();
    std::vector<std::size_t> targets(M);
    std::iota(targets.begin(), targets.end(), std::size_t{0});
    std::vector<double> alpha(M, 0.5);
    Rng gen_rng = seeds.stream("generalize", round, client.id);
    for (std::size_t e = 0; e < config.local_epochs; ++e) {
      Tape tape;
      Var loss = model::classification_loss(m, tape.view(sg.features()), sg.adjacency(), targets,
                                            d_global->labels, alpha, true, gen_rng);
      auto grads = tape.backward(loss, params);
      tensor::adam_step(client.adam, params, grads);
      stats.gen_loss = loss.value().item();
    }
    stats.generalized = true;
  }

  stats.valid_accuracy = model::accuracy(m, g, data.valid);
  if (config.algorithm == Algorithm::FedLoG) {
    auto acc = model::class_accuracy(m, g, data.valid);
    m.gamma = update_adaptive_factor(m.gamma, acc, config.tau, config.gamma_step);
  }
  double score = valid_score(stats.valid_accuracy);
  if (!client.best_round || score > client.best_valid) {
    client.best = m;
    client.best_round = round;
    client.best_valid = score;
  }
  return stats;
}

// ---------------------------------------------------------------------------

std::string metrics_header() {
  return "round,client,algorithm,setting,split,accuracy,loss,upload_bytes,download_bytes";
}

std::string format_metric(const MetricRow& r) {
  std::ostringstream out;
  out << r.round << ',' << r.client << ',' << r.algorithm << ',' << r.setting << ',' << r.split
      << ',' << format_double(r.accuracy) << ',' << format_double(r.loss) << ',' << r.upload
      << ',' << r.download;
  return out.str();
}

void append_metrics(const std::filesystem::path& file, std::span<const MetricRow> rows) {
  bool fresh = !std::filesystem::exists(file) || std::filesystem::file_size(file) == 0;
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + file.string());
  if (fresh) out << metrics_header() << '\n';
  for (const auto& r : rows) out << format_metric(r) << '\n';
}

void truncate_metrics(const std::filesystem::path& file, std::size_t round) {
  if (!std::filesystem::exists(file)) return;
  std::ifstream in(file, std::ios::binary);
  std::vector<std::string> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      keep.push_back(line);
      header = false;
      continue;
    }
    std::size_t r = 0;
    auto res = std::from_chars(line.data(), line.data() + line.size(), r);
    if (res.ec == std::errc() && r < round) keep.push_back(line);
  }
  in.close();
  std::ofstream out(file, std::ios::trunc | std::ios::binary);
  for (const auto& l : keep) out << l << '\n';
}

// ---------------------------------------------------------------------------

Protocol::Protocol(const Graph& g, const FederatedScenario& s, ProtocolConfig config,
                   std::vector<PromptGenerator> generators)
    : graph_(&g), scenario_(&s), config_(std::move(config)), generators_(std::move(generators)) {
  if (s.clients.empty()) throw ContractError("Protocol: scenario has no clients");
  if (s.n_nodes != g.num_nodes()) throw ContractError("Protocol: scenario does not match graph");
  config_.model.feature_dim = g.feature_dim();
  config_.model.n_classes = g.num_classes();
  config_.model.kind =
      config_.algorithm == Algorithm::FedLoG ? ModelKind::FedLoG : ModelKind::Plain;
  if (config_.algorithm == Algorithm::FedLoG && config_.rounds > 1 &&
      generators_.size() != g.num_classes()) {
    throw ProtocolError("FedLoG needs one prompt generator per class (got " +
                        std::to_string(generators_.size()) + ")");
  }

  SeedSequence seeds(config_.seed);
  Rng init = seeds.stream("init");
  global_ = model::init_model(config_.model, init);
  rates_ = server_rates(g, s, config_.noise, config_.seed);
  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    data_.push_back(client_data(g, s, k));
    ClientState st;
    st.id = k;
    st.model = global_;
    st.model.rates = graphio::class_rates(g, s.clients[k].split.train);
    clients_.push_back(std::move(st));
  }
  std::size_t synthetic =
      config_.algorithm == Algorithm::FedLoG ? config_.model.bank_rows() * g.feature_dim() : 0;
  ledger_ = CommLedger(config_.algorithm, global_.shared_size(), synthetic);
}

void Protocol::server_step() {
  if (config_.algorithm == Algorithm::Local) return;
  std::vector<LocalModel> models;
  models.reserve(clients_.size());
  for (const auto& c : clients_) models.push_back(c.model);
  global_ = aggregate_models(models);
  if (config_.algorithm == Algorithm::FedLoG) {
    std::vector<Tensor> heads, tails;
    for (const auto& c : clients_) {
      heads.push_back(c.model.bank_head.value);
      tails.push_back(c.model.bank_tail.value);
    }
    d_global_ = generate_global_synthetic(heads, tails, rates_, config_.model.per_class,
                                          config_.variant, config_.eps);
  }
}

std::vector<MetricRow> Protocol::step() {
  if (finished()) throw ProtocolError("Protocol::step: all rounds done");
  if (round_ > 0) server_step();
  const LocalModel* global = config_.algorithm == Algorithm::Local ? nullptr : &global_;
  const GlobalSyntheticData* dg = d_global_ ? &*d_global_ : nullptr;

  std::vector<RoundStats> stats(clients_.size());
  parallel_for(clients_.size(), config_.workers, [&](std::size_t k) {
    stats[k] = local_round(clients_[k], data_[k], global, dg, generators_, round_, config_);
  });

  ledger_.record_round(round_, clients_.size());
  double sum = 0.0;
  std::size_t present = 0;
  std::vector<MetricRow> rows;
  for (std::size_t k = 0; k < clients_.size(); ++k) {
    if (!std::isnan(stats[k].valid_accuracy)) {
      sum += stats[k].valid_accuracy;
      ++present;
    }
    rows.push_back({round_, k, to_string(config_.algorithm), to_string(Setting::SeenGraph),
                    "valid", stats[k].valid_accuracy, stats[k].fit_loss + stats[k].gen_loss,
                    ledger_.one_way_bytes(), ledger_.one_way_bytes()});
  }
  ledger_.record_accuracy(present ? sum / static_cast<double>(present)
                                  : std::numeric_limits<double>::quiet_NaN());
  ++round_;
  return rows;
}

std::vector<LocalModel> Protocol::best_models() const {
  std::vector<LocalModel> out;
  for (const auto& c : clients_) out.push_back(c.best_round ? c.best : c.model);
  return out;
}

LocalModel Protocol::final_global() const {
  std::vector<LocalModel> models;
  for (const auto& c : clients_) models.push_back(c.model);
  return aggregate_models(models);
}

void Protocol::save_state(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : clients_) {
    std::string k = std::to_string(c.id);
    model::save_model(c.model, dir / ("client_" + k + ".bin"));
    if (c.best_round) model::save_model(c.best, dir / ("best_" + k + ".bin"));
    auto adam = adam_tensors(c.adam, c.model);
    std::vector<const Parameter*> ptrs;
    for (const auto& p : adam) ptrs.push_back(&p);
    model::write_tensors(dir / ("adam_" + k + ".bin"), "fedlog-adam", ptrs,
                         {{"step", c.adam.step}});
    clients.push_back({{"best_round", c.best_round ? nlohmann::json(*c.best_round) : nullptr},
                       {"best_valid", c.best_valid}});
  }
  model::save_model(global_, dir / "global.bin");
  nlohmann::json state = {{"round", round_},
                          {"config", config_to_json(config_)},
                          {"ledger", ledger_.to_json()},
                          {"clients", clients}};
  std::filesystem::path tmp = dir / "state.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << state.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / "state.json");
}

void Protocol::load_state(const std::filesystem::path& dir) {
  std::ifstream in(dir / "state.json", std::ios::binary);
  if (!in) throw FormatError("no state.json in " + dir.string());
  nlohmann::json state;
  try {
    state = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "state.json").string() + ": " + e.what());
  }
  if (state.at("config") != config_to_json(config_)) {
    throw ProtocolError("resume: saved run used a different configuration");
  }
  const auto& clients = state.at("clients");
  if (clients.size() != clients_.size()) throw ProtocolError("resume: client count differs");

  for (auto& c : clients_) {
    std::string k = std::to_string(c.id);
    c.model = model::load_model(dir / ("client_" + k + ".bin"));
    const auto& meta = clients.at(c.id);
    if (meta.at("best_round").is_null()) {
      c.best_round.reset();
    } else {
      c.best_round = meta.at("best_round").get<std::size_t>();
      c.best = model::load_model(dir / ("best_" + k + ".bin"));
    }
    c.best_valid = meta.at("best_valid").get<double>();

    auto adam_meta = model::read_meta(dir / ("adam_" + k + ".bin"));
    c.adam = {};
    c.adam.options.lr = config_.lr;
    c.adam.step = adam_meta.at("step").get<std::size_t>();
    if (c.adam.step > 0) {
      for (const Parameter* p : c.model.all_parameters()) {
        c.adam.m.emplace_back(p->value.rows(), p->value.cols());
        c.adam.v.emplace_back(p->value.rows(), p->value.cols());
      }
      auto tensors = adam_tensors(c.adam, c.model);
      std::vector<Parameter*> ptrs;
      for (auto& p : tensors) ptrs.push_back(&p);
      model::read_tensors(dir / ("adam_" + k + ".bin"), "fedlog-adam", ptrs);
      std::size_t n = c.adam.m.size();
      for (std::size_t i = 0; i < n; ++i) {
        c.adam.m[i] = tensors[i].value;
        c.adam.v[i] = tensors[n + i].value;
      }
    }
  }
  global_ = model::load_model(dir / "global.bin");
  ledger_ = CommLedger::from_json(state.at("ledger"));
  round_ = state.at("round").get<std::size_t>();
  d_global_.reset();
}

// ---------------------------------------------------------------------------

SettingResult evaluate(std::span<LocalModel> models, const Graph& g, const FederatedScenario& s,
                       Setting setting) {
  if (models.size() != s.clients.size()) {
    throw ContractError("evaluate: one model per client required");
  }
  SettingResult out;
  out.setting = setting;
  std::optional<graphio::Subgraph> new_client;
  NodeList new_client_test;
  if (setting == Setting::NewClient) {
    new_client = graphio::induced_subgraph(g, s.new_client.nodes);
    new_client_test = new_client->to_local(s.new_client.split.test);
  }

  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < models.size(); ++k) {
    double acc = std::numeric_limits<double>::quiet_NaN();
    switch (setting) {
      case Setting::SeenGraph: {
        ClientData d = client_data(g, s, k);
        acc = model::accuracy(models[k], d.local.graph, d.test);
        break;
      }
      case Setting::UnseenNode:
      case Setting::MissingClass: {
        auto sub = graphio::induced_subgraph(g, partition::expanded_nodes(s, k));
        NodeList test = setting == Setting::UnseenNode ? partition::unseen_node_test(g, s, k)
                                                       : partition::missing_class_test(g, s, k);
        acc = model::accuracy(models[k], sub.graph, sub.to_local(test));
        break;
      }
      case Setting::NewClient:
        acc = model::accuracy(models[k], new_client->graph, new_client_test);
        break;
    }
    if (std::isnan(acc)) {
      out.per_client.push_back(std::nullopt);
    } else {
      out.per_client.push_back(acc);
      sum += acc;
      ++present;
    }
  }
  if (present) out.mean = sum / static_cast<double>(present);
  return out;
}

double receiver_target_accuracy(LocalModel& m, const Graph& g, const FederatedScenario& s,
                                std::size_t receiver, int target_class) {
  ClientData d = client_data(g, s, receiver);
  NodeList nodes;
  for (const NodeList* split : {&d.valid, &d.test}) {
    for (std::size_t v : *split) {
      if (d.local.graph.label(v) == target_class) nodes.push_back(v);
    }
  }
  return model::accuracy(m, d.local.graph, nodes);
}

}  // namespace fedlog::federation
