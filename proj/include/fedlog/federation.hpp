#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedlog/graphio.hpp"
#include "fedlog/model.hpp"
#include "fedlog/partition.hpp"
#include "fedlog/promptgen.hpp"
#include "fedlog/rng.hpp"
#include "fedlog/tensor.hpp"

namespace fedlog::federation {

using graphio::Graph;
using model::LocalModel;
using partition::FederatedScenario;
using partition::NodeList;
using promptgen::PromptGenerator;
using tensor::Tensor;

enum class Algorithm { FedLoG, FedAvg, Local };
/// Which bank feeds D_global (head or tail) and how clients are weighted
/// (by rate, or inversely to it).
enum class Variant { HH, HT, TH, TT };
enum class NoiseMechanism { None, Gaussian, Permutation };
enum class Setting { SeenGraph, UnseenNode, MissingClass, NewClient };

std::string to_string(Algorithm a);
std::string to_string(Variant v);
std::string to_string(NoiseMechanism m);
std::string to_string(Setting s);
Algorithm algorithm_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);
NoiseMechanism noise_from_string(const std::string& s);
Setting setting_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Server operations

/// Unweighted element-wise mean of the shared parameters. Everything else
/// (banks, gamma, rates) is copied from models[0]. Throws ContractError on an
/// empty set or an architecture mismatch.
LocalModel aggregate_models(std::span<const LocalModel> models);

struct GlobalSyntheticData {
  Tensor features;          // (|C| * s) x d, class-major
  std::vector<int> labels;  // s rows per class
  Variant variant = Variant::HH;
  /// Classes whose weights fell back to a plain mean (zero total rate).
  std::vector<int> fallback_classes;
};

/// Normalised client weights for class c. HH/HT: r_k[c] / sum_j r_j[c].
/// TH/TT: a_k = sum_j r_j[c] / (r_k[c] + eps), normalised. Falls back to 1/K
/// (and sets *fallback) when the rates of class c sum to zero.
std::vector<double> synthetic_weights(std::span<const std::vector<double>> rates, int c,
                                      Variant variant, double eps = 1e-8,
                                      bool* fallback = nullptr);

/// Builds D_global from the clients' head (HH, TH) or tail (HT, TT) banks.
GlobalSyntheticData generate_global_synthetic(std::span<const Tensor> head_banks,
                                              std::span<const Tensor> tail_banks,
                                              std::span<const std::vector<double>> rates,
                                              std::size_t per_class, Variant variant,
                                              double eps = 1e-8);

/// x_hat = (1 - gamma[c]) x + gamma[c] xbar, xbar the mean of all rows.
Tensor feature_scale(const GlobalSyntheticData& d, std::span<const double> gamma);

/// gamma[c] += step (capped at 1) where acc[c] > tau. NaN accuracies leave
/// gamma unchanged.
std::vector<double> update_adaptive_factor(std::span<const double> gamma,
                                           std::span<const double> acc, double tau = 0.9,
                                           double step = 0.001);

struct NoiseConfig {
  NoiseMechanism mechanism = NoiseMechanism::None;
  double a = 0.0;  // Gaussian scale relative to each rate
};

struct NoisyRates {
  std::vector<double> rates;
  NoiseConfig noise;
};

/// Gaussian: r + N(0, (a r)^2), clamped at 0. Permutation: rates above the
/// median (head classes) are shuffled among themselves, as are the rest.
NoisyRates noise_rates(std::span<const double> rates, const NoiseConfig& noise, Rng& rng);

/// Train-split class rates of every client after the noise mechanism; the
/// stream for client k is ("noise", k) of `seed`.
std::vector<std::vector<double>> server_rates(const Graph& g, const FederatedScenario& s,
                                              const NoiseConfig& noise, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Communication

struct CommEntry {
  std::size_t round = 0;
  std::size_t client = 0;
  std::uint64_t upload = 0;
  std::uint64_t download = 0;
};

class CommLedger {
 public:
  static constexpr std::uint64_t kBytesPerParam = 4;

  CommLedger() = default;
  CommLedger(Algorithm algorithm, std::size_t model_params, std::size_t synthetic_params);

  /// Bytes one client sends (and receives) per round.
  std::uint64_t one_way_bytes() const;
  /// Upload plus download for one client and one round.
  std::uint64_t round_bytes() const { return 2 * one_way_bytes(); }

  void record_round(std::size_t round, std::size_t clients);
  void record_accuracy(double mean_accuracy);

  const std::vector<CommEntry>& entries() const { return entries_; }
  const std::vector<double>& accuracy_curve() const { return curve_; }
  std::uint64_t total_bytes() const;
  /// total_bytes / 2^20.
  double total_mb() const;
  /// First round (1-based count) whose mean validation accuracy reaches
  /// `target`.
  std::optional<std::size_t> rounds_to_target(double target) const;

  nlohmann::json to_json() const;
  static CommLedger from_json(const nlohmann::json& j);

 private:
  Algorithm algorithm_ = Algorithm::FedLoG;
  std::size_t model_params_ = 0;
  std::size_t synthetic_params_ = 0;
  std::vector<CommEntry> entries_;
  std::vector<double> curve_;
};

// ---------------------------------------------------------------------------
// Clients and the round protocol

struct ProtocolConfig {
  Algorithm algorithm = Algorithm::FedLoG;
  std::size_t rounds = 100;
  std::size_t local_epochs = 1;
  /// feature_dim and n_classes are taken from the graph; kind from the
  /// algorithm.
  model::ModelConfig model;
  double lr = 1e-3;
  Variant variant = Variant::HH;
  double eps = 1e-8;
  double tau = 0.9;
  double gamma_step = 0.001;
  NoiseConfig noise;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
};

nlohmann::json config_to_json(const ProtocolConfig& c);
ProtocolConfig protocol_config_from_json(const nlohmann::json& j);

/// Client k's data: its local graph and split in local ids.
struct ClientData {
  graphio::Subgraph local;
  NodeList train, valid, test;
};

ClientData client_data(const Graph& g, const FederatedScenario& s, std::size_t k);

struct ClientState {
  std::size_t id = 0;
  LocalModel model;  // gamma holds the adaptive factor, rates the true train rates
  tensor::AdamState adam;
  LocalModel best;
  std::optional<std::size_t> best_round;
  double best_valid = 0.0;
};

struct RoundStats {
  double fit_loss = 0.0;
  double gen_loss = 0.0;  // 0 when the generalization pass did not run
  double valid_accuracy = 0.0;
  bool generalized = false;
};

/// One client round: copy the shared parameters of `global` (when given),
/// run `epochs` fitting steps on the train nodes, then, from round 1 on for
/// FedLoG, `epochs` generalization steps on D_global with prompt nodes, and
/// finally update gamma and the best checkpoint. Throws ProtocolError when
/// FedLoG reaches round >= 1 without D_global or a generator per class.
RoundStats local_round(ClientState& client, const ClientData& data, const LocalModel* global,
                       const GlobalSyntheticData* d_global,
                       std::span<const PromptGenerator> generators, std::size_t round,
                       const ProtocolConfig& config);

/// Graph of 2M nodes: synthetic node i (features x_hat row i) joined to its
/// prompt node M + i. Targets are 0..M-1.
Graph synthetic_graph(const Tensor& x_hat, const Tensor& prompts, std::span<const int> labels,
                      std::size_t n_classes);

/// Prompt features for every row of `x_hat`, each from its class generator.
Tensor class_prompts(std::span<const PromptGenerator> generators, const Tensor& x_hat,
                     std::span<const int> labels);

struct MetricRow {
  std::size_t round = 0;
  std::size_t client = 0;
  std::string algorithm;
  std::string setting;
  std::string split;
  double accuracy = 0.0;  // NaN is written as an empty field
  double loss = 0.0;
  std::uint64_t upload = 0;
  std::uint64_t download = 0;
};

std::string metrics_header();
std::string format_metric(const MetricRow& r);
/// Appends rows, writing the header first when the file is new or empty.
void append_metrics(const std::filesystem::path& file, std::span<const MetricRow> rows);
/// Drops rows with round >= `round` (used when resuming).
void truncate_metrics(const std::filesystem::path& file, std::size_t round);

/// The round protocol as an explicit state machine so runs can stop and
/// resume at round boundaries.
class Protocol {
 public:
  Protocol(const Graph& g, const FederatedScenario& s, ProtocolConfig config,
           std::vector<PromptGenerator> generators = {});

  /// Runs the next round; returns its metric rows (client order).
  std::vector<MetricRow> step();
  std::size_t round() const { return round_; }
  bool finished() const { return round_ >= config_.rounds; }

  const ProtocolConfig& config() const { return config_; }
  const CommLedger& ledger() const { return ledger_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const LocalModel& global() const { return global_; }
  const std::optional<GlobalSyntheticData>& global_synthetic() const { return d_global_; }
  const std::vector<std::vector<double>>& rates() const { return rates_; }
  /// Best-validation checkpoints in client order.
  std::vector<LocalModel> best_models() const;
  /// Mean of the current client models.
  LocalModel final_global() const;

  /// Directory with state.json plus per-client model/optimizer files.
  void save_state(const std::filesystem::path& dir) const;
  /// Restores a state written by save_state for the same graph, scenario
  /// and config. Throws ProtocolError on a config mismatch.
  void load_state(const std::filesystem::path& dir);

 private:
  void server_step();

  const Graph* graph_;
  const FederatedScenario* scenario_;
  ProtocolConfig config_;
  std::vector<PromptGenerator> generators_;
  std::vector<ClientData> data_;
  std::vector<ClientState> clients_;
  std::vector<std::vector<double>> rates_;
  LocalModel global_;
  std::optional<GlobalSyntheticData> d_global_;
  CommLedger ledger_;
  std::size_t round_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct SettingResult {
  Setting setting = Setting::SeenGraph;
  std::vector<std::optional<double>> per_client;  // absent when the test set is empty
  std::optional<double> mean;                     // over present clients
};

SettingResult evaluate(std::span<LocalModel> models, const Graph& g, const FederatedScenario& s,
                       Setting setting);

/// Accuracy of `m` on the receiver's held-out (valid + test) nodes of
/// `target_class`, in the receiver's local graph. NaN when there are none.
double receiver_target_accuracy(LocalModel& m, const Graph& g, const FederatedScenario& s,
                                std::size_t receiver, int target_class);

}  // namespace fedlog::federation
