#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedlog/federation.hpp"
#include "fedlog/graphio.hpp"
#include "fedlog/partition.hpp"
#include "fedlog/promptgen.hpp"
#include "fedlog/tensor.hpp"

namespace fedlog::cli {

using std::filesystem::path;

struct ReliabilitySettings {
  std::size_t rounds = 30;
  std::vector<double> imbalance_rates{-5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5};
  std::vector<std::string> modes{"head_degree", "tail_degree", "balanced_degree",
                                 "class_imbalance"};
  std::size_t receiver = 0;
};

/// Every experiment knob. Defaults follow the paper's implementation
/// details where it states them.
struct RunConfig {
  std::string dataset;  // directory with nodes.tsv / edges.tsv; empty selects the SBM
  graphio::SbmSpec sbm{{60, 60, 60, 60, 60}, 0.06, 0.02, 16, 3.0, 0};
  std::size_t clients = 3;
  std::size_t rounds = 100;
  std::size_t local_epochs = 1;
  std::size_t per_class = 20;
  double lambda = 3.0;
  double beta = 0.1;
  double tau = 0.9;
  std::size_t hops = 2;
  std::size_t pg_inits = 20;
  std::size_t pg_epochs = 100;
  double pg_lr = 1e-2;
  std::size_t pg_hidden = 256;
  std::string variant = "HH";
  federation::NoiseConfig noise;
  bool open_set = false;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string algorithm = "FedLoG";
  double lr = 1e-3;
  std::size_t hidden = 128;
  std::size_t embed = 64;
  double dropout = 0.5;
  double gamma_step = 0.001;
  double eps = 1e-8;
  std::size_t workers = 1;
  std::size_t min_missing_nodes = 5;
  double train_ratio = 0.4;
  double valid_ratio = 0.3;
  double crop_fraction = 0.2;
  std::vector<double> privacy_scales{0.01, 0.1, 0.5};
  ReliabilitySettings reliability;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys and bad values throw
/// ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const path& file);

graphio::Graph load_dataset(const RunConfig& c);
partition::ScenarioOptions scenario_options(const RunConfig& c, std::uint64_t seed);
federation::ProtocolConfig protocol_config(const RunConfig& c, std::uint64_t seed);
promptgen::PretrainOptions pretrain_options(const RunConfig& c, std::uint64_t seed);

/// Version string baked in at configure time (git describe when available).
std::string version();

// Output layout under `out`:
//   manifest.json
//   seed_<s>/scenario.json, stats.txt, pg_clients.bin, generators.bin, pg_log.csv
//   seed_<s>/<algorithm>/metrics.csv, ledger.json, state/, checkpoints/client_<k>.bin
//   summary_<algorithm>.csv, results_<algorithm>.json, reliability.csv, privacy.csv,
//   report.md
path seed_dir(const path& out, std::uint64_t seed);
path run_dir(const path& out, std::uint64_t seed, const std::string& algorithm);

void cmd_partition(const RunConfig& c, const path& out, std::ostream& log);
void cmd_pretrain_pg(const RunConfig& c, const path& out, std::ostream& log);
void cmd_train(const RunConfig& c, const path& out, std::ostream& log);
void cmd_eval(const RunConfig& c, const path& out, const std::vector<std::string>& settings,
              std::ostream& log);
struct ReliabilityPoint {
  double accuracy = 0.0;  // NaN when no target class could be built
  std::size_t classes = 0;
};

/// Receiver target-class accuracy of the final FedAvg model after
/// reliability.rounds rounds, averaged over every target class whose
/// scenario can be built. `imbalance_rate` is ignored by the degree modes.
ReliabilityPoint reliability_accuracy(const RunConfig& c, const graphio::Graph& g,
                                      partition::ContributorMode mode, double imbalance_rate,
                                      std::uint64_t seed);

void cmd_reliability(const RunConfig& c, const path& out, std::ostream& log);
void cmd_privacy(const RunConfig& c, const path& out, std::ostream& log);
/// Projects the nodes of `cls` and the matching head-bank rows of client
/// `client`'s checkpoint (first seed) onto their top two principal axes.
void cmd_pca(const RunConfig& c, const path& out, int cls, std::size_t client,
             std::ostream& log);
void cmd_report(const RunConfig& c, const path& out, double target, std::ostream& log);

struct Pca {
  std::vector<double> mean;         // d
  tensor::Tensor components;        // 2 x d, unit rows
  std::vector<double> eigenvalues;  // 2
  tensor::Tensor projections;       // n x 2
};

/// Top two principal axes of the mean-centred rows of `x` by power
/// iteration on the covariance with deflation. Throws ContractError when
/// the centred data has rank < 2.
Pca pca_top2(const tensor::Tensor& x, std::size_t max_iter = 20000, double tol = 1e-12);

/// CSV `source,pc1,pc2` for the stacked rows of `original` then `synthetic`.
std::string pca_csv(const tensor::Tensor& original, const tensor::Tensor& synthetic);

/// Full command line entry point. Exit codes: 0 success, 2 configuration
/// error, 3 data error, 4 protocol error, 1 anything else.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace fedlog::cli
