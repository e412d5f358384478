#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedlog/graphio.hpp"
#include "fedlog/rng.hpp"
#include "fedlog/tensor.hpp"

namespace fedlog::model {

using graphio::Graph;
using tensor::Csr;
using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

/// FedLoG: shared encoder, head/tail prototype branches and synthetic banks.
/// Plain: the same encoder followed by a linear softmax head, used by the
/// Local and FedAvg baselines.
enum class ModelKind { FedLoG, Plain };

struct ModelConfig {
  ModelKind kind = ModelKind::FedLoG;
  std::size_t feature_dim = 0;
  std::size_t n_classes = 0;
  std::size_t per_class = 20;  // s
  std::size_t hidden = 128;
  std::size_t embed = 64;
  double dropout = 0.5;
  double lambda = 3.0;
  double beta = 0.1;
  double bank_init_std = 0.01;

  std::size_t bank_rows() const { return n_classes * per_class; }
};

struct Linear {
  Parameter w;  // in x out
  Parameter b;  // 1 x out
};

struct SageLayer {
  Parameter w_self;
  Parameter w_neigh;
  Parameter bias;
};

struct Encoder {
  SageLayer l1, l2;
};

struct Branch {
  Linear msg1, msg2;             // 2*embed+1 -> embed -> embed
  Linear trans1, trans2, trans3;  // embed -> embed -> embed -> 1
};

struct LocalModel {
  ModelConfig config;
  Encoder encoder;
  Branch head, tail;  // FedLoG only
  Linear classifier;  // Plain only
  Parameter bank_head, bank_tail;  // (|C| * s) x d, FedLoG only
  std::vector<double> gamma;       // class-wise adaptive factor
  std::vector<double> rates;       // class rates of the owner's training split

  /// Parameters averaged by the server (encoder and classifiers), in the
  /// canonical order.
  std::vector<Parameter*> shared_parameters();
  std::vector<const Parameter*> shared_parameters() const;
  /// Shared parameters followed by the banks.
  std::vector<Parameter*> all_parameters();
  std::vector<const Parameter*> all_parameters() const;

  std::size_t shared_size() const;
};

/// Weights uniform in +-1/sqrt(fan_in); banks Gaussian(0, bank_init_std).
/// The draws depend only on `rng`, so equal seeds give equal models.
LocalModel init_model(const ModelConfig& config, Rng& rng);

/// Sigmoid(degree - (lambda + 1)).
double branch_alpha(double degree, double lambda);

/// CSR with `n` rows and no edges.
Csr edgeless(std::size_t n);

/// Two SAGE layers over all rows of `x`: ReLU after the first, identity after
/// the second, dropout in between when `train`. Returns |rows| x embed.
Var sage_embed(Encoder& enc, Var x, const Csr& adj, double dropout, bool train, Rng& rng);

/// Log class probabilities (N x |C|) of one branch for targets with
/// embeddings `h` and neighbour means `n` against prototypes `protos`
/// (|C|*s x embed, class-major rows).
Var branch_log_probs(Branch& br, Var h, Var n, Var protos, std::size_t n_classes,
                     std::size_t per_class);

/// p = alpha * p_head + (1 - alpha) * p_tail per row.
Tensor merge_branches(const Tensor& p_head, const Tensor& p_tail, std::span<const double> alpha);

/// log(alpha * exp(a) + (1 - alpha) * exp(b)) per row, computed stably.
Var log_mix(Var log_a, Var log_b, std::span<const double> alpha);

struct BranchOutputs {
  Var log_head;  // N x |C|
  Var log_tail;  // N x |C|
};

/// Embeds the graph given by (`x`, `adj`) and the two banks, then runs both
/// branches for the `targets` rows. `neighbor_rows`, when non-empty, gives
/// for each target the row whose embedding is used as its neighbour mean
/// (the synthetic 2-node graphs); otherwise the 1-hop mean over `adj` is used.
BranchOutputs fedlog_forward(LocalModel& m, Var x, const Csr& adj,
                             std::span<const std::size_t> targets, bool train, Rng& rng,
                             std::span<const std::size_t> neighbor_rows = {});

/// Sum over `targets` of -log p[y]. FedLoG merges branches with `alpha`
/// (one per target); Plain ignores it.
Var classification_loss(LocalModel& m, Var x, const Csr& adj,
                        std::span<const std::size_t> targets, std::span<const int> labels,
                        std::span<const double> alpha, bool train, Rng& rng,
                        std::span<const std::size_t> neighbor_rows = {});

/// Sum of row L2 norms over both banks.
Var bank_norm(LocalModel& m, Tape& tape);

/// L_cls (degree-weighted merge) + beta * bank_norm for FedLoG; plain
/// cross-entropy for Plain. `nodes` are ids in `g`.
Var fitting_loss(LocalModel& m, Tape& tape, const Graph& g, std::span<const std::size_t> nodes,
                 bool train, Rng& rng);

enum class MergeMode { DegreeWeighted, Fixed };

/// Class probabilities in eval mode (no dropout), computed in chunks of
/// target nodes so memory stays bounded.
Tensor predict_proba(LocalModel& m, const Graph& g, std::span<const std::size_t> nodes,
                     MergeMode mode = MergeMode::DegreeWeighted);
std::vector<int> predict(LocalModel& m, const Graph& g, std::span<const std::size_t> nodes,
                         MergeMode mode = MergeMode::DegreeWeighted);

/// Fraction of `nodes` whose prediction equals the label; NaN for an empty set.
double accuracy(LocalModel& m, const Graph& g, std::span<const std::size_t> nodes);

/// Per-class accuracy over `nodes`; NaN for classes with no node.
std::vector<double> class_accuracy(LocalModel& m, const Graph& g,
                                   std::span<const std::size_t> nodes);

// ---------------------------------------------------------------------------
// Serialization: one JSON header line (format, version, tensors with name and
// shape, meta), then the tensors as little-endian float64 in header order.

void write_tensors(const std::filesystem::path& file, const std::string& format,
                   std::span<const Parameter* const> params, const nlohmann::json& meta);
/// Reads into `params`, checking names and shapes. Returns the meta object.
nlohmann::json read_tensors(const std::filesystem::path& file, const std::string& format,
                            std::span<Parameter* const> params);
/// Meta object without loading tensors.
nlohmann::json read_meta(const std::filesystem::path& file);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

void save_model(const LocalModel& m, const std::filesystem::path& file,
                const nlohmann::json& extra = nlohmann::json::object());
LocalModel load_model(const std::filesystem::path& file);

}  // namespace fedlog::model
