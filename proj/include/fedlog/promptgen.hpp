#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "fedlog/graphio.hpp"
#include "fedlog/model.hpp"
#include "fedlog/rng.hpp"
#include "fedlog/tensor.hpp"

namespace fedlog::promptgen {

using graphio::Graph;
using model::Linear;
using model::LocalModel;
using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

/// d -> hidden -> hidden -> d MLP with SiLU after both hidden layers.
struct PromptGenerator {
  Linear l1, l2, l3;
  bool frozen = false;

  std::size_t feature_dim() const { return l1.w.value.rows(); }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

PromptGenerator init_generator(std::size_t feature_dim, Rng& rng, std::size_t hidden = 256);

/// Forward pass on `x` (rows are nodes) with the generator weights tracked.
Var generator_forward(PromptGenerator& pg, Var x);

/// x_p = PG(x) for every row of `x`. Requires a frozen generator.
Tensor generate_prompt(const PromptGenerator& pg, const Tensor& x);

/// One pretraining target: node v of the client graph with the features of
/// its true h-hop subgraph (v is local node 0) and the mean feature of the
/// subgraph's other nodes.
struct PretrainSample {
  std::size_t node = 0;
  int label = 0;
  Graph subgraph;
  Tensor neighbor_mean;  // 1 x d
};

/// Samples for `nodes`. Nodes with no neighbour within `hops` are skipped and
/// counted in `skipped`.
std::vector<PretrainSample> pretrain_samples(const Graph& g, std::span<const std::size_t> nodes,
                                             std::size_t hops, std::size_t* skipped = nullptr);

/// Pretrain head: a Plain model (encoder + linear head) with n_classes
/// outputs, drawn fresh for every random initialization.
model::ModelConfig pretrain_head_config(std::size_t feature_dim, std::size_t n_classes);

/// Cross-entropy gradient of node 0 of (`x`, `adj`) with respect to the
/// encoder parameters of `phi`, flattened in canonical order.
std::vector<double> encoder_gradient(LocalModel& phi, const Tensor& x, const tensor::Csr& adj,
                                     int label);

/// Directional mixed derivative d/dx [u . grad_phi l(phi, x)] estimated as
/// (grad_x l(phi + e u) - grad_x l(phi - e u)) / (2 e) with e = step / ||u||.
/// `grad_x` evaluates grad_x l at the given flat parameter vector. Returns
/// zeros when u = 0.
std::vector<double> mixed_derivative_fd(
    const std::function<std::vector<double>(std::span<const double>)>& grad_x,
    std::span<const double> phi, std::span<const double> u, double step = 1e-3);

struct Objective {
  double feat = 0.0;  // mean_v ||PG(x_v) - xbar_v||^2
  double grad = 0.0;  // mean over (phi, v) of ||g_syn - g_true||^2
  std::vector<double> per_node_grad;  // mean over phi, per sample
  /// Gradient of feat + grad with respect to pg.parameters().
  std::vector<Tensor> pg_grads;
};

/// Value and generator gradient of the pretraining objective for fixed
/// random heads `phis`.
Objective pretrain_objective(PromptGenerator& pg, std::span<const PretrainSample> samples,
                             std::span<LocalModel> phis, double step = 1e-3,
                             std::size_t threads = 1);

struct PretrainOptions {
  std::size_t hops = 2;
  std::size_t inits = 20;  // N
  std::size_t epochs = 100;
  double lr = 1e-2;
  std::size_t hidden = 256;
  double fd_step = 1e-3;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct PretrainReport {
  std::size_t used = 0;
  std::size_t skipped = 0;
  std::vector<double> feat_loss;   // per epoch, before the update
  std::vector<double> grad_loss;   // per epoch, before the update
  std::vector<double> total_loss;  // per epoch, before the update
};

/// Minimizes L_feat + L_grad with one full-batch Adam step per epoch. The
/// random heads are redrawn every epoch from the stream ("pg.phi", epoch, i).
/// Throws ContractError if no node has a neighbour within `hops`.
PromptGenerator pretrain_generator(const Graph& g, std::span<const std::size_t> nodes,
                                   const PretrainOptions& options,
                                   PretrainReport* report = nullptr);

struct AggregatedGenerators {
  std::vector<PromptGenerator> per_class;  // frozen
  /// Classes with zero total rate, aggregated as an unweighted mean.
  std::vector<int> fallback_classes;
};

/// PG^c = sum_k r_k[c] PG_k / sum_k r_k[c] for every class.
AggregatedGenerators aggregate_generators(std::span<const PromptGenerator> generators,
                                          std::span<const std::vector<double>> rates);

/// FNV-1a over the raw parameter bytes.
std::uint64_t parameter_hash(std::span<const Parameter* const> params);
std::uint64_t generator_hash(std::span<const PromptGenerator> generators);

void save_generators(std::span<const PromptGenerator> generators,
                     const std::filesystem::path& file);
/// Loaded generators are frozen.
std::vector<PromptGenerator> load_generators(const std::filesystem::path& file);

}  // namespace fedlog::promptgen
