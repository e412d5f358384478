#include "fedlog/promptgen.hpp"

#include <algorithm>
#include <cmath>

#include "fedlog/errors.hpp"
#include "fedlog/parallel.hpp"

namespace fedlog::promptgen {

namespace {

constexpr std::size_t kEncoderParams = 6;

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Linear l{{name + ".w", Tensor(in, out)}, {name + ".b", Tensor(1, out)}};
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (Tensor* t : {&l.w.value, &l.b.value}) {
    for (double& v : t->values()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  }
  return l;
}

template <typename Leaf>
Var forward_with(const PromptGenerator& pg, Var x, Leaf leaf) {
  auto lin = [&](const Linear& l, Var in) { return add(matmul(in, leaf(l.w)), leaf(l.b)); };
  Var h = silu(lin(pg.l1, x));
  h = silu(lin(pg.l2, h));
  return lin(pg.l3, h);
}

std::vector<Parameter*> encoder_params(LocalModel& m) {
  auto all = m.shared_parameters();
  return {all.begin(), all.begin() + kEncoderParams};
}

std::vector<double> flatten(std::span<Parameter* const> params) {
  std::vector<double> out;
  for (const Parameter* p : params) {
    out.insert(out.end(), p->value.values().begin(), p->value.values().end());
  }
  return out;
}

std::vector<double> flatten(std::span<const Tensor> ts) {
  std::vector<double> out;
  for (const Tensor& t : ts) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

void assign_flat(std::span<Parameter* const> params, std::span<const double> flat) {
  std::size_t at = 0;
  for (Parameter* p : params) {
    auto v = p->value.values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), v.size(), v.begin());
    at += v.size();
  }
}

tensor::Csr single_edge() {
  tensor::Csr c;
  c.offsets = {0, 1, 2};
  c.indices = {1, 0};
  return c;
}

Tensor stack_pair(std::span<const double> a, std::span<const double> b) {
  Tensor t(2, a.size());
  std::copy(a.begin(), a.end(), t.row(0).begin());
  std::copy(b.begin(), b.end(), t.row(1).begin());
  return t;
}

/// grad_x l(phi, x) for the 2-node synthetic graph, row of the prompt node.
std::vector<double> prompt_input_gradient(LocalModel& phi, const Tensor& x, int label) {
  static const tensor::Csr adj = single_edge();
  Tape tape;
  Var xv = tape.input(x, true);
  std::size_t target = 0;
  Rng unused(0);
  Var loss = model::classification_loss(phi, xv, adj, std::span(&target, 1), std::span(&label, 1),
                                        {}, false, unused);
  Tensor g = tape.grad_wrt(loss, std::span(&xv, 1))[0];
  return {g.row(1).begin(), g.row(1).end()};
}

}  // namespace

std::vector<Parameter*> PromptGenerator::parameters() {
  return {&l1.w, &l1.b, &l2.w, &l2.b, &l3.w, &l3.b};
}

std::vector<const Parameter*> PromptGenerator::parameters() const {
  return {&l1.w, &l1.b, &l2.w, &l2.b, &l3.w, &l3.b};
}

PromptGenerator init_generator(std::size_t feature_dim, Rng& rng, std::size_t hidden) {
  if (feature_dim == 0 || hidden == 0) throw ContractError("generator dimensions must be positive");
  PromptGenerator pg;
  pg.l1 = make_linear("l1", feature_dim, hidden, rng);
  pg.l2 = make_linear("l2", hidden, hidden, rng);
  pg.l3 = make_linear("l3", hidden, feature_dim, rng);
  return pg;
}

Var generator_forward(PromptGenerator& pg, Var x) {
  Tape& tape = x.tape();
  return forward_with(pg, x, [&](const Parameter& p) {
    return tape.parameter(const_cast<Parameter&>(p));
  });
}

Tensor generate_prompt(const PromptGenerator& pg, const Tensor& x) {
  if (!pg.frozen) throw ContractError("generate_prompt: generator is not frozen");
  if (x.cols() != pg.feature_dim()) {
    throw DimensionError("generate_prompt: expected " + std::to_string(pg.feature_dim()) +
                         " features, got " + std::to_string(x.cols()));
  }
  Tape tape;
  return forward_with(pg, tape.view(x), [&](const Parameter& p) { return tape.view(p.value); })
      .value();
}

std::vector<PretrainSample> pretrain_samples(const Graph& g, std::span<const std::size_t> nodes,
                                             std::size_t hops, std::size_t* skipped) {
  if (hops == 0) throw ContractError("pretrain: hops must be at least 1");
  std::vector<PretrainSample> out;
  std::size_t skip = 0;
  for (std::size_t v : nodes) {
    auto hood = graphio::hop_neighborhood(g, std::span(&v, 1), hops);
    if (hood.empty()) {
      ++skip;
      continue;
    }
    Tensor mean(1, g.feature_dim());
    for (std::size_t u : hood) {
      auto row = g.features().row(u);
      for (std::size_t j = 0; j < row.size(); ++j) mean(0, j) += row[j];
    }
    mean.scale_(1.0 / static_cast<double>(hood.size()));
    std::vector<std::size_t> members{v};
    members.insert(members.end(), hood.begin(), hood.end());
    out.push_back({v, g.label(v), graphio::induced_subgraph(g, members).graph, std::move(mean)});
  }
  if (skipped) *skipped = skip;
  return out;
}

model::ModelConfig pretrain_head_config(std::size_t feature_dim, std::size_t n_classes) {
  model::ModelConfig c;
  c.kind = model::ModelKind::Plain;
  c.feature_dim = feature_dim;
  c.n_classes = n_classes;
  return c;
}

std::vector<double> encoder_gradient(LocalModel& phi, const Tensor& x, const tensor::Csr& adj,
                                     int label) {
  Tape tape;
  std::size_t target = 0;
  Rng unused(0);
  Var loss = model::classification_loss(phi, tape.view(x), adj, std::span(&target, 1),
                                        std::span(&label, 1), {}, false, unused);
  auto params = encoder_params(phi);
  return flatten(tape.backward(loss, params));
}

std::vector<double> mixed_derivative_fd(
    const std::function<std::vector<double>(std::span<const double>)>& grad_x,
    std::span<const double> phi, std::span<const double> u, double step) {
  if (phi.size() != u.size()) throw DimensionError("mixed_derivative_fd: phi and u differ in size");
  double norm = 0.0;
  for (double v : u) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    auto probe = grad_x(phi);
    return std::vector<double>(probe.size(), 0.0);
  }
  double e = step / norm;
  std::vector<double> shifted(phi.begin(), phi.end());
  for (std::size_t i = 0; i < u.size(); ++i) shifted[i] = phi[i] + e * u[i];
  auto plus = grad_x(shifted);
  for (std::size_t i = 0; i < u.size(); ++i) shifted[i] = phi[i] - e * u[i];
  auto minus = grad_x(shifted);
  for (std::size_t i = 0; i < plus.size(); ++i) plus[i] = (plus[i] - minus[i]) / (2.0 * e);
  return plus;
}

Objective pretrain_objective(PromptGenerator& pg, std::span<const PretrainSample> samples,
                             std::span<LocalModel> phis, double step, std::size_t threads) {
  if (samples.empty()) throw ContractError("pretrain_objective: no samples");
  if (phis.empty()) throw ContractError("pretrain_objective: no random heads");
  const std::size_t S = samples.size();
  const std::size_t d = pg.feature_dim();
  Tensor xv(S, d), xbar(S, d);
  for (std::size_t s = 0; s < S; ++s) {
    auto row = samples[s].subgraph.features().row(0);
    std::copy(row.begin(), row.end(), xv.row(s).begin());
    std::copy_n(samples[s].neighbor_mean.row(0).begin(), d, xbar.row(s).begin());
  }

  Tape tape;
  Var xp = generator_forward(pg, tape.view(xv));
  Var feat = scale(sum(row_sq_norm(sub(xp, tape.view(xbar)))), 1.0 / static_cast<double>(S));

  Objective obj;
  obj.feat = feat.value().item();
  obj.per_node_grad.assign(S, 0.0);
  Tensor g_xp(S, d);
  const double n_inv = 1.0 / static_cast<double>(phis.size());
  const tensor::Csr adj2 = single_edge();

  // Each random head is independent; partial results are combined in head
  // order so the outcome does not depend on the thread count.
  struct Partial {
    std::vector<double> per_node;
    Tensor g_xp;
  };
  std::vector<Partial> partials(phis.size());
  auto run = [&](std::size_t n) {
    LocalModel& phi = phis[n];
    Partial& part = partials[n];
    part.per_node.assign(S, 0.0);
    part.g_xp = Tensor(S, d);
    LocalModel work = phi;
    auto work_params = encoder_params(work);
    auto base = flatten(encoder_params(phi));
    for (std::size_t s = 0; s < S; ++s) {
      const PretrainSample& smp = samples[s];
      auto g_true = encoder_gradient(phi, smp.subgraph.features(), smp.subgraph.adjacency(),
                                     smp.label);
      Tensor x_syn = stack_pair(xv.row(s), xp.value().row(s));
      auto g_syn = encoder_gradient(phi, x_syn, adj2, smp.label);
      std::vector<double> u(g_syn.size());
      double val = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) {
        double diff = g_syn[i] - g_true[i];
        val += diff * diff;
        u[i] = 2.0 * diff;
      }
      part.per_node[s] = val;

      auto grad_x = [&](std::span<const double> flat) {
        assign_flat(work_params, flat);
        return prompt_input_gradient(work, x_syn, smp.label);
      };
      auto jtu = mixed_derivative_fd(grad_x, base, u, step);
      std::copy_n(jtu.begin(), d, part.g_xp.row(s).begin());
    }
  };
  parallel_for(phis.size(), threads, run);

  for (const Partial& part : partials) {
    for (std::size_t s = 0; s < S; ++s) {
      obj.per_node_grad[s] += part.per_node[s] * n_inv;
      for (std::size_t j = 0; j < d; ++j) {
        g_xp(s, j) += part.g_xp(s, j) * n_inv / static_cast<double>(S);
      }
    }
  }
  for (double v : obj.per_node_grad) obj.grad += v;
  obj.grad /= static_cast<double>(S);

  // d(L_grad)/d(x_p) is fixed, so sum(x_p * G) carries it into the generator.
  Var total = add(feat, sum(mul(xp, tape.constant(std::move(g_xp)))));
  auto params = pg.parameters();
  obj.pg_grads = tape.backward(total, params);
  return obj;
}

PromptGenerator pretrain_generator(const Graph& g, std::span<const std::size_t> nodes,
                                   const PretrainOptions& options, PretrainReport* report) {
  if (options.inits == 0) throw ContractError("pretrain: inits must be at least 1");
  std::size_t skipped = 0;
  auto samples = pretrain_samples(g, nodes, options.hops, &skipped);
  if (samples.empty()) {
    throw ContractError("pretrain: no training node has a neighbour within " +
                        std::to_string(options.hops) + " hops");
  }
  SeedSequence seeds(options.seed);
  Rng init_rng = seeds.stream("pg.init");
  PromptGenerator pg = init_generator(g.feature_dim(), init_rng, options.hidden);
  auto head_config = pretrain_head_config(g.feature_dim(), g.num_classes());

  tensor::AdamState adam;
  adam.options.lr = options.lr;
  auto params = pg.parameters();
  PretrainReport rep;
  rep.used = samples.size();
  rep.skipped = skipped;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<LocalModel> phis;
    phis.reserve(options.inits);
    for (std::size_t i = 0; i < options.inits; ++i) {
      Rng r = seeds.stream("pg.phi", epoch, i);
      phis.push_back(model::init_model(head_config, r));
    }
    Objective obj = pretrain_objective(pg, samples, phis, options.fd_step, options.threads);
    rep.feat_loss.push_back(obj.feat);
    rep.grad_loss.push_back(obj.grad);
    rep.total_loss.push_back(obj.feat + obj.grad);
    adam_step(adam, params, obj.pg_grads);
  }
  if (report) *report = std::move(rep);
  return pg;
}

AggregatedGenerators aggregate_generators(std::span<const PromptGenerator> generators,
                                          std::span<const std::vector<double>> rates) {
  if (generators.empty()) throw ContractError("aggregate_generators: no generators");
  if (rates.size() != generators.size()) {
    throw DimensionError("aggregate_generators: one rate vector per generator expected");
  }
  const std::size_t C = rates[0].size();
  for (std::size_t k = 0; k < generators.size(); ++k) {
    if (rates[k].size() != C) throw DimensionError("aggregate_generators: rate lengths differ");
    auto a = generators[k].parameters();
    auto b = generators[0].parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i]->value.same_shape(b[i]->value)) {
        throw DimensionError("aggregate_generators: generator architectures differ");
      }
    }
  }

  AggregatedGenerators out;
  const std::size_t K = generators.size();
  for (std::size_t c = 0; c < C; ++c) {
    double total = 0.0;
    bool equal = true;
    for (std::size_t k = 0; k < K; ++k) {
      total += rates[k][c];
      equal = equal && rates[k][c] == rates[0][c];
    }
    if (total == 0.0) out.fallback_classes.push_back(static_cast<int>(c));

    PromptGenerator pg = generators[0];
    auto dst = pg.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      Tensor acc(dst[i]->value.rows(), dst[i]->value.cols());
      for (std::size_t k = 0; k < K; ++k) {
        const Tensor& src = generators[k].parameters()[i]->value;
        if (equal || total == 0.0) {
          acc.add_(src);
        } else {
          acc.add_scaled_(src, rates[k][c]);
        }
      }
      const double denom = equal || total == 0.0 ? static_cast<double>(K) : total;
      for (double& v : acc.values()) v /= denom;
      dst[i]->value = std::move(acc);
    }
    pg.frozen = true;
    out.per_class.push_back(std::move(pg));
  }
  return out;
}

std::uint64_t parameter_hash(std::span<const Parameter* const> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), p->value.size() * sizeof(double));
  }
  return h;
}

std::uint64_t generator_hash(std::span<const PromptGenerator> generators) {
  std::vector<const Parameter*> all;
  for (const PromptGenerator& pg : generators) {
    auto p = pg.parameters();
    all.insert(all.end(), p.begin(), p.end());
  }
  return parameter_hash(all);
}

void save_generators(std::span<const PromptGenerator> generators,
                     const std::filesystem::path& file) {
  if (generators.empty()) throw ContractError("save_generators: nothing to save");
  std::vector<PromptGenerator> named(generators.begin(), generators.end());
  std::vector<const Parameter*> params;
  for (std::size_t c = 0; c < named.size(); ++c) {
    for (Parameter* p : named[c].parameters()) {
      p->name = "pg" + std::to_string(c) + "." + p->name;
      params.push_back(p);
    }
  }
  nlohmann::json meta = {{"classes", generators.size()},
                         {"feature_dim", generators[0].feature_dim()},
                         {"hidden", generators[0].l1.w.value.cols()}};
  model::write_tensors(file, "fedlog-generators", params, meta);
}

std::vector<PromptGenerator> load_generators(const std::filesystem::path& file) {
  nlohmann::json meta = model::read_meta(file);
  std::size_t classes = 0, d = 0, hidden = 0;
  try {
    classes = meta.at("classes").get<std::size_t>();
    d = meta.at("feature_dim").get<std::size_t>();
    hidden = meta.at("hidden").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  if (classes == 0 || d == 0 || hidden == 0) throw FormatError(file.string() + ": empty bank");
  std::vector<PromptGenerator> out;
  Rng rng(0);
  for (std::size_t c = 0; c < classes; ++c) {
    out.push_back(init_generator(d, rng, hidden));
    for (Parameter* p : out.back().parameters()) p->name = "pg" + std::to_string(c) + "." + p->name;
  }
  std::vector<Parameter*> params;
  for (auto& pg : out) {
    auto p = pg.parameters();
    params.insert(params.end(), p.begin(), p.end());
  }
  model::read_tensors(file, "fedlog-generators", params);
  for (auto& pg : out) {
    for (Parameter* p : pg.parameters()) p->name = p->name.substr(p->name.find('.') + 1);
    pg.frozen = true;
  }
  return out;
}

}  // namespace fedlog::promptgen
