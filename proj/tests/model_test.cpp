#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fd_oracle.hpp"
#include "fedlog/errors.hpp"
#include "fedlog/model.hpp"

namespace fedlog::model {
namespace {

using graphio::Edge;
using testing::central_difference;
using testing::max_rel_error;
using testing::random_tensor;

ModelConfig tiny_config(std::size_t d, std::size_t classes, ModelKind kind = ModelKind::FedLoG) {
  ModelConfig c;
  c.kind = kind;
  c.feature_dim = d;
  c.n_classes = classes;
  c.per_class = 2;
  c.hidden = 4;
  c.embed = 3;
  return c;
}

std::vector<std::size_t> iota_nodes(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void zero(Linear& l) {
  l.w.value.fill(0.0);
  l.b.value.fill(0.0);
}

Graph five_node_fixture() {
  Rng rng(5);
  std::vector<Edge> e = {{0, 1}, {1, 2}, {2, 3}, {1, 3}};
  return Graph(random_tensor(5, 3, rng), {0, 1, 0, 1, 1}, 2, e);
}

Graph separable_sbm(std::uint64_t seed) {
  return graphio::generate_sbm({.block_sizes = {100, 100},
                                .p_intra = 0.05,
                                .p_inter = 0.005,
                                .feature_dim = 8,
                                .separation = 3.0,
                                .seed = seed});
}

// ---------------------------------------------------------------------------
// Encoder

TEST(SageEmbed, ZeroWeightsGiveZeroEmbeddings) {
  Rng rng(1);
  auto m = init_model(tiny_config(3, 2), rng);
  for (Parameter* p : m.shared_parameters()) p->value.fill(0.0);
  Graph g = five_node_fixture();
  Tape tape;
  Var h = sage_embed(m.encoder, tape.view(g.features()), g.adjacency(), 0.5, false, rng);
  ASSERT_EQ(h.rows(), 5u);
  ASSERT_EQ(h.cols(), 3u);
  for (double v : h.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(SageEmbed, TwoNodePathMatchesScalarRecurrence) {
  ModelConfig c = tiny_config(1, 2, ModelKind::Plain);
  c.hidden = 1;
  c.embed = 1;
  Rng rng(1);
  auto m = init_model(c, rng);
  m.encoder.l1.w_self.value = Tensor::scalar(2.0);
  m.encoder.l1.w_neigh.value = Tensor::scalar(-1.0);
  m.encoder.l1.bias.value = Tensor::scalar(0.5);
  m.encoder.l2.w_self.value = Tensor::scalar(1.0);
  m.encoder.l2.w_neigh.value = Tensor::scalar(0.5);
  m.encoder.l2.bias.value = Tensor::scalar(-1.0);
  std::vector<Edge> e = {{0, 1}};
  Graph g(Tensor::from_rows({{1.0}, {3.0}}), {0, 1}, 2, e);

  // h0 = relu(2*1 - 3 + 0.5) = 0, h1 = relu(2*3 - 1 + 0.5) = 5.5
  // o0 = 0 + 0.5*5.5 - 1 = 1.75, o1 = 5.5 + 0.5*0 - 1 = 4.5
  Tape tape;
  Var h = sage_embed(m.encoder, tape.view(g.features()), g.adjacency(), 0.5, false, rng);
  EXPECT_DOUBLE_EQ(h.value()(0, 0), 1.75);
  EXPECT_DOUBLE_EQ(h.value()(1, 0), 4.5);
}

TEST(SageEmbed, IsolatedNodeEqualsNodeWithZeroFeatureNeighbour) {
  Rng rng(3);
  auto m = init_model(tiny_config(3, 2), rng);
  // Only the first layer reads neighbours, so the neighbour's own layer-1
  // output (which sees node 0) does not leak back.
  m.encoder.l2.w_neigh.value.fill(0.0);
  Tensor x = Tensor::from_rows({{0.3, -1.2, 0.7}});
  Graph alone(x, {0}, 2, {});
  std::vector<Edge> e = {{0, 1}};
  Graph paired(Tensor::from_rows({{0.3, -1.2, 0.7}, {0.0, 0.0, 0.0}}), {0, 1}, 2, e);
  Tape tape;
  Var a = sage_embed(m.encoder, tape.view(alone.features()), alone.adjacency(), 0.5, false, rng);
  Var b = sage_embed(m.encoder, tape.view(paired.features()), paired.adjacency(), 0.5, false, rng);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(a.value()(0, j), b.value()(0, j));
}

TEST(SageEmbed, DropoutOnlyInTrainMode) {
  Rng rng(3);
  auto m = init_model(tiny_config(3, 2), rng);
  Graph g = five_node_fixture();
  Tape tape;
  Rng r1(9), r2(10);
  Var a = sage_embed(m.encoder, tape.view(g.features()), g.adjacency(), 0.5, false, r1);
  Var b = sage_embed(m.encoder, tape.view(g.features()), g.adjacency(), 0.5, false, r2);
  EXPECT_EQ(a.value(), b.value());
}

TEST(SageEmbed, RejectsMismatchedAdjacency) {
  Rng rng(3);
  auto m = init_model(tiny_config(3, 2), rng);
  Tape tape;
  EXPECT_THROW(sage_embed(m.encoder, tape.constant(Tensor(4, 3)), edgeless(5), 0.5, false, rng),
               DimensionError);
}

// ---------------------------------------------------------------------------
// Branch classifier

struct BranchFixture {
  LocalModel m;
  BranchFixture() {
    ModelConfig c = tiny_config(2, 2);
    c.embed = 2;
    c.per_class = 1;
    Rng rng(11);
    m = init_model(c, rng);
  }
};

TEST(Branch, ZeroTransMapLeavesEmbeddingUnchanged) {
  BranchFixture f;
  zero(f.m.head.trans3);
  Rng rng(2);
  Tensor h = random_tensor(4, 2, rng);
  Tensor n = random_tensor(4, 2, rng);
  Tensor protos = random_tensor(2, 2, rng);
  Tape tape;
  Var out = branch_log_probs(f.m.head, tape.constant(h), tape.constant(n), tape.constant(protos),
                             2, 1);
  // Oracle: log softmax of -||h - mean_c||^2 computed directly.
  for (std::size_t i = 0; i < 4; ++i) {
    double d[2];
    for (std::size_t c = 0; c < 2; ++c) {
      double dx = h(i, 0) - protos(c, 0), dy = h(i, 1) - protos(c, 1);
      d[c] = dx * dx + dy * dy;
    }
    double lse = std::log(std::exp(-d[0]) + std::exp(-d[1]));
    EXPECT_NEAR(out.value()(i, 0), -d[0] - lse, 1e-12);
    EXPECT_NEAR(out.value()(i, 1), -d[1] - lse, 1e-12);
  }
}

TEST(Branch, EquidistantClassMeansGiveUniform) {
  BranchFixture f;
  zero(f.m.head.trans3);
  Tape tape;
  Var out = branch_log_probs(f.m.head, tape.constant(Tensor(1, 2)), tape.constant(Tensor(1, 2)),
                             tape.constant(Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}})), 2, 1);
  EXPECT_NEAR(std::exp(out.value()(0, 0)), 0.5, 1e-12);
  EXPECT_NEAR(std::exp(out.value()(0, 1)), 0.5, 1e-12);
}

TEST(Branch, SquaredDistancesZeroAndLn3) {
  BranchFixture f;
  zero(f.m.head.trans3);
  Tape tape;
  double r = std::sqrt(std::log(3.0));
  Var out = branch_log_probs(f.m.head, tape.constant(Tensor(1, 2)), tape.constant(Tensor(1, 2)),
                             tape.constant(Tensor::from_rows({{0.0, 0.0}, {r, 0.0}})), 2, 1);
  EXPECT_NEAR(std::exp(out.value()(0, 0)), 0.75, 1e-12);
  EXPECT_NEAR(std::exp(out.value()(0, 1)), 0.25, 1e-12);
}

TEST(Branch, MatchesPerPrototypeDefinition) {
  // Oracle: the per-pair formulation evaluated prototype by prototype with
  // explicit loops over the stored weights.
  ModelConfig c = tiny_config(2, 2);
  c.embed = 3;
  c.per_class = 2;
  Rng rng(21);
  auto m = init_model(c, rng);
  Tensor h = random_tensor(3, 3, rng);
  Tensor n = random_tensor(3, 3, rng);
  Tensor protos = random_tensor(4, 3, rng);
  Tape tape;
  Tensor got = branch_log_probs(m.head, tape.constant(h), tape.constant(n),
                                tape.constant(protos), 2, 2)
                   .value();

  auto silu = [](double v) { return v / (1.0 + std::exp(-v)); };
  auto apply = [](const Linear& l, const std::vector<double>& in) {
    std::vector<double> out(l.w.value.cols());
    for (std::size_t o = 0; o < out.size(); ++o) {
      double s = l.b.value(0, o);
      for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * l.w.value(i, o);
      out[o] = s;
    }
    return out;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> t(3, 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        d += std::pow(h(i, k) - protos(j, k), 2) + std::pow(n(i, k) - protos(j, k), 2);
      }
      std::vector<double> in = {h(i, 0), h(i, 1), h(i, 2), n(i, 0), n(i, 1), n(i, 2), d};
      auto a = apply(m.head.msg1, in);
      for (double& v : a) v = silu(v);
      auto msg = apply(m.head.msg2, a);
      for (double& v : msg) v = silu(v);
      auto u = apply(m.head.trans1, msg);
      for (double& v : u) v = silu(v);
      double s = apply(m.head.trans3, apply(m.head.trans2, u))[0];
      for (std::size_t k = 0; k < 3; ++k) t[k] += (h(i, k) - protos(j, k)) * s / 4.0;
    }
    double dist[2];
    for (std::size_t cl = 0; cl < 2; ++cl) {
      dist[cl] = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        double mean = 0.5 * (protos(2 * cl, k) + protos(2 * cl + 1, k));
        dist[cl] += std::pow(h(i, k) + t[k] - mean, 2);
      }
    }
    double lse = std::log(std::exp(-dist[0]) + std::exp(-dist[1]));
    EXPECT_NEAR(got(i, 0), -dist[0] - lse, 1e-10);
    EXPECT_NEAR(got(i, 1), -dist[1] - lse, 1e-10);
  }
}

TEST(Branch, RejectsWrongPrototypeCount) {
  BranchFixture f;
  Tape tape;
  EXPECT_THROW(branch_log_probs(f.m.head, tape.constant(Tensor(1, 2)), tape.constant(Tensor(1, 2)),
                                tape.constant(Tensor(3, 2)), 2, 1),
               DimensionError);
}

// ---------------------------------------------------------------------------
// Merging

TEST(Merge, AlphaAtThresholdIsHalf) { EXPECT_EQ(branch_alpha(4.0, 3.0), 0.5); }

TEST(Merge, AlphaAtDegreeThreeLambdaThree) {
  EXPECT_NEAR(branch_alpha(3.0, 3.0), 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(branch_alpha(3.0, 3.0), 0.26894, 1e-5);
}

TEST(Merge, AlphaIsStrictlyIncreasingAndBounded) {
  double prev = 0.0;
  for (int d = 0; d <= 30; ++d) {
    double a = branch_alpha(d, 3.0);
    EXPECT_GT(a, prev);
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
    prev = a;
  }
  EXPECT_NEAR(branch_alpha(40.0, 3.0), 1.0, 1e-12);
}

TEST(Merge, LargeDegreeSelectsHead) {
  Tensor ph = Tensor::from_rows({{0.9, 0.1}});
  Tensor pt = Tensor::from_rows({{0.2, 0.8}});
  std::vector<double> a = {branch_alpha(60.0, 3.0)};
  Tensor p = merge_branches(ph, pt, a);
  EXPECT_NEAR(p(0, 0), 0.9, 1e-12);
}

TEST(Merge, EqualBranchesAreUnchangedForAnyAlpha) {
  Tensor p = Tensor::from_rows({{0.3, 0.7}, {0.6, 0.4}});
  for (double a : {0.0, 0.2, 0.5, 0.99}) {
    std::vector<double> alpha = {a, 1.0 - a};
    Tensor out = merge_branches(p, p, alpha);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(out[i], p[i], 1e-15);
  }
}

TEST(Merge, LogMixMatchesDirectFormula) {
  Rng rng(4);
  Tensor a = random_tensor(3, 4, rng, -30, 0);
  Tensor b = random_tensor(3, 4, rng, -30, 0);
  std::vector<double> alpha = {0.1, 0.5, 0.97};
  Tape tape;
  Tensor got = log_mix(tape.constant(a), tape.constant(b), alpha).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double want = std::log(alpha[i] * std::exp(a(i, j)) + (1 - alpha[i]) * std::exp(b(i, j)));
      EXPECT_NEAR(got(i, j), want, 1e-12);
    }
  }
}

TEST(Merge, LogMixGradientMatchesFiniteDifference) {
  Rng rng(6);
  Tensor a = random_tensor(2, 3, rng, -3, 0);
  Tensor b = random_tensor(2, 3, rng, -3, 0);
  std::vector<double> alpha = {0.3, 0.8};
  auto f = [&](const Tensor& x) {
    Tape t;
    return sum(log_mix(t.constant(x), t.constant(b), alpha)).value().item();
  };
  Tape tape;
  Var va = tape.input(a, true);
  auto g = tape.grad_wrt(sum(log_mix(va, tape.constant(b), alpha)), std::vector<Var>{va});
  EXPECT_LT(max_rel_error(g[0], central_difference(f, a)), 1e-6);
}

// ---------------------------------------------------------------------------
// Fitting loss

TEST(FittingLoss, SingleNodeHalfProbabilityIsLn2) {
  // Zero banks embed every prototype identically, so both class means
  // coincide and each branch assigns 0.5 to either class.
  Rng rng(8);
  auto m = init_model(tiny_config(3, 2), rng);
  m.bank_head.value.fill(0.0);
  m.bank_tail.value.fill(0.0);
  Graph g(Tensor::from_rows({{0.4, -0.2, 1.0}}), {1}, 2, {});
  Tape tape;
  std::vector<std::size_t> nodes = {0};
  double loss = fitting_loss(m, tape, g, nodes, false, rng).value().item();
  EXPECT_NEAR(loss, std::log(2.0), 1e-12);
}

TEST(FittingLoss, BetaAddsBankRowNorms) {
  Rng rng(8);
  auto m = init_model(tiny_config(3, 2), rng);
  Graph g = five_node_fixture();
  auto nodes = iota_nodes(5);
  m.config.beta = 0.0;
  double pure;
  {
    Tape tape;
    pure = fitting_loss(m, tape, g, nodes, false, rng).value().item();
  }
  m.config.beta = 0.25;
  Tape tape;
  double regularized = fitting_loss(m, tape, g, nodes, false, rng).value().item();
  double norms = 0.0;
  for (const Tensor* b : {&m.bank_head.value, &m.bank_tail.value}) {
    for (std::size_t r = 0; r < b->rows(); ++r) {
      double s = 0.0;
      for (double v : b->row(r)) s += v * v;
      norms += std::sqrt(s);
    }
  }
  EXPECT_NEAR(regularized - pure, 0.25 * norms, 1e-12);
}

TEST(FittingLoss, PureCrossEntropyMatchesMergedProbabilities) {
  Rng rng(8);
  auto m = init_model(tiny_config(3, 2), rng);
  m.config.beta = 0.0;
  Graph g = five_node_fixture();
  auto nodes = iota_nodes(5);
  Tape tape;
  double loss = fitting_loss(m, tape, g, nodes, false, rng).value().item();
  Tensor p = predict_proba(m, g, nodes);
  double want = 0.0;
  for (std::size_t v = 0; v < 5; ++v) want -= std::log(p(v, g.label(v)));
  EXPECT_NEAR(loss, want, 1e-10);
}

TEST(FittingLoss, BankGradientsMatchFiniteDifferences) {
  Rng rng(12);
  auto m = init_model(tiny_config(3, 2), rng);
  for (Parameter* b : {&m.bank_head, &m.bank_tail}) b->value = random_tensor(4, 3, rng);
  Graph g = five_node_fixture();
  auto nodes = iota_nodes(5);

  Tape tape;
  Var loss = fitting_loss(m, tape, g, nodes, false, rng);
  std::vector<Parameter*> params = {&m.bank_head, &m.bank_tail};
  auto grads = tape.backward(loss, params);

  for (std::size_t k = 0; k < 2; ++k) {
    Parameter* p = params[k];
    auto f = [&](const Tensor& v) {
      Tensor saved = p->value;
      p->value = v;
      Tape t;
      double out = fitting_loss(m, t, g, nodes, false, rng).value().item();
      p->value = saved;
      return out;
    };
    Tensor fd = central_difference(f, p->value);
    EXPECT_LT(max_rel_error(grads[k], fd), 1e-4) << p->name;
    double mag = 0.0;
    for (double v : grads[k].values()) mag += std::abs(v);
    EXPECT_GT(mag, 0.0) << p->name;
  }
}

TEST(FittingLoss, AllParameterGradientsMatchFiniteDifferences) {
  Rng rng(13);
  auto m = init_model(tiny_config(3, 2), rng);
  Graph g = five_node_fixture();
  auto nodes = iota_nodes(5);
  auto params = m.all_parameters();
  Tape tape;
  auto grads = tape.backward(fitting_loss(m, tape, g, nodes, false, rng), params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter* p = params[k];
    auto f = [&](const Tensor& v) {
      Tensor saved = p->value;
      p->value = v;
      Tape t;
      double out = fitting_loss(m, t, g, nodes, false, rng).value().item();
      p->value = saved;
      return out;
    };
    EXPECT_LT(max_rel_error(grads[k], central_difference(f, p->value)), 1e-4) << p->name;
  }
}

TEST(FittingLoss, PlainModelGradientsMatchFiniteDifferences) {
  Rng rng(14);
  auto m = init_model(tiny_config(3, 2, ModelKind::Plain), rng);
  Graph g = five_node_fixture();
  auto nodes = iota_nodes(5);
  auto params = m.all_parameters();
  Tape tape;
  auto grads = tape.backward(fitting_loss(m, tape, g, nodes, false, rng), params);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter* p = params[k];
    auto f = [&](const Tensor& v) {
      Tensor saved = p->value;
      p->value = v;
      Tape t;
      double out = fitting_loss(m, t, g, nodes, false, rng).value().item();
      p->value = saved;
      return out;
    };
    EXPECT_LT(max_rel_error(grads[k], central_difference(f, p->value)), 1e-4) << p->name;
  }
}

TEST(FittingLoss, EmptyNodeSetIsAContractError) {
  Rng rng(1);
  auto m = init_model(tiny_config(3, 2), rng);
  Graph g = five_node_fixture();
  Tape tape;
  EXPECT_THROW(fitting_loss(m, tape, g, {}, false, rng), ContractError);
}

double train_steps(LocalModel& m, const Graph& g, std::span<const std::size_t> nodes, int steps,
                   double lr, std::uint64_t seed) {
  tensor::AdamState adam;
  adam.options.lr = lr;
  Rng rng(seed);
  auto params = m.all_parameters();
  double last = 0.0;
  for (int s = 0; s < steps; ++s) {
    Tape tape;
    Var loss = fitting_loss(m, tape, g, nodes, true, rng);
    last = loss.value().item();
    adam_step(adam, params, tape.backward(loss, params));
  }
  return last;
}

// Four classes: A is a 10-clique (degree 9 > lambda + 3), B is disjoint pairs
// (degree 1), C and D are degree-4 circulants (alpha = 0.5).
Graph routing_fixture(Rng& rng) {
  std::vector<Edge> e;
  for (std::size_t a = 0; a < 10; ++a) {
    for (std::size_t b = a + 1; b < 10; ++b) e.emplace_back(a, b);
  }
  for (std::size_t v = 10; v < 20; v += 2) e.emplace_back(v, v + 1);
  for (std::size_t base : {20ul, 30ul}) {
    for (std::size_t i = 0; i < 10; ++i) {
      e.emplace_back(base + i, base + (i + 1) % 10);
      e.emplace_back(base + i, base + (i + 2) % 10);
    }
  }
  Tensor x = random_tensor(40, 4, rng, -0.5, 0.5);
  std::vector<int> labels(40);
  for (std::size_t v = 0; v < 40; ++v) {
    labels[v] = static_cast<int>(v / 10);
    x(v, v / 10) += 1.0;
  }
  return Graph(x, labels, 4, e);
}

TEST(FittingLoss, KnowledgeRoutesByDegree) {
  // Plain gradient descent: Adam rescales every coordinate to a similar step
  // size, which hides how much gradient each bank received.
  const int seeds = 8;
  const double lr = 3e-3;
  double head_a = 0, tail_a = 0, head_b = 0, tail_b = 0;
  int a_wins = 0, b_wins = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    Rng rng(31 + seed);
    Graph g = routing_fixture(rng);
    ModelConfig c = tiny_config(4, 4);
    c.per_class = 3;
    c.hidden = 16;
    c.embed = 8;
    auto m = init_model(c, rng);
    Tensor head0 = m.bank_head.value, tail0 = m.bank_tail.value;
    auto nodes = iota_nodes(40);
    auto params = m.all_parameters();
    Rng drop(7);
    for (int step = 0; step < 100; ++step) {
      Tape tape;
      auto grads = tape.backward(fitting_loss(m, tape, g, nodes, true, drop), params);
      for (std::size_t k = 0; k < params.size(); ++k) params[k]->value.add_scaled_(grads[k], -lr);
    }
    auto displacement = [&](const Tensor& now, const Tensor& init, std::size_t cls) {
      double s = 0.0;
      for (std::size_t r = cls * c.per_class; r < (cls + 1) * c.per_class; ++r) {
        for (std::size_t j = 0; j < now.cols(); ++j) s += std::pow(now(r, j) - init(r, j), 2);
      }
      return std::sqrt(s);
    };
    double ha = displacement(m.bank_head.value, head0, 0);
    double ta = displacement(m.bank_tail.value, tail0, 0);
    double hb = displacement(m.bank_head.value, head0, 1);
    double tb = displacement(m.bank_tail.value, tail0, 1);
    head_a += ha;
    tail_a += ta;
    head_b += hb;
    tail_b += tb;
    a_wins += ha > ta;
    b_wins += tb > hb;
  }
  EXPECT_GT(head_a, tail_a);
  EXPECT_GT(tail_b, head_b);
  EXPECT_GE(a_wins, 6);
  EXPECT_GE(b_wins, 6);
}

// ---------------------------------------------------------------------------
// Prediction

TEST(Predict, ProbabilitiesSumToOne) {
  for (ModelKind kind : {ModelKind::FedLoG, ModelKind::Plain}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      Graph g = graphio::generate_sbm({.block_sizes = {15, 10, 12},
                                       .p_intra = 0.2,
                                       .p_inter = 0.05,
                                       .feature_dim = 5,
                                       .seed = seed});
      ModelConfig c = tiny_config(5, 3, kind);
      auto m = init_model(c, rng);
      for (MergeMode mode : {MergeMode::DegreeWeighted, MergeMode::Fixed}) {
        Tensor p = predict_proba(m, g, iota_nodes(g.num_nodes()), mode);
        for (std::size_t i = 0; i < p.rows(); ++i) {
          double s = 0.0;
          for (double v : p.row(i)) {
            EXPECT_GE(v, 0.0);
            s += v;
          }
          EXPECT_NEAR(s, 1.0, 1e-9);
        }
      }
    }
  }
}

TEST(Predict, IsPureAndChunkingInvariant) {
  Rng rng(2);
  Graph g = separable_sbm(3);
  auto m = init_model(tiny_config(8, 2), rng);
  auto nodes = iota_nodes(g.num_nodes());
  auto before = m.all_parameters();
  std::vector<Tensor> values;
  for (auto* p : before) values.push_back(p->value);

  Tensor a = predict_proba(m, g, nodes);
  Tensor b = predict_proba(m, g, nodes);
  EXPECT_EQ(a, b);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(before[k]->value, values[k]);

  for (std::size_t v : {0ul, 77ul, 199ul}) {
    std::vector<std::size_t> one = {v};
    Tensor single = predict_proba(m, g, one);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(single(0, c), a(v, c), 1e-14);
  }
}

TEST(Predict, FixedModeUsesHalf) {
  Rng rng(2);
  Graph g = five_node_fixture();
  auto m = init_model(tiny_config(3, 2), rng);
  auto nodes = iota_nodes(5);
  Tensor fixed = predict_proba(m, g, nodes, MergeMode::Fixed);

  Tape tape;
  Rng unused(0);
  auto br = fedlog_forward(m, tape.view(g.features()), g.adjacency(), nodes, false, unused);
  std::vector<double> half(5, 0.5);
  Tensor want = merge_branches(exp(br.log_head).value(), exp(br.log_tail).value(), half);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(fixed[i], want[i], 1e-14);
}

TEST(Predict, UntrainedModelIsAtChanceLevel) {
  Graph g = separable_sbm(4);
  auto nodes = iota_nodes(g.num_nodes());
  double total = 0.0;
  const int inits = 10;
  for (int s = 0; s < inits; ++s) {
    Rng rng(100 + s);
    auto m = init_model(tiny_config(8, 2), rng);
    total += accuracy(m, g, nodes);
  }
  EXPECT_NEAR(total / inits, 0.5, 0.1);
}

TEST(Predict, FittingSeparableSbmReachesHighTrainAccuracy) {
  Graph g = separable_sbm(5);
  std::vector<std::size_t> train;
  for (std::size_t v = 0; v < g.num_nodes(); v += 5) train.push_back(v);
  for (ModelKind kind : {ModelKind::FedLoG, ModelKind::Plain}) {
    Rng rng(6);
    ModelConfig c = tiny_config(8, 2, kind);
    c.hidden = 32;
    c.embed = 16;
    c.per_class = 5;
    auto m = init_model(c, rng);
    train_steps(m, g, train, 200, 1e-2, 9);
    EXPECT_GT(accuracy(m, g, train), 0.9) << (kind == ModelKind::FedLoG ? "fedlog" : "plain");
  }
}

TEST(Predict, AccuracyOfEmptySetIsNaN) {
  Rng rng(2);
  Graph g = five_node_fixture();
  auto m = init_model(tiny_config(3, 2), rng);
  EXPECT_TRUE(std::isnan(accuracy(m, g, {})));
  std::vector<std::size_t> only_zero_class = {0, 2};
  auto ca = class_accuracy(m, g, only_zero_class);
  EXPECT_FALSE(std::isnan(ca[0]));
  EXPECT_TRUE(std::isnan(ca[1]));
}

// ---------------------------------------------------------------------------
// Layout and serialization

TEST(Layout, CoraSizedParameterCount) {
  ModelConfig c;
  c.feature_dim = 1433;
  c.n_classes = 7;
  Rng rng(0);
  auto m = init_model(c, rng);
  // Encoder: 2*(1433*128) + 128 + 2*(128*64) + 64. Branch: 129*64+64 +
  // 3*(64*64+64) + 64+1.
  const std::size_t encoder = 2 * 1433 * 128 + 128 + 2 * 128 * 64 + 64;
  const std::size_t branch = 129 * 64 + 64 + 3 * (64 * 64 + 64) + 65;
  EXPECT_EQ(encoder, 383424u);
  EXPECT_EQ(branch, 20865u);
  EXPECT_EQ(m.shared_size(), encoder + 2 * branch);
  EXPECT_EQ(m.bank_head.value.rows(), 140u);
  EXPECT_EQ(m.bank_head.value.cols(), 1433u);
}

TEST(Layout, CanonicalOrder) {
  Rng rng(0);
  auto m = init_model(tiny_config(3, 2), rng);
  std::vector<std::string> names;
  for (const Parameter* p : m.all_parameters()) names.push_back(p->name);
  ASSERT_EQ(names.size(), 6u + 20u + 2u);
  EXPECT_EQ(names[0], "encoder.l1.w_self");
  EXPECT_EQ(names[5], "encoder.l2.bias");
  EXPECT_EQ(names[6], "head.msg1.w");
  EXPECT_EQ(names[16], "tail.msg1.w");
  EXPECT_EQ(names[26], "bank.head");
  EXPECT_EQ(names[27], "bank.tail");

  auto plain = init_model(tiny_config(3, 2, ModelKind::Plain), rng);
  EXPECT_EQ(plain.all_parameters().size(), 8u);
}

TEST(Layout, EqualSeedsGiveEqualModels) {
  Rng a(42), b(42);
  auto m1 = init_model(tiny_config(3, 2), a);
  auto m2 = init_model(tiny_config(3, 2), b);
  auto p1 = m1.all_parameters();
  auto p2 = m2.all_parameters();
  for (std::size_t k = 0; k < p1.size(); ++k) EXPECT_EQ(p1[k]->value, p2[k]->value);
}

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("fedlog_model_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

TEST(Serialization, RoundTripIsBitExact) {
  TempDir dir;
  for (ModelKind kind : {ModelKind::FedLoG, ModelKind::Plain}) {
    Rng rng(3);
    auto m = init_model(tiny_config(3, 2, kind), rng);
    m.gamma = {0.25, 1.0};
    m.rates = {0.4, 0.6};
    auto file = dir.path() / "m.bin";
    save_model(m, file, {{"round", 7}});
    auto back = load_model(file);
    EXPECT_EQ(back.config.kind, kind);
    EXPECT_EQ(back.gamma, m.gamma);
    EXPECT_EQ(back.rates, m.rates);
    auto p1 = m.all_parameters();
    auto p2 = back.all_parameters();
    ASSERT_EQ(p1.size(), p2.size());
    for (std::size_t k = 0; k < p1.size(); ++k) EXPECT_EQ(p1[k]->value, p2[k]->value);
    EXPECT_EQ(read_meta(file)["extra"]["round"], 7);

    std::size_t floats = 0;
    for (auto* p : p1) floats += p->value.size();
    std::ifstream in(file, std::ios::binary);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(std::filesystem::file_size(file), header.size() + 1 + 8 * floats);
  }
}

TEST(Serialization, RejectsTruncatedAndForeignFiles) {
  TempDir dir;
  Rng rng(3);
  auto m = init_model(tiny_config(3, 2), rng);
  auto file = dir.path() / "m.bin";
  save_model(m, file);
  std::filesystem::resize_file(file, std::filesystem::file_size(file) - 8);
  EXPECT_THROW(load_model(file), FormatError);

  auto params = m.all_parameters();
  write_tensors(file, "something-else", params, {});
  EXPECT_THROW(read_tensors(file, "fedlog-model", params), FormatError);

  std::ofstream(dir.path() / "junk.bin") << "not json\n";
  EXPECT_THROW(load_model(dir.path() / "junk.bin"), FormatError);
}

TEST(Serialization, RejectsShapeMismatch) {
  TempDir dir;
  Rng rng(3);
  auto small = init_model(tiny_config(3, 2), rng);
  auto big = init_model(tiny_config(4, 2), rng);
  auto file = dir.path() / "m.bin";
  save_model(small, file);
  auto params = big.all_parameters();
  EXPECT_THROW(read_tensors(file, "fedlog-model", params), FormatError);
}

}  // namespace
}  // namespace fedlog::model
