#include "fedlog/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "fedlog/errors.hpp"

namespace fedlog::model {

namespace {

constexpr std::size_t kPredictChunk = 128;

Linear make_linear(const std::string& name, std::size_t in, std::size_t out) {
  return {{name + ".w", Tensor(in, out)}, {name + ".b", Tensor(1, out)}};
}

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * bound;
}

void init_linear(Linear& l, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(l.w.value.rows()));
  fill_uniform(l.w.value, bound, rng);
  fill_uniform(l.b.value, bound, rng);
}

SageLayer make_sage(const std::string& name, std::size_t in, std::size_t out) {
  return {{name + ".w_self", Tensor(in, out)},
          {name + ".w_neigh", Tensor(in, out)},
          {name + ".bias", Tensor(1, out)}};
}

void init_sage(SageLayer& l, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(l.w_self.value.rows()));
  fill_uniform(l.w_self.value, bound, rng);
  fill_uniform(l.w_neigh.value, bound, rng);
  fill_uniform(l.bias.value, bound, rng);
}

Branch make_branch(const std::string& name, std::size_t embed) {
  return {make_linear(name + ".msg1", 2 * embed + 1, embed),
          make_linear(name + ".msg2", embed, embed),
          make_linear(name + ".trans1", embed, embed),
          make_linear(name + ".trans2", embed, embed),
          make_linear(name + ".trans3", embed, 1)};
}

template <typename P, typename L>
void push_linear(std::vector<P>& out, L& l) {
  out.push_back(&l.w);
  out.push_back(&l.b);
}

template <typename P, typename M>
std::vector<P> collect_shared(M& m) {
  std::vector<P> out;
  for (auto* l : {&m.encoder.l1, &m.encoder.l2}) {
    out.push_back(&l->w_self);
    out.push_back(&l->w_neigh);
    out.push_back(&l->bias);
  }
  if (m.config.kind == ModelKind::FedLoG) {
    for (auto* br : {&m.head, &m.tail}) {
      for (auto* l : {&br->msg1, &br->msg2, &br->trans1, &br->trans2, &br->trans3}) {
        push_linear(out, *l);
      }
    }
  } else {
    push_linear(out, m.classifier);
  }
  return out;
}

Var linear(Linear& l, Var x) {
  Tape& tape = x.tape();
  return add(matmul(x, tape.parameter(l.w)), tape.parameter(l.b));
}

Var sage_layer(SageLayer& l, Var x, const Csr& adj) {
  Tape& tape = x.tape();
  Var out = matmul(x, tape.parameter(l.w_self));
  // An edgeless graph has an all-zero neighbour mean, so the term is skipped.
  if (!adj.indices.empty()) {
    out = add(out, neighbor_mean(matmul(x, tape.parameter(l.w_neigh)), adj));
  }
  return add(out, tape.parameter(l.bias));
}

Tensor column(std::span<const double> v) { return Tensor(v.size(), 1, {v.begin(), v.end()}); }

Tensor one_hot(std::span<const int> labels, std::size_t n_classes) {
  Tensor t(labels.size(), n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw ContractError("label out of range");
    }
    t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

Var plain_log_probs(LocalModel& m, Var h) { return log_softmax(linear(m.classifier, h)); }

std::vector<double> node_alpha(const LocalModel& m, const Graph& g,
                               std::span<const std::size_t> nodes, MergeMode mode) {
  std::vector<double> a(nodes.size(), 0.5);
  if (mode == MergeMode::DegreeWeighted) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      a[i] = branch_alpha(static_cast<double>(g.degree(nodes[i])), m.config.lambda);
    }
  }
  return a;
}

void check_config(const ModelConfig& c) {
  if (c.feature_dim == 0 || c.n_classes == 0 || c.hidden == 0 || c.embed == 0) {
    throw ContractError("model config: dimensions must be positive");
  }
  if (c.kind == ModelKind::FedLoG && c.per_class == 0) {
    throw ContractError("model config: per_class must be positive");
  }
}

}  // namespace

std::vector<Parameter*> LocalModel::shared_parameters() {
  return collect_shared<Parameter*>(*this);
}

std::vector<const Parameter*> LocalModel::shared_parameters() const {
  return collect_shared<const Parameter*>(*this);
}

std::vector<Parameter*> LocalModel::all_parameters() {
  auto out = shared_parameters();
  if (config.kind == ModelKind::FedLoG) {
    out.push_back(&bank_head);
    out.push_back(&bank_tail);
  }
  return out;
}

std::vector<const Parameter*> LocalModel::all_parameters() const {
  auto out = shared_parameters();
  if (config.kind == ModelKind::FedLoG) {
    out.push_back(&bank_head);
    out.push_back(&bank_tail);
  }
  return out;
}

std::size_t LocalModel::shared_size() const {
  std::size_t n = 0;
  for (const Parameter* p : shared_parameters()) n += p->value.size();
  return n;
}

LocalModel init_model(const ModelConfig& config, Rng& rng) {
  check_config(config);
  LocalModel m;
  m.config = config;
  m.encoder = {make_sage("encoder.l1", config.feature_dim, config.hidden),
               make_sage("encoder.l2", config.hidden, config.embed)};
  init_sage(m.encoder.l1, rng);
  init_sage(m.encoder.l2, rng);
  if (config.kind == ModelKind::FedLoG) {
    m.head = make_branch("head", config.embed);
    m.tail = make_branch("tail", config.embed);
    for (Branch* br : {&m.head, &m.tail}) {
      for (Linear* l : {&br->msg1, &br->msg2, &br->trans1, &br->trans2, &br->trans3}) {
        init_linear(*l, rng);
      }
    }
    m.bank_head = {"bank.head", Tensor(config.bank_rows(), config.feature_dim)};
    m.bank_tail = {"bank.tail", Tensor(config.bank_rows(), config.feature_dim)};
    for (Parameter* b : {&m.bank_head, &m.bank_tail}) {
      for (double& v : b->value.values()) v = config.bank_init_std * standard_normal(rng);
    }
  } else {
    m.classifier = make_linear("classifier", config.embed, config.n_classes);
    init_linear(m.classifier, rng);
  }
  m.gamma.assign(config.n_classes, 0.0);
  m.rates.assign(config.n_classes, 0.0);
  return m;
}

double branch_alpha(double degree, double lambda) {
  return 1.0 / (1.0 + std::exp(-(degree - (lambda + 1.0))));
}

Csr edgeless(std::size_t n) {
  Csr c;
  c.offsets.assign(n + 1, 0);
  return c;
}

Var sage_embed(Encoder& enc, Var x, const Csr& adj, double dropout_p, bool train, Rng& rng) {
  if (adj.rows() != x.rows()) {
    throw DimensionError("sage_embed: adjacency has " + std::to_string(adj.rows()) +
                         " rows, features have " + std::to_string(x.rows()));
  }
  Var h = relu(sage_layer(enc.l1, x, adj));
  h = dropout(h, dropout_p, rng, train);
  return sage_layer(enc.l2, h, adj);
}

Var branch_log_probs(Branch& br, Var h, Var n, Var protos, std::size_t n_classes,
                     std::size_t per_class) {
  Tape& tape = h.tape();
  const std::size_t N = h.rows();
  const std::size_t P = protos.rows();
  const std::size_t E = h.cols();
  if (P != n_classes * per_class) {
    throw DimensionError("branch: expected " + std::to_string(n_classes * per_class) +
                         " prototypes, got " + std::to_string(P));
  }
  if (n.rows() != N || n.cols() != E || protos.cols() != E) {
    throw DimensionError("branch: embedding shapes disagree");
  }

  Var hn = concat_cols(h, n);
  Var pp = concat_cols(protos, protos);
  Var d = pairwise_sq_dist(hn, pp);  // N x P

  // msg1 on [h || n || d] split into the per-target part and the distance row.
  Var w1 = tape.parameter(br.msg1.w);
  Var u = matmul(hn, slice_rows(w1, 0, 2 * E));
  Var wd = slice_rows(w1, 2 * E, 2 * E + 1);
  std::vector<std::size_t> rep(N * P);
  for (std::size_t i = 0; i < N; ++i) std::fill_n(rep.begin() + i * P, P, i);
  Var pre = add(add(gather_rows(u, rep), matmul(reshape(d, N * P, 1), wd)),
                tape.parameter(br.msg1.b));
  Var msg = silu(linear(br.msg2, silu(pre)));

  Var s = linear(br.trans3, linear(br.trans2, silu(linear(br.trans1, msg))));
  s = reshape(s, N, P);

  // mean_j (h - h_j) * s_j = h * mean_j s_j - (s . protos) / P
  Var t = sub(mul(h, mean_cols(s)), scale(matmul(s, protos), 1.0 / static_cast<double>(P)));
  Var h2 = add(h, t);

  Tensor avg(n_classes, P);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t j = 0; j < per_class; ++j) avg(c, c * per_class + j) = 1.0 / per_class;
  }
  Var means = matmul(tape.constant(std::move(avg)), protos);
  return log_softmax(scale(pairwise_sq_dist(h2, means), -1.0));
}

Tensor merge_branches(const Tensor& p_head, const Tensor& p_tail, std::span<const double> alpha) {
  if (!p_head.same_shape(p_tail) || alpha.size() != p_head.rows()) {
    throw DimensionError("merge_branches: shapes disagree");
  }
  Tensor out(p_head.rows(), p_head.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out(i, c) = alpha[i] * p_head(i, c) + (1.0 - alpha[i]) * p_tail(i, c);
    }
  }
  return out;
}

Var log_mix(Var log_a, Var log_b, std::span<const double> alpha) {
  const Tensor& a = log_a.value();
  const Tensor& b = log_b.value();
  if (!a.same_shape(b) || alpha.size() != a.rows()) {
    throw DimensionError("log_mix: shapes disagree");
  }
  Tape& tape = log_a.tape();
  Tensor mx(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) mx[i] = std::max(a[i], b[i]);
  std::vector<double> beta(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) beta[i] = 1.0 - alpha[i];
  Var m = tape.constant(std::move(mx));
  Var ea = mul(exp(sub(log_a, m)), tape.constant(column(alpha)));
  Var eb = mul(exp(sub(log_b, m)), tape.constant(column(beta)));
  return add(log(add(ea, eb)), m);
}

BranchOutputs fedlog_forward(LocalModel& m, Var x, const Csr& adj,
                             std::span<const std::size_t> targets, bool train, Rng& rng,
                             std::span<const std::size_t> neighbor_rows) {
  if (m.config.kind != ModelKind::FedLoG) throw ContractError("fedlog_forward on a plain model");
  if (!neighbor_rows.empty() && neighbor_rows.size() != targets.size()) {
    throw DimensionError("fedlog_forward: one neighbour row per target expected");
  }
  Tape& tape = x.tape();
  const ModelConfig& c = m.config;
  Var h_all = sage_embed(m.encoder, x, adj, c.dropout, train, rng);
  Var h = gather_rows(h_all, targets);
  Var n = neighbor_rows.empty() ? gather_rows(neighbor_mean(h_all, adj), targets)
                                : gather_rows(h_all, neighbor_rows);

  const Csr bank_adj = edgeless(c.bank_rows());
  Var ph = sage_embed(m.encoder, tape.parameter(m.bank_head), bank_adj, c.dropout, train, rng);
  Var pt = sage_embed(m.encoder, tape.parameter(m.bank_tail), bank_adj, c.dropout, train, rng);
  return {branch_log_probs(m.head, h, n, ph, c.n_classes, c.per_class),
          branch_log_probs(m.tail, h, n, pt, c.n_classes, c.per_class)};
}

Var classification_loss(LocalModel& m, Var x, const Csr& adj,
                        std::span<const std::size_t> targets, std::span<const int> labels,
                        std::span<const double> alpha, bool train, Rng& rng,
                        std::span<const std::size_t> neighbor_rows) {
  if (labels.size() != targets.size()) {
    throw DimensionError("classification_loss: one label per target expected");
  }
  Tape& tape = x.tape();
  Var logp;
  if (m.config.kind == ModelKind::FedLoG) {
    if (alpha.size() != targets.size()) {
      throw DimensionError("classification_loss: one alpha per target expected");
    }
    BranchOutputs br = fedlog_forward(m, x, adj, targets, train, rng, neighbor_rows);
    logp = log_mix(br.log_head, br.log_tail, alpha);
  } else {
    Var h = gather_rows(sage_embed(m.encoder, x, adj, m.config.dropout, train, rng), targets);
    logp = plain_log_probs(m, h);
  }
  return scale(sum(mul(logp, tape.constant(one_hot(labels, m.config.n_classes)))), -1.0);
}

Var bank_norm(LocalModel& m, Tape& tape) {
  return add(sum(row_norm(tape.parameter(m.bank_head))),
             sum(row_norm(tape.parameter(m.bank_tail))));
}

Var fitting_loss(LocalModel& m, Tape& tape, const Graph& g, std::span<const std::size_t> nodes,
                 bool train, Rng& rng) {
  if (nodes.empty()) throw ContractError("fitting_loss: no training nodes");
  std::vector<int> labels(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) labels[i] = g.label(nodes[i]);
  auto alpha = node_alpha(m, g, nodes, MergeMode::DegreeWeighted);
  Var x = tape.view(g.features());
  Var loss = classification_loss(m, x, g.adjacency(), nodes, labels, alpha, train, rng);
  if (m.config.kind == ModelKind::FedLoG && m.config.beta != 0.0) {
    loss = add(loss, scale(bank_norm(m, tape), m.config.beta));
  }
  return loss;
}

Tensor predict_proba(LocalModel& m, const Graph& g, std::span<const std::size_t> nodes,
                     MergeMode mode) {
  const ModelConfig& c = m.config;
  Tensor out(nodes.size(), c.n_classes);
  if (nodes.empty()) return out;
  Rng unused(0);

  Tensor h_all, n_all, ph, pt;
  {
    Tape tape;
    Var h = sage_embed(m.encoder, tape.view(g.features()), g.adjacency(), c.dropout, false, unused);
    h_all = h.value();
    if (c.kind == ModelKind::FedLoG) {
      n_all = neighbor_mean(h, g.adjacency()).value();
      const Csr bank_adj = edgeless(c.bank_rows());
      ph = sage_embed(m.encoder, tape.view(m.bank_head.value), bank_adj, c.dropout, false, unused)
               .value();
      pt = sage_embed(m.encoder, tape.view(m.bank_tail.value), bank_adj, c.dropout, false, unused)
               .value();
    }
  }

  auto alpha = node_alpha(m, g, nodes, mode);
  for (std::size_t begin = 0; begin < nodes.size(); begin += kPredictChunk) {
    std::size_t end = std::min(nodes.size(), begin + kPredictChunk);
    auto chunk = nodes.subspan(begin, end - begin);
    Tape tape;
    Var h = gather_rows(tape.view(h_all), chunk);
    Tensor p;
    if (c.kind == ModelKind::FedLoG) {
      Var n = gather_rows(tape.view(n_all), chunk);
      Var lh = branch_log_probs(m.head, h, n, tape.view(ph), c.n_classes, c.per_class);
      Var lt = branch_log_probs(m.tail, h, n, tape.view(pt), c.n_classes, c.per_class);
      p = merge_branches(exp(lh).value(), exp(lt).value(),
                         std::span(alpha).subspan(begin, end - begin));
    } else {
      p = exp(plain_log_probs(m, h)).value();
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      std::copy_n(p.row(i).begin(), c.n_classes, out.row(begin + i).begin());
    }
  }
  return out;
}

std::vector<int> predict(LocalModel& m, const Graph& g, std::span<const std::size_t> nodes,
                         MergeMode mode) {
  Tensor p = predict_proba(m, g, nodes, mode);
  std::vector<int> out(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto r = p.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double accuracy(LocalModel& m, const Graph& g, std::span<const std::size_t> nodes) {
  if (nodes.empty()) return std::numeric_limits<double>::quiet_NaN();
  auto pred = predict(m, g, nodes);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) hit += pred[i] == g.label(nodes[i]);
  return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

std::vector<double> class_accuracy(LocalModel& m, const Graph& g,
                                   std::span<const std::size_t> nodes) {
  auto pred = predict(m, g, nodes);
  std::vector<std::size_t> hit(g.num_classes()), total(g.num_classes());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto y = static_cast<std::size_t>(g.label(nodes[i]));
    ++total[y];
    hit[y] += pred[i] == g.label(nodes[i]);
  }
  std::vector<double> out(g.num_classes(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (total[c] > 0) out[c] = static_cast<double>(hit[c]) / static_cast<double>(total[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr int kTensorFileVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "tensor files are written as native little-endian doubles");

void write_f64(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_f64(std::istream& in, std::span<double> v) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

nlohmann::json read_header(std::istream& in, const std::filesystem::path& file) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(file.string() + ": missing header");
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": bad header: " + e.what());
  }
}

std::string kind_name(ModelKind k) { return k == ModelKind::FedLoG ? "fedlog" : "plain"; }

}  // namespace

void write_tensors(const std::filesystem::path& file, const std::string& format,
                   std::span<const Parameter* const> params, const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const Parameter* p : params) {
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  }
  nlohmann::json header = {{"format", format},
                           {"version", kTensorFileVersion},
                           {"tensors", tensors},
                           {"meta", meta}};
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot write " + file.string());
  out << header.dump() << '\n';
  for (const Parameter* p : params) write_f64(out, p->value.values());
  if (!out) throw FormatError("write failed: " + file.string());
}

nlohmann::json read_tensors(const std::filesystem::path& file, const std::string& format,
                            std::span<Parameter* const> params) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  nlohmann::json header = read_header(in, file);
  try {
    if (header.at("format").get<std::string>() != format) {
      throw FormatError(file.string() + ": expected format " + format);
    }
    if (header.at("version").get<int>() != kTensorFileVersion) {
      throw FormatError(file.string() + ": unsupported version");
    }
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size()) {
      throw FormatError(file.string() + ": expected " + std::to_string(params.size()) +
                        " tensors, found " + std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto name = tensors[i].at("name").get<std::string>();
      auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
      if (name != params[i]->name || shape != params[i]->value.shape()) {
        throw FormatError(file.string() + ": tensor " + std::to_string(i) + " is " + name +
                          ", expected " + params[i]->name + " " + params[i]->value.shape_string());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": bad header: " + e.what());
  }
  for (Parameter* p : params) {
    read_f64(in, p->value.values());
    if (!in) throw FormatError(file.string() + ": truncated tensor data");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(file.string() + ": trailing bytes");
  }
  return header.value("meta", nlohmann::json::object());
}

nlohmann::json read_meta(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  return read_header(in, file).value("meta", nlohmann::json::object());
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"kind", kind_name(c.kind)},   {"feature_dim", c.feature_dim},
          {"n_classes", c.n_classes},    {"per_class", c.per_class},
          {"hidden", c.hidden},          {"embed", c.embed},
          {"dropout", c.dropout},        {"lambda", c.lambda},
          {"beta", c.beta},              {"bank_init_std", c.bank_init_std}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    auto kind = j.at("kind").get<std::string>();
    if (kind == "fedlog") {
      c.kind = ModelKind::FedLoG;
    } else if (kind == "plain") {
      c.kind = ModelKind::Plain;
    } else {
      throw FormatError("unknown model kind " + kind);
    }
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.per_class = j.at("per_class").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.embed = j.at("embed").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.beta = j.at("beta").get<double>();
    c.bank_init_std = j.at("bank_init_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  return c;
}

void save_model(const LocalModel& m, const std::filesystem::path& file,
                const nlohmann::json& extra) {
  nlohmann::json meta = {{"config", config_to_json(m.config)},
                         {"gamma", m.gamma},
                         {"rates", m.rates},
                         {"extra", extra}};
  auto params = m.all_parameters();
  write_tensors(file, "fedlog-model", params, meta);
}

LocalModel load_model(const std::filesystem::path& file) {
  nlohmann::json meta = read_meta(file);
  LocalModel m;
  try {
    ModelConfig c = config_from_json(meta.at("config"));
    check_config(c);
    Rng rng(0);
    m = init_model(c, rng);
    auto params = m.all_parameters();
    read_tensors(file, "fedlog-model", params);
    m.gamma = meta.at("gamma").get<std::vector<double>>();
    m.rates = meta.at("rates").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  if (m.gamma.size() != m.config.n_classes || m.rates.size() != m.config.n_classes) {
    throw FormatError(file.string() + ": gamma/rates length mismatch");
  }
  return m;
}

}  // namespace fedlog::model
