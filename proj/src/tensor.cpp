#include "fedlog/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fedlog/errors.hpp"

namespace fedlog::tensor {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_eigen(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
MutMap as_eigen(Tensor& t) { return MutMap(t.data(), t.rows(), t.cols()); }

[[noreturn]] void dimension_error(std::string_view op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                       " and " + b.shape_string());
}

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

// Broadcast-aware elementwise kernel. Each operand either matches the output
// extent along an axis or has extent 1 there.
struct Broadcast {
  std::size_t rows, cols;
  bool a_row1, a_col1, b_row1, b_col1;

  static Broadcast of(std::string_view op, const Tensor& a, const Tensor& b) {
    auto fit = [](std::size_t x, std::size_t y, std::size_t& out) {
      if (x == y || y == 1) { out = x; return true; }
      if (x == 1) { out = y; return true; }
      return false;
    };
    Broadcast br{};
    if (!fit(a.rows(), b.rows(), br.rows) || !fit(a.cols(), b.cols(), br.cols)) {
      dimension_error(op, a, b);
    }
    br.a_row1 = a.rows() == 1 && br.rows != 1;
    br.a_col1 = a.cols() == 1 && br.cols != 1;
    br.b_row1 = b.rows() == 1 && br.rows != 1;
    br.b_col1 = b.cols() == 1 && br.cols != 1;
    return br;
  }

  std::size_t ai(const Tensor& a, std::size_t r, std::size_t c) const {
    return (a_row1 ? 0 : r) * a.cols() + (a_col1 ? 0 : c);
  }
  std::size_t bi(const Tensor& b, std::size_t r, std::size_t c) const {
    return (b_row1 ? 0 : r) * b.cols() + (b_col1 ? 0 : c);
  }
};

template <typename F, typename DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [&tape, ia, df](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += g[i] * df(xv[i]);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("tensor of shape [" + std::to_string(rows) + ", " +
                         std::to_string(cols) + "] given " + std::to_string(data_.size()) +
                         " values");
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("from_rows: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(values));
}

Tensor Tensor::row_vector(std::span<const double> values) {
  return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << "[" << rows_ << ", " << cols_ << "]";
  return os.str();
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) {
    throw DimensionError("item() on non-scalar tensor " + shape_string());
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(std::string_view where) const {
  if (!all_finite()) {
    throw std::domain_error("non-finite value in " + std::string(where) + " " + shape_string());
  }
}

Tensor& Tensor::add_(const Tensor& o) {
  if (!same_shape(o)) dimension_error("add_", *this, o);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::add_scaled_(const Tensor& o, double s) {
  if (!same_shape(o)) dimension_error("add_scaled_", *this, o);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  return *this;
}

Tensor& Tensor::scale_(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value_of(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Tape::value_of(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.external = &p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_ids_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value, bool track) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = track;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::view(const Tensor& value) {
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  if (check_finite_) value.check_finite("forward value");
  Node n;
  n.owned = std::move(value);
  for (std::size_t p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::slot(GradSink& grads, std::size_t id, std::size_t rows, std::size_t cols) {
  Tensor& s = grads[id];
  if (s.size() == 0 && rows * cols != 0) s = Tensor(rows, cols);
  return s;
}

void Tape::accumulate(GradSink& grads, std::size_t id, const Tensor& g) {
  Tensor& s = grads[id];
  if (s.size() == 0) {
    s = g;
  } else {
    s.add_(g);
  }
}

Tape::GradSink Tape::run_backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss recorded on a different tape");
  const Tensor& lv = value_of(loss.id_);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + lv.shape_string());
  }
  GradSink grads(nodes_.size());
  grads[loss.id_] = Tensor::scalar(1.0);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || grads[i].size() == 0) continue;
    bool any = false;
    for (std::size_t p : n.parents) any = any || nodes_[p].requires_grad;
    if (!any) continue;
    n.backward(grads[i], grads);
    if (check_finite_) {
      for (std::size_t p : n.parents) {
        if (grads[p].size()) grads[p].check_finite("backward gradient");
      }
    }
  }
  return grads;
}

std::vector<Tensor> Tape::backward(Var loss, std::span<Parameter* const> params) {
  GradSink grads = run_backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Parameter* p : params) {
    Tensor g;
    if (auto it = param_ids_.find(p); it != param_ids_.end()) g = std::move(grads[it->second]);
    if (g.size() == 0) g = Tensor(p->value.rows(), p->value.cols());
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<Tensor> Tape::grad_wrt(Var loss, std::span<const Var> inputs) {
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw ContractError("grad_wrt: input recorded on a different tape");
    if (!nodes_[v.id_].requires_grad) {
      throw ContractError("grad_wrt: input is not tracked (create it with track=true)");
    }
  }
  GradSink grads = run_backward(loss);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const Var& v : inputs) {
    Tensor g = grads[v.id_];
    if (g.size() == 0) g = Tensor(v.rows(), v.cols());
    out.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) dimension_error("matmul", x, y);
  Tensor out(x.rows(), y.cols());
  if (out.size()) as_eigen(out).noalias() = as_eigen(x) * as_eigen(y);
  std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [&tape, ia, ib](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    const Tensor& yv = tape.value_of(ib);
    if (tape.requires_grad(ia) && xv.size()) {
      Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
      as_eigen(ga).noalias() += as_eigen(g) * as_eigen(yv).transpose();
    }
    if (tape.requires_grad(ib) && yv.size()) {
      Tensor& gb = Tape::slot(grads, ib, yv.rows(), yv.cols());
      as_eigen(gb).noalias() += as_eigen(xv).transpose() * as_eigen(g);
    }
  });
}

namespace {

enum class BinOp { kAdd, kSub, kMul };

Var binary(Var a, Var b, BinOp op, std::string_view name) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Broadcast br = Broadcast::of(name, x, y);
  Tensor out(br.rows, br.cols);
  for (std::size_t r = 0; r < br.rows; ++r) {
    for (std::size_t c = 0; c < br.cols; ++c) {
      double u = x[br.ai(x, r, c)], v = y[br.bi(y, r, c)];
      out(r, c) = op == BinOp::kAdd ? u + v : op == BinOp::kSub ? u - v : u * v;
    }
  }
  std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [&tape, ia, ib, br, op](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    const Tensor& yv = tape.value_of(ib);
    if (tape.requires_grad(ia)) {
      Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
      for (std::size_t r = 0; r < br.rows; ++r) {
        for (std::size_t c = 0; c < br.cols; ++c) {
          double d = op == BinOp::kMul ? yv[br.bi(yv, r, c)] : 1.0;
          ga[br.ai(xv, r, c)] += g(r, c) * d;
        }
      }
    }
    if (tape.requires_grad(ib)) {
      Tensor& gb = Tape::slot(grads, ib, yv.rows(), yv.cols());
      for (std::size_t r = 0; r < br.rows; ++r) {
        for (std::size_t c = 0; c < br.cols; ++c) {
          double d = op == BinOp::kMul ? xv[br.ai(xv, r, c)] : op == BinOp::kSub ? -1.0 : 1.0;
          gb[br.bi(yv, r, c)] += g(r, c) * d;
        }
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, BinOp::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::kMul, "mul"); }

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var concat_cols(Var a, Var b) {
  Var parts[] = {a, b};
  return concat_cols(parts);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape& tape = parts[0].tape();
  std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (&p.tape() != &tape) throw ContractError("operands recorded on different tapes");
    if (p.rows() != rows) dimension_error("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
    ids.push_back(p.id());
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    }
    off += v.cols();
  }
  return tape.record(std::move(out), ids, [&tape, ids](const Tensor& g, Tape::GradSink& grads) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const Tensor& v = tape.value_of(id);
      if (tape.requires_grad(id)) {
        Tensor& gp = Tape::slot(grads, id, v.rows(), v.cols());
        for (std::size_t r = 0; r < v.rows(); ++r) {
          for (std::size_t c = 0; c < v.cols(); ++c) gp(r, c) += g(r, off + c);
        }
      }
      off += v.cols();
    }
  });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(Tensor::scalar(s), {ia}, [&tape, ia](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    double gs = g[0];
    for (double& v : ga.values()) v += gs;
  });
}

Var mean_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rows() == 0) throw ContractError("mean_rows: empty tensor");
  Tensor out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  out.scale_(1.0 / static_cast<double>(x.rows()));
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [&tape, ia](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    double inv = 1.0 / static_cast<double>(xv.rows());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) += g[c] * inv;
  });
}

Var row_sum(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (double v : x.row(r)) out[r] += v;
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [&tape, ia](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) += g[r];
  });
}

Var mean_cols(Var a) {
  if (a.cols() == 0) throw ContractError("mean_cols: empty tensor");
  return scale(row_sum(a), 1.0 / static_cast<double>(a.cols()));
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var silu(Var a) {
  return unary(a, [](double x) { return x * sigmoid_scalar(x); },
               [](double x) {
                 double s = sigmoid_scalar(x);
                 return s * (1.0 + x * (1.0 - s));
               });
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_scalar, [](double x) {
    double s = sigmoid_scalar(x);
    return s * (1.0 - s);
  });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sq_norm(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(Tensor::scalar(s), {ia}, [&tape, ia](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += 2.0 * g[0] * xv[i];
  });
}

Var norm(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v * v;
  double nrm = std::sqrt(s);
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(Tensor::scalar(nrm), {ia}, [&tape, ia, nrm](const Tensor& g, Tape::GradSink& grads) {
    if (nrm == 0.0) return;
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += g[0] * xv[i] / nrm;
  });
}

Var row_sq_norm(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (double v : x.row(r)) out[r] += v * v;
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [&tape, ia](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) += 2.0 * g[r] * xv(r, c);
  });
}

Var row_norm(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    out[r] = std::sqrt(s);
  }
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  Tensor norms = out;
  return tape.record(std::move(out), {ia}, [&tape, ia, norms](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      if (norms[r] == 0.0) continue;
      for (std::size_t c = 0; c < xv.cols(); ++c) ga(r, c) += g[r] * xv(r, c) / norms[r];
    }
  });
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) z += (o[c] = std::exp(in[c] - mx));
    for (double& v : o) v /= z;
  }
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  Tensor probs = out;
  return tape.record(std::move(out), {ia}, [&tape, ia, probs](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < probs.cols(); ++c) dot += g(r, c) * probs(r, c);
      for (std::size_t c = 0; c < probs.cols(); ++c) ga(r, c) += probs(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  Tensor probs(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    double lz = mx + std::log(z);
    for (std::size_t c = 0; c < in.size(); ++c) {
      out(r, c) = in[c] - lz;
      probs(r, c) = std::exp(out(r, c));
    }
  }
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [&tape, ia, probs](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < probs.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < probs.cols(); ++c) ga(r, c) += g(r, c) - probs(r, c) * gs;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& x = a.value();
  Tensor out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           x.shape_string());
    }
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return tape.record(std::move(out), {ia}, [&tape, ia, idx](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < xv.cols(); ++c) ga(idx[i], c) += g(i, c);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + x.shape_string());
  }
  std::vector<double> vals(x.data() + begin * x.cols(), x.data() + end * x.cols());
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(Tensor(end - begin, x.cols(), std::move(vals)), {ia},
                     [&tape, ia, begin](const Tensor& g, Tape::GradSink& grads) {
                       const Tensor& xv = tape.value_of(ia);
                       Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
                       for (std::size_t i = 0; i < g.size(); ++i) ga[begin * xv.cols() + i] += g[i];
                     });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& x = a.value();
  if (rows * cols != x.size()) {
    throw DimensionError("reshape: cannot view " + x.shape_string() + " as [" +
                         std::to_string(rows) + ", " + std::to_string(cols) + "]");
  }
  std::vector<double> vals(x.values().begin(), x.values().end());
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(Tensor(rows, cols, std::move(vals)), {ia}, [&tape, ia](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var dropout(Var a, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
  if (!train || p == 0.0) return a;
  const Tensor& x = a.value();
  Tensor mask(x.rows(), x.cols());
  double keep = 1.0 / (1.0 - p);
  for (double& m : mask.values()) m = uniform01(rng) >= p ? keep : 0.0;
  Var m = a.tape().constant(std::move(mask));
  return mul(a, m);
}

Var pairwise_sq_dist(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.cols()) dimension_error("pairwise_sq_dist", x, y);
  Tensor out(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    for (std::size_t j = 0; j < y.rows(); ++j) {
      auto yj = y.row(j);
      double s = 0.0;
      for (std::size_t c = 0; c < xi.size(); ++c) {
        double d = xi[c] - yj[c];
        s += d * d;
      }
      out(i, j) = s;
    }
  }
  std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [&tape, ia, ib](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    const Tensor& yv = tape.value_of(ib);
    // d/dx_i = 2 * sum_j g_ij (x_i - y_j); d/dy_j = -2 * sum_i g_ij (x_i - y_j)
    auto G = as_eigen(g);
    if (tape.requires_grad(ia)) {
      Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
      Eigen::VectorXd rs = G.rowwise().sum();
      auto GA = as_eigen(ga);
      GA.noalias() += 2.0 * (rs.asDiagonal() * as_eigen(xv));
      GA.noalias() -= 2.0 * (G * as_eigen(yv));
    }
    if (tape.requires_grad(ib)) {
      Tensor& gb = Tape::slot(grads, ib, yv.rows(), yv.cols());
      Eigen::VectorXd cs = G.colwise().sum().transpose();
      auto GB = as_eigen(gb);
      GB.noalias() += 2.0 * (cs.asDiagonal() * as_eigen(yv));
      GB.noalias() -= 2.0 * (G.transpose() * as_eigen(xv));
    }
  });
}

Var neighbor_mean(Var a, const Csr& adj) {
  const Tensor& x = a.value();
  if (adj.rows() != x.rows()) {
    throw DimensionError("neighbor_mean: adjacency has " + std::to_string(adj.rows()) +
                         " rows, features " + x.shape_string());
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < adj.rows(); ++i) {
    auto nb = adj.neighbors(i);
    if (nb.empty()) continue;
    auto o = out.row(i);
    for (std::size_t j : nb) {
      auto xj = x.row(j);
      for (std::size_t c = 0; c < o.size(); ++c) o[c] += xj[c];
    }
    double inv = 1.0 / static_cast<double>(nb.size());
    for (double& v : o) v *= inv;
  }
  Tape& tape = a.tape();
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [&tape, ia, adj](const Tensor& g, Tape::GradSink& grads) {
    const Tensor& xv = tape.value_of(ia);
    Tensor& ga = Tape::slot(grads, ia, xv.rows(), xv.cols());
    for (std::size_t i = 0; i < adj.rows(); ++i) {
      auto nb = adj.neighbors(i);
      if (nb.empty()) continue;
      double inv = 1.0 / static_cast<double>(nb.size());
      auto gi = g.row(i);
      for (std::size_t j : nb) {
        auto gj = ga.row(j);
        for (std::size_t c = 0; c < gi.size(); ++c) gj[c] += gi[c] * inv;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(AdamState& state, std::span<Parameter* const> params,
               std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (Parameter* p : params) {
      state.m.emplace_back(p->value.rows(), p->value.cols());
      state.v.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " parameters, given " + std::to_string(params.size()));
  }
  ++state.step;
  const auto& o = state.options;
  double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k]->value;
    const Tensor& g = grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!w.same_shape(g)) dimension_error("adam_step", w, g);
    if (!w.same_shape(m)) dimension_error("adam_step (moment)", w, m);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

}  // namespace fedlog::tensor
