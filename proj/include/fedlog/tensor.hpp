#pragma once

// Dense 2-D tensors with a reverse-mode autodiff tape and Adam.
//
// All arithmetic is in double precision. A Tape records every operation
// applied to Vars created on it; backward() walks the record in reverse
// creation order, which is a valid reverse topological order because an
// operation can only consume Vars that already exist.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fedlog/rng.hpp"

namespace fedlog::tensor {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor identity(std::size_t n);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  std::string shape_string() const;
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  /// Value of a 1x1 tensor.
  double item() const;

  bool all_finite() const;
  /// Throws std::domain_error naming `where` if any value is NaN or infinite.
  void check_finite(std::string_view where) const;

  Tensor& add_(const Tensor& o);
  Tensor& add_scaled_(const Tensor& o, double s);
  Tensor& scale_(double s);
  void fill(double v);

  bool operator==(const Tensor& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Compressed sparse rows; row i's neighbours are
/// indices[offsets[i] .. offsets[i+1]).
struct Csr {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;

  std::size_t rows() const { return offsets.size() - 1; }
  std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return {indices.data() + offsets[i], degree(i)};
  }

  bool operator==(const Csr&) const = default;
};

/// A named learnable tensor. Parameters must outlive any Tape that references
/// them.
struct Parameter {
  std::string name;
  Tensor value;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

#ifdef NDEBUG
inline constexpr bool kCheckFiniteDefault = false;
#else
inline constexpr bool kCheckFiniteDefault = true;
#endif

class Tape {
 public:
  /// Gradient slots indexed by node id; an empty tensor means "no gradient yet".
  using GradSink = std::vector<Tensor>;
  using BackwardFn = std::function<void(const Tensor& out_grad, GradSink& grads)>;

  explicit Tape(bool check_finite = kCheckFiniteDefault) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tracked leaf bound to `p`. Registering the same Parameter twice returns
  /// the same Var, so all uses share one gradient slot.
  Var parameter(Parameter& p);
  Var input(Tensor value, bool track = false);
  Var constant(Tensor value) { return input(std::move(value), false); }
  /// Untracked leaf that refers to `value` without copying; `value` must
  /// outlive the tape.
  Var view(const Tensor& value);

  /// Gradient of a scalar `loss` with respect to each of `params`, in order.
  /// Parameters the loss does not depend on (or that were never registered)
  /// receive zeros.
  std::vector<Tensor> backward(Var loss, std::span<Parameter* const> params);

  /// Gradient of a scalar `loss` with respect to tracked input Vars.
  std::vector<Tensor> grad_wrt(Var loss, std::span<const Var> inputs);

  std::size_t size() const { return nodes_.size(); }
  bool check_finite() const { return check_finite_; }

  // Used by the primitive implementations.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);
  const Tensor& value_of(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  static void accumulate(GradSink& grads, std::size_t id, const Tensor& g);
  static Tensor& slot(GradSink& grads, std::size_t id, std::size_t rows, std::size_t cols);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    const Parameter* param = nullptr;
  };

  GradSink run_backward(Var loss);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
  bool check_finite_;
};

// ---------------------------------------------------------------------------
// Primitives. Binary elementwise ops broadcast an operand whose row or column
// count is 1 against the other operand.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var concat_cols(Var a, Var b);
Var concat_cols(std::span<const Var> parts);

Var sum(Var a);        // -> 1x1
Var mean_rows(Var a);  // mean over rows -> 1 x cols
Var mean_cols(Var a);  // mean over columns -> rows x 1
Var row_sum(Var a);    // sum over columns -> rows x 1

Var relu(Var a);
Var silu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);

Var sq_norm(Var a);      // ||a||^2 over all entries -> 1x1
Var norm(Var a);         // ||a|| over all entries -> 1x1
Var row_sq_norm(Var a);  // per row -> rows x 1
Var row_norm(Var a);     // per row -> rows x 1; gradient at a zero row is 0

Var softmax(Var a);      // over the last axis
Var log_softmax(Var a);  // over the last axis

Var gather_rows(Var a, std::span<const std::size_t> rows);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, std::size_t rows, std::size_t cols);

/// Inverted dropout; identity when !train or p == 0.
Var dropout(Var a, double p, Rng& rng, bool train);

/// out(i, j) = ||a_i - b_j||^2.
Var pairwise_sq_dist(Var a, Var b);

/// out_i = mean of a_j over j in adj.neighbors(i); zero row when i has no
/// neighbours.
Var neighbor_mean(Var a, const Csr& adj);

// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update. Moments are created on first use with
/// the parameter shapes.
void adam_step(AdamState& state, std::span<Parameter* const> params,
               std::span<const Tensor> grads);

}  // namespace fedlog::tensor
