#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Every op records its output value and a closure that pushes the output
// gradient back into its inputs. Parameters enter the tape as leaves bound to
// a Parameter; Tape::backward() accumulates into Parameter::grad.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace anchorcap::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

// Raised when tensor shapes break an op's contract.
class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised when a NaN/Inf shows up in a value or gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Parameter {
  Matrix value;
  Matrix grad;
};

// Ordered by path so iteration (and therefore checkpoints and optimizer
// updates) is deterministic. Node-based storage keeps Parameter addresses
// stable for the modules that hold pointers into it.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(const std::string& path, Matrix init);
  Parameter& at(const std::string& path);
  const Parameter& at(const std::string& path) const;
  bool contains(const std::string& path) const { return params_.count(path) != 0; }

  void zero_grad();
  std::size_t scalar_count() const;

  std::map<std::string, Parameter>& items() { return params_; }
  const std::map<std::string, Parameter>& items() const { return params_; }

 private:
  std::map<std::string, Parameter> params_;
};

// Glorot-uniform initialisation.
Matrix xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng);

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  // With grad disabled, parameters enter as constants and no closures are
  // kept: a forward-only tape for inference.
  explicit Tape(bool grad_enabled = true, bool check_finite = false)
      : grad_enabled_(grad_enabled), check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 and accumulates into every bound Parameter.
  void backward(const Var& loss);

  // Records an op output. `fn` is dropped when no input requires grad.
  Var record(Matrix value, const char* op, std::initializer_list<Var> inputs, Backward fn);
  Var record(Matrix value, const char* op, const std::vector<Var>& inputs, Backward fn);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.grad_set) {
      n.grad = g;
      n.grad_set = true;
    } else {
      n.grad += g;
    }
  }

  bool grad_enabled() const { return grad_enabled_; }
  bool check_finite() const { return check_finite_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    const char* op = "";
    bool requires_grad = false;
    bool grad_set = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
  bool grad_enabled_;
  bool check_finite_;
};

// ---------------------------------------------------------------------------
// Ops

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
// tanh approximation; smooth everywhere, which keeps finite-difference checks clean.
Var gelu(const Var& a);

// Row-wise softmax of (a + bias). `bias` may be null.
Var softmax_rows(const Var& a, const Matrix* bias = nullptr);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, const std::vector<int>& index);

Var sum(const Var& a);

// Sum over entries of w * BCE(sigmoid(logits), targets).
Var bce_with_logits(const Var& logits, const Matrix& targets, const Matrix& weights);
// Elementwise BCE of softmax(logits) (1xn) against one-hot(target), summed.
Var softmax_bce(const Var& logits, int target);
// -log softmax(logits)[target] for a 1xn row.
Var softmax_cross_entropy(const Var& logits, int target);

}  // namespace anchorcap::nn
