#include "anchorcap/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace anchorcap::nn {

namespace {

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), op, "operands belong to different tapes");
}

// log(1 - exp(x)) for x <= 0.
double log1m_exp(double x) {
  x = std::min(x, -1e-15);
  return x > -0.6931471805599453 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& path, Matrix init) {
  auto [it, inserted] = params_.try_emplace(path);
  if (!inserted) throw std::invalid_argument("duplicate parameter path: " + path);
  it->second.grad = Matrix::Zero(init.rows(), init.cols());
  it->second.value = std::move(init);
  return it->second;
}

Parameter& ParameterStore::at(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + path);
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + path);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.setZero();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Matrix xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): value is " + shape_of(v));
  return v(0, 0);
}

Var Tape::push(Node node) {
  if (check_finite_ && !node.value.allFinite()) {
    throw NumericError(std::string("non-finite value produced by op '") + node.op + "'");
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.op = "parameter";
  if (grad_enabled_) {
    n.param = &p;
    n.requires_grad = true;
  }
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Matrix value, const char* op, std::initializer_list<Var> inputs, Backward fn) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (requires_grad(in.id())) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Var Tape::record(Matrix value, const char* op, const std::vector<Var>& inputs, Backward fn) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (grad_enabled_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](const Var& in) { return requires_grad(in.id()); });
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

void Tape::backward(const Var& loss) {
  if (!grad_enabled_) throw std::logic_error("backward() on a tape with gradients disabled");
  if (loss.tape() != this) throw std::logic_error("backward(): loss belongs to another tape");
  Node& root = nodes_[static_cast<std::size_t>(loss.id())];
  if (root.value.size() != 1) throw ShapeError("backward(): loss must be 1x1, got " + shape_of(root.value));
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  root.grad_set = true;

  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_set) continue;
    if (!n.grad.allFinite()) {
      throw NumericError(std::string("non-finite gradient flowing into op '") + n.op + "'");
    }
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul");
  require(a.cols() == b.rows(), "matmul", shape_of(a.value()) + " * " + shape_of(b.value()));
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() * b.value(), "matmul", {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul_nt");
  require(a.cols() == b.cols(), "matmul_nt", shape_of(a.value()) + " * " + shape_of(b.value()) + "^T");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() * b.value().transpose(), "matmul_nt", {a, b},
                          [ia, ib](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
                            if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
                          });
}

Var transpose(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), "transpose", {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b, "add");
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add",
          shape_of(a.value()) + " + " + shape_of(b.value()));
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), "add", {a, b}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b, "sub");
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub",
          shape_of(a.value()) + " - " + shape_of(b.value()));
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), "sub", {a, b}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b, "mul");
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul",
          shape_of(a.value()) + " .* " + shape_of(b.value()));
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), "mul", {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row, "add_row");
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row",
          shape_of(a.value()) + " + row " + shape_of(row.value()));
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), "add_row", {a, row}, [ia, ir](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    if (t.requires_grad(ir)) t.accumulate(ir, t.grad(self).colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, "scale", {a}, [ia, s](Tape& t, int self) {
    t.accumulate(ia, t.grad(self) * s);
  });
}

Var add_scalar(const Var& a, double s) {
  const int ia = a.id();
  Matrix out = a.value().array() + s;
  return a.tape()->record(std::move(out), "add_scalar", {a}, [ia](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
  });
}

Var sigmoid(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.tape()->record(std::move(y), "sigmoid", {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value().array().tanh().matrix();
  return a.tape()->record(std::move(y), "tanh", {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value().unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  });
  return a.tape()->record(std::move(y), "gelu", {a}, [ia](Tape& t, int self) {
    Matrix d = t.value(ia).unaryExpr([](double x) {
      const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
    });
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------
// Normalisation

Var softmax_rows(const Var& a, const Matrix* bias) {
  Matrix z = a.value();
  if (bias != nullptr) {
    require(bias->rows() == z.rows() && bias->cols() == z.cols(), "softmax_rows",
            "bias " + shape_of(*bias) + " vs " + shape_of(z));
    z += *bias;
  }
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double mx = z.row(r).maxCoeff();
    z.row(r) = (z.row(r).array() - mx).exp().matrix();
    z.row(r) /= z.row(r).sum();
  }
  const int ia = a.id();
  return a.tape()->record(std::move(z), "softmax_rows", {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix gy = g.cwiseProduct(y);
    Eigen::VectorXd dots = gy.rowwise().sum();
    t.accumulate(ia, gy - (y.array().colwise() * dots.array()).matrix());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_same_tape(x, gamma, "layer_norm");
  const Eigen::Index n = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n, "layer_norm",
          "gamma/beta must be 1x" + std::to_string(n));
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->record(std::move(y), "layer_norm", {x, gamma, beta},
                          [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                            if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                            if (!t.requires_grad(ix)) return;
                            const double n = static_cast<double>(xhat.cols());
                            Matrix dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
                            Matrix dx(xhat.rows(), xhat.cols());
                            for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                              const double s1 = dxhat.row(r).sum();
                              const double s2 = dxhat.row(r).dot(xhat.row(r));
                              dx.row(r) = (inv_std(r) / n) *
                                          (n * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
                            }
                            t.accumulate(ix, dx);
                          });
}

// ---------------------------------------------------------------------------
// Structural

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows", "no parts");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.tape() == parts.front().tape(), "concat_rows", "parts on different tapes");
    require(p.cols() == cols, "concat_rows", "column mismatch " + shape_of(p.value()));
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    if (p.rows() > 0) out.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts.front().tape()->record(std::move(out), "concat_rows", parts,
                                      [spans = std::move(spans)](Tape& t, int self) {
                                        const Matrix& g = t.grad(self);
                                        for (const auto& [id, start] : spans) {
                                          const Eigen::Index n = t.value(id).rows();
                                          if (n > 0 && t.requires_grad(id)) t.accumulate(id, g.middleRows(start, n));
                                        }
                                      });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no parts");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.tape() == parts.front().tape(), "concat_cols", "parts on different tapes");
    require(p.rows() == rows, "concat_cols", "row mismatch " + shape_of(p.value()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    if (p.cols() > 0) out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts.front().tape()->record(std::move(out), "concat_cols", parts,
                                      [spans = std::move(spans)](Tape& t, int self) {
                                        const Matrix& g = t.grad(self);
                                        for (const auto& [id, start] : spans) {
                                          const Eigen::Index n = t.value(id).cols();
                                          if (n > 0 && t.requires_grad(id)) t.accumulate(id, g.middleCols(start, n));
                                        }
                                      });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows",
          "rows [" + std::to_string(start) + "," + std::to_string(start + count) + ") of " + shape_of(a.value()));
  const int ia = a.id();
  return a.tape()->record(a.value().middleRows(start, count), "slice_rows", {a},
                          [ia, start, count](Tape& t, int self) {
                            Matrix g = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
                            g.middleRows(start, count) = t.grad(self);
                            t.accumulate(ia, g);
                          });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols",
          "cols [" + std::to_string(start) + "," + std::to_string(start + count) + ") of " + shape_of(a.value()));
  const int ia = a.id();
  return a.tape()->record(a.value().middleCols(start, count), "slice_cols", {a},
                          [ia, start, count](Tape& t, int self) {
                            Matrix g = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
                            g.middleCols(start, count) = t.grad(self);
                            t.accumulate(ia, g);
                          });
}

Var gather_rows(const Var& a, const std::vector<int>& index) {
  Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < a.rows(), "gather_rows",
            "index " + std::to_string(index[i]) + " out of " + shape_of(a.value()));
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), "gather_rows", {a}, [ia, index](Tape& t, int self) {
    Matrix g = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    const Matrix& go = t.grad(self);
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += go.row(static_cast<Eigen::Index>(i));
    t.accumulate(ia, g);
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  return a.tape()->record(std::move(out), "sum", {a}, [ia](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    t.accumulate(ia, Matrix::Constant(t.value(ia).rows(), t.value(ia).cols(), g));
  });
}

// ---------------------------------------------------------------------------
// Losses

Var bce_with_logits(const Var& logits, const Matrix& targets, const Matrix& weights) {
  const Matrix& z = logits.value();
  require(targets.rows() == z.rows() && targets.cols() == z.cols() && weights.rows() == z.rows() &&
              weights.cols() == z.cols(),
          "bce_with_logits", "targets/weights must match " + shape_of(z));
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double x = z.data()[i];
    const double y = targets.data()[i];
    total += weights.data()[i] * (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  const int il = logits.id();
  return logits.tape()->record(std::move(out), "bce_with_logits", {logits},
                               [il, targets, weights](Tape& t, int self) {
                                 const double g = t.grad(self)(0, 0);
                                 Matrix p = t.value(il).unaryExpr([](double x) {
                                   return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                                 });
                                 t.accumulate(il, (g * weights.array() * (p - targets).array()).matrix());
                               });
}

namespace {

Eigen::RowVectorXd log_softmax_row(const Eigen::RowVectorXd& z) {
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return (z.array() - lse).matrix();
}

}  // namespace

Var softmax_bce(const Var& logits, int target) {
  require(logits.rows() == 1 && logits.cols() >= 1, "softmax_bce", "expects a 1xn row, got " + shape_of(logits.value()));
  require(target >= 0 && target < logits.cols(), "softmax_bce", "target out of range");
  const Eigen::RowVectorXd logp = log_softmax_row(logits.value().row(0));
  double loss = -logp(target);
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    if (i != target) loss -= log1m_exp(logp(i));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  const int il = logits.id();
  return logits.tape()->record(std::move(out), "softmax_bce", {logits}, [il, target, logp](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    const Eigen::Index n = logp.size();
    Eigen::RowVectorXd p = logp.array().exp().matrix();
    // d/dz_j = p_j - [j==t] + [j!=t] r_j - p_j * sum_{i!=t} r_i,  r_i = p_i / (1 - p_i)
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i != target) r(i) = std::exp(logp(i) - log1m_exp(logp(i)));
    }
    const double rsum = r.sum();
    Eigen::RowVectorXd d = p + r - p * rsum;
    d(target) -= 1.0;
    Matrix dm = d * g;
    t.accumulate(il, dm);
  });
}

Var softmax_cross_entropy(const Var& logits, int target) {
  require(logits.rows() == 1 && logits.cols() >= 1, "softmax_cross_entropy",
          "expects a 1xn row, got " + shape_of(logits.value()));
  require(target >= 0 && target < logits.cols(), "softmax_cross_entropy", "target out of range");
  const Eigen::RowVectorXd logp = log_softmax_row(logits.value().row(0));
  Matrix out(1, 1);
  out(0, 0) = -logp(target);
  const int il = logits.id();
  return logits.tape()->record(std::move(out), "softmax_cross_entropy", {logits},
                               [il, target, logp](Tape& t, int self) {
                                 Eigen::RowVectorXd d = logp.array().exp().matrix();
                                 d(target) -= 1.0;
                                 Matrix dm = d * t.grad(self)(0, 0);
                                 t.accumulate(il, dm);
                               });
}

}  // namespace anchorcap::nn
