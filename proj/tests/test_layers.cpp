#include <doctest.h>

#include "anchorcap/layers.hpp"
#include "test_util.hpp"

using namespace anchorcap::nn;
using anchorcap::testing::max_abs_diff;
using anchorcap::testing::random_matrix;

namespace {

struct StackFixture {
  ParameterStore store;
  Rng rng{5};
  AttentionStack stack;

  explicit StackFixture(AttentionConfig cfg = {8, 2, 2, 16}) : stack(store, "s", cfg, rng) {}

  Matrix run(const Matrix& x, const Mask& mask, const std::vector<bool>& pad) {
    Tape tape(false);
    return stack.forward(tape, tape.constant(x), mask, pad).value();
  }
};

Mask full(int s) { return Mask::Constant(s, s, true); }

Mask causal(int s) {
  Mask m(s, s);
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) m(i, j) = j <= i;
  }
  return m;
}

}  // namespace

TEST_CASE("attention output keeps the input shape") {
  StackFixture f;
  const Matrix out = f.run(random_matrix(5, 8, 1), full(5), std::vector<bool>(5, true));
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 8);
  CHECK(out.allFinite());
}

TEST_CASE("causal mask: later rows never reach earlier outputs") {
  StackFixture f;
  const Matrix x = random_matrix(6, 8, 2);
  const Matrix base = f.run(x, causal(6), std::vector<bool>(6, true));
  for (int j = 1; j < 6; ++j) {
    Matrix y = x;
    y.row(j) += random_matrix(1, 8, 100 + j);
    const Matrix out = f.run(y, causal(6), std::vector<bool>(6, true));
    CHECK(max_abs_diff(out.topRows(j), base.topRows(j)) <= 1e-9);
    CHECK(max_abs_diff(out.row(j), base.row(j)) > 1e-6);
  }
}

TEST_CASE("with only row 0 unpadded, rows interact only through row 0") {
  // Residual connections keep each row's own input in its output, so
  // perturbing row j may change output row j and nothing else.
  StackFixture f;
  std::vector<bool> pad(5, false);
  pad[0] = true;
  const Matrix x = random_matrix(5, 8, 3);
  const Matrix base = f.run(x, full(5), pad);
  for (int j = 1; j < 5; ++j) {
    Matrix y = x;
    y.row(j) += random_matrix(1, 8, 200 + j);
    const Matrix out = f.run(y, full(5), pad);
    for (int i = 0; i < 5; ++i) {
      if (i != j) CHECK(max_abs_diff(out.row(i), base.row(i)) <= 1e-9);
    }
  }
  // And row 0's change reaches every row.
  Matrix y = x;
  y.row(0) += random_matrix(1, 8, 300);
  const Matrix out = f.run(y, full(5), pad);
  for (int i = 0; i < 5; ++i) CHECK(max_abs_diff(out.row(i), base.row(i)) > 1e-6);
}

TEST_CASE("mismatched masks are contract violations") {
  StackFixture f;
  const Matrix x = random_matrix(4, 8, 4);
  CHECK_THROWS_AS(f.run(x, full(3), std::vector<bool>(4, true)), ShapeError);
  CHECK_THROWS_AS(f.run(x, full(4), std::vector<bool>(3, true)), ShapeError);
  CHECK_THROWS_AS(f.run(random_matrix(4, 6, 4), full(4), std::vector<bool>(4, true)), ShapeError);
}

TEST_CASE("zero-layer stack is the identity") {
  StackFixture f({8, 2, 0, 16});
  const Matrix x = random_matrix(3, 8, 6);
  CHECK(f.run(x, full(3), std::vector<bool>(3, true)) == x);
}

TEST_CASE("heads must divide the model width") {
  ParameterStore store;
  Rng rng(1);
  CHECK_THROWS(AttentionStack(store, "bad", {10, 3, 1, 8}, rng));
}

TEST_CASE("layer norm rows have zero mean and unit variance before the affine") {
  ParameterStore store;
  LayerNorm ln(store, "ln", 6);
  Tape tape(false);
  const Matrix out = ln(tape, tape.constant(random_matrix(4, 6, 7, 3.0))).value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mean = out.row(r).mean();
    const double var = (out.row(r).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);  // eps = 1e-5 shrinks the variance slightly
  }
}

TEST_CASE("layer norm of an all-zero row stays finite") {
  ParameterStore store;
  LayerNorm ln(store, "ln", 4);
  Tape tape(false);
  CHECK(ln(tape, tape.constant(Matrix::Zero(2, 4))).value().allFinite());
}

TEST_CASE("GRU scan: one step equals the cell equations") {
  ParameterStore store;
  Rng rng(8);
  GruCell cell(store, "g", 4, rng);
  const Matrix x = random_matrix(1, 4, 9);
  const Matrix h = random_matrix(1, 4, 10);
  Tape tape(false);
  const Matrix out = cell.scan(tape, tape.constant(x), tape.constant(h)).value();

  auto sig = [](const Matrix& m) { return Matrix((1.0 / (1.0 + (-m.array()).exp())).matrix()); };
  const auto& p = store.items();
  auto w = [&](const std::string& k) { return p.at("g." + k).value; };
  const Matrix z = sig(x * w("input_z.weight") + w("input_z.bias") + h * w("hidden_z"));
  const Matrix r = sig(x * w("input_r.weight") + w("input_r.bias") + h * w("hidden_r"));
  const Matrix n = (x * w("input_n.weight") + w("input_n.bias") + (r.array() * h.array()).matrix() * w("hidden_n"))
                       .array()
                       .tanh()
                       .matrix();
  const Matrix expected = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
  CHECK(max_abs_diff(out, expected) < 1e-12);
}

TEST_CASE("GRU scan is causal") {
  ParameterStore store;
  Rng rng(11);
  GruCell cell(store, "g", 4, rng);
  const Matrix x = random_matrix(5, 4, 12);
  const Matrix h0 = random_matrix(1, 4, 13);
  auto run = [&](const Matrix& in) {
    Tape tape(false);
    return cell.scan(tape, tape.constant(in), tape.constant(h0)).value();
  };
  const Matrix base = run(x);
  for (int s = 0; s + 1 < 5; ++s) {
    Matrix y = x;
    y.row(s + 1) += Matrix::Ones(1, 4);
    CHECK(max_abs_diff(run(y).topRows(s + 1), base.topRows(s + 1)) == 0.0);
  }
}

TEST_CASE("GRU with zero parameters and inputs halves the state each step") {
  // z = r = sigmoid(0) = 1/2, n = tanh(0) = 0, so h' = h / 2.
  ParameterStore store;
  Rng rng(14);
  GruCell cell(store, "g", 3, rng);
  for (auto& [path, p] : store.items()) p.value.setZero();
  const Matrix h0 = (Matrix(1, 3) << 1.0, -2.0, 4.0).finished();
  Tape tape(false);
  const Matrix out = cell.scan(tape, tape.constant(Matrix::Zero(3, 3)), tape.constant(h0)).value();
  for (int s = 0; s < 3; ++s) CHECK(max_abs_diff(out.row(s), h0 / std::pow(2.0, s + 1)) < 1e-15);
}

TEST_CASE("prefix-LM mask") {
  const Mask m = prefix_lm_mask(2, 3);
  CHECK(m.rows() == 5);
  CHECK(m(0, 1));
  CHECK_FALSE(m(0, 2));  // prefix rows never see decode rows
  CHECK(m(2, 0));
  CHECK(m(2, 2));
  CHECK_FALSE(m(2, 3));
  CHECK(m(4, 3));
}

TEST_CASE("attention stack gradients match finite differences") {
  ParameterStore store;
  Rng rng(15);
  AttentionStack stack(store, "s", {4, 2, 1, 6}, rng);
  const Matrix x = random_matrix(3, 4, 16);
  const Matrix r = random_matrix(3, 4, 17);
  auto loss = [&](Tape& tape) {
    return sum(mul(stack.forward(tape, tape.constant(x), prefix_lm_mask(1, 2), {true, true, true}), tape.constant(r)));
  };
  store.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  for (auto& [path, p] : store.items()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + 1e-6;
      Tape up_tape(false);
      const double up = loss(up_tape).scalar();
      p.value.data()[i] = saved - 1e-6;
      Tape down_tape(false);
      const double down = loss(down_tape).scalar();
      p.value.data()[i] = saved;
      CHECK(std::abs(p.grad.data()[i] - (up - down) / 2e-6) < 1e-6);
    }
  }
}
