#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.h"
#include "pc/gradcheck.h"
#include "pc/ops.h"

using namespace pc;
using pc::test::naive_matmul;
using pc::test::random_tensor;

namespace {

Tensor eval(Var v) { return v.value(); }

// e^x / sum e^x with a running max shift, one row at a time.
std::vector<double> scalar_softmax(std::vector<double> row) {
  double hi = row[0];
  for (double v : row) hi = std::max(hi, v);
  double z = 0.0;
  for (double& v : row) z += (v = std::exp(v - hi));
  for (double& v : row) v /= z;
  return row;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("matmul against hand and brute-force oracles") {
    Tape tape(false);
    const Tensor b = Tensor::from_rows({{2, 3}, {4, 5}});
    CHECK(eval(matmul(tape.constant(Tensor::identity(2)), tape.constant(b))) == b);
    const Tensor a = Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}});
    CHECK(eval(matmul(tape.constant(a), tape.constant(b))) ==
          Tensor::from_rows({{2, 3}, {4, 5}, {6, 8}}));
    CHECK(eval(matmul(tape.constant(Tensor(3, 2)), tape.constant(b))) == Tensor(3, 2));

    const Tensor x = random_tensor(4, 5, 1), y = random_tensor(5, 3, 2), z = random_tensor(3, 6, 3);
    CHECK(max_abs_diff(eval(matmul(tape.constant(x), tape.constant(y))), naive_matmul(x, y)) < 1e-14);
    const Tensor left = eval(matmul(matmul(tape.constant(x), tape.constant(y)), tape.constant(z)));
    const Tensor right = eval(matmul(tape.constant(x), matmul(tape.constant(y), tape.constant(z))));
    CHECK(max_abs_diff(left, right) < 1e-10);
    CHECK_THROWS_AS(matmul(tape.constant(x), tape.constant(x)), DimensionError);
  }

  TEST_CASE("softmax rows") {
    Tape tape(false);
    const Tensor s = eval(softmax_rows(tape.constant(Tensor::from_rows({{0, 0, 0}, {1000, 0, 0}}))));
    for (std::size_t j = 0; j < 3; ++j) CHECK(s(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(std::abs(s(1, 0) - 1.0) < 1e-9);
    CHECK(std::abs(s(1, 1)) < 1e-9);
    const Tensor p = eval(softmax_rows(tape.constant(Tensor::from_rows({{1, 2}}))));
    CHECK(std::abs(p(0, 0) - 0.268941) < 1e-6);
    CHECK(std::abs(p(0, 1) - 0.731059) < 1e-6);

    const Tensor x = random_tensor(5, 7, 4, -5, 5);
    const Tensor sx = eval(softmax_rows(tape.constant(x)));
    Tensor shifted = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) shifted(i, j) += 3.0 * static_cast<double>(i) - 1.0;
    CHECK(max_abs_diff(sx, eval(softmax_rows(tape.constant(shifted)))) < 1e-12);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto row = x.row(i);
      const auto oracle = scalar_softmax({row.begin(), row.end()});
      double total = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) {
        total += sx(i, j);
        CHECK(std::abs(sx(i, j) - oracle[j]) < 1e-15);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }

  TEST_CASE("sigmoid values") {
    Tape tape(false);
    const Tensor s = eval(sigmoid(tape.constant(Tensor::from_rows({{0, 1, -1}}))));
    CHECK(s(0, 0) == 0.5);
    CHECK(std::abs(s(0, 1) - 0.731059) < 1e-6);
    CHECK(std::abs(s(0, 2) - 0.268941) < 1e-6);
    CHECK(std::abs(s(0, 1) + s(0, 2) - 1.0) < 1e-15);
  }

  TEST_CASE("cross entropy") {
    Tape tape(false);
    const std::vector<std::size_t> first{0};
    Tensor confident(1, 4);
    confident(0, 0) = 1000.0;
    CHECK(std::abs(eval(cross_entropy(tape.constant(confident), first)).item()) < 1e-9);
    const std::vector<std::size_t> label3{3};
    CHECK(std::abs(eval(cross_entropy(tape.constant(Tensor(1, 10, 0.7)), label3)).item() -
                   std::log(10.0)) < 1e-12);
    const double ce = eval(cross_entropy(tape.constant(Tensor::from_rows({{2, 1}})), first)).item();
    CHECK(std::abs(ce - 0.313262) < 1e-6);
    CHECK(std::abs(ce - std::log1p(std::exp(-1.0))) < 1e-15);

    const Tensor logits = random_tensor(6, 5, 9, -4, 4);
    const std::vector<std::size_t> labels{0, 4, 2, 2, 1, 3};
    const double value = eval(cross_entropy(tape.constant(logits), labels)).item();
    double oracle = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto row = logits.row(i);
      oracle -= std::log(scalar_softmax({row.begin(), row.end()})[labels[i]]);
    }
    CHECK(value >= 0.0);
    CHECK(std::abs(value - oracle / 6.0) < 1e-12);
    const std::vector<std::size_t> bad{5};
    CHECK_THROWS(cross_entropy(tape.constant(Tensor(1, 5)), bad));
  }

  TEST_CASE("backward on sum and squared norm") {
    Param w{"w", Tensor::from_rows({{1, -2}, {0.5, 3}})};
    {
      Tape tape;
      const GradientMap g = tape.backward(sum(tape.param(w)));
      CHECK(g.at(&w) == Tensor(2, 2, 1.0));
    }
    {
      Tape tape;
      const GradientMap g = tape.backward(frobenius_sq(tape.param(w)));
      CHECK(g.at(&w) == Tensor::from_rows({{2, -4}, {1, 6}}));
    }
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.param(w)), ContractError);
    Param frozen{"frozen", Tensor(2, 2, 1.0), false};
    Tape tape2;
    CHECK_THROWS(tape2.backward(sum(tape2.param(frozen))));
    Tape tape3;
    const GradientMap mixed = tape3.backward(sum(mul(tape3.param(w), tape3.param(frozen))));
    CHECK(mixed.count(&w) == 1);
    CHECK(mixed.count(&frozen) == 0);
  }

  TEST_CASE("grad_check on known functions") {
    const Tensor x = random_tensor(3, 4, 5);
    // A linear function has no truncation error, so a wider step only trims rounding.
    CHECK(grad_check([](Tape&, Var v) { return sum(v); }, x, 1e-4) < 1e-10);
    CHECK(grad_check([](Tape&, Var v) { return sum(mul(sigmoid(v), v)); }, x) < 1e-5);
    // A deliberately wrong gradient is caught.
    CHECK(grad_check([](Tape&, Var v) { return sum(negate_gradient(mul(v, v))); }, x) > 1e-2);
  }

  TEST_CASE("numeric guard") {
    Tape tape(false);
    CHECK_THROWS_AS(sqrt(tape.constant(Tensor(1, 1, -1.0))), NumericError);
  }
}
