#include <algorithm>
#include <cmath>
#include <cstdint>

#include "doctest.h"
#include "helpers.h"
#include "pc/codebook.h"
#include "pc/gradcheck.h"
#include "pc/ops.h"

using namespace pc;

namespace {

Codebook fixed_codebook(Tensor codes, Tensor ema) {
  Codebook cb;
  cb.codes = Param{"codes", std::move(codes)};
  cb.ema = std::move(ema);
  return cb;
}

double orth_value(Codebook& cb) {
  Tape tape(false);
  return orth_loss(tape, cb).value().item();
}

double reg_value(Codebook& cb) {
  Tape tape(false);
  return reg_loss(tape, cb).value().item();
}

}  // namespace

TEST_SUITE("codebook") {
  TEST_CASE("init is deterministic and bounded") {
    const Codebook a = init_codebook(kFullScaleCodebookSize, 16, 3);
    const Codebook b = init_codebook(kFullScaleCodebookSize, 16, 3);
    CHECK(a.codes.value == b.codes.value);
    CHECK(a.ema == a.codes.value);
    CHECK(a.size() == 256);
    const Codebook small = init_codebook(32, 16, 3);
    CHECK(small.size() == 32);
    CHECK(small.code_length() == 16);
    for (double v : small.codes.value.data()) CHECK(std::abs(v) <= 0.25);
    CHECK(init_codebook(32, 16, 4).codes.value != small.codes.value);
    CHECK_THROWS(init_codebook(0, 16, 1));
  }

  TEST_CASE("ema update") {
    Codebook fixed = init_codebook(4, 3, 8);
    const Tensor before = fixed.codes.value;
    ema_update(fixed);
    CHECK(fixed.ema == before);

    Codebook cb = fixed_codebook(Tensor(2, 3, 1.0), Tensor(2, 3, 0.0));
    ema_update(cb);
    for (double v : cb.ema.data()) CHECK(std::abs(v - 0.01) < 1e-15);
    ema_update(cb);
    for (double v : cb.ema.data()) CHECK(std::abs(v - (1.0 - 0.99 * 0.99)) < 1e-15);
    CHECK(cb.task_index == 2);
  }

  TEST_CASE("ema stays inside the hull of its code history") {
    Codebook cb = init_codebook(3, 4, 1);
    Tensor lo = cb.codes.value, hi = cb.codes.value;
    for (unsigned step = 0; step < 20; ++step) {
      cb.codes.value = pc::test::random_tensor(3, 4, 100 + step);
      for (std::size_t i = 0; i < lo.size(); ++i) {
        lo[i] = std::min(lo[i], cb.codes.value[i]);
        hi[i] = std::max(hi[i], cb.codes.value[i]);
      }
      ema_update(cb);
      for (std::size_t i = 0; i < lo.size(); ++i) {
        CHECK(cb.ema[i] >= lo[i] - 1e-15);
        CHECK(cb.ema[i] <= hi[i] + 1e-15);
      }
    }
  }

  TEST_CASE("reg loss") {
    Codebook same = init_codebook(4, 5, 2);
    CHECK(reg_value(same) == 0.0);
    Codebook cb = fixed_codebook(Tensor(2, 3, 0.0), Tensor(2, 3, 1.0));
    CHECK(reg_value(cb) == doctest::Approx(3.0).epsilon(1e-15));

    Codebook drifted = init_codebook(5, 4, 6);
    drifted.ema = pc::test::random_tensor(5, 4, 77);
    Tape tape;
    const GradientMap g = tape.backward(reg_loss(tape, drifted));
    Tensor expected = drifted.codes.value;
    for (std::size_t i = 0; i < expected.size(); ++i)
      expected[i] = (2.0 / 5.0) * (drifted.codes.value[i] - drifted.ema[i]);
    CHECK(max_abs_diff(g.at(&drifted.codes), expected) < 1e-8);
    CHECK(g.size() == 1);

    const Tensor ema = drifted.ema;
    const double err = grad_check(
        [&](Tape& t, Var m) {
          return scale(frobenius_sq(sub(m, t.constant(ema))), 1.0 / 5.0);
        },
        drifted.codes.value);
    CHECK(err < 1e-5);
  }

  TEST_CASE("orth loss") {
    Codebook identity = fixed_codebook(Tensor::identity(3), Tensor::identity(3));
    CHECK(orth_value(identity) < 1e-12);
    // Rotated orthonormal rows inside a longer code space.
    const double c = std::cos(0.3), s = std::sin(0.3);
    Codebook rotated = fixed_codebook(Tensor::from_rows({{c, s, 0, 0}, {-s, c, 0, 0}}), Tensor(2, 4));
    CHECK(orth_value(rotated) < 1e-12);
    Codebook parallel = fixed_codebook(Tensor::from_rows({{1, 0}, {1, 0}}), Tensor(2, 2));
    CHECK(std::abs(orth_value(parallel) - std::sqrt(2.0)) < 1e-12);

    Codebook random = init_codebook(4, 8, 12);
    CHECK(orth_value(random) >= 0.0);
    Tape tape;
    const GradientMap g = tape.backward(orth_loss(tape, random));
    CHECK(g.count(&random.codes) == 1);

    for (auto [n, l] : {std::pair{4, 8}, std::pair{4, 6}}) {
      const Tensor m = pc::test::random_tensor(n, l, 31 + n + l, -1, 1);
      const double err = grad_check(
          [n](Tape& t, Var v) {
            return sqrt(frobenius_sq(sub(matmul(v, transpose(v)), t.constant(Tensor::identity(n)))));
          },
          m);
      CHECK(err < 1e-5);
    }
  }

  TEST_CASE("gradient descent on orth loss alone reaches orthogonality") {
    // The loss is a norm, so its gradient keeps unit scale near the optimum;
    // a decaying step lets descent settle instead of orbiting.
    for (std::uint64_t seed : {1, 5, 9}) {
      Codebook cb = init_codebook(8, 32, seed);
      const Tensor ema_before = cb.ema;
      for (int step = 0; step < 500; ++step) {
        Tape tape;
        const GradientMap g = tape.backward(orth_loss(tape, cb));
        const Tensor& grad = g.at(&cb.codes);
        const double eta = 0.05 / (1.0 + step / 10.0);
        for (std::size_t i = 0; i < grad.size(); ++i) cb.codes.value[i] -= eta * grad[i];
      }
      CHECK(orth_value(cb) < 1e-2);
      CHECK(cb.ema == ema_before);
    }
  }

  TEST_CASE("save and load round trip") {
    Codebook cb = init_codebook(6, 4, 9);
    cb.ema = pc::test::random_tensor(6, 4, 10);
    cb.task_index = 3;
    const auto dir = pc::test::scratch_dir("codebook");
    save_codebook(cb, dir / "cb");
    const Codebook back = load_codebook(dir / "cb");
    CHECK(back.codes.value == cb.codes.value);
    CHECK(back.ema == cb.ema);
    CHECK(back.task_index == 3);
    CHECK(back.alpha == cb.alpha);
  }
}
