#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.h"
#include "pc/baselines.h"
#include "pc/codebook.h"
#include "pc/ops.h"
#include "pc/pgm.h"
#include "pc/pmm.h"
#include "pc/random.h"

using namespace pc;
using pc::test::random_tensor;

namespace {

constexpr std::size_t kLength = 8;
constexpr std::size_t kCodes = 6;
constexpr std::size_t kRows = 4;

Tensor coefficients_for(const Tensor& query, const Tensor& codes, PgmParams& params) {
  Tape tape(false);
  return compute_coefficients(tape.constant(query), tape.constant(codes), params).value();
}

Tensor quantized(const Tensor& s) {
  Tape tape(false);
  return quantize_correlations(tape.constant(s)).value();
}

double row_norm(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (double v : t.row(r)) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("pgm") {
  TEST_CASE("coefficients are row-stochastic and deterministic") {
    Rng rng(3);
    PgmParams params = init_pgm(kLength, kCodes, kRows, 2, rng, "pgm");
    Rng again(3);
    PgmParams twin = init_pgm(kLength, kCodes, kRows, 2, again, "pgm");
    const Tensor codes = random_tensor(kCodes, kLength, 1, -1, 1);
    const Tensor q = random_tensor(1, kLength, 2, -1, 1);
    const Tensor a = coefficients_for(q, codes, params);
    CHECK(a.rows() == kRows);
    CHECK(a.cols() == kCodes);
    for (std::size_t r = 0; r < kRows; ++r) {
      double total = 0.0;
      for (double v : a.row(r)) {
        CHECK(v > 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-10);
    }
    CHECK(coefficients_for(q, codes, twin) == a);
    CHECK(coefficients_for(q, codes, params) == a);

    // Instance specificity on random pairs.
    for (unsigned i = 0; i < 20; ++i) {
      const Tensor other = random_tensor(1, kLength, 500 + i, -1, 1);
      CHECK(coefficients_for(other, codes, params) != a);
    }
    CHECK_THROWS_AS(coefficients_for(Tensor(1, kLength + 1), codes, params), DimensionError);
  }

  TEST_CASE("zeroed head gives uniform coefficients") {
    Rng rng(4);
    PgmParams params = init_pgm(kLength, kCodes, kRows, 1, rng, "pgm");
    for (double& v : params.head_w.value.data()) v = 0.0;
    for (double& v : params.head_b.value.data()) v = 0.0;
    const Tensor a = coefficients_for(random_tensor(1, kLength, 5), random_tensor(kCodes, kLength, 6), params);
    for (double v : a.data()) CHECK(std::abs(v - 1.0 / kCodes) < 1e-15);
  }

  TEST_CASE("generated prompts") {
    Tape tape(false);
    const Tensor m = random_tensor(3, 4, 8);
    const std::vector<std::size_t> picks{2, 0};
    const Tensor p = generate_prompts(tape.constant(one_hot_rows(picks, 3)), tape.constant(m)).value();
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(p(0, j) == m(2, j));
      CHECK(p(1, j) == m(0, j));
    }
    const Tensor uniform = generate_prompts(tape.constant(Tensor(1, 3, 1.0 / 3.0)), tape.constant(m)).value();
    for (std::size_t j = 0; j < 4; ++j) {
      const double mean = (m(0, j) + m(1, j) + m(2, j)) / 3.0;
      CHECK(std::abs(uniform(0, j) - mean) < 1e-15);
    }
    const Tensor a = random_tensor(2, 3, 9, 0, 1);
    CHECK(max_abs_diff(generate_prompts(tape.constant(a), tape.constant(m)).value(),
                       pc::test::naive_matmul(a, m)) < 1e-15);
  }

  TEST_CASE("generated prompts lie in the convex hull of the codes") {
    Rng rng(11);
    PgmParams params = init_pgm(kLength, kCodes, kRows, 2, rng, "pgm");
    const Tensor codes = random_tensor(kCodes, kLength, 12);
    for (unsigned trial = 0; trial < 10; ++trial) {
      Tape tape(false);
      const Var m = tape.constant(codes);
      const Tensor p =
          generate_prompts(compute_coefficients(tape.constant(random_tensor(1, kLength, 40 + trial)), m, params), m)
              .value();
      for (std::size_t c = 0; c < kLength; ++c) {
        double lo = codes(0, c), hi = codes(0, c);
        for (std::size_t r = 1; r < kCodes; ++r) {
          lo = std::min(lo, codes(r, c));
          hi = std::max(hi, codes(r, c));
        }
        for (std::size_t r = 0; r < kRows; ++r) {
          CHECK(p(r, c) >= lo - 1e-12);
          CHECK(p(r, c) <= hi + 1e-12);
        }
      }
    }
  }

  TEST_CASE("one-hot coefficients reproduce hard selection") {
    const Tensor codes = random_tensor(kCodes, kLength, 13);
    const Tensor query = random_tensor(1, kLength, 14);
    Tape tape(false);
    const Var m = tape.constant(codes);
    const HardSelection sel = hard_select(tape.constant(query), m, 3);
    const Tensor bridged = generate_prompts(tape.constant(one_hot_rows(sel.indices, kCodes)), m).value();
    CHECK(max_abs_diff(bridged, sel.key_prompts.value()) <= 1e-12);
    CHECK(max_abs_diff(bridged, sel.value_prompts.value()) <= 1e-12);
  }

  TEST_CASE("gradients reach the generator and the codes") {
    Rng rng(15);
    PgmParams params = init_pgm(kLength, kCodes, kRows, 2, rng, "pgm");
    Param codes{"codes", random_tensor(kCodes, kLength, 16)};
    Tape tape;
    const Var m = tape.param(codes);
    const Var p = generate_prompts(compute_coefficients(tape.constant(random_tensor(1, kLength, 17)), m, params), m);
    const GradientMap g = tape.backward(frobenius_sq(p));
    CHECK(g.count(&codes) == 1);
    for (Param* param : params.params()) CHECK(g.count(param) == 1);
  }
}

TEST_SUITE("pmm") {
  TEST_CASE("quantized correlations") {
    const Tensor flat = quantized(Tensor(1, 5, 2.5));
    for (double v : flat.data()) CHECK(v == 0.5);
    const Tensor s = quantized(Tensor::from_rows({{1, 2, 3}}));
    CHECK(s(0, 0) == 0.5);
    CHECK(std::abs(s(0, 1) - 0.622459) < 1e-6);
    CHECK(std::abs(s(0, 2) - 0.731059) < 1e-6);
    CHECK(std::abs(s(0, 1) - 1.0 / (1.0 + std::exp(-0.5))) < 1e-15);

    const double upper = 1.0 / (1.0 + std::exp(-1.0));
    for (unsigned trial = 0; trial < 50; ++trial) {
      const Tensor raw = random_tensor(1, 7, 200 + trial, -3, 3);
      const Tensor q = quantized(raw);
      const auto lo = std::min_element(raw.data().begin(), raw.data().end()) - raw.data().begin();
      const auto hi = std::max_element(raw.data().begin(), raw.data().end()) - raw.data().begin();
      CHECK(q[lo] == 0.5);
      CHECK(std::abs(q[hi] - upper) < 1e-15);
      for (std::size_t i = 0; i < raw.size(); ++i) {
        CHECK(q[i] >= 0.5);
        CHECK(q[i] <= 0.7310586);
        if (static_cast<std::ptrdiff_t>(i) != lo) CHECK(q[i] > 0.5);
        for (std::size_t j = 0; j < raw.size(); ++j)
          if (raw[i] < raw[j]) CHECK(q[i] < q[j]);
      }
    }
  }

  TEST_CASE("tie rule carries no gradient") {
    Tape tape;
    const Var s = tape.variable(Tensor(1, 4, 1.25));
    CHECK_FALSE(quantize_correlations(s).tracked());
    CHECK(quantize_correlations(tape.variable(Tensor::from_rows({{1, 2}}))).tracked());
  }

  TEST_CASE("modulate") {
    Tape tape(false);
    const Tensor p = random_tensor(4, 3, 21);
    const Tensor half = modulate(tape.constant(Tensor(1, 4, 0.5)), tape.constant(p)).value();
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(half[i] == p[i] / 2.0);

    const double sigma_one = 1.0 / (1.0 + std::exp(-1.0));
    const Tensor two = modulate(tape.constant(Tensor::from_rows({{0.5, sigma_one}})),
                                tape.constant(Tensor::from_rows({{2, 2}, {2, 2}})))
                           .value();
    CHECK(max_abs_diff(two, Tensor::from_rows({{1, 1}, {1.462117, 1.462117}})) < 1e-6);

    const Tensor w = random_tensor(1, 4, 22, 0.5, 0.73);
    const Tensor out = modulate(tape.constant(w), tape.constant(p)).value();
    for (std::size_t r = 0; r < 4; ++r) CHECK(std::abs(row_norm(out, r) - w[r] * row_norm(p, r)) < 1e-12);
  }

  TEST_CASE("modulation weights") {
    Rng rng(23);
    PmmParams params = init_pmm(kLength, rng);
    const Tensor prompts = random_tensor(kRows, kLength, 24);
    const Tensor f = random_tensor(1, kLength, 25);
    Tape tape(false);
    const Tensor w = modulation_weights(tape.constant(f), tape.constant(prompts), params).value();
    CHECK(w.rows() == 1);
    CHECK(w.cols() == kRows);

    // Oracle: S = (F wf)(P wp)^T by brute force, then min-max + sigmoid.
    const Tensor fp = pc::test::naive_matmul(f, params.wf.value);
    const Tensor pp = pc::test::naive_matmul(prompts, params.wp.value);
    std::vector<double> s(kRows);
    for (std::size_t r = 0; r < kRows; ++r)
      for (std::size_t c = 0; c < kLength; ++c) s[r] += fp(0, c) * pp(r, c);
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    for (std::size_t r = 0; r < kRows; ++r) {
      const double scaled = (s[r] - *lo) / (*hi - *lo);
      CHECK(std::abs(w[r] - 1.0 / (1.0 + std::exp(-scaled))) < 1e-12);
    }

    // Doubling F doubles S; the min-max step cancels a positive rescale of S.
    Tensor f2 = f;
    for (double& v : f2.data()) v *= 2.0;
    const Tensor w2 = modulation_weights(tape.constant(f2), tape.constant(prompts), params).value();
    CHECK(max_abs_diff(w, w2) < 1e-12);
  }
}
