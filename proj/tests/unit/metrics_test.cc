#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "helpers.h"
#include "pc/metrics.h"

using namespace pc;

namespace {

AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  AccuracyMatrix m;
  for (const auto& r : rows) m.record_eval(r);
  return m;
}

AccuracyMatrix random_matrix(std::size_t stages, unsigned seed) {
  const Tensor noise = pc::test::random_tensor(stages, stages, seed, 0.05, 0.9);
  AccuracyMatrix m;
  for (std::size_t t = 0; t < stages; ++t) {
    std::vector<double> row(noise.row(t).begin(), noise.row(t).begin() + t + 1);
    m.record_eval(row);
  }
  return m;
}

// Independent reading of the metric definitions straight off the rows.
double oracle_forgetting(const std::vector<std::vector<double>>& a, std::size_t t) {
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < t; ++j) {
    double best = 0.0;
    for (std::size_t i = j; i + 1 < t; ++i) best = std::max(best, a[i][j]);
    total += best - a[t - 1][j];
  }
  return total / static_cast<double>(t - 1);
}

std::string fixture(const std::string& name) { return std::string(PC_FIXTURE_DIR) + "/" + name; }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("constant matrix") {
    const AccuracyMatrix m = from_rows({{0.6}, {0.6, 0.6}, {0.6, 0.6, 0.6}});
    for (std::size_t t = 1; t <= 3; ++t) CHECK(std::abs(average_accuracy(m, t) - 0.6) < 1e-15);
    CHECK(forgetting(m, 3) == 0.0);
  }

  TEST_CASE("published CODA-P matrices") {
    const AccuracyMatrix cifar = load_csv(fixture("coda_cifar.csv"));
    const AccuracyMatrix imr = load_csv(fixture("coda_imr.csv"));
    CHECK(cifar.stages() == 10);
    CHECK(std::abs(100.0 * average_accuracy(cifar, 10) - 86.41) <= 0.05);
    CHECK(std::abs(100.0 * forgetting(cifar, 10) - 7.17) <= 0.05);
    CHECK(std::abs(100.0 * average_accuracy(imr, 10) - 74.26) <= 0.05);
    CHECK(std::abs(100.0 * forgetting(imr, 10) - 7.91) <= 0.05);
  }

  TEST_CASE("forgetting on non-increasing columns uses the diagonal") {
    const AccuracyMatrix m = from_rows({{0.9}, {0.8, 0.7}, {0.75, 0.6, 0.95}, {0.5, 0.55, 0.9, 0.8}});
    const double expected = ((0.9 - 0.5) + (0.7 - 0.55) + (0.95 - 0.9)) / 3.0;
    CHECK(std::abs(forgetting(m, 4) - expected) < 1e-15);
  }

  TEST_CASE("forgetting uses the best earlier accuracy") {
    const AccuracyMatrix m = from_rows({{0.5}, {0.8, 0.6}, {0.7, 0.65, 0.9}});
    CHECK(std::abs(forgetting(m, 3) - ((0.8 - 0.7) + (0.6 - 0.65)) / 2.0) < 1e-15);
  }

  TEST_CASE("metrics match a direct oracle on random matrices") {
    for (unsigned seed = 0; seed < 20; ++seed) {
      const AccuracyMatrix m = random_matrix(6, seed);
      std::vector<std::vector<double>> rows;
      for (std::size_t t = 1; t <= 6; ++t) rows.push_back(m.row(t));
      for (std::size_t t = 1; t <= 6; ++t) {
        const double mean = std::accumulate(rows[t - 1].begin(), rows[t - 1].end(), 0.0) / t;
        CHECK(std::abs(average_accuracy(m, t) - mean) < 1e-15);
        if (t >= 2) CHECK(std::abs(forgetting(m, t) - oracle_forgetting(rows, t)) < 1e-15);
      }
    }
  }

  TEST_CASE("row permutation, constant shift and no-drift invariants") {
    const AccuracyMatrix m = random_matrix(5, 42);
    std::vector<double> last = m.row(5);
    std::reverse(last.begin(), last.end());
    AccuracyMatrix permuted;
    for (std::size_t t = 1; t < 5; ++t) permuted.record_eval(m.row(t));
    permuted.record_eval(last);
    CHECK(std::abs(average_accuracy(permuted, 5) - average_accuracy(m, 5)) < 1e-15);

    AccuracyMatrix shifted;
    for (std::size_t t = 1; t <= 5; ++t) {
      std::vector<double> row = m.row(t);
      for (double& v : row) v += 0.05;
      shifted.record_eval(row);
    }
    CHECK(std::abs(average_accuracy(shifted, 5) - average_accuracy(m, 5) - 0.05) < 1e-12);
    CHECK(std::abs(forgetting(shifted, 5) - forgetting(m, 5)) < 1e-12);

    AccuracyMatrix steady;
    for (std::size_t t = 1; t <= 5; ++t) {
      std::vector<double> row;
      for (std::size_t j = 1; j <= t; ++j) row.push_back(m.at(j, j));
      steady.record_eval(row);
    }
    CHECK(forgetting(steady, 5) == 0.0);
  }

  TEST_CASE("column permutation equivariance") {
    // Columns 1 and 2 trade places in rows 2..4 together with their histories;
    // a[1][1] is below every moved entry so no column maximum changes.
    const AccuracyMatrix m = from_rows({{0.1}, {0.7, 0.8}, {0.6, 0.75, 0.9}, {0.5, 0.6, 0.8, 0.7}});
    const AccuracyMatrix swapped = from_rows({{0.1}, {0.8, 0.7}, {0.75, 0.6, 0.9}, {0.6, 0.5, 0.8, 0.7}});
    CHECK(std::abs(forgetting(m, 4) - 0.5 / 3.0) < 1e-12);
    CHECK(std::abs(forgetting(swapped, 4) - forgetting(m, 4)) < 1e-15);
    CHECK(std::abs(average_accuracy(swapped, 4) - average_accuracy(m, 4)) < 1e-15);
  }

  TEST_CASE("record_eval validation") {
    AccuracyMatrix m;
    m.record_eval({0.5});
    CHECK_THROWS_AS(m.record_eval({0.5}), MetricsError);
    CHECK_THROWS_AS(m.record_eval({0.5, 1.2}), std::out_of_range);
    CHECK_THROWS_AS(m.record_eval({0.5, -0.1}), std::out_of_range);
    CHECK(m.stages() == 1);
    CHECK_THROWS_AS(forgetting(m, 1), MetricsError);
    CHECK_THROWS_AS(average_accuracy(m, 2), MetricsError);
    CHECK_THROWS_AS(average_accuracy(m, 0), MetricsError);
  }

  TEST_CASE("CSV round trip") {
    for (unsigned seed = 0; seed < 5; ++seed) {
      const AccuracyMatrix m = random_matrix(4, 100 + seed);
      const std::string csv = to_csv(m);
      CHECK(parse_csv(csv) == m);
      CHECK(to_csv(parse_csv(csv)) == csv);
    }
    const AccuracyMatrix exact = from_rows({{0.5}, {0.25, 1.0}});
    CHECK(to_csv(exact) == "task,eval_1,eval_2\n1,50.0,\n2,25.0,100.0\n");
  }

  TEST_CASE("malformed CSV names the line") {
    const std::string bad = "task,eval_1,eval_2\n1,50.0,\n2,abc,10.0\n";
    try {
      parse_csv(bad);
      FAIL("parse_csv accepted a malformed row");
    } catch (const MetricsError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_csv("task,eval_1\n1,50.0,60.0\n"), MetricsError);
    CHECK_THROWS_AS(parse_csv("task,eval_1,eval_2\n1,50.0,20.0\n2,1,2\n"), MetricsError);
    CHECK_THROWS_AS(parse_csv(""), MetricsError);
  }
}
