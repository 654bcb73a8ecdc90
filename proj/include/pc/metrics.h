#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pc {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Lower-triangular record a[t][j] (1 <= j <= t) of the accuracy on task j's
/// test set after training stage t. Values are fractions in [0, 1].
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;

  /// Number of recorded stages.
  std::size_t stages() const { return rows_.size(); }
  /// 1-based access.
  double at(std::size_t t, std::size_t j) const;
  const std::vector<double>& row(std::size_t t) const;

  /// Appends row t; `accuracies` must have exactly t = stages() + 1 entries in [0, 1].
  void record_eval(std::vector<double> accuracies);

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::vector<std::vector<double>> rows_;
};

/// A_a(t) = (1/t) * sum_{j<=t} a[t][j].
double average_accuracy(const AccuracyMatrix& m, std::size_t t);

/// F(t) = (1/(t-1)) * sum_{j<t} (max_{i<t} a[i][j] - a[t][j]). Requires t >= 2.
double forgetting(const AccuracyMatrix& m, std::size_t t);

/// Header `task,eval_1,...,eval_T`; row t holds percent values for j <= t and
/// blanks after. Values use the shortest round-trip form with at least one decimal.
std::string to_csv(const AccuracyMatrix& m);

/// Parses the CSV above; errors name the 1-based line number.
AccuracyMatrix parse_csv(const std::string& text);
AccuracyMatrix load_csv(const std::string& path);

}  // namespace pc
