#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pc/backbone.h"
#include "pc/tensor.h"

namespace pc::test {

/// Textbook triple-loop product, used as an oracle for the engine's matmul.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, unsigned seed, double lo = -2.0,
                            double hi = 2.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(gen);
  return t;
}

/// Scalar multi-head attention with optional raw prefixes, written from the
/// definition: q = h wq; k = [pk; h wk]; v = [pv; h wv]; per-head softmax of
/// q k^T / sqrt(d); concat heads; wo and bo. Returns output and the merged
/// (pre-projection) head outputs.
struct AttentionOracle {
  Tensor out;
  Tensor merged;
  std::vector<Tensor> weights;
};

inline AttentionOracle attention_oracle(const Tensor& h, const Tensor* pk, const Tensor* pv,
                                 const TransformerBlock& b, std::size_t heads) {
  const std::size_t L = h.cols(), T = h.rows(), n = pk ? pk->rows() : 0;
  const std::size_t d = L / heads;
  const Tensor q = naive_matmul(h, b.wq.value);
  const Tensor kh = naive_matmul(h, b.wk.value), vh = naive_matmul(h, b.wv.value);
  Tensor k(n + T, L), v(n + T, L);
  for (std::size_t r = 0; r < n + T; ++r)
    for (std::size_t c = 0; c < L; ++c) {
      k(r, c) = r < n ? (*pk)(r, c) : kh(r - n, c);
      v(r, c) = r < n ? (*pv)(r, c) : vh(r - n, c);
    }
  AttentionOracle o;
  o.merged = Tensor(T, L);
  for (std::size_t head = 0; head < heads; ++head) {
    Tensor w(T, n + T);
    for (std::size_t i = 0; i < T; ++i) {
      double z = 0.0;
      std::vector<double> e(n + T);
      for (std::size_t j = 0; j < n + T; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += q(i, head * d + c) * k(j, head * d + c);
        e[j] = dot / std::sqrt(static_cast<double>(d));
      }
      double hi = e[0];
      for (double x : e) hi = std::max(hi, x);
      for (double& x : e) z += (x = std::exp(x - hi));
      for (std::size_t j = 0; j < n + T; ++j) w(i, j) = e[j] / z;
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < n + T; ++j) s += w(i, j) * v(j, head * d + c);
        o.merged(i, head * d + c) = s;
      }
    }
    o.weights.push_back(w);
  }
  o.out = naive_matmul(o.merged, b.wo.value);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t c = 0; c < L; ++c) o.out(i, c) += b.bo.value(0, c);
  return o;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pc_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace pc::test
