#include "pc/ops.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace pc {
namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

void require_scalar(const char* op, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw DimensionError(std::string(op) + ": expected 1x1 operand, got " + shape_string(s));
  }
}

// c = a * b with a: m x k, b: k x p.
Tensor raw_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  Tensor c(m, p);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a(i, t);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) c(i, j) += av * b(t, j);
    }
  }
  return c;
}

// a^T * b with a: k x m, b: k x p.
Tensor raw_matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t k = a.rows(), m = a.cols(), p = b.cols();
  Tensor c(m, p);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a(t, i);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) c(i, j) += av * b(t, j);
    }
  }
  return c;
}

// a * b^T with a: m x k, b: p x k.
Tensor raw_matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), p = b.rows();
  Tensor c(m, p);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a(i, t) * b(j, t);
      c(i, j) = s;
    }
  }
  return c;
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor y = x;
  for (double& v : y.data()) v = f(v);
  return y;
}

std::size_t extremal_index(const Tensor& a, bool want_max) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    if (want_max ? a[i] > a[best] : a[i] < a[best]) best = i;
  }
  return best;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner extents disagree for " + shape_string(av) + " x " +
                         shape_string(bv));
  }
  return a.tape().record(raw_matmul(av, bv), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.tracked()) t.accumulate(a, raw_matmul_nt(g, b.value()));
    if (b.tracked()) t.accumulate(b, raw_matmul_tn(a.value(), g));
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga(g.cols(), g.rows());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) = g(i, j);
    t.accumulate(a, ga);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (b.tracked()) t.accumulate(b, map(g, [](double v) { return -v; }));
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.tracked()) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
      t.accumulate(a, ga);
    }
    if (b.tracked()) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
      t.accumulate(b, gb);
    }
  });
}

Var scale(Var a, double s) {
  return a.tape().record(map(a.value(), [s](double v) { return v * s; }), {a},
                         [a, s](Tape& t, const Tensor& g) {
                           t.accumulate(a, map(g, [s](double v) { return v * s; }));
                         });
}

Var add_scalar(Var a, double s) {
  return a.tape().record(map(a.value(), [s](double v) { return v + s; }), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row: row " + shape_string(rv) + " incompatible with " +
                         shape_string(av));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (row.tracked()) {
      Tensor gr(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
      t.accumulate(row, gr);
    }
  });
}

Var scale_rows(Var a, Var weights) {
  const Tensor& av = a.value();
  const Tensor& wv = weights.value();
  if (wv.size() != av.rows() || (wv.rows() != 1 && wv.cols() != 1)) {
    throw DimensionError("scale_rows: weights " + shape_string(wv) + " incompatible with " +
                         shape_string(av));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= wv[i];
  return a.tape().record(std::move(out), {a, weights}, [a, weights](Tape& t, const Tensor& g) {
    const Tensor& w = weights.value();
    if (a.tracked()) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= w[i];
      t.accumulate(a, ga);
    }
    if (weights.tracked()) {
      Tensor gw(w.rows(), w.cols());
      const Tensor& x = a.value();
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) gw[i] += g(i, j) * x(i, j);
      t.accumulate(weights, gw);
    }
  });
}

Var sub_scalar(Var a, Var s) {
  require_scalar("sub_scalar", s.value());
  const double sv = s.value()[0];
  return a.tape().record(map(a.value(), [sv](double v) { return v - sv; }), {a, s},
                         [a, s](Tape& t, const Tensor& g) {
                           t.accumulate(a, g);
                           double total = 0.0;
                           for (double v : g.data()) total += v;
                           t.accumulate(s, Tensor::scalar(-total));
                         });
}

Var div_scalar(Var a, Var s) {
  require_scalar("div_scalar", s.value());
  const double sv = s.value()[0];
  return a.tape().record(map(a.value(), [sv](double v) { return v / sv; }), {a, s},
                         [a, s](Tape& t, const Tensor& g) {
                           const double d = s.value()[0];
                           t.accumulate(a, map(g, [d](double v) { return v / d; }));
                           if (s.tracked()) {
                             double total = 0.0;
                             const Tensor& x = a.value();
                             for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * x[i];
                             t.accumulate(s, Tensor::scalar(-total / (d * d)));
                           }
                         });
}

Var sigmoid(Var x) {
  Tensor y = map(x.value(), [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  Tensor yc = y;
  return x.tape().record(std::move(y), {x}, [x, yc](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= yc[i] * (1.0 - yc[i]);
    t.accumulate(x, gx);
  });
}

Var gelu(Var x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor y = map(x.value(), [](double v) {
    return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  });
  return x.tape().record(std::move(y), {x}, [x](Tape& t, const Tensor& g) {
    Tensor gx = g;
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(kC * (v + kA * v * v * v));
      const double dth = (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
      gx[i] *= 0.5 * (1.0 + th) + 0.5 * v * dth;
    }
    t.accumulate(x, gx);
  });
}

Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (v < 0) throw NumericError("sqrt of negative value");
  }
  Tensor y = map(x.value(), [](double v) { return std::sqrt(v); });
  Tensor yc = y;
  return x.tape().record(std::move(y), {x}, [x, yc](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = yc[i] > 0 ? gx[i] / (2.0 * yc[i]) : 0.0;
    t.accumulate(x, gx);
  });
}

Var softmax_rows(Var x) {
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double mx = y(i, 0);
    for (std::size_t j = 1; j < y.cols(); ++j) mx = std::max(mx, y(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      y(i, j) = std::exp(y(i, j) - mx);
      z += y(i, j);
    }
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) /= z;
  }
  Tensor yc = y;
  return x.tape().record(std::move(y), {x}, [x, yc](Tape& t, const Tensor& g) {
    Tensor gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * yc(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) = yc(i, j) * (g(i, j) - dot);
    }
    t.accumulate(x, gx);
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != n || bias.value().shape() !=
                                                                   gain.value().shape()) {
    throw DimensionError("layer_norm_rows: gain/bias must be 1x" + std::to_string(n));
  }
  Tensor xhat(xv.rows(), n);
  Tensor inv_std(xv.rows(), 1);
  Tensor y(xv.rows(), n);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
      y(i, j) = xhat(i, j) * gain.value()(0, j) + bias.value()(0, j);
    }
  }
  return x.tape().record(
      std::move(y), {x, gain, bias},
      [x, gain, bias, xhat, inv_std](Tape& t, const Tensor& g) {
        const std::size_t rows = g.rows(), n = g.cols();
        const Tensor& gv = gain.value();
        if (x.tracked()) {
          Tensor gx(rows, n);
          for (std::size_t i = 0; i < rows; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g(i, j) * gv(0, j);
              m1 += d;
              m2 += d * xhat(i, j);
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx(i, j) = inv_std[i] * (g(i, j) * gv(0, j) - m1 - xhat(i, j) * m2);
            }
          }
          t.accumulate(x, gx);
        }
        if (gain.tracked() || bias.tracked()) {
          Tensor gg(1, n), gb(1, n);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              gg(0, j) += g(i, j) * xhat(i, j);
              gb(0, j) += g(i, j);
            }
          }
          t.accumulate(gain, gg);
          t.accumulate(bias, gb);
        }
      });
}

Var l2_normalize_rows(Var x, double eps) {
  const Tensor& xv = x.value();
  Tensor y = xv;
  Tensor norms(xv.rows(), 1);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double s = 0.0;
    for (double v : xv.row(i)) s += v * v;
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < xv.cols(); ++j) y(i, j) /= norms[i];
  }
  Tensor yc = y;
  return x.tape().record(std::move(y), {x}, [x, yc, norms](Tape& t, const Tensor& g) {
    Tensor gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += yc(i, j) * g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) {
        gx(i, j) = (g(i, j) - yc(i, j) * dot) / norms[i];
      }
    }
    t.accumulate(x, gx);
  });
}

Var conv1d_same(Var x, Var kernel) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  if (kv.rows() != 1 || kv.cols() % 2 == 0) {
    throw DimensionError("conv1d_same: kernel must be 1xw with odd w, got " + shape_string(kv));
  }
  const auto w = static_cast<std::ptrdiff_t>(kv.cols());
  const std::ptrdiff_t pad = w / 2;
  const auto len = static_cast<std::ptrdiff_t>(xv.cols());
  Tensor y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    for (std::ptrdiff_t j = 0; j < len; ++j) {
      double s = 0.0;
      for (std::ptrdiff_t k = 0; k < w; ++k) {
        const std::ptrdiff_t src = j + k - pad;
        if (src >= 0 && src < len) s += kv[k] * xv(i, src);
      }
      y(i, j) = s;
    }
  }
  return x.tape().record(std::move(y), {x, kernel}, [x, kernel, w, pad, len](Tape& t,
                                                                              const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    Tensor gx(xv.rows(), xv.cols());
    Tensor gk(1, kv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      for (std::ptrdiff_t j = 0; j < len; ++j) {
        for (std::ptrdiff_t k = 0; k < w; ++k) {
          const std::ptrdiff_t src = j + k - pad;
          if (src < 0 || src >= len) continue;
          gx(i, src) += kv[k] * g(i, j);
          gk[k] += xv(i, src) * g(i, j);
        }
      }
    }
    t.accumulate(x, gx);
    t.accumulate(kernel, gk);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].value()) +
                           " vs " + shape_string(p.value()));
    }
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) {
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(Tensor(rows, cols, std::move(data)), parts,
                     [inputs](Tape& t, const Tensor& g) {
                       std::size_t offset = 0;
                       for (const Var& p : inputs) {
                         const std::size_t n = p.value().size();
                         if (p.tracked()) {
                           std::vector<double> chunk(g.data().begin() + offset,
                                                     g.data().begin() + offset + n);
                           t.accumulate(p, Tensor(p.rows(), p.cols(), std::move(chunk)));
                         }
                         offset += n;
                       }
                     });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].value()) +
                           " vs " + shape_string(p.value()));
    }
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, offset + j) = v(i, j);
    offset += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [inputs](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      const std::size_t c = p.cols();
      if (p.tracked()) {
        Tensor gp(g.rows(), c);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) = g(i, offset + j);
        t.accumulate(p, gp);
      }
      offset += c;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (count == 0 || begin + count > av.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_string(av));
  }
  std::vector<double> data(av.data().begin() + begin * av.cols(),
                           av.data().begin() + (begin + count) * av.cols());
  return a.tape().record(Tensor(count, av.cols(), std::move(data)), {a},
                         [a, begin](Tape& t, const Tensor& g) {
                           Tensor ga(a.rows(), a.cols());
                           std::copy(g.data().begin(), g.data().end(),
                                     ga.data().begin() + begin * g.cols());
                           t.accumulate(a, ga);
                         });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (count == 0 || begin + count > av.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_string(av));
  }
  Tensor out(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, begin + j);
  return a.tape().record(std::move(out), {a}, [a, begin](Tape& t, const Tensor& g) {
    Tensor ga(a.rows(), a.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, begin + j) = g(i, j);
    t.accumulate(a, ga);
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& av = a.value();
  if (rows * cols != av.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(av) + " as " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  std::vector<double> data(av.data().begin(), av.data().end());
  return a.tape().record(Tensor(rows, cols, std::move(data)), {a},
                         [a](Tape& t, const Tensor& g) {
                           std::vector<double> d(g.data().begin(), g.data().end());
                           t.accumulate(a, Tensor(a.rows(), a.cols(), std::move(d)));
                         });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(a.rows(), a.cols(), g[0]));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s / n), {a}, [a, n](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(a.rows(), a.cols(), g[0] / n));
  });
}

Var frobenius_sq(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    const double k = 2.0 * g[0];
    t.accumulate(a, map(a.value(), [k](double v) { return k * v; }));
  });
}

Var min_all(Var a) {
  const std::size_t idx = extremal_index(a.value(), false);
  return a.tape().record(Tensor::scalar(a.value()[idx]), {a}, [a, idx](Tape& t, const Tensor& g) {
    Tensor ga(a.rows(), a.cols());
    ga[idx] = g[0];
    t.accumulate(a, ga);
  });
}

Var max_all(Var a) {
  const std::size_t idx = extremal_index(a.value(), true);
  return a.tape().record(Tensor::scalar(a.value()[idx]), {a}, [a, idx](Tape& t, const Tensor& g) {
    Tensor ga(a.rows(), a.cols());
    ga[idx] = g[0];
    t.accumulate(a, ga);
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  if (labels.size() != z.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_string(z) + " logits");
  }
  Tensor probs(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (labels[i] >= z.cols()) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(z.cols()) + ")");
    }
    double mx = z(i, 0);
    for (std::size_t j = 1; j < z.cols(); ++j) mx = std::max(mx, z(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) {
      probs(i, j) = std::exp(z(i, j) - mx);
      s += probs(i, j);
    }
    for (std::size_t j = 0; j < z.cols(); ++j) probs(i, j) /= s;
    total += (mx + std::log(s)) - z(i, labels[i]);
  }
  const double b = static_cast<double>(z.rows());
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return logits.tape().record(Tensor::scalar(total / b), {logits},
                              [logits, probs, lab, b](Tape& t, const Tensor& g) {
                                Tensor gz = probs;
                                for (std::size_t i = 0; i < gz.rows(); ++i) gz(i, lab[i]) -= 1.0;
                                const double k = g[0] / b;
                                for (double& v : gz.data()) v *= k;
                                t.accumulate(logits, gz);
                              });
}

Var negate_gradient(Var a) {
  return a.tape().record(a.value(), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, map(g, [](double v) { return -v; }));
  });
}

}  // namespace pc
