#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pc/tape.h"

// Differentiable primitives. Every op records onto the tape of its first
// operand and shares the broadcasting rules below:
//   - elementwise ops require identical shapes;
//   - add_row broadcasts a 1xc row over every row;
//   - scale_rows multiplies row i by the i-th entry of a vector;
//   - sub_scalar / div_scalar broadcast a 1x1 Var.
// min_all / max_all route the whole gradient to the first extremal entry
// (lowest flat index on ties); sqrt passes a zero gradient at 0.

namespace pc {

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var a, Var row);
Var scale_rows(Var a, Var weights);
Var sub_scalar(Var a, Var s);
Var div_scalar(Var a, Var s);

Var sigmoid(Var x);
Var gelu(Var x);  // tanh approximation
Var sqrt(Var x);
Var softmax_rows(Var x);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
Var l2_normalize_rows(Var x, double eps = 1e-12);
/// Zero-padded ("same") 1-D cross-correlation of every row with a 1xw kernel (w odd).
Var conv1d_same(Var x, Var kernel);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var reshape(Var a, std::size_t rows, std::size_t cols);

Var sum(Var a);
Var mean(Var a);
Var frobenius_sq(Var a);
Var min_all(Var a);
Var max_all(Var a);

/// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

/// Identity on values, negated gradient. Only used to build deliberately
/// broken primitives for the gradient-check mutation test.
Var negate_gradient(Var a);

}  // namespace pc
