#include "pc/pmm.h"

#include <cmath>

#include "pc/ops.h"

namespace pc {

PmmParams init_pmm(std::size_t length, Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(length));
  return PmmParams{Param{"pmm.wf", rng.normal_tensor(length, length, std)},
                   Param{"pmm.wp", rng.normal_tensor(length, length, std)}};
}

Var quantize_correlations(Var correlations) {
  Tape& tape = correlations.tape();
  Var lo = min_all(correlations);
  Var hi = max_all(correlations);
  const double spread = hi.value().item() - lo.value().item();
  if (spread < kCorrelationTieEps) {
    return tape.constant(Tensor(correlations.rows(), correlations.cols(), 0.5));
  }
  return sigmoid(div_scalar(sub_scalar(correlations, lo), sub(hi, lo)));
}

Var modulation_weights(Var query, Var prompts, PmmParams& params) {
  Tape& tape = query.tape();
  if (query.rows() != 1 || query.cols() != prompts.cols() ||
      params.wf.value.rows() != query.cols()) {
    throw DimensionError("modulation_weights: query " + shape_string(query.value()) +
                         " and prompts " + shape_string(prompts.value()) + " are inconsistent");
  }
  Var fq = matmul(query, tape.param(params.wf));
  Var pp = matmul(prompts, tape.param(params.wp));
  return quantize_correlations(matmul(fq, transpose(pp)));
}

Var modulate(Var weights, Var prompts) { return scale_rows(prompts, weights); }

}  // namespace pc
