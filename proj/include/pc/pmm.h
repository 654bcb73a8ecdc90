#pragma once

#include "pc/random.h"
#include "pc/tape.h"

namespace pc {

/// Shared projections of the query encoding (wf) and the prompts (wp), both L x L.
struct PmmParams {
  Param wf;
  Param wp;
};

PmmParams init_pmm(std::size_t length, Rng& rng);

/// Spread of S below which all correlations count as tied.
inline constexpr double kCorrelationTieEps = 1e-12;

/// sigmoid((S - min S) / (max S - min S)) for a 1 x m correlation row. When
/// the spread is below kCorrelationTieEps the result is the constant 0.5
/// with no gradient.
Var quantize_correlations(Var correlations);

/// S = (F wf) (P wp)^T, one correlation per prompt row, then quantized.
/// Returns a 1 x (prompt rows) weight row.
Var modulation_weights(Var query, Var prompts, PmmParams& params);

/// Row i of the result is weights[i] * prompts row i.
Var modulate(Var weights, Var prompts);

}  // namespace pc
