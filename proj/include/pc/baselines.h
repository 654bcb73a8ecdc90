#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pc/codebook.h"
#include "pc/random.h"
#include "pc/tape.h"

namespace pc {

/// Weight of the query-key matching term added for the hard-selection arm.
inline constexpr double kMatchingLossWeight = 0.5;

/// Hard top-K selection of codebook rows by cosine similarity to the query.
struct HardSelection {
  std::vector<std::size_t> indices;
  Var key_prompts;    // K x L
  Var value_prompts;  // K x L, same rows as key_prompts
  Var matching_loss;  // mean(1 - cos(F, selected code))
};

/// Indices of the K largest entries, ties broken toward the lowest index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

/// K x N matrix with a single 1 per row at the given column.
Tensor one_hot_rows(std::span<const std::size_t> indices, std::size_t columns);

HardSelection hard_select(Var query, Var codes, std::size_t k);

/// Prompt-weighting net: L2-normalized query and key are concatenated
/// (length 2L), passed through a width-3 same-padded convolution and an FC
/// layer producing one raw weight per key.
struct PlusWParams {
  Param kernel;  // 1 x 3
  Param fc_w;    // 2L x 1
  Param fc_b;    // 1 x 1

  std::vector<Param*> params() { return {&kernel, &fc_w, &fc_b}; }
};

PlusWParams init_plusw(std::size_t length, Rng& rng);

/// Raw (unnormalized) weight per key row, returned as a keys x 1 column.
Var plusw_raw_weights(Var query, Var keys, PlusWParams& params);

/// Min-max normalization over all entries; all-equal input maps to ones with no gradient.
Var minmax_normalize(Var weights);

struct WeightedSelection {
  std::vector<std::size_t> indices;
  Var weights;   // normalized weight per key
  Var selected;  // K x L weighted prompts, ordered by descending weight
};

/// Scales prompt rows by `weights` and keeps the K highest-weighted rows.
WeightedSelection select_weighted(Var weights, Var prompts, std::size_t k);

/// Full weighting pipeline over key/prompt pairs. The weight net only sees
/// the query and keys, so prompts receive gradient solely through the scaling.
WeightedSelection plusw_weight(Var query, Var keys, Var prompts, PlusWParams& params,
                               std::size_t k);

/// Weighting applied to generated prompts in place of modulation: every row
/// is kept and scaled. Prompt values serve as keys through a detached copy.
Var spw_modulate(Var query, Var prompts, PlusWParams& params);

}  // namespace pc
