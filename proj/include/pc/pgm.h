#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pc/codebook.h"
#include "pc/random.h"
#include "pc/tape.h"

namespace pc {

/// One pre-norm single-head self-attention layer over the [F; codes] sequence.
struct PgmLayer {
  Param ln_gain, ln_bias;
  Param wq, wk, wv, wo;
};

/// Prompt generator for one prompted block: attention stack plus the FC head
/// that predicts a (prompt_rows x N) coefficient matrix.
struct PgmParams {
  std::vector<PgmLayer> layers;
  Param head_w;  // L x (prompt_rows * N)
  Param head_b;  // 1 x (prompt_rows * N)
  std::size_t prompt_rows = 0;
  std::size_t codes = 0;

  std::vector<Param*> params();
};

/// `prompt_rows` is 2n: the first n rows become key prefixes and the last n value prefixes.
PgmParams init_pgm(std::size_t length, std::size_t codes, std::size_t prompt_rows,
                   std::size_t depth, Rng& rng, const std::string& prefix);

/// Runs [F; codes] through the attention stack, reads the F slot, maps it to
/// prompt_rows x N logits and normalizes each row with a softmax.
Var compute_coefficients(Var query, Var codes, PgmParams& params);

/// P = A x M.
Var generate_prompts(Var coefficients, Var codes);

}  // namespace pc
