#include "pc/pgm.h"

#include <array>
#include <cmath>

#include "pc/ops.h"

namespace pc {

std::vector<Param*> PgmParams::params() {
  std::vector<Param*> out;
  for (auto& l : layers) {
    for (Param* p : {&l.ln_gain, &l.ln_bias, &l.wq, &l.wk, &l.wv, &l.wo}) out.push_back(p);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

PgmParams init_pgm(std::size_t length, std::size_t codes, std::size_t prompt_rows,
                   std::size_t depth, Rng& rng, const std::string& prefix) {
  if (length == 0 || codes == 0 || prompt_rows == 0 || depth == 0) {
    throw ContractError("init_pgm: all sizes must be positive");
  }
  const double std = 1.0 / std::sqrt(static_cast<double>(length));
  PgmParams p;
  p.prompt_rows = prompt_rows;
  p.codes = codes;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::string base = prefix + ".attn" + std::to_string(i) + ".";
    p.layers.push_back(PgmLayer{
        Param{base + "ln_gain", Tensor(1, length, 1.0)},
        Param{base + "ln_bias", Tensor(1, length, 0.0)},
        Param{base + "wq", rng.normal_tensor(length, length, std)},
        Param{base + "wk", rng.normal_tensor(length, length, std)},
        Param{base + "wv", rng.normal_tensor(length, length, std)},
        Param{base + "wo", rng.normal_tensor(length, length, std)},
    });
  }
  p.head_w = Param{prefix + ".head_w", rng.normal_tensor(length, prompt_rows * codes, std)};
  p.head_b = Param{prefix + ".head_b", Tensor(1, prompt_rows * codes, 0.0)};
  return p;
}

Var compute_coefficients(Var query, Var codes, PgmParams& params) {
  Tape& tape = query.tape();
  const std::size_t length = codes.cols();
  if (query.rows() != 1 || query.cols() != length) {
    throw DimensionError("compute_coefficients: query " + shape_string(query.value()) +
                         " does not match code length " + std::to_string(length));
  }
  if (codes.rows() != params.codes) {
    throw DimensionError("compute_coefficients: codebook has " + std::to_string(codes.rows()) +
                         " codes, generator expects " + std::to_string(params.codes));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(length));

  const std::array<Var, 2> seq_parts{query, codes};
  Var seq = concat_rows(seq_parts);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    PgmLayer& layer = params.layers[i];
    Var h = layer_norm_rows(seq, tape.param(layer.ln_gain), tape.param(layer.ln_bias));
    Var k = matmul(h, tape.param(layer.wk));
    Var v = matmul(h, tape.param(layer.wv));
    // Only the F slot is read after the last layer, so its query set shrinks to row 0.
    const bool last = i + 1 == params.layers.size();
    Var q_in = last ? slice_rows(h, 0, 1) : h;
    Var q = matmul(q_in, tape.param(layer.wq));
    Var attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
    Var out = matmul(matmul(attn, v), tape.param(layer.wo));
    seq = add(last ? slice_rows(seq, 0, 1) : seq, out);
  }
  Var slot = seq.rows() == 1 ? seq : slice_rows(seq, 0, 1);
  Var logits = add_row(matmul(slot, tape.param(params.head_w)), tape.param(params.head_b));
  return softmax_rows(reshape(logits, params.prompt_rows, params.codes));
}

Var generate_prompts(Var coefficients, Var codes) {
  if (coefficients.cols() != codes.rows()) {
    throw DimensionError("generate_prompts: coefficients " + shape_string(coefficients.value()) +
                         " incompatible with codebook " + shape_string(codes.value()));
  }
  return matmul(coefficients, codes);
}

}  // namespace pc
