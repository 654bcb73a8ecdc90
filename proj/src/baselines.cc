#include "pc/baselines.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "pc/ops.h"

namespace pc {

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  if (k > scores.size()) {
    throw ContractError("top-k: K=" + std::to_string(k) + " exceeds " +
                        std::to_string(scores.size()) + " candidates");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

Tensor one_hot_rows(std::span<const std::size_t> indices, std::size_t columns) {
  Tensor t(indices.size(), columns);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= columns) throw std::out_of_range("one_hot_rows: index out of range");
    t(i, indices[i]) = 1.0;
  }
  return t;
}

HardSelection hard_select(Var query, Var codes, std::size_t k) {
  if (k == 0 || k > codes.rows()) {
    throw ContractError("hard_select: K=" + std::to_string(k) + " must lie in [1, " +
                        std::to_string(codes.rows()) + "]");
  }
  if (query.rows() != 1 || query.cols() != codes.cols()) {
    throw DimensionError("hard_select: query " + shape_string(query.value()) +
                         " incompatible with codebook " + shape_string(codes.value()));
  }
  Tape& tape = query.tape();
  Var cosine = matmul(l2_normalize_rows(codes), transpose(l2_normalize_rows(query)));  // N x 1
  HardSelection out;
  out.indices = top_k_indices(cosine.value().data(), k);
  Var selector = tape.constant(one_hot_rows(out.indices, codes.rows()));
  out.key_prompts = matmul(selector, codes);
  out.value_prompts = out.key_prompts;
  out.matching_loss = add_scalar(scale(mean(matmul(selector, cosine)), -1.0), 1.0);
  return out;
}

PlusWParams init_plusw(std::size_t length, Rng& rng) {
  const double std = 1.0 / std::sqrt(2.0 * static_cast<double>(length));
  return PlusWParams{Param{"plusw.kernel", rng.normal_tensor(1, 3, 0.5)},
                     Param{"plusw.fc_w", rng.normal_tensor(2 * length, 1, std)},
                     Param{"plusw.fc_b", Tensor(1, 1, 0.0)}};
}

Var plusw_raw_weights(Var query, Var keys, PlusWParams& params) {
  Tape& tape = query.tape();
  if (query.rows() != 1 || query.cols() != keys.cols()) {
    throw DimensionError("plusw: query " + shape_string(query.value()) +
                         " incompatible with keys " + shape_string(keys.value()));
  }
  Var q = matmul(tape.constant(Tensor(keys.rows(), 1, 1.0)), l2_normalize_rows(query));
  const std::array<Var, 2> parts{q, l2_normalize_rows(keys)};
  Var feats = conv1d_same(concat_cols(parts), tape.param(params.kernel));
  return add_row(matmul(feats, tape.param(params.fc_w)), tape.param(params.fc_b));
}

Var minmax_normalize(Var weights) {
  Var lo = min_all(weights);
  Var hi = max_all(weights);
  if (hi.value().item() - lo.value().item() < 1e-12) {
    return weights.tape().constant(Tensor(weights.rows(), weights.cols(), 1.0));
  }
  return div_scalar(sub_scalar(weights, lo), sub(hi, lo));
}

WeightedSelection select_weighted(Var weights, Var prompts, std::size_t k) {
  if (weights.value().size() != prompts.rows()) {
    throw DimensionError("select_weighted: " + std::to_string(weights.value().size()) +
                         " weights for " + std::to_string(prompts.rows()) + " prompts");
  }
  WeightedSelection out;
  out.weights = weights;
  out.indices = top_k_indices(weights.value().data(), k);
  Var scaled = scale_rows(prompts, weights);
  out.selected =
      matmul(prompts.tape().constant(one_hot_rows(out.indices, prompts.rows())), scaled);
  return out;
}

WeightedSelection plusw_weight(Var query, Var keys, Var prompts, PlusWParams& params,
                               std::size_t k) {
  if (keys.rows() != prompts.rows()) {
    throw DimensionError("plusw_weight: keys and prompts must be pair-wise tuples, got " +
                         shape_string(keys.value()) + " and " + shape_string(prompts.value()));
  }
  return select_weighted(minmax_normalize(plusw_raw_weights(query, keys, params)), prompts, k);
}

Var spw_modulate(Var query, Var prompts, PlusWParams& params) {
  Var keys = prompts.tape().constant(prompts.value());
  return scale_rows(prompts, minmax_normalize(plusw_raw_weights(query, keys, params)));
}

}  // namespace pc
