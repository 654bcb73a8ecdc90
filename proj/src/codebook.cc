#include "pc/codebook.h"

#include <cmath>

#include <nlohmann/json.hpp>

#include "pc/ops.h"
#include "pc/random.h"
#include "pc/serialize.h"

namespace pc {

Codebook init_codebook(std::size_t n, std::size_t length, std::uint64_t seed, double alpha) {
  if (n == 0 || length == 0) {
    throw ContractError("codebook sizes must be positive, got N=" + std::to_string(n) +
                        " L=" + std::to_string(length));
  }
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw ContractError("codebook alpha must lie in [0, 1)");
  }
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(length));
  Codebook cb;
  cb.codes = Param{"codebook.codes", rng.uniform_tensor(n, length, -bound, bound), true};
  cb.ema = cb.codes.value;
  cb.alpha = alpha;
  return cb;
}

void ema_update(Codebook& cb) {
  const auto m = cb.codes.value.data();
  auto e = cb.ema.data();
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = cb.alpha * e[i] + (1.0 - cb.alpha) * m[i];
  ++cb.task_index;
}

Var reg_loss(Tape& tape, Codebook& cb) {
  Var codes = tape.param(cb.codes);
  Var target = tape.constant(cb.ema);
  return scale(frobenius_sq(sub(target, codes)), 1.0 / static_cast<double>(cb.size()));
}

Var orth_loss(Tape& tape, Codebook& cb) {
  Var codes = tape.param(cb.codes);
  Var gram = matmul(codes, transpose(codes));
  return sqrt(frobenius_sq(sub(gram, tape.constant(Tensor::identity(cb.size())))));
}

void save_codebook(const Codebook& cb, const std::filesystem::path& stem) {
  write_archive(stem.string() + ".bin", {{"codes", cb.codes.value}, {"ema", cb.ema}});
  nlohmann::json meta = {{"N", cb.size()},
                         {"L", cb.code_length()},
                         {"alpha", cb.alpha},
                         {"task_index", cb.task_index}};
  write_text(stem.string() + ".json", meta.dump(2) + "\n");
}

Codebook load_codebook(const std::filesystem::path& stem) {
  const auto meta = nlohmann::json::parse(read_text(stem.string() + ".json"));
  const auto entries = read_archive(stem.string() + ".bin");
  Codebook cb;
  cb.alpha = meta.at("alpha").get<double>();
  cb.task_index = meta.at("task_index").get<int>();
  for (const auto& e : entries) {
    if (e.name == "codes") cb.codes = Param{"codebook.codes", e.value, true};
    if (e.name == "ema") cb.ema = e.value;
  }
  const auto n = meta.at("N").get<std::size_t>();
  const auto l = meta.at("L").get<std::size_t>();
  if (cb.codes.value.rows() != n || cb.codes.value.cols() != l || cb.ema.shape() !=
                                                                      cb.codes.value.shape()) {
    throw FormatError("codebook archive " + stem.string() + " does not match its sidecar");
  }
  return cb;
}

}  // namespace pc
