#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "pc/tape.h"

namespace pc {

/// EMA smoothing coefficient for the codebook ensemble.
inline constexpr double kCodebookAlpha = 0.99;
/// Codebook size used for the full-scale configuration.
inline constexpr std::size_t kFullScaleCodebookSize = 256;

/// Shared prompt basis: N learnable codes of length L plus their momentum
/// ensemble. `ema` is a plain tensor and is never bound to a tape as a
/// trainable value.
struct Codebook {
  Param codes;
  Tensor ema;
  double alpha = kCodebookAlpha;
  /// Number of ema_update() calls so far (completed tasks).
  int task_index = 0;

  std::size_t size() const { return codes.value.rows(); }
  std::size_t code_length() const { return codes.value.cols(); }
};

/// Codes drawn i.i.d. uniform in [-1/sqrt(L), 1/sqrt(L)]; ema starts equal to the codes.
Codebook init_codebook(std::size_t n, std::size_t length, std::uint64_t seed,
                       double alpha = kCodebookAlpha);

/// ema <- alpha * ema + (1 - alpha) * codes. Call once per finished task.
void ema_update(Codebook& cb);

/// (1/N) * ||ema - codes||_F^2, gradient into the codes only.
Var reg_loss(Tape& tape, Codebook& cb);

/// ||codes codes^T - I||_F.
Var orth_loss(Tape& tape, Codebook& cb);

/// Writes `<stem>.bin` (tensor archive with "codes" and "ema") and
/// `<stem>.json` ({N, L, alpha, task_index}).
void save_codebook(const Codebook& cb, const std::filesystem::path& stem);
Codebook load_codebook(const std::filesystem::path& stem);

}  // namespace pc
