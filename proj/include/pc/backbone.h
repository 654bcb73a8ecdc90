#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pc/baselines.h"
#include "pc/codebook.h"
#include "pc/pgm.h"
#include "pc/pmm.h"
#include "pc/tape.h"

namespace pc {

/// Prompt pipeline used by forward_with_prompts.
enum class Mode { pc, pgm_only, pgm_spw, hard_select, frozen_baseline, finetune_head };

std::string to_string(Mode mode);
/// Throws std::invalid_argument for unknown names.
Mode parse_mode(const std::string& name);
const std::vector<std::string>& mode_names();
/// True for the arms that route the codebook into the prompts.
bool uses_codebook(Mode mode);

struct ModelConfig {
  std::size_t embed_dim = 16;
  std::size_t blocks = 5;
  std::size_t heads = 2;
  std::size_t patches = 16;
  std::size_t patch_dim = 4;
  std::size_t mlp_dim = 32;
  std::size_t classes = 20;
  /// Rows of each half (key / value) of the task-agnostic prompts.
  std::size_t agnostic_len = 5;
  /// n: rows of each half of the instance prompts.
  std::size_t prompt_pairs = 4;
  std::size_t codebook_size = 16;
  std::size_t pgm_depth = 2;
  /// Blocks [0, agnostic_blocks) take task-agnostic prompts.
  std::size_t agnostic_blocks = 2;
  /// Blocks [instance_begin, instance_end) take instance prompts.
  std::size_t instance_begin = 2;
  std::size_t instance_end = 5;
  /// Codes picked per block by the hard-selection arm.
  std::size_t select_k = 4;
  double alpha = kCodebookAlpha;

  std::size_t tokens() const { return patches + 1; }
  void validate() const;
};

struct TransformerBlock {
  Param ln1_g, ln1_b;
  Param wq, wk, wv, wo, bo;
  Param ln2_g, ln2_b;
  Param w1, b1, w2, b2;

  std::vector<Param*> params();
};

/// Optional record of per-block intermediate values for inspection and tests.
struct ForwardTrace {
  struct Block {
    std::size_t block = 0;
    Tensor coefficients;    // 2n x N (generator modes)
    Tensor prompts;         // 2n x L before modulation
    Tensor weights;         // 1 x 2n (pc / pgm_spw)
    Tensor final_prompts;   // rows fed to the attention prefix
    std::vector<std::size_t> selected;  // hard_select
    std::vector<Tensor> attention;      // per head, tokens x (prefix + tokens)
  };
  std::vector<Block> blocks;
};

class ToyModel {
 public:
  ToyModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Frozen backbone.
  Param patch_w, patch_b, cls_token, pos;
  std::vector<TransformerBlock> blocks;
  Param final_g, final_b;

  // Prompt machinery and classifier.
  std::vector<Param> agnostic;  // per agnostic block: (2 * agnostic_len) x L
  std::vector<PgmParams> pgm;   // per instance block
  PmmParams pmm;
  PlusWParams plusw;
  Codebook codebook;
  Param head_w, head_b;

  std::vector<Param*> backbone_params();
  /// Params that receive gradients in `mode`.
  std::vector<Param*> trainable_params(Mode mode);
  std::vector<Param*> all_params();
  std::vector<const Param*> all_params() const;

  /// Marks the backbone frozen and enables exactly the params of `mode`.
  void configure(Mode mode);
  void set_backbone_trainable(bool trainable);

  /// Hash of every backbone tensor.
  std::uint64_t frozen_hash() const;

 private:
  ModelConfig config_;
};

/// Self-attention with raw prefixes prepended to the projected keys/values.
/// `prefix_k` / `prefix_v` may be absent (no prefix). `attention` receives the
/// per-head attention rows when non-null.
Var mhsa_prefix(Var h, std::optional<Var> prefix_k, std::optional<Var> prefix_v,
                TransformerBlock& block, std::size_t heads,
                std::vector<Tensor>* attention = nullptr);

/// Class-token embedding of the unprompted forward pass, recorded on `tape`.
Var unprompted_features(Tape& tape, ToyModel& model, const Tensor& x);

/// Class-token embedding of the unprompted frozen forward pass. Never on a tape.
Tensor encode_query(ToyModel& model, const Tensor& x);

struct ForwardResult {
  Var logits;  // 1 x classes
  /// Extra objective term of the arm (hard_select matching loss), if any.
  std::optional<Var> aux_loss;
};

/// Full prompted forward pass for one sample. `query` is encode_query(x);
/// when omitted it is computed here.
ForwardResult forward_with_prompts(Tape& tape, ToyModel& model, const Tensor& x, Mode mode,
                                   const std::optional<Tensor>& query = std::nullopt,
                                   ForwardTrace* trace = nullptr);

/// Test hook: overrides the modulation weights of the pc arm with a constant.
struct ForwardOverrides {
  std::optional<double> fixed_modulation;
};
ForwardResult forward_with_prompts(Tape& tape, ToyModel& model, const Tensor& x, Mode mode,
                                   const std::optional<Tensor>& query, ForwardTrace* trace,
                                   const ForwardOverrides& overrides);

/// Checkpoint = tensor archive of all params + codebook ema, and config JSON.
void save_checkpoint(const ToyModel& model, const std::filesystem::path& stem);
void load_checkpoint(ToyModel& model, const std::filesystem::path& stem);
std::string model_config_json(const ModelConfig& config);

}  // namespace pc
