#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pc/backbone.h"
#include "pc/datagen.h"
#include "pc/metrics.h"
#include "pc/serialize.h"

namespace pc {

struct TrainConfig {
  std::size_t epochs = 5;
  /// Clipped to the task's training-set size.
  std::size_t batch_size = 64;
  double lr = 0.007;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Weight of the orthogonality loss.
  double lambda_orth = 0.1;
  /// Weight of the ensemble regularization loss.
  double beta_reg = 1.0;
  /// Weight of the query-code matching loss (hard_select only).
  double match_weight = kMatchingLossWeight;
  /// Adds the two codebook losses for arms that route the codebook.
  bool codebook_losses = true;
  std::uint64_t seed = 1;
  Mode mode = Mode::pc;

  // Backbone warm-up on the auxiliary pre-task.
  std::size_t pretrain_steps = 500;
  std::size_t pretrain_batch = 32;
  double pretrain_lr = 0.003;
  std::size_t pretrain_classes = 10;
  std::size_t pretrain_per_class = 40;

  void validate() const;
};

/// Adam with per-param first/second moments keyed by param name.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update of every param in `params` that has an entry in `grads`.
  /// lr == 0 leaves values bitwise unchanged.
  void step(std::span<Param* const> params, const GradientMap& grads, double lr);

  std::size_t steps_taken(const std::string& name) const;

  /// Moments as "adam.m.<name>", "adam.v.<name>", "adam.t.<name>" tensors.
  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& entries);

 private:
  struct Moments {
    Tensor m, v;
    std::size_t t = 0;
  };
  double beta1_, beta2_, eps_;
  std::map<std::string, Moments> moments_;
};

struct LossTerms {
  double total = 0.0;
  double ce = 0.0;
  double orth = 0.0;
  double reg = 0.0;
  double match = 0.0;
};

/// Objective of one batch: CE + lambda * orth + beta * reg (+ match_weight *
/// matching loss for hard_select). Cross-entropy is restricted to the label
/// columns [label_begin, label_end).
struct LabelWindow {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Per-sample input to the objective. `query` is the frozen encoding of `x`.
struct BatchItem {
  const Tensor* x = nullptr;
  const Tensor* query = nullptr;
  std::size_t y = 0;
};

/// Loss terms of `batch` plus gradients of the trainable params of the model.
struct BatchGradient {
  LossTerms terms;
  GradientMap grads;
};

/// Builds the whole batch on one tape and returns the scalar objective.
Var total_loss(Tape& tape, ToyModel& model, std::span<const BatchItem> batch,
               LabelWindow window, const TrainConfig& cfg, LossTerms* terms = nullptr);

/// Same objective, differentiated one sample at a time and summed in batch
/// order; used by the training loop.
BatchGradient batch_gradient(ToyModel& model, std::span<const BatchItem> batch, LabelWindow window,
                             const TrainConfig& cfg);

struct StepLog {
  std::size_t task = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossTerms terms;
};

/// State that survives a task boundary: params, codebook ensemble and
/// optimizer moments. Holds no samples.
struct TrainerState {
  ToyModel* model = nullptr;
  Adam* optimizer = nullptr;

  /// Every tensor of the state, named.
  std::vector<NamedTensor> inventory() const;
};

/// Names of inventory entries that reproduce any sample tensor of `stream`
/// (whole or as a contiguous block). Empty for a rehearsal-free state.
std::vector<std::string> find_sample_leaks(const std::vector<NamedTensor>& inventory,
                                           const TaskStream& stream);

/// Trains `task` with the params enabled for cfg.mode.
std::vector<StepLog> train_task(ToyModel& model, Adam& optimizer, const TaskData& task,
                                const TrainConfig& cfg, LabelWindow window);

/// Label columns visible while training `task` (current task for prompted and
/// frozen arms, every class seen so far for finetune_head).
LabelWindow training_window(Mode mode, const TaskData& task);

/// Fraction of `samples` whose argmax over columns [0, seen_end) equals the label.
double evaluate(ToyModel& model, Mode mode, std::span<const Sample> samples, std::size_t seen_end);

struct StreamResult {
  AccuracyMatrix matrix;
  std::vector<StepLog> loss_log;
  /// Accuracy on the merged test set of all tasks after the final stage.
  double task_agnostic_accuracy = 0.0;
  /// Accuracy on held-out domains after the final stage (domain streams only).
  double unseen_domain_accuracy = 0.0;
  bool has_unseen_domains = false;
  std::size_t ema_updates = 0;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

/// Observer called after each stage with the inter-task state.
using StageHook = std::function<void(std::size_t stage, const TrainerState& state)>;

/// Trains tasks in order, updates the codebook ensemble once per task and
/// records row t of the accuracy matrix after task t.
StreamResult train_stream(ToyModel& model, const TaskStream& stream, const TrainConfig& cfg,
                          const StageHook& hook = {});

/// Warms up the backbone on the auxiliary pre-task with a temporary head and
/// freezes it. Results are memoized per (config, geometry, seed) within the process.
void pretrain_backbone(ToyModel& model, const StreamSpec& geometry, const TrainConfig& cfg);

}  // namespace pc
