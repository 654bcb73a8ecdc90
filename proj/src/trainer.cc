#include "pc/trainer.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <unordered_set>

#include "pc/ops.h"
#include "pc/random.h"

namespace pc {
namespace {

constexpr std::uint64_t kSaltBatchOrder = 11;
constexpr std::uint64_t kSaltPretask = 12;
constexpr std::uint64_t kSaltPretrainOrder = 13;
constexpr std::uint64_t kSaltPretrainHead = 14;

std::vector<Tensor> encode_all(ToyModel& model, std::span<const Sample> samples) {
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(encode_query(model, s.x));
  return out;
}

void add_into(GradientMap& into, const GradientMap& from) {
  for (const auto& [param, g] : from) {
    auto it = into.find(param);
    if (it == into.end()) {
      into.emplace(param, g);
    } else {
      auto dst = it->second.data();
      auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

std::uint64_t flat_hash(std::span<const double> values) {
  std::uint64_t h = 14695981039346656037ULL;
  for (double v : values) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

bool codebook_terms_active(const TrainConfig& cfg) {
  return cfg.codebook_losses && uses_codebook(cfg.mode);
}

// Logits of one sample restricted to the window, with the label re-indexed.
Var windowed_ce(Var logits, std::size_t label, LabelWindow w) {
  if (label < w.begin || label >= w.end) {
    throw std::out_of_range("label " + std::to_string(label) + " outside the training window [" +
                            std::to_string(w.begin) + ", " + std::to_string(w.end) + ")");
  }
  const std::array<std::size_t, 1> y{label - w.begin};
  return cross_entropy(slice_cols(logits, w.begin, w.end - w.begin), y);
}

// Per-sample CE and matching terms, each divided by the batch size.
Var sample_objective(Tape& tape, ToyModel& model, const BatchItem& item, LabelWindow window,
                     const TrainConfig& cfg, double inv_batch, LossTerms& terms) {
  ForwardResult r = forward_with_prompts(tape, model, *item.x, cfg.mode, *item.query);
  Var ce = windowed_ce(r.logits, item.y, window);
  terms.ce += ce.value().item() * inv_batch;
  Var obj = scale(ce, inv_batch);
  if (r.aux_loss) {
    terms.match += r.aux_loss->value().item() * inv_batch;
    obj = add(obj, scale(*r.aux_loss, cfg.match_weight * inv_batch));
  }
  return obj;
}

// Orthogonality and ensemble terms; null when inactive.
std::optional<Var> codebook_objective(Tape& tape, ToyModel& model, const TrainConfig& cfg,
                                      LossTerms& terms) {
  if (!codebook_terms_active(cfg)) return std::nullopt;
  Var orth = orth_loss(tape, model.codebook);
  Var reg = reg_loss(tape, model.codebook);
  terms.orth = orth.value().item();
  terms.reg = reg.value().item();
  return add(scale(orth, cfg.lambda_orth), scale(reg, cfg.beta_reg));
}

double finish_total(const TrainConfig& cfg, LossTerms& t) {
  t.total = t.ce + cfg.lambda_orth * t.orth + cfg.beta_reg * t.reg + cfg.match_weight * t.match;
  return t.total;
}

std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 engine(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(engine() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::string pretrain_key(const ToyModel& model, const StreamSpec& g, const TrainConfig& cfg) {
  return model_config_json(model.config()) + "|" + std::to_string(g.world_seed) + "|" +
         std::to_string(g.patches) + "x" + std::to_string(g.patch_dim) + "|" +
         std::to_string(g.latent_dim) + "|" + std::to_string(g.spread) + "|" +
         std::to_string(cfg.seed) + "|" + std::to_string(cfg.pretrain_steps) + "|" +
         std::to_string(cfg.pretrain_batch) + "|" + std::to_string(cfg.pretrain_lr) + "|" +
         std::to_string(cfg.pretrain_classes) + "|" + std::to_string(cfg.pretrain_per_class);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(lambda_orth >= 0.0) || !(beta_reg >= 0.0) || !(match_weight >= 0.0)) {
    fail("loss weights must be nonnegative");
  }
  if (pretrain_steps > 0 && (pretrain_batch == 0 || pretrain_classes < 2 || pretrain_per_class == 0)) {
    fail("pretraining needs a positive batch, at least 2 classes and samples per class");
  }
  if (!(pretrain_lr >= 0.0)) fail("pretrain_lr must be nonnegative");
}

void Adam::step(std::span<Param* const> params, const GradientMap& grads, double lr) {
  for (Param* p : params) {
    auto it = grads.find(p);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    auto& mo = moments_[p->name];
    if (mo.t == 0 && mo.m.size() == 0) {
      mo.m = Tensor(g.rows(), g.cols(), 0.0);
      mo.v = Tensor(g.rows(), g.cols(), 0.0);
    }
    if (mo.m.shape() != g.shape() || p->value.shape() != g.shape()) {
      throw DimensionError("adam: gradient " + shape_string(g) + " does not match " + p->name);
    }
    ++mo.t;
    if (lr == 0.0) continue;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(mo.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(mo.t));
    auto m = mo.m.data();
    auto v = mo.v.data();
    auto w = p->value.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gd[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gd[i] * gd[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::size_t Adam::steps_taken(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? 0 : it->second.t;
}

std::vector<NamedTensor> Adam::state() const {
  std::vector<NamedTensor> out;
  for (const auto& [name, mo] : moments_) {
    out.push_back({"adam.m." + name, mo.m});
    out.push_back({"adam.v." + name, mo.v});
    out.push_back({"adam.t." + name, Tensor::scalar(static_cast<double>(mo.t))});
  }
  return out;
}

void Adam::load_state(const std::vector<NamedTensor>& entries) {
  moments_.clear();
  for (const auto& e : entries) {
    if (e.name.rfind("adam.", 0) != 0 || e.name.size() < 8) continue;
    const char kind = e.name[5];
    const std::string name = e.name.substr(7);
    auto& mo = moments_[name];
    if (kind == 'm') mo.m = e.value;
    else if (kind == 'v') mo.v = e.value;
    else if (kind == 't') mo.t = static_cast<std::size_t>(e.value.item());
  }
}

Var total_loss(Tape& tape, ToyModel& model, std::span<const BatchItem> batch, LabelWindow window,
               const TrainConfig& cfg, LossTerms* terms) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  LossTerms local;
  const double inv = 1.0 / static_cast<double>(batch.size());
  Var obj = sample_objective(tape, model, batch[0], window, cfg, inv, local);
  for (std::size_t i = 1; i < batch.size(); ++i) {
    obj = add(obj, sample_objective(tape, model, batch[i], window, cfg, inv, local));
  }
  if (auto cb = codebook_objective(tape, model, cfg, local)) obj = add(obj, *cb);
  finish_total(cfg, local);
  if (terms != nullptr) *terms = local;
  return obj;
}

BatchGradient batch_gradient(ToyModel& model, std::span<const BatchItem> batch, LabelWindow window,
                             const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  BatchGradient out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& item : batch) {
    Tape tape;
    Var obj = sample_objective(tape, model, item, window, cfg, inv, out.terms);
    add_into(out.grads, tape.backward(obj));
  }
  Tape tape;
  if (auto cb = codebook_objective(tape, model, cfg, out.terms)) {
    add_into(out.grads, tape.backward(*cb));
  }
  finish_total(cfg, out.terms);
  return out;
}

std::vector<NamedTensor> TrainerState::inventory() const {
  std::vector<NamedTensor> out;
  for (const Param* p : static_cast<const ToyModel*>(model)->all_params()) {
    out.push_back({p->name, p->value});
  }
  out.push_back({"codebook.ema", model->codebook.ema});
  out.push_back({"codebook.task_index", Tensor::scalar(model->codebook.task_index)});
  if (optimizer != nullptr) {
    for (auto& e : optimizer->state()) out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::string> find_sample_leaks(const std::vector<NamedTensor>& inventory,
                                           const TaskStream& stream) {
  std::size_t width = 0;
  std::unordered_set<std::uint64_t> sample_hashes;
  auto collect = [&](const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
      width = s.x.size();
      sample_hashes.insert(flat_hash(s.x.data()));
    }
  };
  for (const auto& t : stream.tasks) {
    collect(t.train);
    collect(t.test);
  }
  collect(stream.unseen_test);
  std::vector<std::string> leaks;
  if (width == 0) return leaks;
  for (const auto& e : inventory) {
    const auto flat = e.value.data();
    for (std::size_t off = 0; off + width <= flat.size(); ++off) {
      if (sample_hashes.count(flat_hash(flat.subspan(off, width))) > 0) {
        leaks.push_back(e.name);
        break;
      }
    }
  }
  return leaks;
}

LabelWindow training_window(Mode mode, const TaskData& task) {
  if (mode == Mode::finetune_head) return {0, task.class_end};
  return {task.class_begin, task.class_end};
}

std::vector<StepLog> train_task(ToyModel& model, Adam& optimizer, const TaskData& task,
                                const TrainConfig& cfg, LabelWindow window) {
  if (task.train.empty()) throw std::invalid_argument("train_task: task " + std::to_string(task.id) + " has no training data");
  model.configure(cfg.mode);
  const auto queries = encode_all(model, task.train);
  const std::size_t n = task.train.size();
  const std::size_t bs = std::min(cfg.batch_size, n);
  const auto trainable = model.trainable_params(cfg.mode);

  std::vector<StepLog> log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = batch_order(
        n, derive_seed(derive_seed(cfg.seed, kSaltBatchOrder), task.id * 1000 + epoch));
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      std::vector<BatchItem> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t k = order[i];
        batch.push_back({&task.train[k].x, &queries[k], task.train[k].y});
      }
      BatchGradient bg = batch_gradient(model, batch, window, cfg);
      optimizer.step(trainable, bg.grads, cfg.lr);
      log.push_back({task.id, epoch + 1, ++step, bg.terms});
    }
  }
  return log;
}

double evaluate(ToyModel& model, Mode mode, std::span<const Sample> samples, std::size_t seen_end) {
  if (samples.empty()) return 0.0;
  if (seen_end == 0 || seen_end > model.config().classes) {
    throw std::out_of_range("evaluate: seen class count " + std::to_string(seen_end) + " invalid");
  }
  std::size_t correct = 0;
  for (const auto& s : samples) {
    Tape tape(false);
    const Tensor logits = forward_with_prompts(tape, model, s.x, mode).logits.value();
    std::size_t best = 0;
    for (std::size_t c = 1; c < seen_end; ++c) {
      if (logits(0, c) > logits(0, best)) best = c;
    }
    if (best == s.y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

StreamResult train_stream(ToyModel& model, const TaskStream& stream, const TrainConfig& cfg,
                          const StageHook& hook) {
  cfg.validate();
  if (stream.tasks.empty()) throw std::invalid_argument("train_stream: empty stream");
  if (stream.spec.total_classes() > model.config().classes) {
    throw DimensionError("stream has " + std::to_string(stream.spec.total_classes()) +
                         " classes but the head has " + std::to_string(model.config().classes));
  }
  StreamResult result;
  result.frozen_hash_before = model.frozen_hash();
  Adam optimizer(cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::size_t seen_end = 0;
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const TaskData& task = stream.tasks[t];
    seen_end = std::max(seen_end, task.class_end);
    auto log = train_task(model, optimizer, task, cfg, training_window(cfg.mode, task));
    result.loss_log.insert(result.loss_log.end(), log.begin(), log.end());
    ema_update(model.codebook);
    ++result.ema_updates;

    std::vector<double> row;
    for (std::size_t j = 0; j <= t; ++j) {
      row.push_back(evaluate(model, cfg.mode, stream.tasks[j].test, seen_end));
    }
    result.matrix.record_eval(std::move(row));
    if (hook) hook(t + 1, TrainerState{&model, &optimizer});
  }
  const auto merged = gen_task_agnostic_eval(stream);
  result.task_agnostic_accuracy = evaluate(model, cfg.mode, merged, seen_end);
  if (!stream.unseen_test.empty()) {
    result.has_unseen_domains = true;
    result.unseen_domain_accuracy = evaluate(model, cfg.mode, stream.unseen_test, seen_end);
  }
  result.frozen_hash_after = model.frozen_hash();
  if (result.frozen_hash_after != result.frozen_hash_before) {
    throw ContractError("frozen backbone changed during the continual run");
  }
  return result;
}

void pretrain_backbone(ToyModel& model, const StreamSpec& geometry, const TrainConfig& cfg) {
  static std::mutex cache_mutex;
  static std::map<std::string, std::vector<Tensor>> cache;
  auto backbone = model.backbone_params();
  auto freeze = [&] { model.set_backbone_trainable(false); };
  if (cfg.pretrain_steps == 0) {
    freeze();
    return;
  }
  const std::string key = pretrain_key(model, geometry, cfg);
  {
    std::lock_guard lock(cache_mutex);
    if (auto it = cache.find(key); it != cache.end()) {
      for (std::size_t i = 0; i < backbone.size(); ++i) backbone[i]->value = it->second[i];
      freeze();
      return;
    }
  }

  const auto data = gen_pretask(geometry, cfg.pretrain_classes, cfg.pretrain_per_class,
                                derive_seed(cfg.seed, kSaltPretask));
  const std::size_t L = model.config().embed_dim;
  Rng rng(derive_seed(cfg.seed, kSaltPretrainHead));
  Param head_w{"pretrain.head_w",
               rng.normal_tensor(L, cfg.pretrain_classes, 1.0 / std::sqrt(static_cast<double>(L)))};
  Param head_b{"pretrain.head_b", Tensor(1, cfg.pretrain_classes, 0.0)};
  model.set_backbone_trainable(true);
  std::vector<Param*> params = backbone;
  params.push_back(&head_w);
  params.push_back(&head_b);

  Adam optimizer(cfg.beta1, cfg.beta2, cfg.adam_eps);
  const std::size_t bs = std::min(cfg.pretrain_batch, data.size());
  std::vector<std::size_t> order;
  std::size_t cursor = data.size();
  std::size_t epoch = 0;
  for (std::size_t step = 0; step < cfg.pretrain_steps; ++step) {
    GradientMap grads;
    for (std::size_t b = 0; b < bs; ++b) {
      if (cursor == data.size()) {
        order = batch_order(data.size(), derive_seed(derive_seed(cfg.seed, kSaltPretrainOrder), epoch++));
        cursor = 0;
      }
      const Sample& s = data[order[cursor++]];
      Tape tape;
      Var feat = unprompted_features(tape, model, s.x);
      Var logits = add_row(matmul(feat, tape.param(head_w)), tape.param(head_b));
      const std::array<std::size_t, 1> y{s.y};
      Var loss = scale(cross_entropy(logits, y), 1.0 / static_cast<double>(bs));
      add_into(grads, tape.backward(loss));
    }
    optimizer.step(params, grads, cfg.pretrain_lr);
  }
  freeze();
  std::vector<Tensor> snapshot;
  for (Param* p : backbone) snapshot.push_back(p->value);
  std::lock_guard lock(cache_mutex);
  cache.emplace(key, std::move(snapshot));
}

}  // namespace pc
