#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.h"
#include "pc/gradcheck.h"
#include "pc/ops.h"
#include "pc/trainer.h"

using namespace pc;
using pc::test::random_tensor;

namespace {

ModelConfig tiny_model(std::size_t classes) {
  ModelConfig c;
  c.embed_dim = 8;
  c.blocks = 3;
  c.heads = 2;
  c.patches = 4;
  c.patch_dim = 3;
  c.mlp_dim = 12;
  c.classes = classes;
  c.agnostic_len = 2;
  c.prompt_pairs = 2;
  c.codebook_size = 6;
  c.pgm_depth = 1;
  c.agnostic_blocks = 1;
  c.instance_begin = 1;
  c.instance_end = 3;
  c.select_k = 2;
  return c;
}

StreamSpec tiny_stream(std::size_t tasks) {
  StreamSpec s;
  s.tasks = tasks;
  s.classes_per_task = 2;
  s.train_per_class = 6;
  s.test_per_class = 4;
  s.patches = 4;
  s.patch_dim = 3;
  return s;
}

TrainConfig tiny_train(Mode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = 2;
  cfg.batch_size = 5;
  cfg.lr = 0.01;
  cfg.pretrain_steps = 0;
  return cfg;
}

std::vector<Tensor> snapshot(const ToyModel& model) {
  std::vector<Tensor> out;
  for (const Param* p : model.all_params()) out.push_back(p->value);
  return out;
}

struct Batch {
  std::vector<Tensor> xs, queries;
  std::vector<BatchItem> items;
};

Batch make_batch(ToyModel& model, const std::vector<Sample>& samples, std::size_t count) {
  Batch b;
  for (std::size_t i = 0; i < count; ++i) {
    b.xs.push_back(samples[i].x);
    b.queries.push_back(encode_query(model, samples[i].x));
  }
  for (std::size_t i = 0; i < count; ++i) b.items.push_back({&b.xs[i], &b.queries[i], samples[i].y});
  return b;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("objective without codebook weights is the cross-entropy") {
    const TaskStream stream = gen_stream(tiny_stream(2));
    ToyModel model(tiny_model(4), 1);
    model.configure(Mode::pc);
    model.head_w.value = random_tensor(8, 4, 42);
    Batch b = make_batch(model, stream.tasks[1].train, 3);
    TrainConfig cfg = tiny_train(Mode::pc);
    cfg.lambda_orth = 0.0;
    cfg.beta_reg = 0.0;
    model.codebook.ema = random_tensor(6, 8, 3);

    Tape tape(false);
    LossTerms terms;
    const double total = total_loss(tape, model, b.items, {2, 4}, cfg, &terms).value().item();

    double ce = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      Tape t(false);
      const Tensor logits = forward_with_prompts(t, model, b.xs[i], Mode::pc).logits.value();
      double z = 0.0;
      for (std::size_t c = 2; c < 4; ++c) z += std::exp(logits(0, c));
      ce -= logits(0, b.items[i].y) - std::log(z);
    }
    CHECK(std::abs(total - ce / 3.0) < 1e-12);
    CHECK(terms.orth > 0.0);
    CHECK(terms.reg > 0.0);
  }

  TEST_CASE("perfect logits and orthonormal codes give zero objective") {
    const TaskStream stream = gen_stream(tiny_stream(1));
    ToyModel model(tiny_model(2), 2);
    model.configure(Mode::pc);
    for (double& v : model.head_w.value.data()) v = 0.0;
    Batch b = make_batch(model, stream.tasks[0].train, 1);
    model.head_b.value = Tensor(1, 2, 0.0);
    model.head_b.value(0, b.items[0].y) = 1000.0;
    Tensor codes(6, 8);
    for (std::size_t i = 0; i < 6; ++i) codes(i, i) = 1.0;
    model.codebook.codes.value = codes;
    model.codebook.ema = codes;
    Tape tape(false);
    CHECK(total_loss(tape, model, b.items, {0, 2}, tiny_train(Mode::pc)).value().item() < 1e-6);
  }

  TEST_CASE("objective gradient matches central differences") {
    const TaskStream stream = gen_stream(tiny_stream(1));
    for (Mode mode : {Mode::pc, Mode::hard_select, Mode::finetune_head}) {
      ToyModel model(tiny_model(2), 3);
      model.configure(mode);
      model.head_w.value = random_tensor(8, 2, 40);
      model.codebook.ema = random_tensor(6, 8, 4, -0.3, 0.3);
      Batch b = make_batch(model, stream.tasks[0].train, 2);
      const TrainConfig cfg = tiny_train(mode);
      const auto params = model.trainable_params(mode);
      const double err = grad_check_params(
          [&](Tape& tape) { return total_loss(tape, model, b.items, {0, 2}, cfg); }, params);
      CHECK(err < 1e-4);
    }
  }

  TEST_CASE("per-sample gradients equal the single-tape gradient") {
    const TaskStream stream = gen_stream(tiny_stream(1));
    ToyModel model(tiny_model(2), 5);
    model.configure(Mode::pc);
    model.head_w.value = random_tensor(8, 2, 41);
    model.codebook.ema = random_tensor(6, 8, 6, -0.3, 0.3);
    Batch b = make_batch(model, stream.tasks[0].train, 4);
    const TrainConfig cfg = tiny_train(Mode::pc);
    Tape tape;
    LossTerms terms;
    const GradientMap whole = tape.backward(total_loss(tape, model, b.items, {0, 2}, cfg, &terms));
    const BatchGradient split = batch_gradient(model, b.items, {0, 2}, cfg);
    CHECK(std::abs(split.terms.total - terms.total) < 1e-12);
    CHECK(split.grads.size() == whole.size());
    for (const auto& [param, g] : whole) CHECK(max_abs_diff(split.grads.at(param), g) < 1e-12);
  }

  TEST_CASE("adam") {
    Param a{"a", random_tensor(2, 3, 7)};
    Param frozen{"frozen", random_tensor(2, 2, 8), false};
    std::vector<Param*> params{&a, &frozen};
    GradientMap grads{{&a, random_tensor(2, 3, 9)}};
    const Tensor before = a.value;

    Adam idle(0.9, 0.999, 1e-8);
    idle.step(params, grads, 0.0);
    CHECK(a.value == before);
    CHECK(idle.steps_taken("a") == 1);

    Adam opt(0.9, 0.999, 1e-8);
    opt.step(params, grads, 0.1);
    // First bias-corrected step moves every entry by lr * sign(g) up to eps.
    for (std::size_t i = 0; i < a.value.size(); ++i) {
      const double g = grads.at(&a)[i];
      CHECK(std::abs((before[i] - a.value[i]) - 0.1 * g / (std::abs(g) + 1e-8)) < 1e-12);
    }
    CHECK(opt.steps_taken("frozen") == 0);

    Adam restored(0.9, 0.999, 1e-8);
    restored.load_state(opt.state());
    CHECK(restored.steps_taken("a") == 1);
    Param twin = a;
    std::vector<Param*> twin_params{&twin};
    GradientMap twin_grads{{&twin, grads.at(&a)}};
    opt.step(params, grads, 0.1);
    restored.step(twin_params, twin_grads, 0.1);
    CHECK(twin.value == a.value);
  }

  TEST_CASE("training leaves the backbone untouched and is deterministic") {
    const TaskStream stream = gen_stream(tiny_stream(2));
    for (Mode mode : {Mode::pc, Mode::pgm_spw, Mode::hard_select, Mode::finetune_head}) {
      ToyModel model(tiny_model(4), 7);
      ToyModel twin(tiny_model(4), 7);
      const auto hash = model.frozen_hash();
      const auto initial = snapshot(model);
      Adam opt(0.9, 0.999, 1e-8), twin_opt(0.9, 0.999, 1e-8);
      const TrainConfig cfg = tiny_train(mode);
      const auto log = train_task(model, opt, stream.tasks[0], cfg, training_window(mode, stream.tasks[0]));
      train_task(twin, twin_opt, stream.tasks[0], cfg, training_window(mode, stream.tasks[0]));
      CHECK(model.frozen_hash() == hash);
      CHECK(snapshot(model) == snapshot(twin));
      CHECK(snapshot(model) != initial);
      CHECK(log.size() == cfg.epochs * 3);
      for (const StepLog& s : log) {
        CHECK(s.terms.ce >= 0.0);
        CHECK(s.terms.orth >= 0.0);
        CHECK(s.terms.reg >= 0.0);
        CHECK(s.terms.match >= 0.0);
      }
    }
  }

  TEST_CASE("zero learning rate keeps every param bitwise") {
    const TaskStream stream = gen_stream(tiny_stream(2));
    ToyModel model(tiny_model(4), 8);
    const auto initial = snapshot(model);
    TrainConfig cfg = tiny_train(Mode::pc);
    cfg.lr = 0.0;
    const StreamResult r = train_stream(model, stream, cfg);
    CHECK(r.matrix.stages() == 2);
    const auto after = snapshot(model);
    // Only the codebook ensemble may move; it is not a param.
    CHECK(after == initial);
  }

  TEST_CASE("empty task is rejected") {
    ToyModel model(tiny_model(2), 9);
    Adam opt(0.9, 0.999, 1e-8);
    TaskData empty;
    CHECK_THROWS_AS(train_task(model, opt, empty, tiny_train(Mode::pc), {0, 2}), std::invalid_argument);
  }

  TEST_CASE("label windows") {
    TaskData task;
    task.class_begin = 4;
    task.class_end = 8;
    CHECK(training_window(Mode::pc, task).begin == 4);
    CHECK(training_window(Mode::frozen_baseline, task).begin == 4);
    CHECK(training_window(Mode::finetune_head, task).begin == 0);
    CHECK(training_window(Mode::finetune_head, task).end == 8);
  }

  TEST_CASE("evaluation ignores unseen classes") {
    const TaskStream stream = gen_stream(tiny_stream(2));
    ToyModel model(tiny_model(4), 10);
    for (double& v : model.head_w.value.data()) v = 0.0;
    model.head_b.value = Tensor::from_rows({{0.0, 1.0, 0.0, 5.0}});
    CHECK(evaluate(model, Mode::frozen_baseline, stream.tasks[0].test, 4) == 0.0);
    CHECK(evaluate(model, Mode::frozen_baseline, stream.tasks[0].test, 2) == 0.5);
    CHECK_THROWS(evaluate(model, Mode::frozen_baseline, stream.tasks[0].test, 5));
  }

  TEST_CASE("stream run bookkeeping") {
    const TaskStream one = gen_stream(tiny_stream(1));
    ToyModel single(tiny_model(2), 11);
    const StreamResult r1 = train_stream(single, one, tiny_train(Mode::pc));
    CHECK(r1.matrix.stages() == 1);
    CHECK_THROWS_AS(forgetting(r1.matrix, 1), MetricsError);

    const TaskStream stream = gen_stream(tiny_stream(3));
    ToyModel model(tiny_model(6), 12);
    std::vector<std::size_t> stages;
    std::vector<std::vector<std::string>> leaks;
    const StreamResult r = train_stream(model, stream, tiny_train(Mode::pc), [&](std::size_t t, const TrainerState& s) {
      stages.push_back(t);
      leaks.push_back(find_sample_leaks(s.inventory(), stream));
    });
    CHECK(r.ema_updates == 3);
    CHECK(model.codebook.task_index == 3);
    CHECK(stages == std::vector<std::size_t>{1, 2, 3});
    for (std::size_t t = 1; t <= 3; ++t) CHECK(r.matrix.row(t).size() == t);
    for (const auto& l : leaks) CHECK(l.empty());
    CHECK(r.frozen_hash_before == r.frozen_hash_after);
    CHECK(r.loss_log.size() == 3 * 2 * 3);
  }

  TEST_CASE("leak audit catches stored samples") {
    const TaskStream stream = gen_stream(tiny_stream(2));
    ToyModel model(tiny_model(4), 13);
    Adam opt(0.9, 0.999, 1e-8);
    std::vector<NamedTensor> inv = TrainerState{&model, &opt}.inventory();
    CHECK(find_sample_leaks(inv, stream).empty());
    // A buffer holding one test sample, embedded inside a larger tensor.
    const Tensor& x = stream.tasks[1].test[2].x;
    Tensor buffer(1, x.size() + 5, 0.25);
    std::copy(x.data().begin(), x.data().end(), buffer.data().begin() + 3);
    inv.push_back({"replay.buffer", buffer});
    const auto leaks = find_sample_leaks(inv, stream);
    REQUIRE(leaks.size() == 1);
    CHECK(leaks[0] == "replay.buffer");
  }

  TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.lambda_orth = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_NOTHROW(TrainConfig{}.validate());
  }
}
