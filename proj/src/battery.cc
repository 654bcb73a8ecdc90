#include "pc/battery.h"

#include <algorithm>
#include <array>
#include <functional>

#include "pc/backbone.h"
#include "pc/codebook.h"
#include "pc/gradcheck.h"
#include "pc/ops.h"
#include "pc/pmm.h"
#include "pc/random.h"
#include "pc/trainer.h"

namespace pc {
namespace {

using Op = std::function<Var(Tape&, Var)>;

struct PrimitiveCase {
  std::string name;      // check name
  std::string primitive; // sign-flip target
  std::size_t rows, cols;
  double lo, hi;
  std::function<Op(Rng&)> build;
};

Tensor draw(Rng& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
  return rng.uniform_tensor(r, c, lo, hi);
}

// Scalar readout of a tensor-valued op against a fixed random weighting.
Op contracted(Op op, Tensor weights) {
  return [op = std::move(op), w = std::move(weights)](Tape& t, Var x) {
    Var y = op(t, x);
    if (y.rows() == 1 && y.cols() == 1) return y;
    return sum(mul(y, t.constant(w)));
  };
}

std::vector<PrimitiveCase> primitive_cases() {
  std::vector<PrimitiveCase> c;
  auto unary = [&](std::string name, std::size_t r, std::size_t k, double lo, double hi,
                   std::function<Var(Var)> f) {
    c.push_back({name, name, r, k, lo, hi, [f](Rng&) { return Op([f](Tape&, Var x) { return f(x); }); }});
  };
  auto with_const = [&](std::string name, std::string prim, std::size_t r, std::size_t k,
                        std::size_t cr, std::size_t ck, double clo, double chi,
                        std::function<Var(Var, Var)> f) {
    c.push_back({name, prim, r, k, -2.0, 2.0, [=](Rng& rng) {
                   Tensor other = draw(rng, cr, ck, clo, chi);
                   return Op([f, other](Tape& t, Var x) { return f(x, t.constant(other)); });
                 }});
  };

  with_const("matmul.lhs", "matmul", 3, 4, 4, 2, -2, 2, [](Var x, Var b) { return matmul(x, b); });
  with_const("matmul.rhs", "matmul", 4, 2, 3, 4, -2, 2, [](Var x, Var a) { return matmul(a, x); });
  unary("transpose", 3, 4, -2, 2, [](Var x) { return transpose(x); });
  with_const("add", "add", 3, 4, 3, 4, -2, 2, [](Var x, Var b) { return add(x, b); });
  with_const("sub.lhs", "sub", 3, 4, 3, 4, -2, 2, [](Var x, Var b) { return sub(x, b); });
  with_const("sub.rhs", "sub", 3, 4, 3, 4, -2, 2, [](Var x, Var b) { return sub(b, x); });
  with_const("mul", "mul", 3, 4, 3, 4, -2, 2, [](Var x, Var b) { return mul(x, b); });
  unary("scale", 3, 4, -2, 2, [](Var x) { return scale(x, -1.7); });
  unary("add_scalar", 3, 4, -2, 2, [](Var x) { return add_scalar(x, 0.3); });
  with_const("add_row.matrix", "add_row", 3, 4, 1, 4, -2, 2, [](Var x, Var r) { return add_row(x, r); });
  with_const("add_row.row", "add_row", 1, 4, 3, 4, -2, 2, [](Var x, Var m) { return add_row(m, x); });
  with_const("scale_rows.matrix", "scale_rows", 3, 4, 1, 3, -2, 2,
             [](Var x, Var w) { return scale_rows(x, w); });
  with_const("scale_rows.weights", "scale_rows", 1, 3, 3, 4, -2, 2,
             [](Var x, Var m) { return scale_rows(m, x); });
  with_const("sub_scalar.matrix", "sub_scalar", 3, 4, 1, 1, -2, 2,
             [](Var x, Var s) { return sub_scalar(x, s); });
  with_const("sub_scalar.scalar", "sub_scalar", 1, 1, 3, 4, -2, 2,
             [](Var x, Var m) { return sub_scalar(m, x); });
  with_const("div_scalar.matrix", "div_scalar", 3, 4, 1, 1, 1, 2,
             [](Var x, Var s) { return div_scalar(x, s); });
  c.push_back({"div_scalar.scalar", "div_scalar", 1, 1, 1.0, 2.0, [](Rng& rng) {
                 Tensor m = draw(rng, 3, 4);
                 return Op([m](Tape& t, Var x) { return div_scalar(t.constant(m), x); });
               }});
  unary("sigmoid", 3, 4, -2, 2, [](Var x) { return sigmoid(x); });
  unary("gelu", 3, 4, -2, 2, [](Var x) { return gelu(x); });
  unary("sqrt", 3, 4, 0.5, 2, [](Var x) { return sqrt(x); });
  unary("softmax_rows", 3, 4, -2, 2, [](Var x) { return softmax_rows(x); });
  c.push_back({"layer_norm_rows.input", "layer_norm_rows", 3, 5, -2, 2, [](Rng& rng) {
                 Tensor g = draw(rng, 1, 5), b = draw(rng, 1, 5);
                 return Op([g, b](Tape& t, Var x) {
                   return layer_norm_rows(x, t.constant(g), t.constant(b));
                 });
               }});
  c.push_back({"layer_norm_rows.gain", "layer_norm_rows", 1, 5, -2, 2, [](Rng& rng) {
                 Tensor in = draw(rng, 3, 5), b = draw(rng, 1, 5);
                 return Op([in, b](Tape& t, Var x) {
                   return layer_norm_rows(t.constant(in), x, t.constant(b));
                 });
               }});
  c.push_back({"layer_norm_rows.bias", "layer_norm_rows", 1, 5, -2, 2, [](Rng& rng) {
                 Tensor in = draw(rng, 3, 5), g = draw(rng, 1, 5);
                 return Op([in, g](Tape& t, Var x) {
                   return layer_norm_rows(t.constant(in), t.constant(g), x);
                 });
               }});
  unary("l2_normalize_rows", 3, 4, -2, 2, [](Var x) { return l2_normalize_rows(x); });
  with_const("conv1d_same.input", "conv1d_same", 2, 6, 1, 3, -2, 2,
             [](Var x, Var k) { return conv1d_same(x, k); });
  with_const("conv1d_same.kernel", "conv1d_same", 1, 3, 2, 6, -2, 2,
             [](Var x, Var m) { return conv1d_same(m, x); });
  with_const("concat_rows", "concat_rows", 2, 4, 3, 4, -2, 2, [](Var x, Var b) {
    const std::array<Var, 3> parts{b, x, b};
    return concat_rows(parts);
  });
  with_const("concat_cols", "concat_cols", 3, 2, 3, 4, -2, 2, [](Var x, Var b) {
    const std::array<Var, 2> parts{x, b};
    return concat_cols(parts);
  });
  unary("slice_rows", 4, 3, -2, 2, [](Var x) { return slice_rows(x, 1, 2); });
  unary("slice_cols", 3, 5, -2, 2, [](Var x) { return slice_cols(x, 1, 3); });
  unary("reshape", 3, 4, -2, 2, [](Var x) { return reshape(x, 2, 6); });
  unary("sum", 3, 4, -2, 2, [](Var x) { return sum(x); });
  unary("mean", 3, 4, -2, 2, [](Var x) { return mean(x); });
  unary("frobenius_sq", 3, 4, -2, 2, [](Var x) { return frobenius_sq(x); });
  unary("min_all", 3, 4, -2, 2, [](Var x) { return min_all(x); });
  unary("max_all", 3, 4, -2, 2, [](Var x) { return max_all(x); });
  unary("cross_entropy", 3, 5, -2, 2, [](Var x) {
    static const std::array<std::size_t, 3> labels{0, 3, 4};
    return cross_entropy(x, labels);
  });
  return c;
}

ModelConfig composite_config() {
  ModelConfig m;
  m.embed_dim = 8;
  m.blocks = 2;
  m.heads = 2;
  m.patches = 4;
  m.patch_dim = 3;
  m.mlp_dim = 12;
  m.classes = 4;
  m.agnostic_len = 2;
  m.prompt_pairs = 2;
  m.codebook_size = 6;
  m.pgm_depth = 2;
  m.agnostic_blocks = 1;
  m.instance_begin = 1;
  m.instance_end = 2;
  m.select_k = 2;
  return m;
}

CheckResult check_objective(Mode mode, std::uint64_t seed) {
  ToyModel model(composite_config(), seed);
  Rng rng(derive_seed(seed, 77));
  // Non-zero head and a drifted ensemble so every term carries gradient.
  model.head_w.value = draw(rng, model.head_w.value.rows(), model.head_w.value.cols(), -0.5, 0.5);
  model.codebook.ema = draw(rng, model.codebook.ema.rows(), model.codebook.ema.cols(), -0.3, 0.3);
  model.configure(mode);

  const auto& c = model.config();
  std::vector<Tensor> xs, queries;
  for (int i = 0; i < 2; ++i) {
    xs.push_back(draw(rng, c.patches, c.patch_dim, -1.0, 1.0));
    queries.push_back(encode_query(model, xs.back()));
  }
  const std::array<BatchItem, 2> batch{BatchItem{&xs[0], &queries[0], 1},
                                       BatchItem{&xs[1], &queries[1], 3}};
  TrainConfig cfg;
  cfg.mode = mode;
  const LossFn loss = [&](Tape& tape) {
    return total_loss(tape, model, batch, LabelWindow{0, c.classes}, cfg);
  };
  auto params = model.trainable_params(mode);
  if (mode == Mode::pgm_spw) {
    // Plus_W keys are detached copies of the generated prompts, so only params
    // outside the generator admit a finite-difference comparison.
    std::vector<Param*> generator = {&model.codebook.codes};
    for (auto& g : model.pgm) {
      for (Param* p : g.params()) generator.push_back(p);
    }
    std::erase_if(params, [&](Param* p) {
      return std::find(generator.begin(), generator.end(), p) != generator.end();
    });
  }
  const double err = grad_check_params(loss, params, 1e-6);
  return {"objective." + to_string(mode), err, kCompositeTolerance, err < kCompositeTolerance};
}

CheckResult check_codebook(const std::string& name, std::uint64_t seed,
                           const std::function<Var(Tape&, Codebook&)>& term) {
  Codebook cb = init_codebook(4, 6, seed);
  Rng rng(derive_seed(seed, 78));
  cb.codes.value = draw(rng, 4, 6);
  cb.ema = draw(rng, 4, 6);
  const LossFn loss = [&](Tape& tape) { return term(tape, cb); };
  const std::array<Param*, 1> params{&cb.codes};
  const double err = grad_check_params(loss, params, 1e-6);
  return {name, err, kPrimitiveTolerance, err < kPrimitiveTolerance};
}

}  // namespace

const std::vector<std::string>& battery_primitives() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& c : primitive_cases()) {
      if (out.empty() || out.back() != c.primitive) out.push_back(c.primitive);
    }
    return out;
  }();
  return names;
}

std::vector<CheckResult> run_gradient_battery(std::uint64_t seed, const std::string& sign_flip) {
  if (!sign_flip.empty()) {
    const auto& names = battery_primitives();
    if (std::find(names.begin(), names.end(), sign_flip) == names.end()) {
      throw std::invalid_argument("unknown primitive '" + sign_flip + "' for sign-flip injection");
    }
  }
  std::vector<CheckResult> results;
  Rng rng(derive_seed(seed, 70));
  for (const auto& pc : primitive_cases()) {
    Op op = pc.build(rng);
    if (pc.primitive == sign_flip) {
      op = [inner = std::move(op)](Tape& t, Var x) { return negate_gradient(inner(t, x)); };
    }
    Tensor x = draw(rng, pc.rows, pc.cols, pc.lo, pc.hi);
    Tensor probe;
    {
      Tape tape(false);
      probe = op(tape, tape.constant(x)).value();
    }
    Op f = contracted(op, draw(rng, probe.rows(), probe.cols()));
    const double err = grad_check(f, x, 1e-6);
    results.push_back({pc.name, err, kPrimitiveTolerance, err < kPrimitiveTolerance});
  }

  results.push_back(check_codebook("codebook.orth_loss", derive_seed(seed, 71),
                                   [](Tape& t, Codebook& cb) { return orth_loss(t, cb); }));
  results.push_back(check_codebook("codebook.reg_loss", derive_seed(seed, 72),
                                   [](Tape& t, Codebook& cb) { return reg_loss(t, cb); }));
  {
    Rng prng(derive_seed(seed, 73));
    const Tensor w = draw(prng, 1, 6);
    const Op f = contracted([](Tape&, Var s) { return quantize_correlations(s); }, w);
    const double err = grad_check(f, draw(prng, 1, 6), 1e-6);
    results.push_back({"pmm.quantize_correlations", err, kCompositeTolerance, err < kCompositeTolerance});
  }
  for (Mode m : {Mode::pc, Mode::pgm_only, Mode::pgm_spw, Mode::hard_select, Mode::frozen_baseline}) {
    results.push_back(check_objective(m, derive_seed(seed, 80)));
  }
  return results;
}

}  // namespace pc
