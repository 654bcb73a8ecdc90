#include "pc/backbone.h"

#include <array>
#include <cmath>

#include <nlohmann/json.hpp>

#include "pc/ops.h"
#include "pc/random.h"
#include "pc/serialize.h"

namespace pc {
namespace {

Param make(const std::string& name, Tensor value) { return Param{name, std::move(value), true}; }

Var embed(Tape& tape, ToyModel& m, const Tensor& x) {
  const ModelConfig& c = m.config();
  if (x.rows() != c.patches || x.cols() != c.patch_dim) {
    throw DimensionError("input " + shape_string(x) + " does not match the " +
                         std::to_string(c.patches) + "x" + std::to_string(c.patch_dim) +
                         " token grid");
  }
  Var patches = add_row(matmul(tape.constant(x), tape.param(m.patch_w)), tape.param(m.patch_b));
  const std::array<Var, 2> parts{tape.param(m.cls_token), patches};
  return add(concat_rows(parts), tape.param(m.pos));
}

Var block_forward(Tape& tape, Var x, TransformerBlock& b, std::size_t heads,
                  std::optional<Var> pk, std::optional<Var> pv,
                  std::vector<Tensor>* attention) {
  Var h = layer_norm_rows(x, tape.param(b.ln1_g), tape.param(b.ln1_b));
  x = add(x, mhsa_prefix(h, pk, pv, b, heads, attention));
  Var u = layer_norm_rows(x, tape.param(b.ln2_g), tape.param(b.ln2_b));
  Var hidden = gelu(add_row(matmul(u, tape.param(b.w1)), tape.param(b.b1)));
  return add(x, add_row(matmul(hidden, tape.param(b.w2)), tape.param(b.b2)));
}

Var class_token(Tape& tape, ToyModel& m, Var tokens) {
  return layer_norm_rows(slice_rows(tokens, 0, 1), tape.param(m.final_g), tape.param(m.final_b));
}

Var classify(Tape& tape, ToyModel& m, Var feature) {
  return add_row(matmul(feature, tape.param(m.head_w)), tape.param(m.head_b));
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::pc: return "pc";
    case Mode::pgm_only: return "pgm_only";
    case Mode::pgm_spw: return "pgm_spw";
    case Mode::hard_select: return "hard_select";
    case Mode::frozen_baseline: return "frozen_baseline";
    case Mode::finetune_head: return "finetune_head";
  }
  return "unknown";
}

const std::vector<std::string>& mode_names() {
  static const std::vector<std::string> names = {"pc",          "pgm_only",        "pgm_spw",
                                                 "hard_select", "frozen_baseline", "finetune_head"};
  return names;
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::pc, Mode::pgm_only, Mode::pgm_spw, Mode::hard_select,
                 Mode::frozen_baseline, Mode::finetune_head}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown mode '" + name + "'");
}

bool uses_codebook(Mode mode) {
  return mode == Mode::pc || mode == Mode::pgm_only || mode == Mode::pgm_spw ||
         mode == Mode::hard_select;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (embed_dim == 0 || blocks == 0 || heads == 0 || patches == 0 || patch_dim == 0 ||
      mlp_dim == 0 || classes == 0 || codebook_size == 0 || pgm_depth == 0) {
    fail("sizes must be positive");
  }
  if (embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
  if (agnostic_blocks > instance_begin || instance_begin > instance_end || instance_end > blocks) {
    fail("prompted block ranges must satisfy agnostic_blocks <= instance_begin <= instance_end <= blocks");
  }
  if (prompt_pairs == 0) fail("prompt_pairs must be positive");
  if (select_k == 0 || select_k > codebook_size) fail("select_k must lie in [1, codebook_size]");
  if (!(alpha >= 0.0 && alpha < 1.0)) fail("alpha must lie in [0, 1)");
}

std::vector<Param*> TransformerBlock::params() {
  return {&ln1_g, &ln1_b, &wq, &wk, &wv, &wo, &bo, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2};
}

ToyModel::ToyModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t L = config_.embed_dim;
  const double std_l = 1.0 / std::sqrt(static_cast<double>(L));
  Rng rng(derive_seed(seed, 100));

  patch_w = make("backbone.patch_w",
                 rng.normal_tensor(config_.patch_dim, L,
                                   1.0 / std::sqrt(static_cast<double>(config_.patch_dim))));
  patch_b = make("backbone.patch_b", Tensor(1, L, 0.0));
  cls_token = make("backbone.cls_token", rng.normal_tensor(1, L, 0.5));
  pos = make("backbone.pos", rng.normal_tensor(config_.tokens(), L, 0.5));
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const std::string p = "backbone.block" + std::to_string(b) + ".";
    const double std_m = 1.0 / std::sqrt(static_cast<double>(config_.mlp_dim));
    blocks.push_back(TransformerBlock{
        make(p + "ln1_g", Tensor(1, L, 1.0)), make(p + "ln1_b", Tensor(1, L, 0.0)),
        make(p + "wq", rng.normal_tensor(L, L, std_l)), make(p + "wk", rng.normal_tensor(L, L, std_l)),
        make(p + "wv", rng.normal_tensor(L, L, std_l)), make(p + "wo", rng.normal_tensor(L, L, std_l)),
        make(p + "bo", Tensor(1, L, 0.0)),
        make(p + "ln2_g", Tensor(1, L, 1.0)), make(p + "ln2_b", Tensor(1, L, 0.0)),
        make(p + "w1", rng.normal_tensor(L, config_.mlp_dim, std_l)),
        make(p + "b1", Tensor(1, config_.mlp_dim, 0.0)),
        make(p + "w2", rng.normal_tensor(config_.mlp_dim, L, std_m)),
        make(p + "b2", Tensor(1, L, 0.0))});
  }
  final_g = make("backbone.final_g", Tensor(1, L, 1.0));
  final_b = make("backbone.final_b", Tensor(1, L, 0.0));

  Rng prompt_rng(derive_seed(seed, 200));
  for (std::size_t b = 0; b < config_.agnostic_blocks; ++b) {
    agnostic.push_back(make("prompt.agnostic" + std::to_string(b),
                            prompt_rng.uniform_tensor(2 * config_.agnostic_len, L, -std_l, std_l)));
  }
  for (std::size_t b = config_.instance_begin; b < config_.instance_end; ++b) {
    pgm.push_back(init_pgm(L, config_.codebook_size, 2 * config_.prompt_pairs, config_.pgm_depth,
                           prompt_rng, "pgm.block" + std::to_string(b)));
  }
  pmm = init_pmm(L, prompt_rng);
  plusw = init_plusw(L, prompt_rng);
  codebook = init_codebook(config_.codebook_size, L, derive_seed(seed, 300), config_.alpha);
  head_w = make("head.w", Tensor(L, config_.classes, 0.0));
  head_b = make("head.b", Tensor(1, config_.classes, 0.0));
}

std::vector<Param*> ToyModel::backbone_params() {
  std::vector<Param*> out = {&patch_w, &patch_b, &cls_token, &pos};
  for (auto& b : blocks) {
    for (Param* p : b.params()) out.push_back(p);
  }
  out.push_back(&final_g);
  out.push_back(&final_b);
  return out;
}

std::vector<Param*> ToyModel::trainable_params(Mode mode) {
  std::vector<Param*> out;
  auto add_agnostic = [&] {
    for (auto& p : agnostic) out.push_back(&p);
  };
  auto add_pgm = [&] {
    for (auto& g : pgm) {
      for (Param* p : g.params()) out.push_back(p);
    }
  };
  switch (mode) {
    case Mode::pc:
      add_agnostic();
      add_pgm();
      out.push_back(&pmm.wf);
      out.push_back(&pmm.wp);
      out.push_back(&codebook.codes);
      break;
    case Mode::pgm_only:
      add_agnostic();
      add_pgm();
      out.push_back(&codebook.codes);
      break;
    case Mode::pgm_spw:
      add_agnostic();
      add_pgm();
      for (Param* p : plusw.params()) out.push_back(p);
      out.push_back(&codebook.codes);
      break;
    case Mode::hard_select:
      add_agnostic();
      out.push_back(&codebook.codes);
      break;
    case Mode::frozen_baseline:
    case Mode::finetune_head:
      break;
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<Param*> ToyModel::all_params() {
  std::vector<Param*> out = backbone_params();
  for (auto& p : agnostic) out.push_back(&p);
  for (auto& g : pgm) {
    for (Param* p : g.params()) out.push_back(p);
  }
  out.push_back(&pmm.wf);
  out.push_back(&pmm.wp);
  for (Param* p : plusw.params()) out.push_back(p);
  out.push_back(&codebook.codes);
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<const Param*> ToyModel::all_params() const {
  auto params = const_cast<ToyModel*>(this)->all_params();
  return {params.begin(), params.end()};
}

void ToyModel::set_backbone_trainable(bool trainable) {
  for (Param* p : backbone_params()) p->trainable = trainable;
}

void ToyModel::configure(Mode mode) {
  for (Param* p : all_params()) p->trainable = false;
  for (Param* p : trainable_params(mode)) p->trainable = true;
}

std::uint64_t ToyModel::frozen_hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (Param* p : const_cast<ToyModel*>(this)->backbone_params()) h = content_hash(p->value, h);
  return h;
}

Var mhsa_prefix(Var h, std::optional<Var> prefix_k, std::optional<Var> prefix_v,
                TransformerBlock& block, std::size_t heads, std::vector<Tensor>* attention) {
  Tape& tape = h.tape();
  const std::size_t L = h.cols();
  if (prefix_k.has_value() != prefix_v.has_value()) {
    throw DimensionError("mhsa_prefix: key and value prefixes must be given together");
  }
  if (prefix_k) {
    if (prefix_k->rows() != prefix_v->rows() || prefix_k->cols() != L || prefix_v->cols() != L) {
      throw DimensionError("mhsa_prefix: prefixes " + shape_string(prefix_k->value()) + " / " +
                           shape_string(prefix_v->value()) + " incompatible with input " +
                           shape_string(h.value()));
    }
  }
  if (L % heads != 0) throw DimensionError("mhsa_prefix: width not divisible by head count");
  const std::size_t d = L / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));

  Var q = matmul(h, tape.param(block.wq));
  Var k = matmul(h, tape.param(block.wk));
  Var v = matmul(h, tape.param(block.wv));
  if (prefix_k) {
    const std::array<Var, 2> kp{*prefix_k, k};
    const std::array<Var, 2> vp{*prefix_v, v};
    k = concat_rows(kp);
    v = concat_rows(vp);
  }
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Var qh = heads == 1 ? q : slice_cols(q, i * d, d);
    Var kh = heads == 1 ? k : slice_cols(k, i * d, d);
    Var vh = heads == 1 ? v : slice_cols(v, i * d, d);
    Var weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    if (attention != nullptr) attention->push_back(weights.value());
    outs.push_back(matmul(weights, vh));
  }
  Var merged = heads == 1 ? outs[0] : concat_cols(outs);
  return add_row(matmul(merged, tape.param(block.wo)), tape.param(block.bo));
}

Var unprompted_features(Tape& tape, ToyModel& model, const Tensor& x) {
  Var tokens = embed(tape, model, x);
  for (auto& b : model.blocks) {
    tokens = block_forward(tape, tokens, b, model.config().heads, std::nullopt, std::nullopt,
                           nullptr);
  }
  return class_token(tape, model, tokens);
}

Tensor encode_query(ToyModel& model, const Tensor& x) {
  Tape tape(false);
  return unprompted_features(tape, model, x).value();
}

ForwardResult forward_with_prompts(Tape& tape, ToyModel& model, const Tensor& x, Mode mode,
                                   const std::optional<Tensor>& query, ForwardTrace* trace) {
  return forward_with_prompts(tape, model, x, mode, query, trace, ForwardOverrides{});
}

ForwardResult forward_with_prompts(Tape& tape, ToyModel& model, const Tensor& x, Mode mode,
                                   const std::optional<Tensor>& query, ForwardTrace* trace,
                                   const ForwardOverrides& overrides) {
  const ModelConfig& c = model.config();
  const Tensor fq = query ? *query : encode_query(model, x);
  if (fq.rows() != 1 || fq.cols() != c.embed_dim) {
    throw DimensionError("query encoding " + shape_string(fq) + " does not match embed_dim");
  }
  ForwardResult result;
  if (mode == Mode::frozen_baseline || mode == Mode::finetune_head) {
    result.logits = classify(tape, model, tape.constant(fq));
    return result;
  }

  Var f = tape.constant(fq);
  Var codes = tape.param(model.codebook.codes);
  std::optional<HardSelection> selection;
  if (mode == Mode::hard_select) {
    selection = hard_select(f, codes, c.select_k);
    result.aux_loss = selection->matching_loss;
  }

  const std::size_t n = c.prompt_pairs;
  Var tokens = embed(tape, model, x);
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    std::optional<Var> pk, pv;
    ForwardTrace::Block* tb = nullptr;
    if (trace != nullptr) {
      trace->blocks.push_back({});
      tb = &trace->blocks.back();
      tb->block = b;
    }
    if (b < c.agnostic_blocks) {
      Var g = tape.param(model.agnostic[b]);
      pk = slice_rows(g, 0, c.agnostic_len);
      pv = slice_rows(g, c.agnostic_len, c.agnostic_len);
      if (tb) tb->final_prompts = g.value();
    } else if (b >= c.instance_begin && b < c.instance_end) {
      Var prompts;
      if (mode == Mode::hard_select) {
        pk = selection->key_prompts;
        pv = selection->value_prompts;
        if (tb) {
          tb->selected = selection->indices;
          tb->final_prompts = selection->key_prompts.value();
        }
      } else {
        PgmParams& gen = model.pgm[b - c.instance_begin];
        Var coeffs = compute_coefficients(f, codes, gen);
        prompts = generate_prompts(coeffs, codes);
        if (tb) {
          tb->coefficients = coeffs.value();
          tb->prompts = prompts.value();
        }
        if (mode == Mode::pc) {
          Var w = overrides.fixed_modulation
                      ? tape.constant(Tensor(1, prompts.rows(), *overrides.fixed_modulation))
                      : modulation_weights(f, prompts, model.pmm);
          if (tb) tb->weights = w.value();
          prompts = modulate(w, prompts);
        } else if (mode == Mode::pgm_spw) {
          prompts = spw_modulate(f, prompts, model.plusw);
        }
        if (tb) tb->final_prompts = prompts.value();
        pk = slice_rows(prompts, 0, n);
        pv = slice_rows(prompts, n, n);
      }
    }
    tokens = block_forward(tape, tokens, model.blocks[b], c.heads, pk, pv,
                           tb ? &tb->attention : nullptr);
  }
  result.logits = classify(tape, model, class_token(tape, model, tokens));
  return result;
}

std::string model_config_json(const ModelConfig& c) {
  nlohmann::json j = {{"embed_dim", c.embed_dim},       {"blocks", c.blocks},
                      {"heads", c.heads},               {"patches", c.patches},
                      {"patch_dim", c.patch_dim},       {"mlp_dim", c.mlp_dim},
                      {"classes", c.classes},           {"agnostic_len", c.agnostic_len},
                      {"prompt_pairs", c.prompt_pairs}, {"codebook_size", c.codebook_size},
                      {"pgm_depth", c.pgm_depth},       {"agnostic_blocks", c.agnostic_blocks},
                      {"instance_begin", c.instance_begin},
                      {"instance_end", c.instance_end}, {"select_k", c.select_k},
                      {"alpha", c.alpha}};
  return j.dump(2) + "\n";
}

void save_checkpoint(const ToyModel& model, const std::filesystem::path& stem) {
  std::vector<NamedTensor> entries;
  for (const Param* p : model.all_params()) entries.push_back({p->name, p->value});
  entries.push_back({"codebook.ema", model.codebook.ema});
  entries.push_back(
      {"codebook.task_index", Tensor::scalar(static_cast<double>(model.codebook.task_index))});
  write_archive(stem.string() + ".bin", entries);
  write_text(stem.string() + ".json", model_config_json(model.config()));
}

void load_checkpoint(ToyModel& model, const std::filesystem::path& stem) {
  const auto config = nlohmann::json::parse(read_text(stem.string() + ".json"));
  if (config != nlohmann::json::parse(model_config_json(model.config()))) {
    throw FormatError("checkpoint " + stem.string() + " was written for a different config");
  }
  const auto entries = read_archive(stem.string() + ".bin");
  for (Param* p : model.all_params()) {
    bool found = false;
    for (const auto& e : entries) {
      if (e.name != p->name) continue;
      if (e.value.shape() != p->value.shape()) {
        throw FormatError("checkpoint tensor " + e.name + " has shape " + shape_string(e.value));
      }
      p->value = e.value;
      found = true;
      break;
    }
    if (!found) throw FormatError("checkpoint " + stem.string() + " lacks " + p->name);
  }
  for (const auto& e : entries) {
    if (e.name == "codebook.ema") model.codebook.ema = e.value;
    if (e.name == "codebook.task_index") model.codebook.task_index = static_cast<int>(e.value[0]);
  }
}

}  // namespace pc
