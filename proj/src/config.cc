#include "pc/config.h"

#include <functional>
#include <limits>

#include "pc/serialize.h"

namespace pc {
namespace {

using json = nlohmann::json;

struct KeyBinding {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw ConfigError(key + " must be an integer, got " + v.dump());
  }
  const auto n = v.get<long long>();
  if (n < 0) throw ConfigError(key + " must be nonnegative, got " + v.dump());
  return static_cast<std::size_t>(n);
}

std::uint64_t as_seed(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  return static_cast<std::uint64_t>(as_count(v, key));
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key + " must be a number, got " + v.dump());
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError(key + " must be true or false, got " + v.dump());
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key + " must be a string, got " + v.dump());
  return v.get<std::string>();
}

template <typename Field>
KeyBinding count_key(std::string key, Field field) {
  return {key, [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
          [field, key](RunConfig& c, const json& v) { field(c) = as_count(v, key); }};
}

template <typename Field>
KeyBinding real_key(std::string key, Field field) {
  return {key, [field](const RunConfig& c) { return json(field(const_cast<RunConfig&>(c))); },
          [field, key](RunConfig& c, const json& v) { field(c) = as_real(v, key); }};
}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = [] {
    std::vector<KeyBinding> t;
    t.push_back({"seed", [](const RunConfig& c) { return json(c.seed); },
                 [](RunConfig& c, const json& v) { c.seed = as_seed(v, "seed"); }});
    t.push_back({"stream.preset", [](const RunConfig& c) { return json(c.preset); },
                 [](RunConfig& c, const json& v) {
                   const std::string name = as_string(v, "stream.preset");
                   try {
                     c.stream = stream_preset(name);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                   c.preset = name;
                 }});
    t.push_back({"stream.kind", [](const RunConfig& c) { return json(to_string(c.stream.kind)); },
                 [](RunConfig& c, const json& v) {
                   try {
                     c.stream.kind = parse_stream_kind(as_string(v, "stream.kind"));
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 }});
    t.push_back(count_key("stream.tasks", [](RunConfig& c) -> auto& { return c.stream.tasks; }));
    t.push_back(count_key("stream.classes_per_task",
                          [](RunConfig& c) -> auto& { return c.stream.classes_per_task; }));
    t.push_back(count_key("stream.train_per_class",
                          [](RunConfig& c) -> auto& { return c.stream.train_per_class; }));
    t.push_back(count_key("stream.test_per_class",
                          [](RunConfig& c) -> auto& { return c.stream.test_per_class; }));
    t.push_back(count_key("stream.patches", [](RunConfig& c) -> auto& { return c.stream.patches; }));
    t.push_back(count_key("stream.patch_dim", [](RunConfig& c) -> auto& { return c.stream.patch_dim; }));
    t.push_back(count_key("stream.latent_dim", [](RunConfig& c) -> auto& { return c.stream.latent_dim; }));
    t.push_back(real_key("stream.spread", [](RunConfig& c) -> auto& { return c.stream.spread; }));
    t.push_back(real_key("stream.domain_shift", [](RunConfig& c) -> auto& { return c.stream.domain_shift; }));
    t.push_back(count_key("stream.heldout_domains",
                          [](RunConfig& c) -> auto& { return c.stream.heldout_domains; }));
    t.push_back({"stream.seed",
                 [](const RunConfig& c) { return c.stream_seed ? json(*c.stream_seed) : json(c.seed); },
                 [](RunConfig& c, const json& v) { c.stream_seed = as_seed(v, "stream.seed"); }});
    t.push_back({"stream.world_seed", [](const RunConfig& c) { return json(c.stream.world_seed); },
                 [](RunConfig& c, const json& v) { c.stream.world_seed = as_seed(v, "stream.world_seed"); }});

    t.push_back(count_key("model.embed_dim", [](RunConfig& c) -> auto& { return c.model.embed_dim; }));
    t.push_back(count_key("model.blocks", [](RunConfig& c) -> auto& { return c.model.blocks; }));
    t.push_back(count_key("model.heads", [](RunConfig& c) -> auto& { return c.model.heads; }));
    t.push_back(count_key("model.mlp_dim", [](RunConfig& c) -> auto& { return c.model.mlp_dim; }));
    t.push_back(count_key("model.agnostic_len", [](RunConfig& c) -> auto& { return c.model.agnostic_len; }));
    t.push_back(count_key("model.prompt_pairs", [](RunConfig& c) -> auto& { return c.model.prompt_pairs; }));
    t.push_back(count_key("model.codebook_size", [](RunConfig& c) -> auto& { return c.model.codebook_size; }));
    t.push_back(count_key("model.pgm_depth", [](RunConfig& c) -> auto& { return c.model.pgm_depth; }));
    t.push_back(count_key("model.agnostic_blocks",
                          [](RunConfig& c) -> auto& { return c.model.agnostic_blocks; }));
    t.push_back(count_key("model.instance_begin",
                          [](RunConfig& c) -> auto& { return c.model.instance_begin; }));
    t.push_back(count_key("model.instance_end", [](RunConfig& c) -> auto& { return c.model.instance_end; }));
    t.push_back(count_key("model.select_k", [](RunConfig& c) -> auto& { return c.model.select_k; }));

    t.push_back({"train.mode", [](const RunConfig& c) { return json(to_string(c.train.mode)); },
                 [](RunConfig& c, const json& v) {
                   try {
                     c.train.mode = parse_mode(as_string(v, "train.mode"));
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 }});
    t.push_back(count_key("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    t.push_back(count_key("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    t.push_back(real_key("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; }));
    t.push_back(real_key("train.beta1", [](RunConfig& c) -> auto& { return c.train.beta1; }));
    t.push_back(real_key("train.beta2", [](RunConfig& c) -> auto& { return c.train.beta2; }));
    t.push_back(real_key("train.lambda", [](RunConfig& c) -> auto& { return c.train.lambda_orth; }));
    t.push_back(real_key("train.beta", [](RunConfig& c) -> auto& { return c.train.beta_reg; }));
    t.push_back(real_key("train.alpha", [](RunConfig& c) -> auto& { return c.model.alpha; }));
    t.push_back(real_key("train.match_weight", [](RunConfig& c) -> auto& { return c.train.match_weight; }));
    t.push_back({"train.codebook_losses", [](const RunConfig& c) { return json(c.train.codebook_losses); },
                 [](RunConfig& c, const json& v) { c.train.codebook_losses = as_bool(v, "train.codebook_losses"); }});

    t.push_back(count_key("backbone.pretrain_steps",
                          [](RunConfig& c) -> auto& { return c.train.pretrain_steps; }));
    t.push_back(count_key("backbone.pretrain_batch",
                          [](RunConfig& c) -> auto& { return c.train.pretrain_batch; }));
    t.push_back(real_key("backbone.pretrain_lr", [](RunConfig& c) -> auto& { return c.train.pretrain_lr; }));
    t.push_back(count_key("backbone.pretrain_classes",
                          [](RunConfig& c) -> auto& { return c.train.pretrain_classes; }));
    t.push_back(count_key("backbone.pretrain_per_class",
                          [](RunConfig& c) -> auto& { return c.train.pretrain_per_class; }));
    return t;
  }();
  return table;
}

const KeyBinding& binding(const std::string& key) {
  for (const auto& b : bindings()) {
    if (b.key == key) return b;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

// Line holding the first occurrence of "key" as a JSON object key.
std::size_t line_of_key(const std::string& text, const std::string& key) {
  const std::string quoted = json(key).dump();
  std::size_t pos = 0;
  while ((pos = text.find(quoted, pos)) != std::string::npos) {
    std::size_t after = pos + quoted.size();
    while (after < text.size() && (text[after] == ' ' || text[after] == '\t')) ++after;
    if (after < text.size() && text[after] == ':') return line_of_offset(text, pos);
    pos = after;
  }
  return 0;
}

}  // namespace

void RunConfig::resolve() {
  stream.seed = stream_seed ? *stream_seed : seed;
  train.seed = seed;
  model.classes = stream.total_classes();
  model.patches = stream.patches;
  model.patch_dim = stream.patch_dim;
  try {
    stream.validate();
    model.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& b : bindings()) out.push_back(b.key);
    return out;
  }();
  return keys;
}

void set_key(RunConfig& cfg, const std::string& key, const json& value) {
  binding(key).set(cfg, value);
}

json get_key(const RunConfig& cfg, const std::string& key) { return binding(key).get(cfg); }

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1));
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object", 1);
  RunConfig cfg;
  // The preset resets every stream.* field, so it is applied first.
  if (auto it = doc.find("stream.preset"); it != doc.end()) {
    try {
      set_key(cfg, "stream.preset", *it);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_of_key(text, "stream.preset"));
    }
  }
  for (const auto& [key, value] : doc.items()) {
    if (key == "stream.preset") continue;
    try {
      set_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_of_key(text, key));
    }
  }
  try {
    cfg.resolve();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), 1);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ":" + e.what());
  }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must have the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  set_key(cfg, key, value);
}

json to_json(const RunConfig& cfg) {
  json out = json::object();
  for (const auto& b : bindings()) out[b.key] = b.get(cfg);
  return out;
}

}  // namespace pc
