#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pc/backbone.h"
#include "pc/datagen.h"
#include "pc/trainer.h"

namespace pc {

/// Config problem. `line()` is the 1-based line of the offending text, or 0
/// when the error does not come from a file.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : std::invalid_argument(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Fully resolved experiment description.
struct RunConfig {
  std::uint64_t seed = 1;
  /// Name of the stream preset the stream.* keys refine.
  std::string preset = "class_inc_default";
  StreamSpec stream = pc::stream_preset("class_inc_default");
  /// Set when `stream.seed` is given explicitly; otherwise the stream follows `seed`.
  std::optional<std::uint64_t> stream_seed;
  ModelConfig model;
  TrainConfig train;

  /// Copies derived fields (classes, geometry, seeds) into the sub-configs and validates.
  void resolve();
};

/// Every accepted flat key, in canonical order.
const std::vector<std::string>& config_keys();

/// Flat JSON object {"dotted.key": value, ...}. Unknown keys and bad values
/// raise ConfigError naming the line of the key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Applies one `key=value` override. The value is parsed as JSON when
/// possible and as a bare string otherwise.
void apply_override(RunConfig& cfg, const std::string& assignment);
void set_key(RunConfig& cfg, const std::string& key, const nlohmann::json& value);
nlohmann::json get_key(const RunConfig& cfg, const std::string& key);

/// Resolved config as flat JSON with every key present.
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace pc
