#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pc {

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Tolerances of the battery.
inline constexpr double kPrimitiveTolerance = 1e-5;
inline constexpr double kCompositeTolerance = 1e-4;

/// Primitive names accepted by the sign-flip injection.
const std::vector<std::string>& battery_primitives();

/// Central-difference checks of every differentiable primitive (inputs drawn
/// in [-2, 2]), the codebook and modulation losses, and the full objective on
/// a 2-block model. `sign_flip` names a primitive whose gradient is negated to
/// prove the battery catches it; empty for a pristine run.
std::vector<CheckResult> run_gradient_battery(std::uint64_t seed, const std::string& sign_flip = "");

}  // namespace pc
