#pragma once
// Executable property suites behind `aesth verify` and the acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace aesth {

struct PropertyResult {
  std::string name;
  std::string scope;
  bool passed = false;
  /// Worst observed deviation and the bound it was held to.
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// "all" or one of property_scopes().
  std::string scope = "all";
  std::uint64_t seed = 20170401;
  int threads = 0;
};

/// oracle, gradient, isolation, invariance, metrics, data, training
const std::vector<std::string>& property_scopes();

/// Runs every property of the selected scope in a fixed order.
std::vector<PropertyResult> run_properties(const VerifyOptions& options);

nlohmann::ordered_json to_json(const PropertyResult& r);

}  // namespace aesth
