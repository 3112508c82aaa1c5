#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace bsdelab {

using Json = nlohmann::json;

inline constexpr const char* kLibraryVersion = "0.1.0";

enum class ExperimentKind { exponential, reverse_holder, counterexample, linear, quadratic, oracle, equivalence_suite };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(const std::string& s);
std::vector<std::string> experiment_kind_names();

/// JSON text with // and /* */ comments allowed.
Json parse_config_text(const std::string& text);
Json load_config_file(const std::string& path);

/// Validates keys and value types for the config's kind, fills defaults and returns the
/// resolved config. Every problem found is listed in the ConfigError message.
Json resolve_config(const Json& raw);

/// Allowed keys for a kind, with defaults (nested "driver" objects are checked separately).
Json config_defaults(ExperimentKind kind);

/// sha256 of the resolved config without "threads" and "output", as "sha256:<hex>".
std::string config_hash(const Json& resolved);

/// Module versions embedded in summaries.
Json module_versions();

} // namespace bsdelab
