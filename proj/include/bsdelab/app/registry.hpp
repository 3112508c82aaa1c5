#pragma once

#include "bsdelab/app/config.hpp"

#include <string>
#include <vector>

namespace bsdelab {

/// Machine-readable dump of every built-in instance, grouped by category.
Json registry_listing();

/// Description of a built-in; unknown names raise ConfigError with suggestions.
Json describe_instance(const std::string& name);

/// Closest registry names by edit distance (substring matches first).
std::vector<std::string> suggest_names(const std::string& name, std::size_t max_count = 3);

} // namespace bsdelab
