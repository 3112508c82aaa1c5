#pragma once

#include <stdexcept>
#include <string>

namespace bsdelab {

/// Invalid experiment or operation parameters (shapes, sizes, exponents).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// A numerical procedure could not produce a trustworthy result.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

#define BSDELAB_REQUIRE(cond, msg)                                  \
    do {                                                            \
        if (!(cond)) throw ::bsdelab::ConfigError(std::string(msg)); \
    } while (false)

} // namespace bsdelab
