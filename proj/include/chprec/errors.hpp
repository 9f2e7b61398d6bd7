#pragma once

#include <stdexcept>
#include <string>

namespace chprec {

/// Base class for every error this library raises. Catching chprec::Error at
/// the CLI boundary is enough to turn any module failure into a diagnostic.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };
struct EmptyGraph : Error { using Error::Error; };
struct NegativeEntry : Error { using Error::Error; };
struct NegativeEpsilon : Error { using Error::Error; };
struct RatioOutOfRange : Error { using Error::Error; };
struct EmptyGrid : Error { using Error::Error; };
struct ZeroColumn : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };
struct NotBipartite : Error { using Error::Error; };
struct LayerCountMismatch : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct UserSaturated : Error { using Error::Error; };
struct NoTestUsers : Error { using Error::Error; };
struct TooFewUsers : Error { using Error::Error; };
struct DegenerateVariance : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct EmptyFile : Error { using Error::Error; };
struct EmptyAfterFilter : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

} // namespace chprec
