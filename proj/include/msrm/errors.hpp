#ifndef MSRM_ERRORS_HPP
#define MSRM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace msrm {

struct DimensionMismatch : std::invalid_argument {
    explicit DimensionMismatch(const std::string& what) : std::invalid_argument(what) {}
};

struct InvalidIndexTuple : std::invalid_argument {
    explicit InvalidIndexTuple(const std::string& what) : std::invalid_argument(what) {}
};

// Requested contour shift leaves the joint analyticity strip.
struct StripViolation : std::domain_error {
    explicit StripViolation(const std::string& what) : std::domain_error(what) {}
};

struct StripEmpty : std::domain_error {
    explicit StripEmpty(const std::string& what) : std::domain_error(what) {}
};

struct SingularCovariance : std::domain_error {
    explicit SingularCovariance(const std::string& what) : std::domain_error(what) {}
};

struct DegenerateEnvelope : std::domain_error {
    explicit DegenerateEnvelope(const std::string& what) : std::domain_error(what) {}
};

struct DimensionUnsupported : std::invalid_argument {
    explicit DimensionUnsupported(const std::string& what) : std::invalid_argument(what) {}
};

struct NonPositiveMultiplier : std::domain_error {
    explicit NonPositiveMultiplier(const std::string& what) : std::domain_error(what) {}
};

struct DivergenceDetected : std::runtime_error {
    explicit DivergenceDetected(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SchemaMismatch : std::runtime_error {
    explicit SchemaMismatch(const std::string& what) : std::runtime_error(what) {}
};

} // namespace msrm

#endif
