// Exception hierarchy shared by every gatres component.
#pragma once

#include <stdexcept>
#include <string>

namespace gatres {

/// Broad failure class. The CLI maps each category to a distinct exit code.
enum class ErrorCategory { config, data, compute, io };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

// Compute-side errors: misuse of numeric primitives.
struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorCategory::compute, w) {}
};
struct DomainError : Error {
    explicit DomainError(const std::string& w) : Error(ErrorCategory::compute, w) {}
};
struct IndexError : Error {
    explicit IndexError(const std::string& w) : Error(ErrorCategory::compute, w) {}
};
struct ParameterError : Error {
    explicit ParameterError(const std::string& w) : Error(ErrorCategory::compute, w) {}
};
struct HarnessError : Error {
    explicit HarnessError(const std::string& w) : Error(ErrorCategory::compute, w) {}
};

// Data-side errors: malformed or inconsistent inputs.
struct FormatError : Error {
    explicit FormatError(const std::string& w) : Error(ErrorCategory::data, w) {}
};
struct IntegrityError : Error {
    explicit IntegrityError(const std::string& w) : Error(ErrorCategory::data, w) {}
};
struct DegenerateDataError : Error {
    explicit DegenerateDataError(const std::string& w) : Error(ErrorCategory::data, w) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};
struct ModelKindError : Error {
    explicit ModelKindError(const std::string& w) : Error(ErrorCategory::config, w) {}
};

struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorCategory::io, w) {}
};

inline const char* category_name(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::config: return "config_error";
    case ErrorCategory::data: return "data_error";
    case ErrorCategory::compute: return "compute_error";
    case ErrorCategory::io: return "io_error";
    }
    return "error";
}

} // namespace gatres
