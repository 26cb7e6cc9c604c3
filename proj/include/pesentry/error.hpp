// pesentry - static PE malware/ransomware detection toolkit
// Error types shared across modules.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pesentry {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    /// Short machine-readable code, printed by the CLI on stderr.
    virtual const char* code() const noexcept { return "Error"; }
};

#define PESENTRY_DEFINE_ERROR(Name)                                  \
    class Name : public Error {                                      \
    public:                                                          \
        using Error::Error;                                          \
        const char* code() const noexcept override { return #Name; } \
    };

PESENTRY_DEFINE_ERROR(DegenerateLabels)
PESENTRY_DEFINE_ERROR(ShapeMismatch)
PESENTRY_DEFINE_ERROR(SchemaMismatch)
PESENTRY_DEFINE_ERROR(EmptyInput)
PESENTRY_DEFINE_ERROR(LengthMismatch)
PESENTRY_DEFINE_ERROR(UnknownPositiveClass)
PESENTRY_DEFINE_ERROR(InsufficientClass)
PESENTRY_DEFINE_ERROR(FormatError)
PESENTRY_DEFINE_ERROR(IoError)

#undef PESENTRY_DEFINE_ERROR

/// Manifest line that fails validation; carries the 1-based line number.
class SchemaError : public Error {
public:
    SchemaError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    const char* code() const noexcept override { return "SchemaError"; }
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace pesentry
