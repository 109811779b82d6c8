#pragma once

#include <stdexcept>
#include <string>

namespace caosd {

// Error taxonomy shared by the library, the C API and the CLI exit codes.
enum class ErrorCode {
    InvalidInput = 2,
    Infeasible = 3,
    Numerical = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline Error invalid_input(const std::string& msg) { return Error(ErrorCode::InvalidInput, msg); }
inline Error infeasible(const std::string& msg) { return Error(ErrorCode::Infeasible, msg); }
inline Error numerical(const std::string& msg) { return Error(ErrorCode::Numerical, msg); }

} // namespace caosd
