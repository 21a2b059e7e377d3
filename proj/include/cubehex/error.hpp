#pragma once

#include <stdexcept>
#include <string>

namespace cubehex
{

enum class ErrorCode
{
    InvalidArgument,
    InvalidMesh,
    Io,
    Format,
    Numerical,
    Config,
    State,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error
{
public:
    Error(ErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

} // namespace cubehex
