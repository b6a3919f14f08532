#pragma once

#include <stdexcept>
#include <string>

namespace icl {

// Every failure the library raises derives from std::runtime_error or
// std::invalid_argument so callers can catch broadly or by kind.

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DegenerateInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RankDeficiency : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InternalConsistency : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Divergence : std::runtime_error {
    Divergence(const std::string& what, long step_)
        : std::runtime_error(what), step(step_) {}
    long step;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace icl
