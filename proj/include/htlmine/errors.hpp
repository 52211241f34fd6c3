#pragma once

#include <stdexcept>
#include <string>

namespace htl {

// Error taxonomy mapped to CLI exit codes: config_error -> 2,
// numeric_error/state errors -> 3, io_error -> 4.
struct dimension_error : std::runtime_error {
    explicit dimension_error(const std::string & msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string & msg) : std::runtime_error(msg) {}
};

struct state_error : std::runtime_error {
    explicit state_error(const std::string & msg) : std::runtime_error(msg) {}
};

struct validation_error : std::runtime_error {
    explicit validation_error(const std::string & msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string & msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string & msg) : std::runtime_error(msg) {}
};

} // namespace htl
