#pragma once

#include <stdexcept>
#include <string>

namespace specreg {

// Single exception type for every contract violation in the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace specreg
