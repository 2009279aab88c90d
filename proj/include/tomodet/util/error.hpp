#pragma once

#include <stdexcept>
#include <string>

namespace tomodet {

// The three failure families map onto the CLI exit codes 2, 3 and 4.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace tomodet
