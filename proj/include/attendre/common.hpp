#pragma once

#include <stdexcept>
#include <string>

namespace attendre {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct EmptyInput : Error {
    using Error::Error;
};

struct CapacityError : Error {
    using Error::Error;
};

struct EmptyMemoryError : Error {
    using Error::Error;
};

struct OrderError : Error {
    using Error::Error;
};

struct AlignmentError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

} // namespace attendre
