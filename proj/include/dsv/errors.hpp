#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dsv {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid argument values, broken invariants, bad configuration.
struct ValidationError : Error {
    using Error::Error;
};

// Mismatched array shapes or grid dimensions.
struct DimensionError : Error {
    using Error::Error;
};

// Inputs outside the mathematically valid domain (e.g. regrid extrapolation).
struct DomainError : Error {
    using Error::Error;
};

// Malformed on-disk data. Carries the byte offset at which parsing failed.
struct FormatError : Error {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    explicit FormatError(const std::string& msg) : Error(msg), offset(0) {}
    std::size_t offset;
};

// Failures during iterative training (e.g. non-finite loss).
struct TrainError : Error {
    TrainError(const std::string& msg, std::size_t at_epoch)
        : Error(msg + " (epoch " + std::to_string(at_epoch) + ")"), epoch(at_epoch) {}
    std::size_t epoch;
};

} // namespace dsv
