#pragma once

#include <stdexcept>
#include <string>

namespace r1d {

// Base for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files (bad row, non-numeric cell, truncated container).
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid input that violates a domain precondition
// (label out of range, class too small to split, empty dataset).
struct ValidationError : Error {
    using Error::Error;
};

// Bad or inconsistent configuration (unknown key, kernel wider than signal).
struct ConfigError : Error {
    using Error::Error;
};

// Caller broke an API contract (shape mismatch, missing mask,
// eps_max not on the evaluation grid).
struct ContractViolation : Error {
    using Error::Error;
};

// Architecture the linearizer / checkpoint loader cannot handle.
struct UnsupportedArchitecture : Error {
    using Error::Error;
};

// Attack failed on a specific sample (non-finite gradient).
struct AttackError : Error {
    using Error::Error;
};

// Filesystem trouble (missing file, unwritable path, short read).
struct IoError : Error {
    using Error::Error;
};

}  // namespace r1d
