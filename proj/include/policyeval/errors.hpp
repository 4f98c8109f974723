#pragma once

#include <stdexcept>
#include <string>

namespace policyeval {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Corpus/config file problems: missing fields, unknown labels, bad formats.
class IngestError : public Error {
public:
    using Error::Error;
};

// Violated numeric preconditions (rank, sample sizes, zero vectors, ...).
class MathError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Stage orchestration failures, e.g. a missing upstream artifact.
class PipelineError : public Error {
public:
    using Error::Error;
};

} // namespace policyeval
