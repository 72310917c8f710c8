#pragma once

#include <stdexcept>
#include <string>

namespace idsis {

// Exit codes surfaced by the command-line front end.
enum class ExitCode : int {
    Ok = 0,
    Validation = 2,
    MissingPrerequisite = 3,
    Numeric = 4,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual ExitCode exit_code() const noexcept { return ExitCode::Validation; }
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IngestionError : public Error {
public:
    using Error::Error;
};

// Loaded weights do not belong with the rest of the run, e.g. a model trained against another train-FR.
class StateError : public Error {
public:
    using Error::Error;
};

// Training finished but the embedder does not reach the required accuracy.
class QualityGateError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::Numeric; }
};

class NumericError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::Numeric; }
};

class MissingPrerequisiteError : public Error {
public:
    MissingPrerequisiteError(const std::string& artifact, const std::string& producer)
        : Error("missing prerequisite '" + artifact + "'; run `idsis " + producer + "` first"),
          producer_(producer) {}
    ExitCode exit_code() const noexcept override { return ExitCode::MissingPrerequisite; }
    const std::string& producer() const noexcept { return producer_; }

private:
    std::string producer_;
};

}  // namespace idsis
