#pragma once

#include <stdexcept>
#include <string>

namespace p2mark {

// Process exit codes shared by every CLI command.
enum class ExitCode : int {
    kSuccess = 0,
    kUsage = 2,
    kPayloadShape = 3,
    kIngestion = 4,
    kDivergence = 5,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code = ExitCode::kUsage)
        : std::runtime_error(what), code_(code) {}

    ExitCode exit_code() const noexcept { return code_; }

private:
    ExitCode code_;
};

// Watermark length or logit/probability vector does not match the trained payload length.
class PayloadShapeError : public Error {
public:
    explicit PayloadShapeError(const std::string& what) : Error(what, ExitCode::kPayloadShape) {}
};

// Spectrogram bin count or tensor shape does not match a model's configuration.
class FeatureShapeError : public Error {
public:
    explicit FeatureShapeError(const std::string& what) : Error(what, ExitCode::kPayloadShape) {}
};

class ConfigurationError : public Error {
public:
    explicit ConfigurationError(const std::string& what) : Error(what, ExitCode::kUsage) {}
};

class StructuralError : public Error {
public:
    explicit StructuralError(const std::string& what) : Error(what, ExitCode::kPayloadShape) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(what, ExitCode::kUsage) {}
};

class InputLengthError : public Error {
public:
    explicit InputLengthError(const std::string& what) : Error(what, ExitCode::kPayloadShape) {}
};

class LayoutError : public Error {
public:
    explicit LayoutError(const std::string& what) : Error(what, ExitCode::kPayloadShape) {}
};

// Raised when the generator step runs without a watermark gradient captured in the same batch.
class SequencingError : public Error {
public:
    explicit SequencingError(const std::string& what) : Error(what, ExitCode::kUsage) {}
};

class IngestionError : public Error {
public:
    explicit IngestionError(const std::string& what) : Error(what, ExitCode::kIngestion) {}
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long iteration)
        : Error(what + " (iteration " + std::to_string(iteration) + ")", ExitCode::kDivergence),
          iteration_(iteration) {}

    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

}  // namespace p2mark
