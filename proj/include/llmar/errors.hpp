#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace llmar {

// Base class for every error the pipeline raises on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed text input (policy DSL, program text, CSV rows). `line` is
// 1-based when known, 0 otherwise.
struct ParseError : Error {
    explicit ParseError(const std::string& msg, int line_number = 0)
        : Error(line_number > 0 ? "line " + std::to_string(line_number) + ": " + msg : msg),
          line(line_number) {}
    int line = 0;
};

// A structurally well-formed value that violates an invariant.
struct ValidationError : Error {
    using Error::Error;
};

// Dataset column/label layout does not match the configured vocabulary.
struct SchemaError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Completion provider failed after its own retry budget.
struct ProviderError : Error {
    using Error::Error;
};

// Program too large for exact inference; caller should sample instead.
struct CapacityError : Error {
    using Error::Error;
};

// Atoms referenced by a policy or clause that have no fact entry.
struct MissingFactError : Error {
    explicit MissingFactError(std::vector<std::string> missing)
        : Error(format(missing)), atoms(std::move(missing)) {}

    std::vector<std::string> atoms;

private:
    static std::string format(const std::vector<std::string>& missing) {
        std::string msg = "missing fact(s) for atom(s):";
        for (const auto& a : missing) msg += " " + a;
        return msg;
    }
};

// No parseable policy block in an LLM response; keeps the raw text for logs.
struct ExtractionError : Error {
    ExtractionError(const std::string& msg, std::string raw_response)
        : Error(msg), raw(std::move(raw_response)) {}
    std::string raw;
};

}  // namespace llmar
