#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace emtune {

/// Root of every error the toolkit throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SchemaError : public Error { using Error::Error; };
class DuplicateError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class TemplateError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class ConsistencyError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class RangeError : public Error { using Error::Error; };
class SelectionError : public Error { using Error::Error; };
class PricingError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

/// Transport or provider failure. `attempts` is how many times the request was tried.
class GatewayError : public Error {
public:
    GatewayError(const std::string& what, int attempts, int status = 0, bool transient = false)
        : Error(what), attempts_(attempts), status_(status), transient_(transient) {}
    int attempts() const noexcept { return attempts_; }
    int status() const noexcept { return status_; }
    bool transient() const noexcept { return transient_; }

private:
    int attempts_;
    int status_;
    bool transient_;
};

/// Replay fixture had no entry for the request.
class FixtureError : public Error {
public:
    FixtureError(const std::string& what, std::string request_hash)
        : Error(what), hash_(std::move(request_hash)) {}
    const std::string& request_hash() const noexcept { return hash_; }

private:
    std::string hash_;
};

/// Model output contained no parseable generated pair.
class GenerationParseError : public Error {
public:
    GenerationParseError(const std::string& what, std::string raw)
        : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

}  // namespace emtune
