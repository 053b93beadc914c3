#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace syntaxlm {

// Malformed CoNLL-U or record text. `line` is 1-based.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// A sentence whose head pointers do not form a single-rooted tree.
class ValidationError : public std::runtime_error {
public:
    ValidationError(std::string sentence_id, const std::string& what)
        : std::runtime_error("sentence " + sentence_id + ": " + what),
          sentence_id_(std::move(sentence_id)) {}
    const std::string& sentence_id() const noexcept { return sentence_id_; }

private:
    std::string sentence_id_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing files, empty corpora, incompatible artifacts.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite losses, failed gradient checks.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace syntaxlm
