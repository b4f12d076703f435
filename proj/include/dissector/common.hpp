#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dissector {

using TokenSeq = std::vector<std::string>;

/// Claim veracity. The provenance-level "irrelevant" class shares index 2 with NEI.
enum class Label : std::uint8_t { Support = 0, Refute = 1, Nei = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::size_t kSupport = 0;
inline constexpr std::size_t kRefute = 1;
inline constexpr std::size_t kIrrelevant = 2;

inline std::size_t class_index(Label label) { return static_cast<std::size_t>(label); }
inline Label label_from_index(std::size_t index) {
    if (index >= kNumClasses) throw std::out_of_range("class index out of range");
    return static_cast<Label>(index);
}

std::string_view label_name(Label label);
std::optional<Label> parse_label(std::string_view text);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when a component breaks its interface (shape mismatches, bad indices).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Reference to one sentence of the corpus.
struct SentenceRef {
    std::string doc_id;
    int sentence_index = 0;

    auto operator<=>(const SentenceRef&) const = default;
};

/// Derive a reproducible stream seed from (global seed, key, step).
std::uint64_t mix_seed(std::uint64_t seed, std::string_view key, std::uint64_t step);

}  // namespace dissector
