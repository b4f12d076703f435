#include "dissector/common.hpp"

namespace dissector {

std::string_view label_name(Label label) {
    switch (label) {
        case Label::Support: return "SUPPORTS";
        case Label::Refute: return "REFUTES";
        case Label::Nei: return "NOT ENOUGH INFO";
    }
    return "?";
}

std::optional<Label> parse_label(std::string_view text) {
    if (text == "SUPPORTS" || text == "SUPPORT") return Label::Support;
    if (text == "REFUTES" || text == "REFUTE") return Label::Refute;
    if (text == "NOT ENOUGH INFO" || text == "NEI") return Label::Nei;
    return std::nullopt;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::string_view key, std::uint64_t step) {
    // FNV-1a over the key keeps this independent of std::hash.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : key) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed) ^ splitmix64(h) ^ splitmix64(step + 0x632be59bd9b4e019ULL));
}

}  // namespace dissector
