#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "dissector/corpus.hpp"

namespace dissector {

struct SyntheticSpec {
    int n_train = 600;
    int n_dev = 200;
    int n_conflict = 40;  // half carry contradictory gold sentences
    int topics = 24;
    int claims_per_doc = 1;
    int min_sentences = 8;
    int max_sentences = 12;
    int filler_words = 80;
    std::uint64_t seed = 7;
};

struct SyntheticDataset {
    Corpus corpus;
    std::vector<ClaimInstance> train;
    std::vector<ClaimInstance> dev;
    std::vector<ClaimInstance> conflict;
    std::set<std::string> conflicting_ids;  // claims of `conflict` with planted contradictions
    std::vector<std::string> support_markers;
    std::vector<std::string> refute_markers;

    std::vector<ClaimInstance> all_claims() const;
};

/// Claims are `[topic, key, w, w]` with `w` drawn from words that never occur in documents.
/// A SUPPORTS gold sentence carries the key and a support marker, a REFUTES gold sentence the key
/// and a refute marker; NEI keys occur nowhere in the corpus. Every other sentence is filler.
/// Rationales mark the key and the marker.
SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec);

/// corpus.jsonl, train.jsonl, dev.jsonl, conflict.jsonl and conflicting.jsonl
void write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);
std::set<std::string> read_conflicting_ids(const std::filesystem::path& path);

}  // namespace dissector
