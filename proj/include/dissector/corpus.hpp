#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dissector/common.hpp"

namespace dissector {

struct Hyperlink {
    std::string target;
    std::size_t offset = 0;  // character offset in the source document text

    bool operator==(const Hyperlink&) const = default;
};

struct Document {
    std::string doc_id;
    TokenSeq title;
    std::vector<TokenSeq> sentences;
    std::vector<Hyperlink> hyperlinks;

    /// Sentences joined by single spaces; hyperlink offsets index into this.
    std::string text() const;
    bool operator==(const Document&) const = default;
};

/// Points at one token of one corpus sentence.
struct TokenPointer {
    std::string doc_id;
    int sentence_index = 0;
    int token_offset = 0;

    auto operator<=>(const TokenPointer&) const = default;
};

using EvidenceGroup = std::vector<SentenceRef>;  // sorted, unique
using TokenReference = std::vector<TokenPointer>;

struct ClaimInstance {
    std::string claim_id;
    std::string claim_text;
    TokenSeq claim;
    Label label = Label::Nei;
    std::vector<EvidenceGroup> evidence_groups;
    /// Optional token-level rationale annotations, one entry per annotator.
    std::vector<TokenReference> rationales;

    /// Union of all evidence group members, sorted.
    std::vector<SentenceRef> gold_sentences() const;
    bool operator==(const ClaimInstance&) const = default;
};

class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Document> docs);

    const Document* find(const std::string& doc_id) const;
    const Document& at(const std::string& doc_id) const;
    const std::vector<Document>& documents() const { return docs_; }
    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }

    /// Throws ValidationError if some evidence sentence does not resolve.
    void check_claims(const std::vector<ClaimInstance>& claims) const;

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Splits on whitespace and separates punctuation into single-character tokens.
TokenSeq tokenize(std::string_view text);
std::string join_tokens(const TokenSeq& tokens);

class SentenceSplitter {
public:
    virtual ~SentenceSplitter() = default;
    virtual std::vector<TokenSeq> split(std::string_view text) const = 0;
};

/// Ends a sentence at '.', '?' or '!' followed by whitespace or end of text.
class RuleBasedSplitter final : public SentenceSplitter {
public:
    std::vector<TokenSeq> split(std::string_view text) const override;
};

std::vector<TokenSeq> segment_sentences(std::string_view text);

struct Block {
    std::string doc_id;
    int block_index = 0;
    std::vector<int> sentence_indices;
    int token_count = 0;
    /// Set when a single over-long sentence was cut to the budget.
    bool truncated = false;

    bool operator==(const Block&) const = default;
};

using LengthMeasure = std::function<int(const TokenSeq&)>;

/// Greedy, order-preserving packing of whole sentences into blocks of at most `budget` tokens.
std::vector<Block> split_into_blocks(const Document& doc, int budget, const LengthMeasure& measure);

std::vector<ClaimInstance> load_fever_claims(const std::filesystem::path& path);
ClaimInstance parse_fever_claim(std::string_view line, std::size_t line_number);
void write_fever_claims(const std::filesystem::path& path, const std::vector<ClaimInstance>& claims);

Corpus load_corpus(const std::filesystem::path& path, const SentenceSplitter& splitter = RuleBasedSplitter{});
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

}  // namespace dissector
