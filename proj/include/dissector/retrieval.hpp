#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dissector/corpus.hpp"

namespace dissector {

struct RankedEntry {
    std::string doc_id;
    double score = 0.0;

    bool operator==(const RankedEntry&) const = default;
};

struct RankedDocs {
    std::string claim_id;
    std::vector<RankedEntry> entries;  // scores non-increasing, doc_ids unique

    std::vector<std::string> doc_ids() const;
};

struct RetrievalConfig {
    int k1 = 35;
    int k2 = 0;
    int block_budget = 500;
    int negative_lo = 50;
    int negative_hi = 200;
    int negatives_per_claim = 8;
    int first_stage_depth = 100;

    void validate() const;
};

/// Any first-stage ranking function over the corpus.
class DocumentRanker {
public:
    virtual ~DocumentRanker() = default;
    virtual RankedDocs rank(const std::string& claim_id, const TokenSeq& claim, int k) const = 0;
};

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

class Bm25Index final : public DocumentRanker {
public:
    explicit Bm25Index(const Corpus& corpus, Bm25Params params = {});

    RankedDocs rank(const std::string& claim_id, const TokenSeq& claim, int k) const override;
    double score(const TokenSeq& claim, std::size_t doc) const;
    double idf(const std::string& term) const;
    const Bm25Params& params() const { return params_; }

private:
    const Corpus* corpus_;
    Bm25Params params_;
    std::vector<std::unordered_map<std::string, int>> term_freq_;
    std::vector<int> doc_length_;
    std::unordered_map<std::string, int> doc_freq_;
    double avg_length_ = 0.0;
};

/// Stand-in for an external title-lookup service: scores a document by how much of its
/// title appears in the claim, with a bonus for a contiguous exact match.
class TitleMatchRanker final : public DocumentRanker {
public:
    explicit TitleMatchRanker(const Corpus& corpus) : corpus_(&corpus) {}
    RankedDocs rank(const std::string& claim_id, const TokenSeq& claim, int k) const override;

private:
    const Corpus* corpus_;
};

/// Lowercased, punctuation-free terms used by the lexical rankers.
TokenSeq index_terms(const TokenSeq& tokens);

RankedDocs bm25_rank(const TokenSeq& claim, const Bm25Index& index, int k, const std::string& claim_id = {});
RankedDocs interleave(const RankedDocs& a, const RankedDocs& b);
RankedDocs hyperlink_expand(const RankedDocs& top_docs, const Corpus& corpus, int limit);

struct AssembledInput {
    std::string claim_id;
    std::vector<Block> blocks;
    /// First-stage score of each block's document, parallel to `blocks`.
    std::vector<double> doc_scores;
};

class Retriever {
public:
    Retriever(const Corpus& corpus, RetrievalConfig config, LengthMeasure measure,
              std::unique_ptr<DocumentRanker> second_ranker = nullptr, Bm25Params bm25 = {});

    RankedDocs first_stage(const ClaimInstance& claim) const;
    /// K1 blocks from the interleaved ranking, then K2 blocks from hyperlink expansion.
    /// With `gold_rng` set, missing gold evidence blocks are injected at uniform positions.
    AssembledInput assemble(const ClaimInstance& claim, std::mt19937_64* gold_rng = nullptr) const;

    const Corpus& corpus() const { return *corpus_; }
    const RetrievalConfig& config() const { return config_; }
    const Bm25Index& bm25() const { return bm25_; }
    std::vector<Block> blocks_of(const Document& doc) const;

private:
    const Corpus* corpus_;
    RetrievalConfig config_;
    LengthMeasure measure_;
    Bm25Index bm25_;
    std::unique_ptr<DocumentRanker> second_;
};

AssembledInput assemble_input_blocks(const ClaimInstance& claim, const RetrievalConfig& config, const Corpus& corpus,
                                     const LengthMeasure& measure);

/// Sentences of the input blocks ordered by their document's first-stage score, then input order.
std::vector<SentenceRef> rank_input_sentences(const AssembledInput& input);

/// Samples `n` sentences from zero-based rank positions [lo, hi), never returning a gold sentence.
/// With fewer than `lo` ranked sentences, samples from the non-gold entries after the last gold one.
std::vector<SentenceRef> mine_negatives(const std::vector<SentenceRef>& ranked, const std::set<SentenceRef>& gold,
                                        int lo, int hi, int n, std::uint64_t seed);

/// Fraction of non-NEI claims with some evidence group wholly inside their input blocks.
double recall_at_input(const std::vector<ClaimInstance>& claims, const std::vector<AssembledInput>& inputs);
bool group_covered(const EvidenceGroup& group, const std::set<SentenceRef>& available);
std::set<SentenceRef> input_sentences(const AssembledInput& input);

void write_assembled_inputs(const std::filesystem::path& path, const std::vector<AssembledInput>& inputs);
std::vector<AssembledInput> read_assembled_inputs(const std::filesystem::path& path);

}  // namespace dissector
