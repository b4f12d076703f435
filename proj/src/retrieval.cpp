#include "dissector/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <tuple>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace dissector {

std::vector<std::string> RankedDocs::doc_ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.doc_id);
    return out;
}

void RetrievalConfig::validate() const {
    if (k1 < 0 || k2 < 0 || k1 + k2 < 1) throw ValidationError("retrieval needs K1 >= 0, K2 >= 0 and K1 + K2 >= 1");
    if (block_budget <= 0) throw ValidationError("block budget must be positive");
    if (negative_lo < 0 || negative_lo >= negative_hi) throw ValidationError("negative window needs 0 <= lo < hi");
    if (negatives_per_claim < 0) throw ValidationError("negatives_per_claim must be non-negative");
}

TokenSeq index_terms(const TokenSeq& tokens) {
    TokenSeq out;
    out.reserve(tokens.size());
    for (const auto& token : tokens) {
        std::string term;
        term.reserve(token.size());
        bool has_word_char = false;
        for (char c : token) {
            term += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (std::ispunct(static_cast<unsigned char>(c)) == 0) has_word_char = true;
        }
        if (has_word_char) out.push_back(std::move(term));
    }
    return out;
}

// ---------------------------------------------------------------------------
// BM25

Bm25Index::Bm25Index(const Corpus& corpus, Bm25Params params) : corpus_(&corpus), params_(params) {
    const auto& docs = corpus.documents();
    term_freq_.resize(docs.size());
    doc_length_.resize(docs.size());
    double total = 0.0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        auto& tf = term_freq_[d];
        int length = 0;
        auto add = [&](const TokenSeq& tokens) {
            for (auto& term : index_terms(tokens)) {
                ++tf[term];
                ++length;
            }
        };
        add(docs[d].title);
        for (const auto& sentence : docs[d].sentences) add(sentence);
        doc_length_[d] = length;
        total += length;
        for (const auto& [term, count] : tf) ++doc_freq_[term];
    }
    avg_length_ = docs.empty() ? 0.0 : total / static_cast<double>(docs.size());
}

double Bm25Index::idf(const std::string& term) const {
    const auto it = doc_freq_.find(term);
    const double df = it == doc_freq_.end() ? 0.0 : it->second;
    const double n = static_cast<double>(term_freq_.size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::score(const TokenSeq& claim, std::size_t doc) const {
    TokenSeq terms = index_terms(claim);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    const auto& tf = term_freq_.at(doc);
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * doc_length_[doc] / std::max(avg_length_, 1e-12));
    double total = 0.0;
    for (const auto& term : terms) {
        const auto it = tf.find(term);
        if (it == tf.end()) continue;
        const double f = it->second;
        total += idf(term) * f * (params_.k1 + 1.0) / (f + norm);
    }
    return total;
}

RankedDocs Bm25Index::rank(const std::string& claim_id, const TokenSeq& claim, int k) const {
    RankedDocs out{claim_id, {}};
    if (claim.empty() || k <= 0) return out;
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t d = 0; d < term_freq_.size(); ++d) {
        const double s = score(claim, d);
        if (s > 0.0) scored.emplace_back(s, d);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (scored.size() > static_cast<std::size_t>(k)) scored.resize(static_cast<std::size_t>(k));
    for (const auto& [s, d] : scored) out.entries.push_back({corpus_->documents()[d].doc_id, s});
    return out;
}

RankedDocs bm25_rank(const TokenSeq& claim, const Bm25Index& index, int k, const std::string& claim_id) {
    return index.rank(claim_id, claim, k);
}

RankedDocs TitleMatchRanker::rank(const std::string& claim_id, const TokenSeq& claim, int k) const {
    RankedDocs out{claim_id, {}};
    const TokenSeq claim_terms = index_terms(claim);
    if (claim_terms.empty() || k <= 0) return out;
    const std::unordered_set<std::string> claim_set(claim_terms.begin(), claim_terms.end());
    std::vector<std::pair<double, std::size_t>> scored;
    const auto& docs = corpus_->documents();
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const TokenSeq title = index_terms(docs[d].title);
        if (title.empty()) continue;
        const auto hits = std::count_if(title.begin(), title.end(), [&](const auto& t) { return claim_set.count(t) > 0; });
        if (hits == 0) continue;
        double s = static_cast<double>(hits) / static_cast<double>(title.size());
        const auto found = std::search(claim_terms.begin(), claim_terms.end(), title.begin(), title.end());
        if (found != claim_terms.end()) s += 1.0;
        scored.emplace_back(s, d);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (scored.size() > static_cast<std::size_t>(k)) scored.resize(static_cast<std::size_t>(k));
    for (const auto& [s, d] : scored) out.entries.push_back({docs[d].doc_id, s});
    return out;
}

// ---------------------------------------------------------------------------
// Interleaving and expansion

RankedDocs interleave(const RankedDocs& a, const RankedDocs& b) {
    RankedDocs out{a.claim_id.empty() ? b.claim_id : a.claim_id, {}};
    std::unordered_set<std::string> seen;
    const std::size_t total = a.entries.size() + b.entries.size();
    std::size_t cursors[2] = {0, 0};
    const RankedDocs* sources[2] = {&a, &b};
    // A turn is only spent once a source emits a new document; duplicates are skipped within the turn.
    std::size_t turn = 0;
    while (cursors[0] < a.entries.size() || cursors[1] < b.entries.size()) {
        const RankedDocs& src = *sources[turn];
        std::size_t& cursor = cursors[turn];
        while (cursor < src.entries.size()) {
            const auto& entry = src.entries[cursor++];
            if (!seen.insert(entry.doc_id).second) continue;
            // Interleaved lists mix score scales, so the emitted score is rank-based.
            out.entries.push_back({entry.doc_id, static_cast<double>(total - out.entries.size())});
            break;
        }
        turn = 1 - turn;
    }
    return out;
}

RankedDocs hyperlink_expand(const RankedDocs& top_docs, const Corpus& corpus, int limit) {
    RankedDocs out{top_docs.claim_id, {}};
    if (limit <= 0) return out;
    std::vector<std::tuple<std::size_t, std::size_t, std::string>> candidates;
    for (std::size_t rank = 0; rank < top_docs.entries.size(); ++rank) {
        const Document* source = corpus.find(top_docs.entries[rank].doc_id);
        if (source == nullptr) continue;
        for (const auto& link : source->hyperlinks) candidates.emplace_back(rank, link.offset, link.target);
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
        return std::tie(std::get<0>(x), std::get<1>(x)) < std::tie(std::get<0>(y), std::get<1>(y));
    });
    std::unordered_set<std::string> seen;
    for (const auto& e : top_docs.entries) seen.insert(e.doc_id);
    for (const auto& [rank, offset, target] : candidates) {
        if (out.entries.size() >= static_cast<std::size_t>(limit)) break;
        if (corpus.find(target) == nullptr) {
            spdlog::debug("dangling hyperlink to '{}' skipped", target);
            continue;
        }
        if (!seen.insert(target).second) continue;
        out.entries.push_back({target, 1.0 / static_cast<double>(out.entries.size() + 1)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Block assembly

Retriever::Retriever(const Corpus& corpus, RetrievalConfig config, LengthMeasure measure,
                     std::unique_ptr<DocumentRanker> second_ranker, Bm25Params bm25)
    : corpus_(&corpus), config_(config), measure_(std::move(measure)), bm25_(corpus, bm25),
      second_(std::move(second_ranker)) {
    config_.validate();
}

std::vector<Block> Retriever::blocks_of(const Document& doc) const {
    return split_into_blocks(doc, config_.block_budget, measure_);
}

RankedDocs Retriever::first_stage(const ClaimInstance& claim) const {
    RankedDocs lexical = bm25_.rank(claim.claim_id, claim.claim, config_.first_stage_depth);
    if (!second_) return lexical;
    return interleave(lexical, second_->rank(claim.claim_id, claim.claim, config_.first_stage_depth));
}

namespace {

void take_blocks(const Retriever& retriever, const RankedDocs& ranking, int budget, AssembledInput& out) {
    for (const auto& entry : ranking.entries) {
        if (budget <= 0) break;
        for (const auto& block : retriever.blocks_of(retriever.corpus().at(entry.doc_id))) {
            if (budget <= 0) break;
            out.blocks.push_back(block);
            out.doc_scores.push_back(entry.score);
            --budget;
        }
    }
}

}  // namespace

AssembledInput Retriever::assemble(const ClaimInstance& claim, std::mt19937_64* gold_rng) const {
    AssembledInput out{claim.claim_id, {}, {}};
    const RankedDocs ranking = first_stage(claim);
    take_blocks(*this, ranking, config_.k1, out);

    if (config_.k2 > 0) {
        RankedDocs contributing{claim.claim_id, {}};
        for (std::size_t b = 0; b < out.blocks.size(); ++b) {
            if (contributing.entries.empty() || contributing.entries.back().doc_id != out.blocks[b].doc_id) {
                contributing.entries.push_back({out.blocks[b].doc_id, out.doc_scores[b]});
            }
        }
        take_blocks(*this, hyperlink_expand(contributing, *corpus_, config_.k2), config_.k2, out);
    }

    if (gold_rng != nullptr && claim.label != Label::Nei && !claim.evidence_groups.empty()) {
        const auto available = input_sentences(out);
        const bool covered = std::any_of(claim.evidence_groups.begin(), claim.evidence_groups.end(),
                                         [&](const auto& g) { return group_covered(g, available); });
        if (!covered) {
            std::vector<Block> missing;
            for (const auto& ref : claim.evidence_groups.front()) {
                const Document* doc = corpus_->find(ref.doc_id);
                if (doc == nullptr) continue;
                for (const auto& block : blocks_of(*doc)) {
                    const bool has = std::find(block.sentence_indices.begin(), block.sentence_indices.end(),
                                               ref.sentence_index) != block.sentence_indices.end();
                    const bool present = std::find(out.blocks.begin(), out.blocks.end(), block) != out.blocks.end();
                    const bool queued = std::find(missing.begin(), missing.end(), block) != missing.end();
                    if (has && !present && !queued) missing.push_back(block);
                }
            }
            const std::size_t capacity = static_cast<std::size_t>(config_.k1 + config_.k2);
            for (const auto& block : missing) {
                while (out.blocks.size() >= capacity && !out.blocks.empty()) {
                    out.blocks.pop_back();
                    out.doc_scores.pop_back();
                }
                std::uniform_int_distribution<std::size_t> pos(0, out.blocks.size());
                const std::size_t at = pos(*gold_rng);
                const double score = at < out.doc_scores.size() ? out.doc_scores[at] : 0.0;
                out.blocks.insert(out.blocks.begin() + static_cast<std::ptrdiff_t>(at), block);
                out.doc_scores.insert(out.doc_scores.begin() + static_cast<std::ptrdiff_t>(at), score);
            }
        }
    }
    return out;
}

AssembledInput assemble_input_blocks(const ClaimInstance& claim, const RetrievalConfig& config, const Corpus& corpus,
                                     const LengthMeasure& measure) {
    Retriever retriever(corpus, config, measure, std::make_unique<TitleMatchRanker>(corpus));
    return retriever.assemble(claim);
}

// ---------------------------------------------------------------------------
// Negatives and recall

std::vector<SentenceRef> rank_input_sentences(const AssembledInput& input) {
    struct Item {
        double score;
        std::size_t order;
        SentenceRef ref;
    };
    std::vector<Item> items;
    for (std::size_t b = 0; b < input.blocks.size(); ++b) {
        const double score = b < input.doc_scores.size() ? input.doc_scores[b] : 0.0;
        for (int s : input.blocks[b].sentence_indices) {
            items.push_back({score, items.size(), SentenceRef{input.blocks[b].doc_id, s}});
        }
    }
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
    std::vector<SentenceRef> out;
    out.reserve(items.size());
    for (auto& item : items) out.push_back(std::move(item.ref));
    return out;
}

std::vector<SentenceRef> mine_negatives(const std::vector<SentenceRef>& ranked, const std::set<SentenceRef>& gold,
                                        int lo, int hi, int n, std::uint64_t seed) {
    std::vector<SentenceRef> pool;
    if (static_cast<int>(ranked.size()) > lo) {
        const std::size_t end = std::min(ranked.size(), static_cast<std::size_t>(std::max(hi, lo)));
        for (std::size_t r = static_cast<std::size_t>(lo); r < end; ++r) {
            if (gold.count(ranked[r]) == 0) pool.push_back(ranked[r]);
        }
    } else {
        std::size_t after = 0;
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            if (gold.count(ranked[r]) > 0) after = r + 1;
        }
        for (std::size_t r = after; r < ranked.size(); ++r) pool.push_back(ranked[r]);
        if (pool.empty()) {
            for (const auto& ref : ranked) {
                if (gold.count(ref) == 0) pool.push_back(ref);
            }
        }
        spdlog::debug("negative mining: only {} ranked sentences (< {}), sampling from {} tail sentences",
                      ranked.size(), lo, pool.size());
    }
    std::mt19937_64 rng(seed);
    const std::size_t take = std::min(pool.size(), static_cast<std::size_t>(std::max(n, 0)));
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(take);
    return pool;
}

bool group_covered(const EvidenceGroup& group, const std::set<SentenceRef>& available) {
    return !group.empty() &&
           std::all_of(group.begin(), group.end(), [&](const auto& ref) { return available.count(ref) > 0; });
}

std::set<SentenceRef> input_sentences(const AssembledInput& input) {
    std::set<SentenceRef> out;
    for (const auto& block : input.blocks) {
        for (int s : block.sentence_indices) out.insert(SentenceRef{block.doc_id, s});
    }
    return out;
}

double recall_at_input(const std::vector<ClaimInstance>& claims, const std::vector<AssembledInput>& inputs) {
    std::unordered_map<std::string, const AssembledInput*> by_id;
    for (const auto& input : inputs) by_id[input.claim_id] = &input;
    std::size_t total = 0;
    std::size_t hits = 0;
    for (const auto& claim : claims) {
        if (claim.label == Label::Nei) continue;
        ++total;
        const auto it = by_id.find(claim.claim_id);
        if (it == by_id.end()) continue;
        const auto available = input_sentences(*it->second);
        if (std::any_of(claim.evidence_groups.begin(), claim.evidence_groups.end(),
                        [&](const auto& g) { return group_covered(g, available); })) {
            ++hits;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Serialization

void write_assembled_inputs(const std::filesystem::path& path, const std::vector<AssembledInput>& inputs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& input : inputs) {
        nlohmann::json blocks = nlohmann::json::array();
        for (std::size_t b = 0; b < input.blocks.size(); ++b) {
            const auto& block = input.blocks[b];
            blocks.push_back({{"doc_id", block.doc_id},
                              {"block_index", block.block_index},
                              {"sentence_indices", block.sentence_indices},
                              {"token_count", block.token_count},
                              {"truncated", block.truncated},
                              {"doc_score", b < input.doc_scores.size() ? input.doc_scores[b] : 0.0}});
        }
        out << nlohmann::json{{"schema", "dissector.blocks/1"}, {"claim_id", input.claim_id}, {"blocks", blocks}}.dump()
            << '\n';
    }
}

std::vector<AssembledInput> read_assembled_inputs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<AssembledInput> out;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto record = nlohmann::json::parse(line);
            AssembledInput input;
            input.claim_id = record.at("claim_id").get<std::string>();
            for (const auto& b : record.at("blocks")) {
                Block block;
                block.doc_id = b.at("doc_id").get<std::string>();
                block.block_index = b.at("block_index").get<int>();
                block.sentence_indices = b.at("sentence_indices").get<std::vector<int>>();
                block.token_count = b.value("token_count", 0);
                block.truncated = b.value("truncated", false);
                input.blocks.push_back(std::move(block));
                input.doc_scores.push_back(b.value("doc_score", 0.0));
            }
            out.push_back(std::move(input));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad blocks record: ") + e.what(), line_number);
        }
    }
    return out;
}

}  // namespace dissector
