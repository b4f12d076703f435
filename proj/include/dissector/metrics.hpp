#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dissector/corpus.hpp"
#include "dissector/model.hpp"

namespace dissector {

double accuracy(const std::vector<Label>& predicted, const std::vector<Label>& gold);

/// True iff some gold group lies wholly inside the top-k of `ranking`.
bool evidence_hit(const std::vector<SentenceRef>& ranking, const std::vector<EvidenceGroup>& groups, std::size_t k = 5);

/// Over non-NEI claims only; 0 when there are none.
double recall_at_5(const std::vector<std::vector<SentenceRef>>& rankings, const std::vector<ClaimInstance>& claims);

/// Correct label plus an evidence hit; NEI claims need only the label.
double fever_score(const std::vector<Label>& predicted, const std::vector<std::vector<SentenceRef>>& rankings,
                   const std::vector<ClaimInstance>& claims);

/// Lowercases, strips punctuation and drops articles and empty tokens.
TokenSeq normalize_for_f1(const TokenSeq& tokens);

/// Max over references of the unigram-overlap F1 after normalization.
double token_f1(const TokenSeq& predicted, const std::vector<TokenSeq>& references);

struct ScoredTokens {
    std::vector<std::string> tokens;
    std::vector<double> scores;
    std::vector<TokenSeq> references;
};

/// Mean token F1 over claims with references when tokens scoring above tau are selected.
double mean_token_f1(const std::vector<ScoredTokens>& claims, double tau);

struct ThresholdResult {
    double tau = 0.0;
    double f1 = 0.0;
};

/// Best tau over `grid`, or over every midpoint between adjacent distinct observed scores.
/// Ties go to the smallest tau.
ThresholdResult tune_threshold(const std::vector<ScoredTokens>& claims,
                               const std::optional<std::vector<double>>& grid = std::nullopt);

/// Surface forms of a claim's rationale annotations, one list per annotator.
std::vector<TokenSeq> rationale_references(const ClaimInstance& claim, const Corpus& corpus);

struct ClaimRecord {
    std::string claim_id;
    Label gold = Label::Nei;
    Label predicted = Label::Nei;
    bool evidence_hit = false;
    bool fever_hit = false;
};

struct EvalReport {
    double accuracy = 0.0;
    double recall_at_5 = 0.0;
    double fever_score = 0.0;
    std::optional<double> rai;
    std::optional<double> token_f1;
    std::optional<double> threshold;
    std::size_t claims = 0;
    std::vector<ClaimRecord> records;

    nlohmann::json to_json(bool with_records = false) const;
};

struct EvalOptions {
    const Corpus* corpus = nullptr;        // needed for token F1
    std::optional<double> threshold;       // fixed tau for token F1
    bool tune_threshold = false;           // tune tau on the evaluated claims
    std::optional<double> rai;
};

/// Predictions are matched to claims by claim id; a missing prediction is an error.
EvalReport evaluate(const std::vector<Prediction>& predictions, const std::vector<ClaimInstance>& claims,
                    const EvalOptions& options = {});

std::vector<ScoredTokens> scored_tokens(const std::vector<Prediction>& predictions,
                                        const std::vector<ClaimInstance>& claims, const Corpus& corpus);

}  // namespace dissector
