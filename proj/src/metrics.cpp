#include "dissector/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace dissector {

double accuracy(const std::vector<Label>& predicted, const std::vector<Label>& gold) {
    if (predicted.size() != gold.size()) throw ContractError("prediction and gold counts differ");
    if (gold.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i];
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

bool evidence_hit(const std::vector<SentenceRef>& ranking, const std::vector<EvidenceGroup>& groups, std::size_t k) {
    const std::set<SentenceRef> top(ranking.begin(), ranking.begin() + static_cast<long>(std::min(k, ranking.size())));
    return std::any_of(groups.begin(), groups.end(), [&](const EvidenceGroup& g) {
        return !g.empty() && std::all_of(g.begin(), g.end(), [&](const SentenceRef& s) { return top.count(s) > 0; });
    });
}

double recall_at_5(const std::vector<std::vector<SentenceRef>>& rankings, const std::vector<ClaimInstance>& claims) {
    if (rankings.size() != claims.size()) throw ContractError("ranking and claim counts differ");
    std::size_t total = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < claims.size(); ++i) {
        if (claims[i].label == Label::Nei) continue;
        ++total;
        hits += evidence_hit(rankings[i], claims[i].evidence_groups);
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double fever_score(const std::vector<Label>& predicted, const std::vector<std::vector<SentenceRef>>& rankings,
                   const std::vector<ClaimInstance>& claims) {
    if (predicted.size() != claims.size() || rankings.size() != claims.size()) {
        throw ContractError("prediction, ranking and claim counts differ");
    }
    if (claims.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < claims.size(); ++i) {
        if (predicted[i] != claims[i].label) continue;
        hits += claims[i].label == Label::Nei || evidence_hit(rankings[i], claims[i].evidence_groups);
    }
    return static_cast<double>(hits) / static_cast<double>(claims.size());
}

TokenSeq normalize_for_f1(const TokenSeq& tokens) {
    TokenSeq out;
    for (const auto& t : tokens) {
        std::string w;
        for (unsigned char c : t) {
            if (!std::ispunct(c)) w.push_back(static_cast<char>(std::tolower(c)));
        }
        if (w.empty() || w == "a" || w == "an" || w == "the") continue;
        out.push_back(std::move(w));
    }
    return out;
}

namespace {

using Counts = std::unordered_map<std::string, int>;

Counts count(const TokenSeq& tokens) {
    Counts c;
    for (const auto& t : tokens) ++c[t];
    return c;
}

double f1_from_overlap(int overlap, int predicted, int reference) {
    if (predicted == 0 || reference == 0) return predicted == reference ? 1.0 : 0.0;
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / predicted;
    const double r = static_cast<double>(overlap) / reference;
    return 2.0 * p * r / (p + r);
}

/// Incremental F1 state of one claim as tokens are added to its prediction.
struct F1State {
    std::vector<Counts> refs;
    std::vector<int> ref_sizes;
    std::vector<int> overlap;
    Counts predicted;
    int predicted_size = 0;

    explicit F1State(const std::vector<TokenSeq>& references) {
        for (const auto& r : references) {
            const TokenSeq n = normalize_for_f1(r);
            refs.push_back(count(n));
            ref_sizes.push_back(static_cast<int>(n.size()));
        }
        overlap.assign(refs.size(), 0);
    }

    void add(const std::string& token) {
        const TokenSeq n = normalize_for_f1({token});
        if (n.empty()) return;
        const int before = predicted[n[0]]++;
        ++predicted_size;
        for (std::size_t r = 0; r < refs.size(); ++r) {
            const auto it = refs[r].find(n[0]);
            if (it != refs[r].end() && before < it->second) ++overlap[r];
        }
    }

    double f1() const {
        double best = 0.0;
        for (std::size_t r = 0; r < refs.size(); ++r) {
            best = std::max(best, f1_from_overlap(overlap[r], predicted_size, ref_sizes[r]));
        }
        return best;
    }
};

}  // namespace

double token_f1(const TokenSeq& predicted, const std::vector<TokenSeq>& references) {
    F1State state(references);
    for (const auto& t : predicted) state.add(t);
    return state.f1();
}

double mean_token_f1(const std::vector<ScoredTokens>& claims, double tau) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& c : claims) {
        if (c.references.empty()) continue;
        TokenSeq selected;
        for (std::size_t t = 0; t < c.tokens.size(); ++t) {
            if (c.scores[t] > tau) selected.push_back(c.tokens[t]);
        }
        total += token_f1(selected, c.references);
        ++n;
    }
    return n == 0 ? 0.0 : total / static_cast<double>(n);
}

ThresholdResult tune_threshold(const std::vector<ScoredTokens>& claims, const std::optional<std::vector<double>>& grid) {
    if (grid) {
        if (grid->empty()) throw ContractError("empty threshold grid");
        std::vector<double> sorted = *grid;
        std::sort(sorted.begin(), sorted.end());
        ThresholdResult best{sorted.front(), mean_token_f1(claims, sorted.front())};
        for (std::size_t i = 1; i < sorted.size(); ++i) {
            const double f = mean_token_f1(claims, sorted[i]);
            if (f > best.f1) best = {sorted[i], f};
        }
        return best;
    }

    // Sweep every token from the highest score down; the F1 at a midpoint is the state after
    // adding all tokens scoring above it.
    struct Item {
        double score;
        std::size_t claim;
        std::size_t token;
    };
    std::vector<Item> items;
    std::vector<F1State> states;
    std::vector<std::size_t> state_of(claims.size(), SIZE_MAX);
    for (std::size_t c = 0; c < claims.size(); ++c) {
        if (claims[c].scores.size() != claims[c].tokens.size()) throw ContractError("one score per token expected");
        if (claims[c].references.empty()) continue;
        state_of[c] = states.size();
        states.emplace_back(claims[c].references);
        for (std::size_t t = 0; t < claims[c].tokens.size(); ++t) items.push_back({claims[c].scores[t], c, t});
    }
    if (states.empty()) throw ContractError("no claim carries rationale references");
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
    if (items.empty()) return {0.0, mean_token_f1(claims, 0.0)};

    std::vector<double> per_claim(states.size());
    for (std::size_t s = 0; s < states.size(); ++s) per_claim[s] = states[s].f1();
    const auto mean = [&] {
        double total = 0.0;
        for (double f : per_claim) total += f;
        return total / static_cast<double>(per_claim.size());
    };

    std::vector<std::pair<double, double>> candidates;  // (tau, f1)
    std::size_t i = 0;
    while (i < items.size()) {
        const double s = items[i].score;
        while (i < items.size() && items[i].score == s) {
            const std::size_t st = state_of[items[i].claim];
            states[st].add(claims[items[i].claim].tokens[items[i].token]);
            per_claim[st] = states[st].f1();
            ++i;
        }
        if (i < items.size()) candidates.emplace_back(0.5 * (s + items[i].score), mean());
    }
    if (candidates.empty()) {
        // A single distinct score: the only split selects everything.
        const double tau = items.front().score - 1.0;
        return {tau, mean()};
    }
    ThresholdResult best{candidates.front().first, candidates.front().second};
    for (const auto& [tau, f] : candidates) {
        if (f > best.f1 + 1e-12) {
            best = {tau, f};
        } else if (f >= best.f1 - 1e-12 && tau < best.tau) {
            best.tau = tau;
        }
    }
    return best;
}

std::vector<TokenSeq> rationale_references(const ClaimInstance& claim, const Corpus& corpus) {
    std::vector<TokenSeq> out;
    for (const auto& ref : claim.rationales) {
        TokenSeq tokens;
        for (const auto& p : ref) {
            const Document& doc = corpus.at(p.doc_id);
            const auto& sentence = doc.sentences.at(static_cast<std::size_t>(p.sentence_index));
            tokens.push_back(sentence.at(static_cast<std::size_t>(p.token_offset)));
        }
        out.push_back(std::move(tokens));
    }
    return out;
}

std::vector<ScoredTokens> scored_tokens(const std::vector<Prediction>& predictions,
                                        const std::vector<ClaimInstance>& claims, const Corpus& corpus) {
    std::map<std::string, const Prediction*> by_id;
    for (const auto& p : predictions) by_id[p.claim_id] = &p;
    std::vector<ScoredTokens> out;
    for (const auto& c : claims) {
        const auto it = by_id.find(c.claim_id);
        if (it == by_id.end()) throw ValidationError("no prediction for claim " + c.claim_id);
        ScoredTokens s;
        for (const auto& t : it->second->tokens) {
            s.tokens.push_back(t.token);
            s.scores.push_back(t.score);
        }
        s.references = rationale_references(c, corpus);
        out.push_back(std::move(s));
    }
    return out;
}

EvalReport evaluate(const std::vector<Prediction>& predictions, const std::vector<ClaimInstance>& claims,
                    const EvalOptions& options) {
    std::map<std::string, const Prediction*> by_id;
    for (const auto& p : predictions) by_id[p.claim_id] = &p;
    std::vector<Label> predicted;
    std::vector<Label> gold;
    std::vector<std::vector<SentenceRef>> rankings;
    EvalReport report;
    for (const auto& c : claims) {
        const auto it = by_id.find(c.claim_id);
        if (it == by_id.end()) throw ValidationError("no prediction for claim " + c.claim_id);
        predicted.push_back(it->second->label());
        gold.push_back(c.label);
        rankings.push_back(it->second->ranking());
        ClaimRecord r;
        r.claim_id = c.claim_id;
        r.gold = c.label;
        r.predicted = predicted.back();
        r.evidence_hit = c.label != Label::Nei && evidence_hit(rankings.back(), c.evidence_groups);
        r.fever_hit = r.predicted == r.gold && (c.label == Label::Nei || r.evidence_hit);
        report.records.push_back(std::move(r));
    }
    report.claims = claims.size();
    report.accuracy = accuracy(predicted, gold);
    report.recall_at_5 = recall_at_5(rankings, claims);
    report.fever_score = fever_score(predicted, rankings, claims);
    report.rai = options.rai;

    const bool any_rationales =
        std::any_of(claims.begin(), claims.end(), [](const ClaimInstance& c) { return !c.rationales.empty(); });
    if (options.corpus && any_rationales && (options.threshold || options.tune_threshold)) {
        const auto scored = scored_tokens(predictions, claims, *options.corpus);
        if (options.tune_threshold) {
            const ThresholdResult t = tune_threshold(scored);
            report.threshold = t.tau;
            report.token_f1 = t.f1;
        } else {
            report.threshold = *options.threshold;
            report.token_f1 = mean_token_f1(scored, *options.threshold);
        }
    }
    return report;
}

nlohmann::json EvalReport::to_json(bool with_records) const {
    nlohmann::json j = {{"schema", "dissector.eval/1"},
                        {"claims", claims},
                        {"accuracy", accuracy},
                        {"recall_at_5", recall_at_5},
                        {"fever_score", fever_score}};
    if (rai) j["rai"] = *rai;
    if (token_f1) j["token_f1"] = *token_f1;
    if (threshold) j["threshold"] = *threshold;
    if (with_records) {
        auto& recs = j["records"] = nlohmann::json::array();
        for (const auto& r : records) {
            recs.push_back({{"claim_id", r.claim_id},
                            {"gold", label_name(r.gold)},
                            {"predicted", label_name(r.predicted)},
                            {"evidence_hit", r.evidence_hit},
                            {"fever_hit", r.fever_hit}});
        }
    }
    return j;
}

}  // namespace dissector
