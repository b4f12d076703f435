#include "dissector/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace dissector {

std::vector<ClaimInstance> SyntheticDataset::all_claims() const {
    std::vector<ClaimInstance> out = train;
    out.insert(out.end(), dev.begin(), dev.end());
    out.insert(out.end(), conflict.begin(), conflict.end());
    return out;
}

namespace {

class WordPool {
public:
    explicit WordPool(std::mt19937_64& rng) : rng_(rng) {
        for (const char* w : {"a", "an", "the"}) used_.insert(w);
    }

    std::string fresh(int min_syllables, int max_syllables) {
        static const char* const kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                              "br", "dr", "kr", "st", "tr", "pl"};
        static const char* const kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
        std::uniform_int_distribution<int> n_syl(min_syllables, max_syllables);
        std::uniform_int_distribution<std::size_t> onset(0, std::size(kOnsets) - 1);
        std::uniform_int_distribution<std::size_t> vowel(0, std::size(kVowels) - 1);
        for (;;) {
            std::string w;
            const int n = n_syl(rng_);
            for (int s = 0; s < n; ++s) w += std::string(kOnsets[onset(rng_)]) + kVowels[vowel(rng_)];
            if (used_.insert(w).second) return w;
        }
    }

    void reserve(const std::string& w) { used_.insert(w); }

private:
    std::mt19937_64& rng_;
    std::unordered_set<std::string> used_;
};

struct PlannedSentence {
    TokenSeq tokens;
    std::vector<int> rationale_offsets;
    std::string owner;  // claim id of a gold sentence
};

struct TopicDoc {
    std::string doc_id;
    TokenSeq title;
    std::vector<PlannedSentence> sentences;
};

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec) {
    if (spec.n_train < 0 || spec.n_dev < 0 || spec.n_conflict < 0 || spec.topics <= 0 || spec.claims_per_doc <= 0 ||
        spec.min_sentences <= 0 || spec.max_sentences < spec.min_sentences || spec.filler_words < 4) {
        throw ValidationError("invalid synthetic dataset spec");
    }
    std::mt19937_64 rng(spec.seed);
    WordPool words(rng);
    SyntheticDataset data;
    data.support_markers = {"indeed", "confirmed", "truly"};
    data.refute_markers = {"never", "denied", "falsely"};
    for (const auto& m : data.support_markers) words.reserve(m);
    for (const auto& m : data.refute_markers) words.reserve(m);

    std::vector<std::string> topics;
    for (int t = 0; t < spec.topics; ++t) topics.push_back(words.fresh(2, 2));
    std::vector<std::string> filler;
    for (int f = 0; f < spec.filler_words; ++f) filler.push_back(words.fresh(1, 2));
    // Claim-only filler keeps the key as the single token a claim shares with the corpus text.
    std::vector<std::string> claim_filler;
    for (int f = 0; f < 12; ++f) claim_filler.push_back(words.fresh(1, 2));

    auto pick = [&](const std::vector<std::string>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    auto fillers = [&](int n) {
        TokenSeq out;
        for (int i = 0; i < n; ++i) out.push_back(pick(filler));
        return out;
    };
    std::uniform_int_distribution<int> topic_dist(0, spec.topics - 1);

    // A sentence holding `key` and `marker` among two or three filler words.
    auto keyed_sentence = [&](const std::string& key, const std::string& marker, std::vector<int>* offsets) {
        TokenSeq s = fillers(std::uniform_int_distribution<int>(2, 3)(rng));
        const auto key_pos = std::uniform_int_distribution<std::size_t>(0, s.size())(rng);
        s.insert(s.begin() + static_cast<long>(key_pos), key);
        const auto marker_pos = std::uniform_int_distribution<std::size_t>(key_pos + 1, s.size())(rng);
        s.insert(s.begin() + static_cast<long>(marker_pos), marker);
        if (offsets) *offsets = {static_cast<int>(key_pos), static_cast<int>(marker_pos)};
        return s;
    };

    std::vector<std::vector<PlannedSentence>> topic_gold(static_cast<std::size_t>(spec.topics));
    // planted contradictions, keyed by the claim whose gold document receives them
    std::map<std::string, PlannedSentence> contra_of;

    auto make_claims = [&](const std::string& prefix, int n, bool conflict_slice) {
        std::vector<Label> labels;
        for (int i = 0; i < n; ++i) {
            labels.push_back(conflict_slice ? label_from_index(static_cast<std::size_t>(i % 2))
                                            : label_from_index(static_cast<std::size_t>(i % 3)));
        }
        std::shuffle(labels.begin(), labels.end(), rng);
        std::vector<ClaimInstance> claims;
        for (int i = 0; i < n; ++i) {
            ClaimInstance c;
            c.claim_id = prefix + std::to_string(i);
            c.label = labels[static_cast<std::size_t>(i)];
            const int topic = topic_dist(rng);
            const std::string key = words.fresh(3, 3);
            c.claim = {topics[static_cast<std::size_t>(topic)], key, pick(claim_filler), pick(claim_filler)};
            c.claim_text = join_tokens(c.claim);
            const bool conflicting = conflict_slice && i < n / 2;
            if (c.label != Label::Nei) {
                const bool support = c.label == Label::Support;
                PlannedSentence g;
                g.owner = c.claim_id;
                g.tokens = keyed_sentence(key, pick(support ? data.support_markers : data.refute_markers),
                                          &g.rationale_offsets);
                topic_gold[static_cast<std::size_t>(topic)].push_back(std::move(g));
            }
            if (conflicting) {
                data.conflicting_ids.insert(c.claim_id);
                const bool support = c.label == Label::Support;
                PlannedSentence g;
                g.owner = c.claim_id + "#contra";
                g.tokens = keyed_sentence(key, pick(support ? data.refute_markers : data.support_markers),
                                          &g.rationale_offsets);
                contra_of.emplace(c.claim_id, std::move(g));
            }
            claims.push_back(std::move(c));
        }
        return claims;
    };
    data.train = make_claims("train-", spec.n_train, false);
    data.dev = make_claims("dev-", spec.n_dev, false);
    data.conflict = make_claims("conflict-", spec.n_conflict, true);

    std::vector<TopicDoc> docs;
    for (int t = 0; t < spec.topics; ++t) {
        auto& gold = topic_gold[static_cast<std::size_t>(t)];
        std::shuffle(gold.begin(), gold.end(), rng);
        const std::size_t per = static_cast<std::size_t>(spec.claims_per_doc);
        const std::size_t n_docs = std::max<std::size_t>(3, (gold.size() + per - 1) / per);
        for (std::size_t d = 0; d < n_docs; ++d) {
            TopicDoc doc;
            const std::string name = words.fresh(2, 2);
            doc.doc_id = topics[static_cast<std::size_t>(t)] + "_" + name;
            doc.title = {topics[static_cast<std::size_t>(t)], name};
            for (std::size_t g = d * per; g < std::min(gold.size(), (d + 1) * per); ++g) {
                const auto contra = contra_of.find(gold[g].owner);
                doc.sentences.push_back(std::move(gold[g]));
                if (contra != contra_of.end()) doc.sentences.push_back(std::move(contra->second));
            }
            docs.push_back(std::move(doc));
        }
    }

    std::uniform_int_distribution<int> length(spec.min_sentences, spec.max_sentences);
    std::vector<Document> corpus_docs;
    std::map<std::string, std::vector<std::pair<SentenceRef, std::vector<int>>>> gold_refs;
    for (auto& planned : docs) {
        const int target = std::max(length(rng), static_cast<int>(planned.sentences.size()) + 1);
        while (static_cast<int>(planned.sentences.size()) < target) {
            PlannedSentence s;
            s.tokens = fillers(std::uniform_int_distribution<int>(3, 6)(rng));
            planned.sentences.push_back(std::move(s));
        }
        std::shuffle(planned.sentences.begin(), planned.sentences.end(), rng);
        Document doc;
        doc.doc_id = planned.doc_id;
        doc.title = planned.title;
        for (std::size_t i = 0; i < planned.sentences.size(); ++i) {
            auto& s = planned.sentences[i];
            s.tokens.push_back(".");
            if (!s.owner.empty()) {
                gold_refs[s.owner].push_back({SentenceRef{doc.doc_id, static_cast<int>(i)}, s.rationale_offsets});
            }
            doc.sentences.push_back(std::move(s.tokens));
        }
        corpus_docs.push_back(std::move(doc));
    }
    std::sort(corpus_docs.begin(), corpus_docs.end(),
              [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
    data.corpus = Corpus(std::move(corpus_docs));

    for (auto* split : {&data.train, &data.dev, &data.conflict}) {
        for (auto& c : *split) {
            const auto it = gold_refs.find(c.claim_id);
            if (it == gold_refs.end()) continue;
            for (const auto& [ref, offsets] : it->second) {
                c.evidence_groups.push_back({ref});
                TokenReference rationale;
                for (int off : offsets) rationale.push_back(TokenPointer{ref.doc_id, ref.sentence_index, off});
                c.rationales.push_back(std::move(rationale));
            }
        }
    }
    spdlog::debug("synthetic dataset: {} documents, {} train, {} dev, {} conflict claims", data.corpus.size(),
                  data.train.size(), data.dev.size(), data.conflict.size());
    return data;
}

void write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDataset& data) {
    std::filesystem::create_directories(dir);
    write_corpus(dir / "corpus.jsonl", data.corpus);
    write_fever_claims(dir / "train.jsonl", data.train);
    write_fever_claims(dir / "dev.jsonl", data.dev);
    write_fever_claims(dir / "conflict.jsonl", data.conflict);
    std::ofstream ids(dir / "conflicting.jsonl");
    for (const auto& id : data.conflicting_ids) {
        ids << nlohmann::json{{"schema", "dissector.conflicting/1"}, {"claim_id", id}}.dump() << '\n';
    }
}

std::set<std::string> read_conflicting_ids(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::set<std::string> ids;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            ids.insert(nlohmann::json::parse(line).at("claim_id").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad conflicting-id record: ") + e.what(), line_number);
        }
    }
    return ids;
}

}  // namespace dissector
