#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dissector/retrieval.hpp"

using namespace dissector;

namespace {

const std::filesystem::path kFixtures = DISSECTOR_FIXTURES;

int token_length(const TokenSeq& t) { return static_cast<int>(t.size()); }

// title + sentences: a -> 5 terms, b -> 3 terms, c -> 2 terms ("." is not a term)
Corpus three_docs() {
    return Corpus({Document{"a", {"A"}, {{"cat", "sat"}, {"Cat", "ran"}}, {}},
                   Document{"b", {"B"}, {{"dog", "sat"}}, {}},
                   Document{"c", {"C"}, {{"bird", "."}}, {}}});
}

RankedDocs ranked(std::initializer_list<const char*> ids) {
    RankedDocs r;
    double s = static_cast<double>(ids.size());
    for (const char* id : ids) r.entries.push_back({id, s--});
    return r;
}

}  // namespace

TEST_CASE("BM25 matches a hand computation") {
    const Corpus corpus = three_docs();
    const Bm25Index index(corpus);
    const double avg = 10.0 / 3.0;
    const double idf_cat = std::log(1.0 + (3 - 1 + 0.5) / (1 + 0.5));
    const double idf_sat = std::log(1.0 + (3 - 2 + 0.5) / (2 + 0.5));
    CHECK(index.idf("cat") == doctest::Approx(idf_cat).epsilon(1e-12));
    CHECK(index.idf("sat") == doctest::Approx(idf_sat).epsilon(1e-12));
    CHECK(index.idf("unseen") == doctest::Approx(std::log(1.0 + 3.5 / 0.5)));

    const double norm_a = 0.9 * (1 - 0.4 + 0.4 * 5 / avg);
    const double norm_b = 0.9 * (1 - 0.4 + 0.4 * 3 / avg);
    const double expect_a = idf_cat * 2 * 1.9 / (2 + norm_a) + idf_sat * 1 * 1.9 / (1 + norm_a);
    const double expect_b = idf_sat * 1 * 1.9 / (1 + norm_b);
    const TokenSeq query{"Cat", "sat", "sat", "?"};
    CHECK(index.score(query, 0) == doctest::Approx(expect_a).epsilon(1e-12));
    CHECK(index.score(query, 1) == doctest::Approx(expect_b).epsilon(1e-12));
    CHECK(index.score(query, 2) == 0.0);

    const RankedDocs r = bm25_rank(query, index, 10, "q");
    CHECK(r.claim_id == "q");
    CHECK(r.doc_ids() == std::vector<std::string>{"a", "b"});
    CHECK(bm25_rank(query, index, 1).doc_ids() == std::vector<std::string>{"a"});
    CHECK(bm25_rank({}, index, 5).entries.empty());
}

TEST_CASE("interleave alternates sources and spends a turn only on a new document") {
    CHECK(interleave(ranked({"X", "Y"}), ranked({"X", "Z"})).doc_ids() == std::vector<std::string>{"X", "Z", "Y"});
    CHECK(interleave(ranked({"A", "B", "C"}), ranked({"D"})).doc_ids() ==
          std::vector<std::string>{"A", "D", "B", "C"});
    CHECK(interleave(ranked({}), ranked({"P", "Q"})).doc_ids() == std::vector<std::string>{"P", "Q"});
    CHECK(interleave(ranked({"A", "B"}), ranked({"B", "A", "C"})).doc_ids() ==
          std::vector<std::string>{"A", "B", "C"});
}

TEST_CASE("interleave output is a duplicate-free union with non-increasing scores") {
    std::mt19937_64 rng(11);
    const std::vector<std::string> pool{"a", "b", "c", "d", "e", "f", "g", "h"};
    for (int trial = 0; trial < 300; ++trial) {
        RankedDocs x, y;
        for (const auto& id : pool) {
            if (rng() % 2) x.entries.push_back({id, 0.0});
            if (rng() % 2) y.entries.push_back({id, 0.0});
        }
        std::shuffle(x.entries.begin(), x.entries.end(), rng);
        std::shuffle(y.entries.begin(), y.entries.end(), rng);
        const RankedDocs out = interleave(x, y);
        std::set<std::string> expected;
        for (const auto& e : x.entries) expected.insert(e.doc_id);
        for (const auto& e : y.entries) expected.insert(e.doc_id);
        const auto ids = out.doc_ids();
        CHECK(std::set<std::string>(ids.begin(), ids.end()) == expected);
        CHECK(ids.size() == expected.size());
        for (std::size_t i = 1; i < out.entries.size(); ++i) CHECK(out.entries[i - 1].score > out.entries[i].score);
        if (!x.entries.empty()) CHECK(ids.front() == x.entries.front().doc_id);
    }
}

TEST_CASE("hyperlink expansion follows rank then offset and skips seen or dangling targets") {
    Corpus corpus({Document{"p", {"p"}, {{"one"}, {"two"}}, {{"z", 4}, {"q", 0}, {"missing", 1}}},
                   Document{"q", {"q"}, {{"x"}}, {{"r", 0}, {"p", 0}}},
                   Document{"r", {"r"}, {{"y"}}, {}},
                   Document{"z", {"z"}, {{"w"}}, {}}});
    CHECK(hyperlink_expand(ranked({"p"}), corpus, 5).doc_ids() == std::vector<std::string>{"q", "z"});
    CHECK(hyperlink_expand(ranked({"q", "p"}), corpus, 5).doc_ids() == std::vector<std::string>{"r", "z"});
    CHECK(hyperlink_expand(ranked({"p"}), corpus, 1).doc_ids() == std::vector<std::string>{"q"});
    CHECK(hyperlink_expand(ranked({"p"}), corpus, 0).entries.empty());
}

TEST_CASE("assembled input takes K1 blocks in ranked order, then K2 linked blocks") {
    const Corpus corpus = load_corpus(kFixtures / "wiki_small.jsonl");
    RetrievalConfig cfg;
    cfg.k1 = 1;
    cfg.k2 = 1;
    cfg.block_budget = 6;
    Retriever retriever(corpus, cfg, token_length);
    ClaimInstance claim;
    claim.claim_id = "q";
    claim.claim = tokenize("Proxima dwarf");
    const AssembledInput input = retriever.assemble(claim);
    REQUIRE(input.blocks.size() == 2);
    CHECK(input.blocks[0].doc_id == "Proxima");
    CHECK(input.blocks[0].block_index == 0);
    // Proxima's first anchor points at Red_dwarf
    CHECK(input.blocks[1].doc_id == "Red_dwarf");
    CHECK(input.doc_scores.size() == input.blocks.size());
}

TEST_CASE("gold injection makes every non-NEI claim covered without exceeding K1 + K2") {
    const Corpus corpus = load_corpus(kFixtures / "wiki_small.jsonl");
    const auto claims = load_fever_claims(kFixtures / "claims_small.jsonl");
    RetrievalConfig cfg;
    cfg.k1 = 1;
    cfg.block_budget = 4;
    Retriever retriever(corpus, cfg, token_length);
    std::vector<AssembledInput> plain, injected;
    for (const auto& c : claims) {
        std::mt19937_64 rng(5);
        plain.push_back(retriever.assemble(c));
        injected.push_back(retriever.assemble(c, &rng));
        CHECK(injected.back().blocks.size() <= 2u);
    }
    CHECK(recall_at_input(claims, injected) == 1.0);
    CHECK(recall_at_input(claims, plain) <= 1.0);
    // NEI claims never receive injected blocks
    CHECK(injected[2].blocks == plain[2].blocks);
}

TEST_CASE("recall at input counts a claim when one whole group is present") {
    ClaimInstance a{"a", "", {}, Label::Support, {{{"d", 0}, {"e", 1}}, {{"f", 0}}}, {}};
    ClaimInstance b{"b", "", {}, Label::Refute, {{{"d", 0}, {"e", 1}}}, {}};
    ClaimInstance n{"n", "", {}, Label::Nei, {}, {}};
    AssembledInput ia{"a", {Block{"f", 0, {0}, 1, false}}, {1.0}};
    AssembledInput ib{"b", {Block{"d", 0, {0, 1}, 2, false}}, {1.0}};
    CHECK(recall_at_input({a, b, n}, {ia, ib}) == doctest::Approx(0.5));
    CHECK(recall_at_input({n}, {}) == 0.0);
}

TEST_CASE("mined negatives come from the rank window, avoid gold and are reproducible") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const int size = std::uniform_int_distribution<int>(0, 60)(rng);
        std::vector<SentenceRef> list;
        for (int i = 0; i < size; ++i) list.push_back({"d" + std::to_string(i / 5), i % 5});
        std::set<SentenceRef> gold;
        for (const auto& r : list) {
            if (rng() % 6 == 0) gold.insert(r);
        }
        const int lo = std::uniform_int_distribution<int>(0, 20)(rng);
        const int hi = lo + std::uniform_int_distribution<int>(1, 30)(rng);
        const int n = std::uniform_int_distribution<int>(0, 10)(rng);
        const auto neg = mine_negatives(list, gold, lo, hi, n, 99);
        CHECK(neg == mine_negatives(list, gold, lo, hi, n, 99));
        CHECK(static_cast<int>(neg.size()) <= n);
        CHECK(std::set<SentenceRef>(neg.begin(), neg.end()).size() == neg.size());
        for (const auto& r : neg) {
            CHECK(gold.count(r) == 0);
            const auto pos = std::find(list.begin(), list.end(), r) - list.begin();
            if (size > lo) {
                CHECK(pos >= lo);
                CHECK(pos < hi);
            }
        }
        if (size > lo) {
            int available = 0;
            for (int i = lo; i < std::min(hi, size); ++i) available += gold.count(list[static_cast<std::size_t>(i)]) == 0;
            CHECK(static_cast<int>(neg.size()) == std::min(n, available));
        }
    }
}

TEST_CASE("short rankings fall back to sentences after the last gold one") {
    const std::vector<SentenceRef> list{{"a", 0}, {"a", 1}, {"b", 0}, {"b", 1}, {"c", 0}};
    const auto neg = mine_negatives(list, {{"a", 1}}, 50, 200, 10, 1);
    CHECK(std::set<SentenceRef>(neg.begin(), neg.end()) == std::set<SentenceRef>{{"b", 0}, {"b", 1}, {"c", 0}});
}

TEST_CASE("input sentences are ranked by document score, ties in input order") {
    AssembledInput in{"q",
                      {Block{"x", 0, {0, 1}, 2, false}, Block{"y", 0, {0}, 1, false}, Block{"x", 1, {2}, 1, false}},
                      {1.0, 2.0, 1.0}};
    CHECK(rank_input_sentences(in) == std::vector<SentenceRef>{{"y", 0}, {"x", 0}, {"x", 1}, {"x", 2}});
}

TEST_CASE("assembled inputs round-trip through JSONL") {
    const auto path = std::filesystem::temp_directory_path() / "dissector_blocks_test.jsonl";
    const std::vector<AssembledInput> in{{"q", {Block{"x", 0, {0, 1}, 7, false}, Block{"y", 2, {5}, 9, true}}, {2.5, 1.0}},
                                         {"r", {}, {}}};
    write_assembled_inputs(path, in);
    const auto out = read_assembled_inputs(path);
    REQUIRE(out.size() == 2);
    CHECK(out[0].blocks == in[0].blocks);
    CHECK(out[0].doc_scores == in[0].doc_scores);
    CHECK(out[1].claim_id == "r");
}

TEST_CASE("retrieval config rejects empty inputs and inverted negative windows") {
    RetrievalConfig cfg;
    cfg.k1 = 0;
    cfg.k2 = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.k1 = 1;
    cfg.negative_lo = 10;
    cfg.negative_hi = 10;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
