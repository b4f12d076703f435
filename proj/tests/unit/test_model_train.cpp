#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "dissector/masker.hpp"
#include "pipeline.hpp"

using namespace dissector;
using namespace dissector::testing;

namespace {

const TinyPipeline& pipeline() {
    static const TinyPipeline p;
    return p;
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "dissector_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<Matrix> values(std::span<ParameterSet* const> sets) {
    std::vector<Matrix> out;
    for (const ParameterSet* s : sets) {
        for (const auto& p : s->items()) out.push_back(p->value);
    }
    return out;
}

TrainConfig quick_train(long long steps) {
    TrainConfig t;
    t.batch_size = 4;
    t.lr = 2e-3;
    t.warmup_steps = 5;
    t.max_steps = steps;
    t.eval_every = 10;
    return t;
}

}  // namespace

TEST_CASE("prepared claims index every sentence that has evidence tokens") {
    const TinyPipeline& p = pipeline();
    for (const PreparedClaim& c : p.train.prepared) {
        CHECK(c.sequences.size() == c.blocks.size());
        std::set<SentenceRef> with_tokens;
        for (const auto& seq : c.sequences) {
            for (const auto& t : seq.evidence_provenance) {
                const auto& s = seq.sentences.at(static_cast<std::size_t>(t.sentence));
                with_tokens.insert(SentenceRef{s.doc_id, s.doc_sentence});
                CHECK(c.keys.at(SentenceRef{s.doc_id, s.doc_sentence}) == SentenceKey{t.block, t.sentence});
            }
        }
        CHECK(with_tokens.size() == c.keys.size());
        const auto ranked = c.ranked_sentences();
        CHECK(std::set<SentenceRef>(ranked.begin(), ranked.end()) == with_tokens);
    }
}

TEST_CASE("training targets: gold at the label, negatives never gold, blocks disjoint") {
    const TinyPipeline& p = pipeline();
    const NegativeSampling neg{0, 40, 3};
    for (std::size_t i = 0; i < p.train.claims.size(); ++i) {
        const ClaimInstance& claim = p.train.claims[i];
        const PreparedClaim& prepared = p.train.prepared[i];
        const TrainingTargets t = build_targets(claim, prepared, neg, 11);
        if (claim.label == Label::Nei) {
            CHECK(t.sentence.empty());
            CHECK(t.block.positives.empty());
            continue;
        }
        const auto gold_list = claim.gold_sentences();
        const std::set<SentenceRef> gold(gold_list.begin(), gold_list.end());
        std::set<SentenceKey> gold_keys;
        for (const auto& ref : gold) {
            if (prepared.keys.count(ref)) gold_keys.insert(prepared.keys.at(ref));
        }
        // gold is injected into training inputs
        CHECK_FALSE(gold_keys.empty());
        std::set<int> positive_blocks;
        for (const auto& a : t.baseline.positives) {
            CHECK(a.cls == class_index(claim.label));
            CHECK(gold_keys.count({a.block, a.sentence}));
            positive_blocks.insert(a.block);
        }
        CHECK(t.baseline.positives.size() == gold_keys.size());
        CHECK(t.baseline.negatives.size() <= 3);
        for (const auto& k : t.baseline.negatives) CHECK_FALSE(gold_keys.count(k));
        CHECK(t.irrelevant == t.baseline.negatives);
        CHECK(t.sentence.size() == t.baseline.positives.size() + t.baseline.negatives.size());
        CHECK(t.block.positives.size() == positive_blocks.size());
        for (const auto& k : t.block.negatives) CHECK_FALSE(positive_blocks.count(k.first));
        const TrainingTargets again = build_targets(claim, prepared, neg, 11);
        CHECK(again.baseline.negatives == t.baseline.negatives);
    }
}

TEST_CASE("predictions are consistent with the score matrix") {
    const TinyPipeline& p = pipeline();
    for (const std::string head : {"dissector", "baseline"}) {
        const VerifierModel model = p.model(head);
        for (std::size_t i = 0; i < 5; ++i) {
            const PreparedClaim& c = p.dev.prepared[i];
            const ScoreMatrix m = model.score(c);
            const Prediction pred = predict(model, c);
            CHECK(pred.head == head);
            CHECK(pred.veracity.p[0] + pred.veracity.p[1] + pred.veracity.p[2] == doctest::Approx(1.0));
            const VeracityDistribution e = ensemble_veracity(m);
            for (std::size_t k = 0; k < 3; ++k) CHECK(pred.veracity[k] == doctest::Approx(e[k]).epsilon(1e-12));
            CHECK(pred.sentences.size() == m.provenances().size());
            CHECK(pred.tokens.size() == static_cast<std::size_t>(m.rows()));
            for (const auto& t : pred.tokens) CHECK((t.score >= 0.0 && t.score <= 1.0 + 1e-12));
            if (head == "dissector") {
                for (std::size_t s = 1; s < pred.sentences.size(); ++s) {
                    CHECK(pred.sentences[s - 1].score >= pred.sentences[s].score - 1e-12);
                }
            }
            CHECK(pred.ranking().size() == pred.sentences.size());
        }
    }
}

TEST_CASE("prediction JSONL round-trip carries a schema field") {
    const TinyPipeline& p = pipeline();
    const VerifierModel model = p.model();
    const auto preds = predict_all(model, std::vector<PreparedClaim>(p.dev.prepared.begin(), p.dev.prepared.begin() + 3));
    const auto path = scratch("predictions.jsonl");
    write_predictions(path, preds);
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    CHECK(nlohmann::json::parse(first).at("schema") == "dissector.predictions/1");
    const auto back = read_predictions(path);
    REQUIRE(back.size() == preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        CHECK(back[i].claim_id == preds[i].claim_id);
        CHECK(back[i].label() == preds[i].label());
        CHECK(back[i].veracity[0] == preds[i].veracity[0]);
        REQUIRE(back[i].sentences.size() == preds[i].sentences.size());
        CHECK(back[i].sentences.front().doc_id == preds[i].sentences.front().doc_id);
        CHECK(back[i].tokens.size() == preds[i].tokens.size());
        CHECK(back[i].conflicting == preds[i].conflicting);
    }
    std::ofstream(path, std::ios::app) << "{broken\n";
    CHECK_THROWS_AS(read_predictions(path), ParseError);
}

TEST_CASE("claim objective dispatches on head and supervision") {
    const TinyPipeline& p = pipeline();
    std::size_t idx = 0;
    while (p.train.claims[idx].label == Label::Nei) ++idx;
    const ClaimInstance& claim = p.train.claims[idx];
    const PreparedClaim& prepared = p.train.prepared[idx];
    TrainConfig cfg;
    const long long step = 12;
    const std::uint64_t seed = mix_seed(cfg.seed, claim.claim_id, static_cast<std::uint64_t>(step));
    const TrainingTargets targets = build_targets(claim, prepared, cfg.negatives, seed);

    const VerifierModel dissector = p.model();
    const ScoreMatrix m = dissector.score(prepared);
    CHECK(claim_objective(dissector, m, claim, prepared, cfg, step).value ==
          doctest::Approx(total_loss(m, targets.sentence, claim.label, {cfg.lambda_r, cfg.lambda_2}).value));
    cfg.supervision = Supervision::Block;
    CHECK(claim_objective(dissector, m, claim, prepared, cfg, step).value ==
          doctest::Approx(block_supervised_loss(m, targets.block, claim.label, 0.0, seed ^ 0x5bd1e995ULL,
                                                {cfg.block_lambda_r, cfg.lambda_2})
                              .value));

    const VerifierModel baseline = p.model("b3");
    const ScoreMatrix mb = baseline.score(prepared);
    CHECK(claim_objective(baseline, mb, claim, prepared, cfg, step).value ==
          doctest::Approx(baseline_objective(mb, targets.baseline, claim.label, {BaselineVariant::B3, 0.5},
                                             targets.irrelevant)
                              .value));
}

TEST_CASE("training is deterministic, improves the objective and restores the best checkpoint") {
    const TinyPipeline& p = pipeline();
    const TrainConfig cfg = quick_train(60);
    VerifierModel a = p.model();
    VerifierModel b = p.model();
    const TrainResult ra = train_verifier(a, p.train, p.dev, cfg);
    const TrainResult rb = train_verifier(b, p.train, p.dev, cfg);
    CHECK(ra.losses == rb.losses);
    CHECK(values(a.parameter_sets()) == values(b.parameter_sets()));
    REQUIRE(ra.losses.size() == 60);
    REQUIRE(ra.evals.size() == 6);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
        head += ra.losses[static_cast<std::size_t>(i)];
        tail += ra.losses[ra.losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(tail > head);

    // the restored model reproduces the best evaluation
    const EvalReport best = evaluate(predict_all(a, p.dev.prepared), p.dev.claims, EvalOptions{nullptr, std::nullopt, false, p.dev.rai});
    CHECK(best.fever_score == doctest::Approx(ra.best_fever_score));
    for (const auto& e : ra.evals) CHECK(e.report.fever_score <= ra.best_fever_score);
}

TEST_CASE("zero steps evaluates once and leaves the model untouched") {
    const TinyPipeline& p = pipeline();
    VerifierModel model = p.model();
    const auto before = values(model.parameter_sets());
    const TrainResult r = train_verifier(model, p.train, p.dev, quick_train(0));
    CHECK(r.losses.empty());
    REQUIRE(r.evals.size() == 1);
    CHECK(r.evals[0].step == 0);
    CHECK(values(model.parameter_sets()) == before);

    TrainConfig bad = quick_train(5);
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_verifier(model, p.train, p.dev, bad), ValidationError);
}

TEST_CASE("checkpoints and configs round-trip") {
    const TinyPipeline& p = pipeline();
    const VerifierModel model = p.model("b2", 21);
    const auto path = scratch("model.json");
    save_checkpoint(path, model, {{"note", "x"}});
    nlohmann::json extra;
    const auto loaded = load_checkpoint(path, &extra);
    CHECK(extra.at("note") == "x");
    CHECK(loaded->spec().head_name == "b2");
    const PreparedClaim& c = p.dev.prepared[0];
    CHECK(loaded->score(c).logits() == model.score(c).logits());

    const MaskerModel masker(model, 4);
    MaskerConfig mc;
    mc.lambda_s = 0.4;
    save_masker(scratch("masker.json"), masker, mc);
    MaskerConfig mc_back;
    const auto masker_back = load_masker(scratch("masker.json"), &mc_back);
    CHECK(mc_back.lambda_s == 0.4);
    CHECK(masker_back->logits(c) == masker.logits(c));

    TrainConfig t = quick_train(7);
    t.supervision = Supervision::BlockSse;
    t.sse.p_max = 0.5;
    const TrainConfig t_back = TrainConfig::from_json(t.to_json());
    CHECK(t_back.max_steps == 7);
    CHECK(t_back.supervision == Supervision::BlockSse);
    CHECK(t_back.sse.p_max == 0.5);
    const ModelSpec spec = ModelSpec::from_json(model.spec().to_json());
    CHECK(spec.head_name == "b2");
    CHECK(spec.encoder.dim == 16);
}

TEST_CASE("masker training keeps the dissector frozen") {
    const TinyPipeline& p = pipeline();
    VerifierModel dissector = p.model();
    MaskerModel masker(dissector, 8);
    const auto frozen = values(dissector.parameter_sets());
    const auto masker_before = values(masker.parameter_sets());
    MaskerTrainConfig cfg;
    cfg.steps = 6;
    cfg.batch_size = 2;
    const MaskerTrainResult r = train_masker(masker, dissector, p.train, cfg);
    CHECK(r.losses.size() == 6);
    for (double l : r.losses) CHECK(std::isfinite(l));
    CHECK(values(dissector.parameter_sets()) == frozen);
    CHECK(values(masker.parameter_sets()) != masker_before);

    const auto preds = masker_predictions(masker, dissector, {p.dev.prepared[0]});
    const Prediction plain = predict(dissector, p.dev.prepared[0]);
    const RationaleScores r0 = extract_masker_rationales(masker, p.dev.prepared[0]);
    CHECK(preds[0].head == "masker");
    CHECK(preds[0].veracity[0] == plain.veracity[0]);
    for (std::size_t t = 0; t < r0.scores.size(); ++t) CHECK(preds[0].tokens[t].score == r0.scores[t]);

    PreparedSplit nei_only;
    for (std::size_t i = 0; i < p.train.claims.size(); ++i) {
        if (p.train.claims[i].label != Label::Nei) continue;
        nei_only.claims.push_back(p.train.claims[i]);
        nei_only.prepared.push_back(p.train.prepared[i]);
    }
    CHECK_THROWS_AS(train_masker(masker, dissector, nei_only, cfg), ValidationError);
}
