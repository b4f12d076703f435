#include "dissector/model.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace dissector {

using nlohmann::json;

std::vector<SentenceRef> PreparedClaim::ranked_sentences() const {
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = a < doc_scores.size() ? doc_scores[a] : 0.0;
        const double sb = b < doc_scores.size() ? doc_scores[b] : 0.0;
        return sa > sb;
    });
    std::vector<SentenceRef> out;
    for (std::size_t b : order) {
        for (const auto& s : sequences[b].sentences) {
            SentenceRef ref{s.doc_id, s.doc_sentence};
            if (keys.count(ref)) out.push_back(std::move(ref));
        }
    }
    return out;
}

PreparedClaim prepare_claim(const ClaimInstance& claim, const AssembledInput& input, const Corpus& corpus,
                            const Vocabulary& vocab, int max_length) {
    PreparedClaim out;
    out.claim_id = claim.claim_id;
    out.label = claim.label;
    out.blocks = input.blocks;
    out.doc_scores = input.doc_scores;
    for (std::size_t b = 0; b < input.blocks.size(); ++b) {
        const Block& block = input.blocks[b];
        auto seq = build_input_sequence(claim.claim, block, corpus.at(block.doc_id), max_length, vocab,
                                        static_cast<int>(b));
        std::set<int> with_tokens;
        for (const auto& t : seq.evidence_provenance) with_tokens.insert(t.sentence);
        for (const auto& s : seq.sentences) {
            if (with_tokens.count(s.sentence)) out.keys[SentenceRef{s.doc_id, s.doc_sentence}] = {s.block, s.sentence};
        }
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

json ModelSpec::to_json() const {
    return {{"encoder", encoder.to_json()}, {"head", head.to_json()}, {"head_name", head_name}};
}

ModelSpec ModelSpec::from_json(const json& j) {
    ModelSpec s;
    s.encoder = TransformerConfig::from_json(j.at("encoder"));
    s.head = HeadConfig::from_json(j.at("head"));
    s.head_name = j.value("head_name", s.head_name);
    return s;
}

VerifierModel::VerifierModel(ModelSpec spec, Vocabulary vocab, std::uint64_t seed)
    : spec_(std::move(spec)),
      encoder_(std::make_unique<TinyTransformerEncoder>(spec_.encoder, std::move(vocab), mix_seed(seed, "encoder", 0))),
      head_(spec_.head, mix_seed(seed, "head", 0)) {
    if (spec_.head.dim != spec_.encoder.dim) throw ValidationError("head width differs from encoder width");
    if (spec_.is_baseline()) parse_baseline_variant(spec_.head_name);
}

ForwardResult VerifierModel::forward(Graph& graph, const PreparedClaim& claim,
                                     const std::vector<EmbeddingHook>& hooks) const {
    ForwardResult out;
    out.reps = encode_blocks(graph, claim.sequences, *encoder_, hooks);
    out.scores = head_.forward(graph, out.reps.evidence, out.reps.markers);
    return out;
}

ScoreMatrix VerifierModel::score(const PreparedClaim& claim) const {
    Graph graph(false);
    return forward(graph, claim).matrix();
}

std::size_t VerifierModel::scalar_count() const {
    return encoder_->parameters().scalar_count() + head_.parameters().scalar_count();
}

std::vector<SentenceRef> Prediction::ranking() const {
    std::vector<SentenceRef> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) out.push_back(SentenceRef{s.doc_id, s.sentence_index});
    return out;
}

Prediction make_prediction(const std::string& claim_id, const ScoreMatrix& m, const PreparedClaim& claim,
                           const std::vector<std::string>& evidence_tokens,
                           const std::vector<TokenProvenance>& evidence_provenance, bool baseline,
                           double conflict_threshold) {
    Prediction out;
    out.claim_id = claim_id;
    out.head = baseline ? "baseline" : "dissector";

    auto sentence_info = [&](std::size_t p) {
        const auto& prov = m.provenance(p);
        const auto& seq = claim.sequences.at(static_cast<std::size_t>(prov.block));
        const auto& s = seq.sentences.at(static_cast<std::size_t>(prov.sentence));
        return SentencePrediction{s.doc_id, s.doc_sentence, prov.block, prov.sentence, Eigen::Vector3d::Zero(), 0.0};
    };

    std::vector<Eigen::Vector3d> marginals;
    std::vector<std::size_t> ranking;
    Matrix token_dist(m.rows(), kNumClasses);
    if (baseline) {
        const BaselineVerdict verdict = baseline_rank_and_verdict(m);
        out.veracity = verdict.veracity;
        ranking = verdict.ranking;
        const JointDistribution joint = joint_distribution(m);
        for (std::size_t p = 0; p < m.provenances().size(); ++p) marginals.push_back(sentence_marginal(m, joint, p));
        token_dist = joint.p;
    } else {
        out.veracity = ensemble_veracity(m);
        ranking = rank_provenances(m);
        marginals = all_provenance_marginals(m);
        for (std::size_t p = 0; p < m.provenances().size(); ++p) {
            const auto& prov = m.provenance(p);
            token_dist.middleRows(prov.row_begin, prov.row_count) = provenance_distribution(m, p);
        }
    }
    for (std::size_t p : ranking) {
        SentencePrediction s = sentence_info(p);
        s.p = marginals[p];
        s.score = std::clamp(s.p(kSupport) + s.p(kRefute), 0.0, 1.0);
        out.sentences.push_back(std::move(s));
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const auto& t = evidence_provenance.at(static_cast<std::size_t>(r));
        TokenPrediction tok;
        tok.doc_id = claim.blocks.at(static_cast<std::size_t>(t.block)).doc_id;
        tok.sentence_index = t.doc_sentence;
        tok.token_offset = t.token_offset;
        tok.token = evidence_tokens.at(static_cast<std::size_t>(r));
        tok.score = token_dist(r, kSupport) + token_dist(r, kRefute);
        out.tokens.push_back(std::move(tok));
    }
    out.conflicting = detect_conflicting(marginals, conflict_threshold);
    return out;
}

Prediction predict(const VerifierModel& model, const PreparedClaim& claim, double conflict_threshold) {
    Graph graph(false);
    const ForwardResult fwd = model.forward(graph, claim);
    return make_prediction(claim.claim_id, fwd.matrix(), claim, fwd.reps.evidence_tokens, fwd.reps.evidence_provenance,
                           model.spec().is_baseline(), conflict_threshold);
}

json prediction_to_json(const Prediction& p) {
    json sentences = json::array();
    for (const auto& s : p.sentences) {
        sentences.push_back({{"doc_id", s.doc_id},
                             {"sentence_index", s.sentence_index},
                             {"block", s.block},
                             {"sentence", s.sentence},
                             {"pS", s.p(kSupport)},
                             {"pR", s.p(kRefute)},
                             {"pIRR", s.p(kIrrelevant)},
                             {"score", s.score}});
    }
    json tokens = json::array();
    for (const auto& t : p.tokens) {
        tokens.push_back({{"doc_id", t.doc_id},
                          {"sentence_index", t.sentence_index},
                          {"token_offset", t.token_offset},
                          {"token", t.token},
                          {"score", t.score}});
    }
    return {{"schema", "dissector.predictions/1"},
            {"claim_id", p.claim_id},
            {"head", p.head},
            {"veracity", {{"SUPPORTS", p.veracity[0]}, {"REFUTES", p.veracity[1]}, {"NOT ENOUGH INFO", p.veracity[2]}}},
            {"label", label_name(p.label())},
            {"provenances", std::move(sentences)},
            {"token_scores", std::move(tokens)},
            {"conflicting", p.conflicting}};
}

Prediction prediction_from_json(const json& j) {
    Prediction p;
    p.claim_id = j.at("claim_id").get<std::string>();
    p.head = j.value("head", "dissector");
    const auto& v = j.at("veracity");
    p.veracity.p = {v.at("SUPPORTS").get<double>(), v.at("REFUTES").get<double>(),
                    v.at("NOT ENOUGH INFO").get<double>()};
    for (const auto& s : j.at("provenances")) {
        SentencePrediction sp;
        sp.doc_id = s.at("doc_id").get<std::string>();
        sp.sentence_index = s.at("sentence_index").get<int>();
        sp.block = s.value("block", 0);
        sp.sentence = s.value("sentence", 0);
        sp.p = Eigen::Vector3d(s.at("pS").get<double>(), s.at("pR").get<double>(), s.at("pIRR").get<double>());
        sp.score = s.at("score").get<double>();
        p.sentences.push_back(std::move(sp));
    }
    for (const auto& t : j.value("token_scores", json::array())) {
        p.tokens.push_back(TokenPrediction{t.at("doc_id").get<std::string>(), t.at("sentence_index").get<int>(),
                                           t.at("token_offset").get<int>(), t.value("token", std::string{}),
                                           t.at("score").get<double>()});
    }
    p.conflicting = j.value("conflicting", false);
    return p;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& p : predictions) out << prediction_to_json(p).dump() << '\n';
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<Prediction> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(prediction_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(e.what(), n);
        }
    }
    return out;
}

TrainingTargets build_targets(const ClaimInstance& claim, const PreparedClaim& prepared, const NegativeSampling& neg,
                              std::uint64_t seed) {
    TrainingTargets out;
    if (claim.label == Label::Nei) return out;
    const auto gold_list = claim.gold_sentences();
    const std::set<SentenceRef> gold(gold_list.begin(), gold_list.end());
    std::set<int> positive_blocks;
    const std::size_t cls = class_index(claim.label);
    for (const auto& ref : gold_list) {
        const auto it = prepared.keys.find(ref);
        if (it == prepared.keys.end()) continue;
        const Annotation a{it->second.first, it->second.second, cls};
        out.sentence.push_back(a);
        out.baseline.positives.push_back(a);
        if (positive_blocks.insert(a.block).second) out.block.positives.push_back(BlockPositive{a.block, cls});
    }
    for (const auto& ref : mine_negatives(prepared.ranked_sentences(), gold, neg.lo, neg.hi, neg.count, seed)) {
        const SentenceKey key = prepared.keys.at(ref);
        out.sentence.push_back(Annotation{key.first, key.second, kIrrelevant});
        out.baseline.negatives.push_back(key);
        out.irrelevant.push_back(key);
        if (!positive_blocks.count(key.first)) out.block.negatives.push_back(key);
    }
    return out;
}

}  // namespace dissector
