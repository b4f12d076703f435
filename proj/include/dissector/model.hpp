#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dissector/baseline.hpp"
#include "dissector/encoding.hpp"
#include "dissector/head.hpp"
#include "dissector/retrieval.hpp"
#include "dissector/supervision.hpp"

namespace dissector {

/// One claim turned into encoder inputs, one sequence per retrieved block.
struct PreparedClaim {
    std::string claim_id;
    Label label = Label::Nei;
    std::vector<InputSequence> sequences;
    std::vector<Block> blocks;
    std::vector<double> doc_scores;
    /// Corpus sentence -> (block, ordinal) for every sentence with at least one encoded token.
    std::map<SentenceRef, SentenceKey> keys;

    /// Encoded sentences ordered by document score, then input order.
    std::vector<SentenceRef> ranked_sentences() const;
};

PreparedClaim prepare_claim(const ClaimInstance& claim, const AssembledInput& input, const Corpus& corpus,
                            const Vocabulary& vocab, int max_length);

struct ModelSpec {
    TransformerConfig encoder;
    HeadConfig head;
    std::string head_name = "dissector";  // dissector | baseline | b2 | b3 | b4

    bool is_baseline() const { return head_name != "dissector"; }
    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json& j);
};

struct ForwardResult {
    GatheredReps reps;
    Var scores;  // M, L_e x outputs

    ScoreMatrix matrix() const { return ScoreMatrix::from_reps(scores.value(), reps); }
};

/// Encoder plus scoring head.
class VerifierModel {
public:
    VerifierModel(ModelSpec spec, Vocabulary vocab, std::uint64_t seed);

    ForwardResult forward(Graph& graph, const PreparedClaim& claim, const std::vector<EmbeddingHook>& hooks = {}) const;
    ScoreMatrix score(const PreparedClaim& claim) const;

    const ModelSpec& spec() const { return spec_; }
    TinyTransformerEncoder& encoder() { return *encoder_; }
    const TinyTransformerEncoder& encoder() const { return *encoder_; }
    ScoringHead& head() { return head_; }
    const ScoringHead& head() const { return head_; }
    std::array<ParameterSet*, 2> parameter_sets() { return {&encoder_->parameters(), &head_.parameters()}; }
    std::size_t scalar_count() const;

private:
    ModelSpec spec_;
    std::unique_ptr<TinyTransformerEncoder> encoder_;
    ScoringHead head_;
};

struct SentencePrediction {
    std::string doc_id;
    int sentence_index = 0;
    int block = 0;
    int sentence = 0;
    Eigen::Vector3d p = Eigen::Vector3d::Zero();  // S, R, IRR
    double score = 0.0;
};

struct TokenPrediction {
    std::string doc_id;
    int sentence_index = 0;
    int token_offset = 0;
    std::string token;
    double score = 0.0;
};

struct Prediction {
    std::string claim_id;
    std::string head;
    VeracityDistribution veracity;
    std::vector<SentencePrediction> sentences;  // ranked by score
    std::vector<TokenPrediction> tokens;        // input order
    bool conflicting = false;

    Label label() const { return veracity.argmax(); }
    std::vector<SentenceRef> ranking() const;
};

/// Turns a score matrix into a prediction record using the dissector or baseline reading.
Prediction make_prediction(const std::string& claim_id, const ScoreMatrix& m, const PreparedClaim& claim,
                           const std::vector<std::string>& evidence_tokens,
                           const std::vector<TokenProvenance>& evidence_provenance, bool baseline,
                           double conflict_threshold = 0.9);
Prediction predict(const VerifierModel& model, const PreparedClaim& claim, double conflict_threshold = 0.9);

nlohmann::json prediction_to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

struct NegativeSampling {
    int lo = 4;
    int hi = 40;
    int count = 8;
};

/// Supervision targets for one claim restricted to the sentences present in the input; empty for NEI claims.
struct TrainingTargets {
    std::vector<Annotation> sentence;  // gold sentences at the claim label, negatives at IRR
    BaselineAnnotation baseline;
    std::vector<SentenceKey> irrelevant;
    BlockAnnotation block;
};

TrainingTargets build_targets(const ClaimInstance& claim, const PreparedClaim& prepared, const NegativeSampling& neg,
                              std::uint64_t seed);

}  // namespace dissector
