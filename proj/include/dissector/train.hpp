#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dissector/masker.hpp"
#include "dissector/metrics.hpp"
#include "dissector/model.hpp"
#include "dissector/retrieval.hpp"
#include "dissector/supervision.hpp"

namespace dissector {

struct TrainConfig {
    int batch_size = 8;
    double lr = 3e-4;
    long long warmup_steps = 100;
    double grad_clip_norm = 1.0;
    long long max_steps = 1500;
    long long eval_every = 250;
    double weight_decay = 0.01;
    std::uint64_t seed = 13;
    double lambda_r = 1.0;
    double lambda_2 = 1.0;
    double block_lambda_r = 0.7;
    double baseline_weight_b1 = 0.5;
    Supervision supervision = Supervision::Sentence;
    SseSchedule sse;
    NegativeSampling negatives;
    double conflict_threshold = 0.9;
    bool restore_best = true;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A split ready for training or evaluation.
struct PreparedSplit {
    std::vector<ClaimInstance> claims;
    std::vector<AssembledInput> inputs;
    std::vector<PreparedClaim> prepared;
    double rai = 0.0;
};

/// Retrieves K1 + K2 blocks per claim (with gold injection when `inject_gold`) and builds encoder inputs.
PreparedSplit prepare_split(const std::vector<ClaimInstance>& claims, const Retriever& retriever,
                            const Vocabulary& vocab, int max_length, bool inject_gold, std::uint64_t seed);
/// Same from already assembled inputs (matched by claim id).
PreparedSplit prepare_split(const std::vector<ClaimInstance>& claims, const std::vector<AssembledInput>& inputs,
                            const Corpus& corpus, const Vocabulary& vocab, int max_length);

struct EvalPoint {
    long long step = 0;
    EvalReport report;
};

struct TrainResult {
    std::vector<double> losses;  // mean objective per step (maximized)
    std::vector<EvalPoint> evals;
    long long best_step = 0;
    double best_fever_score = -1.0;

    nlohmann::json to_json() const;
};

std::vector<Prediction> predict_all(const VerifierModel& model, const std::vector<PreparedClaim>& claims,
                                    double conflict_threshold = 0.9);

/// Objective of one claim and its gradient with respect to M.
LossValue claim_objective(const VerifierModel& model, const ScoreMatrix& m, const ClaimInstance& claim,
                          const PreparedClaim& prepared, const TrainConfig& cfg, long long step);

/// Trains in place and leaves the best dev checkpoint (by FEVER score) in `model`.
TrainResult train_verifier(VerifierModel& model, const PreparedSplit& train, const PreparedSplit& dev,
                           const TrainConfig& cfg, const std::function<void(const EvalPoint&)>& on_eval = {});

struct MaskerTrainConfig {
    int batch_size = 8;
    double lr = 1e-3;
    long long steps = 900;
    double grad_clip_norm = 1.0;
    double weight_decay = 0.01;
    std::uint64_t seed = 17;
    MaskerConfig masker;

    nlohmann::json to_json() const;
    static MaskerTrainConfig from_json(const nlohmann::json& j);
};

struct MaskerTrainResult {
    std::vector<double> losses;
};

/// Trains the masker on the non-NEI claims of `train` with the dissector frozen.
MaskerTrainResult train_masker(MaskerModel& masker, const VerifierModel& dissector, const PreparedSplit& train,
                               const MaskerTrainConfig& cfg);

/// Masker rationales as prediction records (token scores = l_1), for token F1 evaluation.
std::vector<Prediction> masker_predictions(const MaskerModel& masker, const VerifierModel& dissector,
                                           const std::vector<PreparedClaim>& claims);

void save_checkpoint(const std::filesystem::path& path, const VerifierModel& model, const nlohmann::json& extra);
std::unique_ptr<VerifierModel> load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);
void save_masker(const std::filesystem::path& path, const MaskerModel& masker, const MaskerConfig& cfg);
std::unique_ptr<MaskerModel> load_masker(const std::filesystem::path& path, MaskerConfig* cfg = nullptr);

}  // namespace dissector
