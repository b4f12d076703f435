#pragma once

#include <cstdint>
#include <random>

#include <nlohmann/json_fwd.hpp>

#include "dissector/model.hpp"

namespace dissector {

struct TemperatureSchedule {
    double tau_start = 1.0;
    double tau_end = 0.1;
    long long warmup_steps = 100;
    long long ramp_end = 700;
};

struct Temperature {
    double tau = 1.0;
    bool hard = false;
};

/// tau_start until warmup, linear to tau_end at ramp_end, hard samples afterwards (tau held at tau_end).
Temperature temperature(long long step, const TemperatureSchedule& sched);

/// Standard Gumbel(0, 1) noise.
Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

/// (m_0, m_1) for one token from its [l_0, l_1] logits.
Eigen::Vector2d gumbel_sample(const Eigen::Vector2d& logits, double tau, bool hard, std::uint64_t seed);

/// e' = m_0 e + m_1 e_m
RowVector mix_embeddings(const RowVector& e, const Eigen::Vector2d& mask, const RowVector& e_m);

struct MaskerLoss {
    double value = 0.0;
    Matrix grad_scores;  // d value / d M of the frozen dissector
    Matrix grad_mask;    // d value / d (m_0, m_1)
};

/// log P(NEI | masked input) - (lambda_s / L_e) * sum_i m_1^i, maximized.
MaskerLoss masker_loss(const ScoreMatrix& dissector_scores, const Matrix& mask, double lambda_s);

struct MaskerConfig {
    double lambda_s = 1.0;
    TemperatureSchedule schedule;

    nlohmann::json to_json() const;
    static MaskerConfig from_json(const nlohmann::json& j);
};

/// Encoder and head skeleton of the dissector projecting to [l_0 keep, l_1 mask], plus the mask embedding.
class MaskerModel {
public:
    /// The encoder starts from the dissector's encoder weights.
    MaskerModel(const VerifierModel& dissector, std::uint64_t seed);
    MaskerModel(TransformerConfig encoder, HeadConfig head, Vocabulary vocab, std::uint64_t seed);

    /// L_e x 2 mask logits, rows in the dissector's evidence order.
    Var logits(Graph& graph, const PreparedClaim& claim) const;
    Matrix logits(const PreparedClaim& claim) const;

    TinyTransformerEncoder& encoder() { return *encoder_; }
    const TinyTransformerEncoder& encoder() const { return *encoder_; }
    ScoringHead& head() { return head_; }
    const ScoringHead& head() const { return head_; }
    Parameter& mask_embedding() const { return extra_.at("masker.mask_embedding"); }
    const ParameterSet& extra() const { return extra_; }
    std::array<ParameterSet*, 3> parameter_sets() { return {&encoder_->parameters(), &head_.parameters(), &extra_}; }

private:
    std::unique_ptr<TinyTransformerEncoder> encoder_;
    ScoringHead head_;
    mutable ParameterSet extra_;
};

struct MaskedForward {
    Var mask_logits;
    Var mask;  // L_e x 2, (m_0, m_1)
    ForwardResult dissector;
};

/// Samples a mask, mixes evidence-token embeddings of the dissector input and runs the dissector.
/// The dissector's parameters are frozen in `graph`.
MaskedForward masked_forward(Graph& graph, const MaskerModel& masker, const VerifierModel& dissector,
                             const PreparedClaim& claim, const Matrix& noise, const Temperature& temp);

/// Runs the dissector with a fixed mask (no sampling).
ForwardResult forward_with_mask(Graph& graph, const VerifierModel& dissector, const PreparedClaim& claim, Var mask,
                                Var mask_embedding);

/// Per-token score l_1 (the mask logit).
RationaleScores extract_masker_rationales(const MaskerModel& masker, const PreparedClaim& claim,
                                          double threshold = 0.0);

}  // namespace dissector
