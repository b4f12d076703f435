#pragma once

#include <array>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dissector/autograd.hpp"
#include "dissector/common.hpp"
#include "dissector/encoding.hpp"

namespace dissector {

/// A provenance owns a contiguous run of rows of the score matrix.
struct Provenance {
    int block = 0;     // j
    int sentence = 0;  // i
    Eigen::Index row_begin = 0;
    Eigen::Index row_count = 0;
};

/// L_e x 3 logits over (evidence token, class) with the token -> (i, j) provenance map.
class ScoreMatrix {
public:
    ScoreMatrix(Matrix logits, std::vector<Provenance> provenances);
    /// Groups consecutive rows sharing a (block, sentence) pair into provenances.
    static ScoreMatrix from_rows(Matrix logits, const std::vector<std::pair<int, int>>& row_provenance);
    static ScoreMatrix from_reps(Matrix logits, const GatheredReps& reps);

    const Matrix& logits() const { return logits_; }
    const std::vector<Provenance>& provenances() const { return provenances_; }
    const Provenance& provenance(std::size_t p) const { return provenances_.at(p); }
    std::optional<std::size_t> find(int block, int sentence) const;
    Eigen::Index rows() const { return logits_.rows(); }
    std::size_t provenance_of_row(Eigen::Index row) const;

private:
    Matrix logits_;
    std::vector<Provenance> provenances_;
};

/// Value of a maximized objective together with its gradient with respect to M.
struct LossValue {
    double value = 0.0;
    Matrix grad;
};

struct VeracityDistribution {
    std::array<double, kNumClasses> p{};

    Label argmax() const;
    double operator[](std::size_t c) const { return p[c]; }
};

struct Annotation {
    int block = 0;
    int sentence = 0;
    std::size_t cls = kIrrelevant;
};

struct LossConfig {
    double lambda_r = 1.0;
    double lambda_2 = 1.0;
};

/// P^{i,j}(w, y): softmax over every (token, class) cell of one provenance.
Matrix provenance_distribution(const ScoreMatrix& m, std::size_t p);
/// log P^{i,j}(y) = log sum_w P^{i,j}(w, y).
Eigen::Vector3d provenance_log_marginal(const ScoreMatrix& m, std::size_t p);
Eigen::Vector3d provenance_marginal(const ScoreMatrix& m, std::size_t p);
std::vector<Eigen::Vector3d> all_provenance_marginals(const ScoreMatrix& m);

/// Mean marginal log-probability of the annotated (provenance, class) pairs; 0 when empty.
LossValue relevance_loss(const ScoreMatrix& m, const std::vector<Annotation>& annotations);

/// Linear ensemble of provenance distributions weighted by K_{i,j} = sum exp M^{i,j}.
VeracityDistribution ensemble_veracity(const ScoreMatrix& m);
/// log P(y) of the ensemble with its gradient.
LossValue veracity_log_likelihood(const ScoreMatrix& m, Label y);

/// ||M||_F^2 / (3 L_e), with its gradient.
LossValue l2_penalty(const ScoreMatrix& m);

/// log P(gold) + lambda_R L_R - lambda_2 L_2 (maximized).
LossValue total_loss(const ScoreMatrix& m, const std::vector<Annotation>& annotations, Label gold,
                     const LossConfig& cfg);

double relevance_score(const ScoreMatrix& m, std::size_t p);
/// Provenance indices by descending relevance score, ties by (block, sentence).
std::vector<std::size_t> rank_provenances(const ScoreMatrix& m);

struct RationaleScores {
    std::vector<double> scores;  // one per evidence token (row of M)
    double threshold = 0.5;

    std::vector<std::size_t> selected() const { return select(threshold); }
    std::vector<std::size_t> select(double tau) const;
};

/// Per-token sum over S and R of the token's provenance distribution.
RationaleScores token_rationale_scores(const ScoreMatrix& m, double threshold = 0.5);

/// True iff some provenance has P(S) > threshold and some provenance has P(R) > threshold.
bool detect_conflicting(const std::vector<Eigen::Vector3d>& marginals, double threshold = 0.9);

struct HeadConfig {
    int dim = 32;
    int heads = 4;
    int slp_width = 32;
    int outputs = 3;
    double dropout = 0.0;

    /// 8 heads from d = 64 upward, otherwise 4; SLP width d.
    static HeadConfig for_dim(int dim, int outputs = 3);
    nlohmann::json to_json() const;
    static HeadConfig from_json(const nlohmann::json& j);
};

/// SLP(MHAtt(E_s, S, S)) W with SLP(x) = GELU(dropout(W' lnorm(x))).
class ScoringHead {
public:
    ScoringHead(HeadConfig config, std::uint64_t seed, const std::string& prefix = "head.");

    Var forward(Graph& graph, Var evidence, Var markers) const;
    /// Evaluation-mode forward returning the ScoreMatrix.
    ScoreMatrix compute(const GatheredReps& reps) const;

    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    const HeadConfig& config() const { return config_; }

private:
    HeadConfig config_;
    std::string prefix_;
    mutable ParameterSet params_;
};

/// Log-sum-exp helpers shared by the heads; all math in double precision.
double log_sum_exp(const Eigen::Ref<const Eigen::ArrayXd>& values);

}  // namespace dissector
