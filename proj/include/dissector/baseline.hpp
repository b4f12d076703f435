#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dissector/head.hpp"

namespace dissector {

using SentenceKey = std::pair<int, int>;  // (block, sentence)

struct BaselineAnnotation {
    std::vector<Annotation> positives;     // A_p, S/R labels only; empty for NEI claims
    std::vector<SentenceKey> negatives;    // irrelevant sentences, used to restrict normalization
};

/// Joint distribution over the (token, class) cells of M. Rows outside the restriction are zero.
struct JointDistribution {
    Matrix p;
    std::vector<bool> participating;  // per provenance
};

JointDistribution joint_distribution(const ScoreMatrix& m, const std::optional<std::vector<SentenceKey>>& restrict = {});
/// P(s_{i,j}, y) for the provenance at index p.
Eigen::Vector3d sentence_marginal(const ScoreMatrix& m, const JointDistribution& joint, std::size_t p);

LossValue loss_b0(const ScoreMatrix& m, const BaselineAnnotation& ann);
LossValue loss_b1(const ScoreMatrix& m, Label gold);
/// Relevant annotations at their gold class plus `irrelevant` sentences at NEI.
LossValue loss_b2(const ScoreMatrix& m, const BaselineAnnotation& ann, const std::vector<SentenceKey>& irrelevant);
LossValue loss_b3(const ScoreMatrix& m, const BaselineAnnotation& ann);
LossValue loss_b4(const ScoreMatrix& m, const BaselineAnnotation& ann);

enum class BaselineVariant { B0, B2, B3, B4 };
BaselineVariant parse_baseline_variant(const std::string& name);
std::string baseline_variant_name(BaselineVariant v);

struct BaselineLossConfig {
    BaselineVariant variant = BaselineVariant::B0;
    double weight_b1 = 0.5;  // the remaining weight goes to the annotation term
};

/// Mean of the annotation term and L_b1; L_b1 alone when A_p is empty.
LossValue baseline_objective(const ScoreMatrix& m, const BaselineAnnotation& ann, Label gold,
                             const BaselineLossConfig& cfg, const std::vector<SentenceKey>& irrelevant = {});

struct BaselineVerdict {
    std::vector<std::size_t> ranking;  // provenance indices
    std::vector<double> scores;        // per provenance, P(s, S) + P(s, R)
    VeracityDistribution veracity;
};

BaselineVerdict baseline_rank_and_verdict(const ScoreMatrix& m);

}  // namespace dissector
