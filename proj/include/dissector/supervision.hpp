#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dissector/baseline.hpp"
#include "dissector/head.hpp"

namespace dissector {

struct SseSchedule {
    long long warmup_steps = 1000;
    long long ramp_end = 3000;
    double p_max = 0.95;

    void validate() const;
};

double sse_probability(long long step, const SseSchedule& sched);

enum class Supervision { Sentence, Block, BlockSse };
Supervision parse_supervision(const std::string& name);
std::string supervision_name(Supervision s);

struct BlockPositive {
    int block = 0;
    std::size_t cls = kSupport;
};

struct BlockAnnotation {
    std::vector<BlockPositive> positives;
    std::vector<SentenceKey> negatives;  // sentence-level IRR annotations
};

/// Sentence marginals of block j under the block-level softmax: P^j(s_i, y).
struct BlockSentenceMarginals {
    int block = 0;
    std::vector<std::size_t> provenances;  // provenance index per sentence
    std::vector<Eigen::Vector3d> marginals;
};

BlockSentenceMarginals block_sentence_marginals(const ScoreMatrix& m, int block);

/// P(b_j, y) as the per-class sum of the block's sentence marginals.
Eigen::Vector3d block_marginal(const std::vector<Eigen::Vector3d>& sentence_marginals);

struct SseChoice {
    std::size_t sentence = 0;  // position inside the block's sentence list
    Eigen::Vector3d marginal;
};

/// Samples a sentence with probability proportional to its S+R mass (uniform if that mass is zero).
SseChoice sse_estimate(const std::vector<Eigen::Vector3d>& sentence_marginals, std::uint64_t seed);
/// Sampling weights used by sse_estimate.
std::vector<double> sse_sampling_distribution(const std::vector<Eigen::Vector3d>& sentence_marginals);

struct BlockLossConfig {
    double lambda_r = 0.7;
    double lambda_2 = 1.0;
};

struct BlockLossTrace {
    bool used_sse = false;
    std::vector<std::size_t> chosen;  // per positive block, sentence position when SSE was used
};

/// Objective with an explicit replace probability; randomness derives from `seed`.
LossValue block_supervised_loss(const ScoreMatrix& m, const BlockAnnotation& ann, Label gold, double p_sse,
                                std::uint64_t seed, const BlockLossConfig& cfg = {}, BlockLossTrace* trace = nullptr);

LossValue block_supervised_loss(const ScoreMatrix& m, const BlockAnnotation& ann, Label gold, long long step,
                                const SseSchedule& sched, std::uint64_t seed, const BlockLossConfig& cfg = {},
                                BlockLossTrace* trace = nullptr);

}  // namespace dissector
