#include "dissector/supervision.hpp"

#include <random>

#include "logmass.hpp"

namespace dissector {

using detail::CellMask;

void SseSchedule::validate() const {
    if (warmup_steps < 0 || warmup_steps >= ramp_end) throw ValidationError("SSE warmup must precede the ramp end");
    if (p_max < 0.0 || p_max > 1.0) throw ValidationError("p_max must lie in [0, 1]");
}

double sse_probability(long long step, const SseSchedule& sched) {
    if (step <= sched.warmup_steps) return 0.0;
    if (step >= sched.ramp_end) return sched.p_max;
    const double frac = static_cast<double>(step - sched.warmup_steps) /
                        static_cast<double>(sched.ramp_end - sched.warmup_steps);
    return sched.p_max * frac;
}

Supervision parse_supervision(const std::string& name) {
    if (name == "sentence") return Supervision::Sentence;
    if (name == "block") return Supervision::Block;
    if (name == "block+sse" || name == "block_sse") return Supervision::BlockSse;
    throw ValidationError("unknown supervision '" + name + "'");
}

std::string supervision_name(Supervision s) {
    switch (s) {
        case Supervision::Sentence: return "sentence";
        case Supervision::Block: return "block";
        case Supervision::BlockSse: return "block+sse";
    }
    return "sentence";
}

namespace {

CellMask block_cells(const ScoreMatrix& m, int block, int column = -1) {
    CellMask mask = CellMask::Zero(m.rows(), kNumClasses);
    for (const auto& prov : m.provenances()) {
        if (prov.block != block) continue;
        if (column < 0) {
            mask.middleRows(prov.row_begin, prov.row_count) = 1.0;
        } else {
            mask.col(column).segment(prov.row_begin, prov.row_count) = 1.0;
        }
    }
    if (mask.sum() == 0.0) throw ContractError("block " + std::to_string(block) + " has no sentences");
    return mask;
}

}  // namespace

BlockSentenceMarginals block_sentence_marginals(const ScoreMatrix& m, int block) {
    const CellMask domain = block_cells(m, block);
    double log_norm = 0.0;
    const CellMask p = detail::masked_softmax(m.logits(), domain, log_norm);
    BlockSentenceMarginals out;
    out.block = block;
    for (std::size_t k = 0; k < m.provenances().size(); ++k) {
        const auto& prov = m.provenance(k);
        if (prov.block != block) continue;
        out.provenances.push_back(k);
        out.marginals.emplace_back(p.middleRows(prov.row_begin, prov.row_count).colwise().sum().transpose());
    }
    return out;
}

Eigen::Vector3d block_marginal(const std::vector<Eigen::Vector3d>& sentence_marginals) {
    if (sentence_marginals.empty()) throw ContractError("empty block");
    Eigen::Vector3d total = Eigen::Vector3d::Zero();
    for (const auto& s : sentence_marginals) total += s;
    return total;
}

std::vector<double> sse_sampling_distribution(const std::vector<Eigen::Vector3d>& sentence_marginals) {
    if (sentence_marginals.empty()) throw ContractError("empty block");
    std::vector<double> w;
    w.reserve(sentence_marginals.size());
    double total = 0.0;
    for (const auto& s : sentence_marginals) {
        w.push_back(s(kSupport) + s(kRefute));
        total += w.back();
    }
    if (!(total > 0.0)) return std::vector<double>(w.size(), 1.0 / static_cast<double>(w.size()));
    for (auto& x : w) x /= total;
    return w;
}

SseChoice sse_estimate(const std::vector<Eigen::Vector3d>& sentence_marginals, std::uint64_t seed) {
    const auto w = sse_sampling_distribution(sentence_marginals);
    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const std::size_t i = pick(rng);
    return SseChoice{i, sentence_marginals[i]};
}

LossValue block_supervised_loss(const ScoreMatrix& m, const BlockAnnotation& ann, Label gold, double p_sse,
                                std::uint64_t seed, const BlockLossConfig& cfg, BlockLossTrace* trace) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const bool use_sse = p_sse > 0.0 && coin(rng) < p_sse;
    if (trace) {
        trace->used_sse = use_sse;
        trace->chosen.clear();
    }

    LossValue rel{0.0, Matrix::Zero(m.rows(), kNumClasses)};
    std::size_t terms = 0;
    for (const auto& pos : ann.positives) {
        if (pos.cls >= kNumClasses) throw ContractError("block annotation class out of range");
        const CellMask domain = block_cells(m, pos.block);
        CellMask num;
        if (use_sse) {
            const auto sm = block_sentence_marginals(m, pos.block);
            const SseChoice choice = sse_estimate(sm.marginals, rng());
            if (trace) trace->chosen.push_back(choice.sentence);
            const auto& prov = m.provenance(sm.provenances[choice.sentence]);
            num = detail::rows_mask(m.rows(), prov.row_begin, prov.row_count, static_cast<int>(pos.cls));
        } else {
            num = block_cells(m, pos.block, static_cast<int>(pos.cls));
        }
        const LossValue term = detail::log_mass(m.logits(), num, domain);
        rel.value += term.value;
        rel.grad += term.grad;
        ++terms;
    }
    for (const auto& neg : ann.negatives) {
        const auto p = m.find(neg.first, neg.second);
        if (!p) throw ContractError("negative sentence is not part of the score matrix");
        const auto& prov = m.provenance(*p);
        const LossValue term = detail::log_mass(
            m.logits(), detail::rows_mask(m.rows(), prov.row_begin, prov.row_count, static_cast<int>(kIrrelevant)),
            detail::rows_mask(m.rows(), prov.row_begin, prov.row_count));
        rel.value += term.value;
        rel.grad += term.grad;
        ++terms;
    }
    if (terms > 0) {
        rel.value /= static_cast<double>(terms);
        rel.grad /= static_cast<double>(terms);
    }

    LossValue out = veracity_log_likelihood(m, gold);
    out.value += cfg.lambda_r * rel.value;
    out.grad += cfg.lambda_r * rel.grad;
    if (cfg.lambda_2 != 0.0) {
        const LossValue l2 = l2_penalty(m);
        out.value -= cfg.lambda_2 * l2.value;
        out.grad -= cfg.lambda_2 * l2.grad;
    }
    return out;
}

LossValue block_supervised_loss(const ScoreMatrix& m, const BlockAnnotation& ann, Label gold, long long step,
                                const SseSchedule& sched, std::uint64_t seed, const BlockLossConfig& cfg,
                                BlockLossTrace* trace) {
    return block_supervised_loss(m, ann, gold, sse_probability(step, sched), seed, cfg, trace);
}

}  // namespace dissector
