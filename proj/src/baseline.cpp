#include "dissector/baseline.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>

#include "logmass.hpp"

namespace dissector {

using detail::CellMask;

namespace {

std::size_t require(const ScoreMatrix& m, const SentenceKey& key) {
    const auto p = m.find(key.first, key.second);
    if (!p) {
        throw ContractError("sentence (" + std::to_string(key.second) + ", " + std::to_string(key.first) +
                            ") is not part of the score matrix");
    }
    return *p;
}

CellMask sentence_cells(const ScoreMatrix& m, std::size_t p, int column = -1) {
    const auto& prov = m.provenance(p);
    return detail::rows_mask(m.rows(), prov.row_begin, prov.row_count, column);
}

CellMask restriction_mask(const ScoreMatrix& m, const std::vector<SentenceKey>& keys) {
    CellMask mask = CellMask::Zero(m.rows(), kNumClasses);
    for (const auto& k : keys) mask = mask.max(sentence_cells(m, require(m, k)));
    if (mask.sum() == 0.0) throw ContractError("restriction selects no rows");
    return mask;
}

std::vector<SentenceKey> training_domain(const BaselineAnnotation& ann, const std::vector<SentenceKey>& extra = {}) {
    std::set<SentenceKey> keys(ann.negatives.begin(), ann.negatives.end());
    for (const auto& a : ann.positives) keys.emplace(a.block, a.sentence);
    keys.insert(extra.begin(), extra.end());
    return {keys.begin(), keys.end()};
}

void check_positive(const Annotation& a) {
    if (a.cls != kSupport && a.cls != kRefute) throw ContractError("baseline positives carry S or R labels only");
}

}  // namespace

JointDistribution joint_distribution(const ScoreMatrix& m, const std::optional<std::vector<SentenceKey>>& restrict) {
    CellMask domain = restrict ? restriction_mask(m, *restrict) : CellMask::Ones(m.rows(), kNumClasses);
    double log_norm = 0.0;
    JointDistribution out;
    out.p = detail::masked_softmax(m.logits(), domain, log_norm).matrix();
    out.participating.resize(m.provenances().size());
    for (std::size_t p = 0; p < out.participating.size(); ++p) {
        out.participating[p] = domain(m.provenance(p).row_begin, 0) != 0.0;
    }
    return out;
}

Eigen::Vector3d sentence_marginal(const ScoreMatrix& m, const JointDistribution& joint, std::size_t p) {
    if (p >= joint.participating.size() || !joint.participating[p]) {
        throw ContractError("sentence does not participate in the joint");
    }
    const auto& prov = m.provenance(p);
    return joint.p.middleRows(prov.row_begin, prov.row_count).colwise().sum().transpose();
}

LossValue loss_b0(const ScoreMatrix& m, const BaselineAnnotation& ann) {
    LossValue out{0.0, Matrix::Zero(m.rows(), kNumClasses)};
    if (ann.positives.empty()) return out;
    const CellMask domain = restriction_mask(m, training_domain(ann));
    for (const auto& a : ann.positives) {
        check_positive(a);
        const auto p = require(m, {a.block, a.sentence});
        const LossValue term = detail::log_mass(m.logits(), sentence_cells(m, p, static_cast<int>(a.cls)), domain);
        out.value += term.value;
        out.grad += term.grad;
    }
    const double n = static_cast<double>(ann.positives.size());
    out.value /= n;
    out.grad /= n;
    return out;
}

LossValue loss_b1(const ScoreMatrix& m, Label gold) { return veracity_log_likelihood(m, gold); }

LossValue loss_b2(const ScoreMatrix& m, const BaselineAnnotation& ann, const std::vector<SentenceKey>& irrelevant) {
    LossValue out{0.0, Matrix::Zero(m.rows(), kNumClasses)};
    std::vector<Annotation> all = ann.positives;
    for (const auto& k : irrelevant) all.push_back(Annotation{k.first, k.second, kIrrelevant});
    if (all.empty()) return out;
    const CellMask domain = restriction_mask(m, training_domain(ann, irrelevant));
    for (const auto& a : all) {
        const auto p = require(m, {a.block, a.sentence});
        const LossValue term = detail::log_mass(m.logits(), sentence_cells(m, p, static_cast<int>(a.cls)), domain);
        out.value += term.value;
        out.grad += term.grad;
    }
    const double n = static_cast<double>(all.size());
    out.value /= n;
    out.grad /= n;
    return out;
}

LossValue loss_b3(const ScoreMatrix& m, const BaselineAnnotation& ann) {
    if (ann.positives.empty()) return LossValue{0.0, Matrix::Zero(m.rows(), kNumClasses)};
    const CellMask domain = restriction_mask(m, training_domain(ann));
    CellMask num = CellMask::Zero(m.rows(), kNumClasses);
    for (const auto& a : ann.positives) {
        check_positive(a);
        num = num.max(sentence_cells(m, require(m, {a.block, a.sentence}), static_cast<int>(a.cls)));
    }
    return detail::log_mass(m.logits(), num, domain);
}

LossValue loss_b4(const ScoreMatrix& m, const BaselineAnnotation& ann) {
    if (ann.positives.empty()) return LossValue{0.0, Matrix::Zero(m.rows(), kNumClasses)};
    const CellMask domain = restriction_mask(m, training_domain(ann));
    CellMask num = CellMask::Zero(m.rows(), kNumClasses);
    for (const auto& a : ann.positives) num = num.max(sentence_cells(m, require(m, {a.block, a.sentence})));
    return detail::log_mass(m.logits(), num, domain);
}

BaselineVariant parse_baseline_variant(const std::string& name) {
    if (name == "baseline" || name == "b0") return BaselineVariant::B0;
    if (name == "b2") return BaselineVariant::B2;
    if (name == "b3") return BaselineVariant::B3;
    if (name == "b4") return BaselineVariant::B4;
    throw ValidationError("unknown baseline variant '" + name + "'");
}

std::string baseline_variant_name(BaselineVariant v) {
    switch (v) {
        case BaselineVariant::B0: return "baseline";
        case BaselineVariant::B2: return "b2";
        case BaselineVariant::B3: return "b3";
        case BaselineVariant::B4: return "b4";
    }
    return "baseline";
}

LossValue baseline_objective(const ScoreMatrix& m, const BaselineAnnotation& ann, Label gold,
                             const BaselineLossConfig& cfg, const std::vector<SentenceKey>& irrelevant) {
    LossValue b1 = loss_b1(m, gold);
    const bool has_annotations = !ann.positives.empty() || (cfg.variant == BaselineVariant::B2 && !irrelevant.empty());
    if (!has_annotations) return b1;
    LossValue term;
    switch (cfg.variant) {
        case BaselineVariant::B0: term = loss_b0(m, ann); break;
        case BaselineVariant::B2: term = loss_b2(m, ann, irrelevant); break;
        case BaselineVariant::B3: term = loss_b3(m, ann); break;
        case BaselineVariant::B4: term = loss_b4(m, ann); break;
    }
    const double w = cfg.weight_b1;
    return LossValue{w * b1.value + (1.0 - w) * term.value, w * b1.grad + (1.0 - w) * term.grad};
}

BaselineVerdict baseline_rank_and_verdict(const ScoreMatrix& m) {
    const JointDistribution joint = joint_distribution(m);
    BaselineVerdict out;
    const Eigen::RowVector3d totals = joint.p.colwise().sum();
    for (std::size_t c = 0; c < kNumClasses; ++c) out.veracity.p[c] = totals(static_cast<Eigen::Index>(c));
    out.scores.resize(m.provenances().size());
    for (std::size_t p = 0; p < out.scores.size(); ++p) {
        const Eigen::Vector3d marginal = sentence_marginal(m, joint, p);
        out.scores[p] = marginal(kSupport) + marginal(kRefute);
    }
    out.ranking.resize(out.scores.size());
    std::iota(out.ranking.begin(), out.ranking.end(), 0);
    std::sort(out.ranking.begin(), out.ranking.end(), [&](std::size_t a, std::size_t b) {
        if (out.scores[a] != out.scores[b]) return out.scores[a] > out.scores[b];
        const auto& pa = m.provenance(a);
        const auto& pb = m.provenance(b);
        return std::tie(pa.block, pa.sentence) < std::tie(pb.block, pb.sentence);
    });
    return out;
}

}  // namespace dissector
