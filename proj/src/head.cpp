#include "dissector/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include <nlohmann/json.hpp>

#include "logmass.hpp"

namespace dissector {

using detail::CellMask;

ScoreMatrix::ScoreMatrix(Matrix logits, std::vector<Provenance> provenances)
    : logits_(std::move(logits)), provenances_(std::move(provenances)) {
    if (logits_.cols() != static_cast<Eigen::Index>(kNumClasses)) throw ContractError("score matrix needs 3 columns");
    if (!logits_.allFinite()) throw ContractError("score matrix has non-finite entries");
    Eigen::Index next = 0;
    for (const auto& p : provenances_) {
        if (p.row_begin != next || p.row_count <= 0) throw ContractError("provenances must tile the rows contiguously");
        next += p.row_count;
    }
    if (next != logits_.rows()) throw ContractError("provenances do not cover every row of M");
}

ScoreMatrix ScoreMatrix::from_rows(Matrix logits, const std::vector<std::pair<int, int>>& row_provenance) {
    if (static_cast<Eigen::Index>(row_provenance.size()) != logits.rows()) {
        throw ContractError("row provenance size differs from score rows");
    }
    std::vector<Provenance> provs;
    for (std::size_t r = 0; r < row_provenance.size(); ++r) {
        const auto [block, sentence] = row_provenance[r];
        if (!provs.empty() && provs.back().block == block && provs.back().sentence == sentence) {
            ++provs.back().row_count;
        } else {
            provs.push_back(Provenance{block, sentence, static_cast<Eigen::Index>(r), 1});
        }
    }
    return ScoreMatrix(std::move(logits), std::move(provs));
}

ScoreMatrix ScoreMatrix::from_reps(Matrix logits, const GatheredReps& reps) {
    std::vector<std::pair<int, int>> rows;
    rows.reserve(reps.evidence_provenance.size());
    for (const auto& t : reps.evidence_provenance) rows.emplace_back(t.block, t.sentence);
    return from_rows(std::move(logits), rows);
}

std::optional<std::size_t> ScoreMatrix::find(int block, int sentence) const {
    for (std::size_t p = 0; p < provenances_.size(); ++p) {
        if (provenances_[p].block == block && provenances_[p].sentence == sentence) return p;
    }
    return std::nullopt;
}

std::size_t ScoreMatrix::provenance_of_row(Eigen::Index row) const {
    const auto it = std::upper_bound(provenances_.begin(), provenances_.end(), row,
                                     [](Eigen::Index r, const Provenance& p) { return r < p.row_begin; });
    if (it == provenances_.begin() || row >= logits_.rows() || row < 0) throw ContractError("row out of range");
    return static_cast<std::size_t>(std::distance(provenances_.begin(), it) - 1);
}

Label VeracityDistribution::argmax() const {
    return label_from_index(static_cast<std::size_t>(std::distance(p.begin(), std::max_element(p.begin(), p.end()))));
}

double log_sum_exp(const Eigen::Ref<const Eigen::ArrayXd>& values) {
    if (values.size() == 0) return -std::numeric_limits<double>::infinity();
    const double mx = values.maxCoeff();
    return mx + std::log((values - mx).exp().sum());
}

Matrix provenance_distribution(const ScoreMatrix& m, std::size_t p) {
    if (p >= m.provenances().size()) throw ContractError("empty or unknown provenance");
    const auto& prov = m.provenance(p);
    const Matrix block = m.logits().middleRows(prov.row_begin, prov.row_count);
    const double mx = block.maxCoeff();
    Matrix e = (block.array() - mx).exp().matrix();
    return e / e.sum();
}

Eigen::Vector3d provenance_log_marginal(const ScoreMatrix& m, std::size_t p) {
    if (p >= m.provenances().size()) throw ContractError("empty or unknown provenance");
    const auto& prov = m.provenance(p);
    const auto block = m.logits().middleRows(prov.row_begin, prov.row_count).array();
    Eigen::ArrayXd flat = Eigen::Map<const Eigen::ArrayXd>(Matrix(block).data(), block.size());
    const double log_z = log_sum_exp(flat);
    Eigen::Vector3d out;
    for (Eigen::Index c = 0; c < 3; ++c) out(c) = log_sum_exp(block.col(c)) - log_z;
    return out;
}

Eigen::Vector3d provenance_marginal(const ScoreMatrix& m, std::size_t p) {
    return provenance_log_marginal(m, p).array().exp().matrix();
}

std::vector<Eigen::Vector3d> all_provenance_marginals(const ScoreMatrix& m) {
    std::vector<Eigen::Vector3d> out;
    out.reserve(m.provenances().size());
    for (std::size_t p = 0; p < m.provenances().size(); ++p) out.push_back(provenance_marginal(m, p));
    return out;
}

LossValue relevance_loss(const ScoreMatrix& m, const std::vector<Annotation>& annotations) {
    LossValue out{0.0, Matrix::Zero(m.rows(), 3)};
    if (annotations.empty()) return out;
    for (const auto& a : annotations) {
        const auto p = m.find(a.block, a.sentence);
        if (!p) {
            throw ContractError("annotation (" + std::to_string(a.sentence) + ", " + std::to_string(a.block) +
                                ") references a missing provenance");
        }
        if (a.cls >= kNumClasses) throw ContractError("annotation class out of range");
        const auto& prov = m.provenance(*p);
        const CellMask num = detail::rows_mask(m.rows(), prov.row_begin, prov.row_count, static_cast<int>(a.cls));
        const CellMask dom = detail::rows_mask(m.rows(), prov.row_begin, prov.row_count);
        const LossValue term = detail::log_mass(m.logits(), num, dom);
        out.value += term.value;
        out.grad += term.grad;
    }
    const double n = static_cast<double>(annotations.size());
    out.value /= n;
    out.grad /= n;
    return out;
}

VeracityDistribution ensemble_veracity(const ScoreMatrix& m) {
    if (m.provenances().empty()) throw ContractError("ensemble needs at least one provenance");
    // One global shift for every provenance keeps the K_{i,j} ratios intact.
    const double shift = m.logits().maxCoeff();
    std::array<double, 3> numer{0.0, 0.0, 0.0};
    for (std::size_t p = 0; p < m.provenances().size(); ++p) {
        const auto& prov = m.provenance(p);
        const Matrix block = m.logits().middleRows(prov.row_begin, prov.row_count);
        const double k = (block.array() - shift).exp().sum();
        const Matrix dist = provenance_distribution(m, p);
        for (std::size_t c = 0; c < 3; ++c) numer[c] += k * dist.col(static_cast<Eigen::Index>(c)).sum();
    }
    const double denom = numer[0] + numer[1] + numer[2];
    VeracityDistribution out;
    for (std::size_t c = 0; c < 3; ++c) out.p[c] = numer[c] / denom;
    return out;
}

LossValue veracity_log_likelihood(const ScoreMatrix& m, Label y) {
    const CellMask num = detail::rows_mask(m.rows(), 0, m.rows(), static_cast<int>(class_index(y)));
    const CellMask dom = CellMask::Ones(m.rows(), 3);
    return detail::log_mass(m.logits(), num, dom);
}

LossValue l2_penalty(const ScoreMatrix& m) {
    const double scale = 1.0 / (3.0 * static_cast<double>(m.rows()));
    return LossValue{m.logits().squaredNorm() * scale, 2.0 * scale * m.logits()};
}

LossValue total_loss(const ScoreMatrix& m, const std::vector<Annotation>& annotations, Label gold,
                     const LossConfig& cfg) {
    LossValue out = veracity_log_likelihood(m, gold);
    if (cfg.lambda_r != 0.0) {
        const LossValue rel = relevance_loss(m, annotations);
        out.value += cfg.lambda_r * rel.value;
        out.grad += cfg.lambda_r * rel.grad;
    }
    if (cfg.lambda_2 != 0.0) {
        const LossValue l2 = l2_penalty(m);
        out.value -= cfg.lambda_2 * l2.value;
        out.grad -= cfg.lambda_2 * l2.grad;
    }
    return out;
}

double relevance_score(const ScoreMatrix& m, std::size_t p) {
    const Eigen::Vector3d marginal = provenance_marginal(m, p);
    return std::clamp(marginal(kSupport) + marginal(kRefute), 0.0, 1.0);
}

std::vector<std::size_t> rank_provenances(const ScoreMatrix& m) {
    std::vector<double> scores(m.provenances().size());
    for (std::size_t p = 0; p < scores.size(); ++p) scores[p] = relevance_score(m, p);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        const auto& pa = m.provenance(a);
        const auto& pb = m.provenance(b);
        return std::tie(pa.block, pa.sentence) < std::tie(pb.block, pb.sentence);
    });
    return order;
}

std::vector<std::size_t> RationaleScores::select(double tau) const {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < scores.size(); ++t) {
        if (scores[t] > tau) out.push_back(t);
    }
    return out;
}

RationaleScores token_rationale_scores(const ScoreMatrix& m, double threshold) {
    RationaleScores out;
    out.threshold = threshold;
    out.scores.reserve(static_cast<std::size_t>(m.rows()));
    for (std::size_t p = 0; p < m.provenances().size(); ++p) {
        const Matrix dist = provenance_distribution(m, p);
        for (Eigen::Index w = 0; w < dist.rows(); ++w) out.scores.push_back(dist(w, kSupport) + dist(w, kRefute));
    }
    return out;
}

bool detect_conflicting(const std::vector<Eigen::Vector3d>& marginals, double threshold) {
    bool support = false;
    bool refute = false;
    for (const auto& m : marginals) {
        support = support || m(kSupport) > threshold;
        refute = refute || m(kRefute) > threshold;
    }
    return support && refute;
}

// ---------------------------------------------------------------------------

HeadConfig HeadConfig::for_dim(int dim, int outputs) {
    HeadConfig c;
    c.dim = dim;
    c.heads = dim >= 64 ? 8 : 4;
    while (c.heads > 1 && dim % c.heads != 0) --c.heads;
    c.slp_width = dim;
    c.outputs = outputs;
    return c;
}

nlohmann::json HeadConfig::to_json() const {
    return {{"dim", dim}, {"heads", heads}, {"slp_width", slp_width}, {"outputs", outputs}, {"dropout", dropout}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
    HeadConfig c;
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.slp_width = j.value("slp_width", c.slp_width);
    c.outputs = j.value("outputs", c.outputs);
    c.dropout = j.value("dropout", c.dropout);
    return c;
}

ScoringHead::ScoringHead(HeadConfig config, std::uint64_t seed, const std::string& prefix)
    : config_(config), prefix_(prefix) {
    if (config_.dim <= 0 || config_.heads <= 0 || config_.dim % config_.heads != 0) {
        throw ValidationError("head width must be a positive multiple of the head count");
    }
    std::mt19937_64 rng(seed);
    const Eigen::Index d = config_.dim;
    for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
        params_.add(prefix_ + name, xavier_uniform(d, d, rng));
        params_.add(prefix_ + name + "_bias", Matrix::Zero(1, d), false);
    }
    params_.add(prefix_ + "slp.ln.gamma", Matrix::Ones(1, d), false);
    params_.add(prefix_ + "slp.ln.beta", Matrix::Zero(1, d), false);
    params_.add(prefix_ + "slp.w", xavier_uniform(d, config_.slp_width, rng));
    params_.add(prefix_ + "slp.bias", Matrix::Zero(1, config_.slp_width), false);
    params_.add(prefix_ + "proj.w", xavier_uniform(config_.slp_width, config_.outputs, rng));
}

Var ScoringHead::forward(Graph& graph, Var evidence, Var markers) const {
    if (evidence.cols() != config_.dim || markers.cols() != config_.dim) {
        throw ContractError("head expects width " + std::to_string(config_.dim) + ", got " +
                            std::to_string(evidence.cols()));
    }
    auto P = [&](const char* name) { return graph.param(params_.at(prefix_ + name)); };
    Var q = ag::linear(evidence, P("attn.wq"), P("attn.wq_bias"));
    Var k = ag::linear(markers, P("attn.wk"), P("attn.wk_bias"));
    Var v = ag::linear(markers, P("attn.wv"), P("attn.wv_bias"));
    Var attended = ag::linear(ag::attention(q, k, v, config_.heads), P("attn.wo"), P("attn.wo_bias"));
    Var normed = ag::layer_norm(attended, P("slp.ln.gamma"), P("slp.ln.beta"));
    Var hidden = ag::gelu(ag::dropout(ag::linear(normed, P("slp.w"), P("slp.bias")), config_.dropout));
    return ag::matmul(hidden, P("proj.w"));
}

ScoreMatrix ScoringHead::compute(const GatheredReps& reps) const {
    Graph& graph = *reps.evidence.graph;
    Var scores = forward(graph, reps.evidence, reps.markers);
    return ScoreMatrix::from_reps(scores.value(), reps);
}

}  // namespace dissector
