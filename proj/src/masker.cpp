#include "dissector/masker.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace dissector {

Temperature temperature(long long step, const TemperatureSchedule& sched) {
    if (step <= sched.warmup_steps) return {sched.tau_start, false};
    if (step > sched.ramp_end) return {sched.tau_end, true};
    const double frac = static_cast<double>(step - sched.warmup_steps) /
                        static_cast<double>(sched.ramp_end - sched.warmup_steps);
    return {(1.0 - frac) * sched.tau_start + frac * sched.tau_end, false};
}

Matrix gumbel_noise(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(std::numeric_limits<double>::min(), 1.0);
    Matrix g(rows, cols);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = -std::log(-std::log(unif(rng)));
    return g;
}

Eigen::Vector2d gumbel_sample(const Eigen::Vector2d& logits, double tau, bool hard, std::uint64_t seed) {
    if (tau <= 0.0) throw ContractError("Gumbel-softmax temperature must be positive");
    std::mt19937_64 rng(seed);
    const Matrix noise = gumbel_noise(1, 2, rng);
    const Eigen::Array2d z = (logits.array() + noise.row(0).transpose().array()) / tau;
    const double mx = z.maxCoeff();
    Eigen::Array2d e = (z - mx).exp();
    e /= e.sum();
    if (!hard) return e.matrix();
    return e(0) >= e(1) ? Eigen::Vector2d(1.0, 0.0) : Eigen::Vector2d(0.0, 1.0);
}

RowVector mix_embeddings(const RowVector& e, const Eigen::Vector2d& mask, const RowVector& e_m) {
    if (e.size() != e_m.size()) throw ContractError("mask embedding width differs from token embedding");
    return mask(0) * e + mask(1) * e_m;
}

MaskerLoss masker_loss(const ScoreMatrix& dissector_scores, const Matrix& mask, double lambda_s) {
    if (mask.rows() != dissector_scores.rows() || mask.cols() != 2) throw ContractError("one mask pair per evidence token");
    if (lambda_s < 0.0) throw ContractError("sparsity weight must be non-negative");
    const LossValue nei = veracity_log_likelihood(dissector_scores, Label::Nei);
    const double scale = lambda_s / static_cast<double>(mask.rows());
    MaskerLoss out;
    out.value = nei.value - scale * mask.col(1).sum();
    out.grad_scores = nei.grad;
    out.grad_mask = Matrix::Zero(mask.rows(), 2);
    out.grad_mask.col(1).setConstant(-scale);
    return out;
}

nlohmann::json MaskerConfig::to_json() const {
    return {{"lambda_s", lambda_s},
            {"tau_start", schedule.tau_start},
            {"tau_end", schedule.tau_end},
            {"tau_warmup", schedule.warmup_steps},
            {"tau_ramp_end", schedule.ramp_end}};
}

MaskerConfig MaskerConfig::from_json(const nlohmann::json& j) {
    MaskerConfig c;
    c.lambda_s = j.value("lambda_s", c.lambda_s);
    c.schedule.tau_start = j.value("tau_start", c.schedule.tau_start);
    c.schedule.tau_end = j.value("tau_end", c.schedule.tau_end);
    c.schedule.warmup_steps = j.value("tau_warmup", c.schedule.warmup_steps);
    c.schedule.ramp_end = j.value("tau_ramp_end", c.schedule.ramp_end);
    return c;
}

MaskerModel::MaskerModel(TransformerConfig encoder, HeadConfig head, Vocabulary vocab, std::uint64_t seed)
    : encoder_(std::make_unique<TinyTransformerEncoder>(encoder, std::move(vocab), mix_seed(seed, "masker.encoder", 0))),
      head_([&] {
          head.outputs = 2;
          return head;
      }(), mix_seed(seed, "masker.head", 0), "masker.head.") {
    extra_.add("masker.mask_embedding", Matrix::Zero(1, encoder.dim), false);
}

MaskerModel::MaskerModel(const VerifierModel& dissector, std::uint64_t seed)
    : MaskerModel(dissector.spec().encoder, dissector.spec().head, dissector.encoder().vocabulary(), seed) {
    encoder_->parameters().copy_values_from(dissector.encoder().parameters());
}

Var MaskerModel::logits(Graph& graph, const PreparedClaim& claim) const {
    const GatheredReps reps = encode_blocks(graph, claim.sequences, *encoder_);
    return head_.forward(graph, reps.evidence, reps.markers);
}

Matrix MaskerModel::logits(const PreparedClaim& claim) const {
    Graph graph(false);
    return logits(graph, claim).value();
}

ForwardResult forward_with_mask(Graph& graph, const VerifierModel& dissector, const PreparedClaim& claim, Var mask,
                                Var mask_embedding) {
    std::vector<EmbeddingHook> hooks;
    int offset = 0;
    for (const auto& seq : claim.sequences) {
        const int n = static_cast<int>(seq.evidence_token_positions.size());
        std::vector<int> rows(static_cast<std::size_t>(n));
        for (int t = 0; t < n; ++t) rows[static_cast<std::size_t>(t)] = offset + t;
        offset += n;
        hooks.push_back([rows = std::move(rows), positions = seq.evidence_token_positions, mask,
                         mask_embedding](Var x) {
            if (rows.empty()) return x;
            return ag::mix_rows(x, positions, ag::gather_rows(mask, rows), mask_embedding);
        });
    }
    if (offset != mask.rows()) throw ContractError("mask rows differ from the number of evidence tokens");
    return dissector.forward(graph, claim, hooks);
}

MaskedForward masked_forward(Graph& graph, const MaskerModel& masker, const VerifierModel& dissector,
                             const PreparedClaim& claim, const Matrix& noise, const Temperature& temp) {
    graph.freeze(dissector.encoder().parameters());
    graph.freeze(dissector.head().parameters());
    MaskedForward out;
    out.mask_logits = masker.logits(graph, claim);
    out.mask = ag::gumbel_softmax(out.mask_logits, noise, temp.tau, temp.hard);
    out.dissector = forward_with_mask(graph, dissector, claim, out.mask, graph.param(masker.mask_embedding()));
    return out;
}

RationaleScores extract_masker_rationales(const MaskerModel& masker, const PreparedClaim& claim, double threshold) {
    const Matrix l = masker.logits(claim);
    RationaleScores out;
    out.threshold = threshold;
    out.scores.assign(l.col(1).data(), l.col(1).data() + l.rows());
    return out;
}

}  // namespace dissector
