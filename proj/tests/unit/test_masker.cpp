#include <doctest.h>

#include <cmath>
#include <random>

#include "dissector/masker.hpp"
#include "pipeline.hpp"
#include "support.hpp"

using namespace dissector;
using namespace dissector::testing;

namespace {

const TinyPipeline& pipeline() {
    static const TinyPipeline p;
    return p;
}

const PreparedClaim& first_non_nei(const PreparedSplit& split) {
    for (std::size_t i = 0; i < split.claims.size(); ++i) {
        if (split.claims[i].label != Label::Nei) return split.prepared[i];
    }
    throw std::logic_error("no labelled claim");
}

Eigen::Index evidence_rows(const PreparedClaim& c) {
    Eigen::Index rows = 0;
    for (const auto& s : c.sequences) rows += static_cast<Eigen::Index>(s.evidence_token_positions.size());
    return rows;
}

}  // namespace

TEST_CASE("temperature schedule") {
    const TemperatureSchedule s;
    for (long long step : {0LL, 1LL, 100LL}) {
        CHECK(temperature(step, s).tau == 1.0);
        CHECK_FALSE(temperature(step, s).hard);
    }
    CHECK(temperature(400, s).tau == 0.55);
    CHECK_FALSE(temperature(400, s).hard);
    CHECK(temperature(700, s).tau == 0.1);
    CHECK_FALSE(temperature(700, s).hard);
    CHECK(temperature(701, s).hard);
    CHECK(temperature(5000, s).tau == 0.1);
    double last = 2.0;
    for (long long step = 0; step <= 800; step += 3) {
        CHECK(temperature(step, s).tau <= last);
        last = temperature(step, s).tau;
    }
}

TEST_CASE("gumbel samples are normalised and hard samples are one-hot") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Eigen::Vector2d logits(0.3 * static_cast<double>(seed % 7) - 1.0, 0.4);
        const Eigen::Vector2d soft = gumbel_sample(logits, 0.7, false, seed);
        CHECK(soft.sum() == doctest::Approx(1.0));
        CHECK(soft.minCoeff() >= 0.0);
        const Eigen::Vector2d hard = gumbel_sample(logits, 0.7, true, seed);
        CHECK(hard.sum() == 1.0);
        CHECK(hard.maxCoeff() == 1.0);
        // the hard sample is the argmax of the soft one drawn with the same noise
        CHECK(hard(1) == (soft(1) > soft(0) ? 1.0 : 0.0));
    }
    // a dominant keep logit almost never masks
    int masked = 0;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) masked += gumbel_sample({8.0, -8.0}, 1.0, true, seed)(1) == 1.0;
    CHECK(masked < 5);

    std::mt19937_64 rng(3);
    const Matrix g = gumbel_noise(4000, 2, rng);
    // Gumbel(0, 1) has mean equal to the Euler-Mascheroni constant
    CHECK(g.mean() == doctest::Approx(0.5772).epsilon(0.05));
}

TEST_CASE("mix_embeddings interpolates the token and mask embeddings") {
    const RowVector e = RowVector::Constant(3, 2.0);
    const RowVector m = RowVector::Constant(3, -1.0);
    CHECK(mix_embeddings(e, {1.0, 0.0}, m) == e);
    CHECK(mix_embeddings(e, {0.0, 1.0}, m) == m);
    CHECK(mix_embeddings(e, {0.25, 0.75}, m)(0) == doctest::Approx(0.5 - 0.75));
}

TEST_CASE("masker loss value and gradients") {
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 10; ++trial) {
        const ScoreMatrix m = random_matrix(rng, 2, 3, 3, 2.0);
        const auto layout = row_layout(m);
        Matrix mask(m.rows(), 2);
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const double keep = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            mask.row(r) << keep, 1.0 - keep;
        }
        const double lambda = 0.8;
        const MaskerLoss loss = masker_loss(m, mask, lambda);
        const double expected =
            std::log(ensemble_veracity(m)[kIrrelevant]) - lambda / static_cast<double>(m.rows()) * mask.col(1).sum();
        CHECK(loss.value == doctest::Approx(expected).epsilon(1e-12));
        const Matrix numeric_scores = numeric_gradient(
            [&](const Matrix& x) { return masker_loss(ScoreMatrix::from_rows(x, layout), mask, lambda).value; },
            m.logits());
        CHECK(relative_error(loss.grad_scores, numeric_scores) < 1e-6);
        const Matrix numeric_mask =
            numeric_gradient([&](const Matrix& x) { return masker_loss(m, x, lambda).value; }, mask);
        CHECK(relative_error(loss.grad_mask, numeric_mask) < 1e-6);
    }
    const ScoreMatrix m = ScoreMatrix::from_rows(Matrix::Zero(2, 3), {{0, 0}, {0, 1}});
    CHECK_THROWS_AS(masker_loss(m, Matrix::Zero(3, 2), 1.0), ContractError);
    CHECK_THROWS_AS(masker_loss(m, Matrix::Zero(2, 2), -1.0), ContractError);
}

TEST_CASE("an all-keep mask reproduces the dissector exactly") {
    const TinyPipeline& p = pipeline();
    const VerifierModel dissector = p.model();
    const MaskerModel masker(dissector, 9);
    for (std::size_t i = 0; i < 6; ++i) {
        const PreparedClaim& claim = p.dev.prepared[i];
        Graph plain(false);
        const Matrix expected = dissector.forward(plain, claim).scores.value();
        Graph g(false);
        Matrix keep = Matrix::Zero(evidence_rows(claim), 2);
        keep.col(0).setOnes();
        const ForwardResult masked =
            forward_with_mask(g, dissector, claim, g.constant(keep), g.param(masker.mask_embedding()));
        CHECK(masked.scores.value() == expected);
    }
}

TEST_CASE("masker forward shapes, hard masks and rationale scores") {
    const TinyPipeline& p = pipeline();
    const VerifierModel dissector = p.model();
    const MaskerModel masker(dissector, 9);
    const PreparedClaim& claim = first_non_nei(p.train);
    const Eigen::Index rows = evidence_rows(claim);
    const Matrix logits = masker.logits(claim);
    CHECK(logits.rows() == rows);
    CHECK(logits.cols() == 2);

    std::mt19937_64 rng(4);
    const Matrix noise = gumbel_noise(rows, 2, rng);
    Graph g(false);
    const MaskedForward mf = masked_forward(g, masker, dissector, claim, noise, Temperature{0.1, true});
    CHECK(mf.mask.rows() == rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        CHECK(mf.mask.value().row(r).sum() == 1.0);
        Eigen::Index arg = 0;
        (logits.row(r) + noise.row(r)).maxCoeff(&arg);
        CHECK(mf.mask.value()(r, arg) == 1.0);
    }
    CHECK(mf.dissector.scores.rows() == rows);

    const RationaleScores r = extract_masker_rationales(masker, claim);
    REQUIRE(r.scores.size() == static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) CHECK(r.scores[static_cast<std::size_t>(i)] == logits(i, 1));
}

TEST_CASE("masker objective gradient reaches the mask embedding") {
    const TinyPipeline& p = pipeline();
    const VerifierModel dissector = p.model();
    MaskerModel masker(dissector, 9);
    const PreparedClaim& claim = first_non_nei(p.train);
    std::mt19937_64 rng(5);
    const Matrix noise = gumbel_noise(evidence_rows(claim), 2, rng);
    const Temperature temp{0.8, false};
    Parameter& emb = masker.mask_embedding();

    auto objective = [&](bool backprop) {
        Graph g(false);
        const MaskedForward mf = masked_forward(g, masker, dissector, claim, noise, temp);
        const MaskerLoss loss = masker_loss(mf.dissector.matrix(), mf.mask.value(), 1.0);
        if (backprop) {
            const std::pair<Var, Matrix> seeds[] = {{mf.dissector.scores, loss.grad_scores}, {mf.mask, loss.grad_mask}};
            g.backward(seeds);
        }
        return loss.value;
    };
    for (auto* set : masker.parameter_sets()) set->zero_grad();
    objective(true);
    const Matrix analytic = emb.grad;
    const Matrix start = emb.value;
    const Matrix numeric = numeric_gradient(
        [&](const Matrix& x) {
            emb.value = x;
            return objective(false);
        },
        start);
    emb.value = start;
    CHECK(analytic.norm() > 0.0);
    CHECK(relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("masker config JSON round-trip") {
    MaskerConfig c;
    c.lambda_s = 0.3;
    c.schedule.ramp_end = 900;
    const MaskerConfig back = MaskerConfig::from_json(c.to_json());
    CHECK(back.lambda_s == 0.3);
    CHECK(back.schedule.ramp_end == 900);
    CHECK(back.schedule.tau_end == 0.1);
}
