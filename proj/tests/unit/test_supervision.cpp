#include <doctest.h>

#include <cmath>
#include <random>

#include "dissector/supervision.hpp"
#include "support.hpp"

using namespace dissector;
using namespace dissector::testing;

namespace {

// Blocks 0 and 1, two sentences each.
ScoreMatrix two_blocks(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix m = normal_init(7, 3, 1.5, rng);
    return ScoreMatrix::from_rows(m, {{0, 0}, {0, 0}, {0, 1}, {1, 0}, {1, 1}, {1, 1}, {1, 1}});
}

}  // namespace

TEST_CASE("SSE schedule endpoints and midpoint") {
    const SseSchedule s;
    CHECK(sse_probability(0, s) == 0.0);
    CHECK(sse_probability(1000, s) == 0.0);
    CHECK(sse_probability(2000, s) == 0.475);
    CHECK(sse_probability(3000, s) == 0.95);
    CHECK(sse_probability(100000, s) == 0.95);
    double last = 0.0;
    for (long long step = 0; step < 4000; step += 7) {
        const double p = sse_probability(step, s);
        CHECK(p >= last);
        CHECK(p <= s.p_max);
        last = p;
    }
    CHECK_THROWS_AS((SseSchedule{10, 10, 0.5}.validate()), ValidationError);
    CHECK_THROWS_AS((SseSchedule{0, 10, 1.5}.validate()), ValidationError);
}

TEST_CASE("block marginal sums sentence marginals") {
    const Eigen::Vector3d a(0.1, 0.3, 0.05), b(0.2, 0.1, 0.25);
    CHECK(block_marginal({a})(0) == doctest::Approx(0.1));
    CHECK(block_marginal({a, b})(kSupport) == doctest::Approx(0.3));
    CHECK_THROWS_AS(block_marginal({}), ContractError);

    // against direct token summation under the block softmax
    const ScoreMatrix m = two_blocks(51);
    const auto sm = block_sentence_marginals(m, 1);
    REQUIRE(sm.marginals.size() == 2);
    const Matrix rows = m.logits().middleRows(3, 4);
    const double z = rows.array().exp().sum();
    const Eigen::Vector3d oracle = rows.array().exp().colwise().sum().transpose() / z;
    CHECK((block_marginal(sm.marginals) - oracle).cwiseAbs().maxCoeff() < 1e-12);

    // a one-sentence block reduces to the provenance marginal
    const ScoreMatrix single = ScoreMatrix::from_rows(m.logits().topRows(2), {{0, 0}, {0, 0}});
    CHECK((block_sentence_marginals(single, 0).marginals[0] - provenance_marginal(single, 0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(block_sentence_marginals(m, 9), ContractError);
}

TEST_CASE("SSE samples in proportion to S+R mass") {
    const std::vector<Eigen::Vector3d> sm{{0.3, 0.1, 0.1}, {0.05, 0.05, 0.4}};
    const auto w = sse_sampling_distribution(sm);
    CHECK(w[0] == doctest::Approx(0.8));
    CHECK(w[1] == doctest::Approx(0.2));
    int first = 0;
    const int n = 20000;
    for (int s = 0; s < n; ++s) first += sse_estimate(sm, static_cast<std::uint64_t>(s)).sentence == 0;
    // binomial standard error is about 0.003
    CHECK(static_cast<double>(first) / n == doctest::Approx(0.8).epsilon(0.02));

    CHECK(sse_estimate({{0.2, 0.1, 0.7}}, 3).sentence == 0);
    const auto u = sse_sampling_distribution({{0, 0, 0.5}, {0, 0, 0.5}});
    CHECK(u == std::vector<double>{0.5, 0.5});
}

TEST_CASE("SSE never exceeds the block marginal") {
    std::mt19937_64 rng(52);
    for (int trial = 0; trial < 300; ++trial) {
        const ScoreMatrix m = random_matrix(rng, 3, 4, 3);
        const int block = static_cast<int>(rng() % 3);
        const auto sm = block_sentence_marginals(m, block);
        const Eigen::Vector3d total = block_marginal(sm.marginals);
        const SseChoice c = sse_estimate(sm.marginals, rng());
        for (int y = 0; y < 3; ++y) CHECK(c.marginal(y) <= total(y) + 1e-15);
    }
}

TEST_CASE("p_sse = 0 gives the block loss, p_sse = 1 on singleton blocks gives the sentence loss") {
    const ScoreMatrix m = two_blocks(53);
    BlockAnnotation ann{{{0, kSupport}}, {{1, 0}}};
    const BlockLossConfig cfg{0.7, 1.0};
    BlockLossTrace trace;
    const LossValue vanilla = block_supervised_loss(m, ann, Label::Support, 0.0, 9, cfg, &trace);
    CHECK_FALSE(trace.used_sse);
    const Matrix block0 = m.logits().topRows(3);
    const double pos = std::log(block0.col(0).array().exp().sum() / block0.array().exp().sum());
    const Matrix neg = m.logits().row(3);
    const double irr = std::log(std::exp(neg(0, 2)) / neg.array().exp().sum());
    const double expected = veracity_log_likelihood(m, Label::Support).value + 0.7 * 0.5 * (pos + irr) -
                            l2_penalty(m).value;
    CHECK(vanilla.value == doctest::Approx(expected).epsilon(1e-12));

    std::mt19937_64 rng(54);
    Matrix logits = normal_init(5, 3, 1.0, rng);
    const ScoreMatrix singles = ScoreMatrix::from_rows(logits, {{0, 0}, {0, 0}, {1, 0}, {2, 0}, {2, 0}});
    BlockAnnotation sann{{{0, kRefute}, {2, kRefute}}, {{1, 0}}};
    const std::vector<Annotation> sentence{{0, 0, kRefute}, {2, 0, kRefute}, {1, 0, kIrrelevant}};
    const double sse = block_supervised_loss(singles, sann, Label::Refute, 1.0, 4, cfg).value;
    CHECK(sse == doctest::Approx(total_loss(singles, sentence, Label::Refute, {0.7, 1.0}).value).epsilon(1e-12));
}

TEST_CASE("block loss follows a hand trace of its coin and samples") {
    const ScoreMatrix m = two_blocks(55);
    BlockAnnotation ann{{{0, kRefute}, {1, kRefute}}, {}};
    const std::uint64_t seed = 123;
    for (double p : {0.0, 0.3, 0.6, 1.0}) {
        BlockLossTrace trace;
        const double got = block_supervised_loss(m, ann, Label::Refute, p, seed, {0.7, 0.0}, &trace).value;
        std::mt19937_64 rng(seed);
        const bool sse = p > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
        CHECK(trace.used_sse == sse);
        double rel = 0.0;
        for (int b = 0; b < 2; ++b) {
            const auto sm = block_sentence_marginals(m, b);
            if (sse) {
                const auto choice = sse_estimate(sm.marginals, rng());
                CHECK(trace.chosen[static_cast<std::size_t>(b)] == choice.sentence);
                rel += std::log(choice.marginal(kRefute));
            } else {
                rel += std::log(block_marginal(sm.marginals)(kRefute));
            }
        }
        CHECK(got == doctest::Approx(veracity_log_likelihood(m, Label::Refute).value + 0.7 * rel / 2).epsilon(1e-12));
    }
    // same seed, same value
    CHECK(block_supervised_loss(m, ann, Label::Refute, 0.5, 7).value ==
          block_supervised_loss(m, ann, Label::Refute, 0.5, 7).value);
}

TEST_CASE("block loss gradient matches central differences in both modes") {
    std::mt19937_64 rng(56);
    for (int trial = 0; trial < 12; ++trial) {
        const ScoreMatrix m = random_matrix(rng, 3, 3, 3, 2.0);
        const auto layout = row_layout(m);
        BlockAnnotation ann{{{0, kSupport}, {1, kSupport}}, {{2, 0}}};
        const double p = trial % 2 ? 1.0 : 0.0;
        const std::uint64_t seed = rng();
        const LossValue analytic = block_supervised_loss(m, ann, Label::Support, p, seed);
        const Matrix numeric = numeric_gradient(
            [&](const Matrix& x) {
                return block_supervised_loss(ScoreMatrix::from_rows(x, layout), ann, Label::Support, p, seed).value;
            },
            m.logits());
        CHECK(relative_error(analytic.grad, numeric) < 1e-4);
    }
}

TEST_CASE("schedule overload and supervision names") {
    const ScoreMatrix m = two_blocks(57);
    BlockAnnotation ann{{{0, kSupport}}, {}};
    const SseSchedule s;
    CHECK(block_supervised_loss(m, ann, Label::Support, 500LL, s, 3).value ==
          block_supervised_loss(m, ann, Label::Support, 0.0, 3).value);
    CHECK(parse_supervision("block+sse") == Supervision::BlockSse);
    CHECK(supervision_name(Supervision::Block) == "block");
    CHECK_THROWS_AS(parse_supervision("tokens"), ValidationError);
}
