#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "dissector/baseline.hpp"
#include "support.hpp"

using namespace dissector;
using namespace dissector::testing;

namespace {

// Brute-force softmax mass of the cells (row, class) selected by `take`, over rows selected by `domain`.
double mass(const Matrix& m, const std::function<bool(Eigen::Index)>& domain,
            const std::function<bool(Eigen::Index, Eigen::Index)>& take) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (!domain(r)) continue;
        for (Eigen::Index c = 0; c < 3; ++c) {
            const double e = std::exp(m(r, c));
            den += e;
            if (take(r, c)) num += e;
        }
    }
    return num / den;
}

// rows 0-1 sentence (0,0), row 2 sentence (0,1), rows 3-4 sentence (1,0)
ScoreMatrix fixture() {
    Matrix m(5, 3);
    m << 1.0, 0.2, -0.5,  //
        0.3, 0.1, 0.0,    //
        -1.0, 2.0, 0.5,   //
        0.0, 0.4, 1.5,    //
        0.7, -0.3, 0.2;
    return ScoreMatrix::from_rows(m, {{0, 0}, {0, 0}, {0, 1}, {1, 0}, {1, 0}});
}

auto rows_of(std::initializer_list<Eigen::Index> rows) {
    std::set<Eigen::Index> s(rows);
    return [s](Eigen::Index r) { return s.count(r) > 0; };
}

}  // namespace

TEST_CASE("joint distribution: uniform, restricted and normalised") {
    const ScoreMatrix zero = ScoreMatrix::from_rows(Matrix::Zero(2, 3), {{0, 0}, {0, 1}});
    const JointDistribution j = joint_distribution(zero);
    CHECK((j.p.array() - 1.0 / 6.0).abs().maxCoeff() < 1e-15);
    CHECK(sentence_marginal(zero, j, 0).sum() == doctest::Approx(0.5));
    CHECK(sentence_marginal(zero, j, 1)(kRefute) == doctest::Approx(1.0 / 6.0));

    const ScoreMatrix m = fixture();
    const JointDistribution r = joint_distribution(m, std::vector<SentenceKey>{{0, 1}});
    const Eigen::RowVectorXd row = m.logits().row(2);
    const Eigen::RowVectorXd soft = row.array().exp() / row.array().exp().sum();
    CHECK((r.p.row(2) - soft).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.p.sum() == doctest::Approx(1.0));
    CHECK(r.participating == std::vector<bool>{false, true, false});
    CHECK_THROWS_AS(sentence_marginal(m, r, 0), ContractError);
    CHECK_THROWS_AS(joint_distribution(m, std::vector<SentenceKey>{}), ContractError);
    CHECK_THROWS_AS(joint_distribution(m, std::vector<SentenceKey>{{7, 7}}), ContractError);
}

TEST_CASE("sentence marginals match brute-force summation and sum to one") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const ScoreMatrix m = random_matrix(rng, 3, 3, 4);
        const JointDistribution j = joint_distribution(m);
        double total = 0.0;
        for (std::size_t p = 0; p < m.provenances().size(); ++p) {
            const auto& prov = m.provenance(p);
            const Eigen::Vector3d s = sentence_marginal(m, j, p);
            for (Eigen::Index c = 0; c < 3; ++c) {
                const double oracle = mass(
                    m.logits(), [](Eigen::Index) { return true; },
                    [&](Eigen::Index r, Eigen::Index cc) { return cc == c && r >= prov.row_begin && r < prov.row_begin + prov.row_count; });
                CHECK(s(c) == doctest::Approx(oracle).epsilon(1e-10));
            }
            total += s.sum();
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("L_b0 on a fixture is restricted to positives and negatives") {
    const ScoreMatrix m = fixture();
    CHECK(loss_b0(m, {}).value == 0.0);
    BaselineAnnotation ann{{{0, 0, kSupport}}, {{1, 0}}};
    const double expected = std::log(mass(m.logits(), rows_of({0, 1, 3, 4}),
                                          [](Eigen::Index r, Eigen::Index c) { return r <= 1 && c == 0; }));
    CHECK(loss_b0(m, ann).value == doctest::Approx(expected).epsilon(1e-12));
    CHECK_THROWS_AS(loss_b0(m, BaselineAnnotation{{{0, 0, kIrrelevant}}, {}}), ContractError);
}

TEST_CASE("L_b1 is the log class mass of the unrestricted joint") {
    CHECK(loss_b1(ScoreMatrix::from_rows(Matrix::Zero(3, 3), {{0, 0}, {0, 1}, {1, 0}}), Label::Refute).value ==
          doctest::Approx(std::log(1.0 / 3.0)));
    // class masses (0.5, 0.3, 0.2)
    Matrix m(1, 3);
    m << std::log(0.5), std::log(0.3), std::log(0.2);
    CHECK(loss_b1(ScoreMatrix::from_rows(m, {{0, 0}}), Label::Support).value == doctest::Approx(std::log(0.5)));
    const ScoreMatrix f = fixture();
    const double oracle = std::log(mass(f.logits(), [](Eigen::Index) { return true; },
                                        [](Eigen::Index, Eigen::Index c) { return c == 2; }));
    CHECK(loss_b1(f, Label::Nei).value == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("L_b2 adds irrelevant sentences at the NEI column") {
    const ScoreMatrix m = fixture();
    BaselineAnnotation ann{{{0, 0, kRefute}}, {}};
    const auto domain = rows_of({0, 1, 3, 4});
    const double a = std::log(mass(m.logits(), domain, [](Eigen::Index r, Eigen::Index c) { return r <= 1 && c == 1; }));
    const double b = std::log(mass(m.logits(), domain, [](Eigen::Index r, Eigen::Index c) { return r >= 3 && c == 2; }));
    CHECK(loss_b2(m, ann, {{1, 0}}).value == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));
}

TEST_CASE("L_b3 and L_b4 marginalise over positives and classes") {
    const ScoreMatrix m = fixture();
    BaselineAnnotation one{{{0, 1, kRefute}}, {{1, 0}}};
    CHECK(loss_b3(m, one).value == doctest::Approx(loss_b0(m, one).value).epsilon(1e-12));

    BaselineAnnotation two{{{0, 0, kSupport}, {0, 1, kRefute}}, {{1, 0}}};
    const double b3 = std::log(mass(m.logits(), [](Eigen::Index) { return true; }, [](Eigen::Index r, Eigen::Index c) {
        return (r <= 1 && c == 0) || (r == 2 && c == 1);
    }));
    CHECK(loss_b3(m, two).value == doctest::Approx(b3).epsilon(1e-12));
    const double b4 = std::log(mass(m.logits(), [](Eigen::Index) { return true; }, [](Eigen::Index r, Eigen::Index) { return r <= 2; }));
    CHECK(loss_b4(m, two).value == doctest::Approx(b4).epsilon(1e-12));

    BaselineAnnotation all{{{0, 0, kSupport}, {0, 1, kSupport}, {1, 0, kSupport}}, {}};
    CHECK(loss_b4(m, all).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("variant ordering and sign hold on random inputs") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const ScoreMatrix m = random_matrix(rng, 3, 3, 3);
        BaselineAnnotation ann;
        for (const auto& p : m.provenances()) {
            const auto u = rng() % 3;
            if (u == 0) ann.positives.push_back({p.block, p.sentence, static_cast<std::size_t>(rng() % 2)});
            if (u == 1) ann.negatives.emplace_back(p.block, p.sentence);
        }
        if (ann.positives.empty()) continue;
        const double b0 = loss_b0(m, ann).value;
        const double b3 = loss_b3(m, ann).value;
        const double b4 = loss_b4(m, ann).value;
        CHECK(b0 <= 1e-12);
        CHECK(b3 >= b0 - 1e-12);
        CHECK(b4 >= b3 - 1e-12);
        CHECK(b4 <= 1e-12);
        CHECK(loss_b1(m, label_from_index(rng() % 3)).value <= 1e-12);
    }
}

TEST_CASE("baseline objectives have correct gradients") {
    std::mt19937_64 rng(43);
    for (auto variant : {BaselineVariant::B0, BaselineVariant::B2, BaselineVariant::B3, BaselineVariant::B4}) {
        for (int trial = 0; trial < 10; ++trial) {
            const ScoreMatrix m = random_matrix(rng, 3, 3, 3, 2.0);
            const auto layout = row_layout(m);
            BaselineAnnotation ann;
            std::vector<SentenceKey> irrelevant;
            for (const auto& p : m.provenances()) {
                const auto u = rng() % 3;
                if (u == 0) ann.positives.push_back({p.block, p.sentence, static_cast<std::size_t>(rng() % 2)});
                if (u == 1) ann.negatives.emplace_back(p.block, p.sentence);
                if (u == 2) irrelevant.emplace_back(p.block, p.sentence);
            }
            const BaselineLossConfig cfg{variant, 0.5};
            const Label gold = label_from_index(rng() % 3);
            const LossValue analytic = baseline_objective(m, ann, gold, cfg, irrelevant);
            const Matrix numeric = numeric_gradient(
                [&](const Matrix& x) {
                    return baseline_objective(ScoreMatrix::from_rows(x, layout), ann, gold, cfg, irrelevant).value;
                },
                m.logits());
            CHECK(relative_error(analytic.grad, numeric) < 1e-4);
        }
    }
}

TEST_CASE("objective is L_b1 alone without positives, else the 0.5 mean") {
    const ScoreMatrix m = fixture();
    const BaselineLossConfig cfg;
    CHECK(baseline_objective(m, {}, Label::Nei, cfg).value == doctest::Approx(loss_b1(m, Label::Nei).value));
    BaselineAnnotation ann{{{0, 0, kSupport}}, {{1, 0}}};
    CHECK(baseline_objective(m, ann, Label::Support, cfg).value ==
          doctest::Approx(0.5 * loss_b1(m, Label::Support).value + 0.5 * loss_b0(m, ann).value));
}

TEST_CASE("baseline verdict equals the dissector ensemble on the same scores") {
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 300; ++trial) {
        const ScoreMatrix m = random_matrix(rng, 4, 3, 4);
        const BaselineVerdict v = baseline_rank_and_verdict(m);
        const VeracityDistribution e = ensemble_veracity(m);
        for (std::size_t c = 0; c < 3; ++c) CHECK(v.veracity[c] == doctest::Approx(e[c]).epsilon(1e-9));
        for (std::size_t i = 1; i < v.ranking.size(); ++i) CHECK(v.scores[v.ranking[i - 1]] >= v.scores[v.ranking[i]]);
    }
    const BaselineVerdict zero = baseline_rank_and_verdict(ScoreMatrix::from_rows(Matrix::Zero(2, 3), {{0, 0}, {1, 0}}));
    CHECK(zero.veracity[0] == doctest::Approx(1.0 / 3.0));
    CHECK(zero.scores[0] == zero.scores[1]);
    CHECK(zero.ranking == std::vector<std::size_t>{0, 1});
}

TEST_CASE("baseline variant names") {
    CHECK(parse_baseline_variant("baseline") == BaselineVariant::B0);
    CHECK(parse_baseline_variant("b4") == BaselineVariant::B4);
    CHECK(baseline_variant_name(BaselineVariant::B3) == "b3");
    CHECK_THROWS_AS(parse_baseline_variant("b9"), ValidationError);
}
