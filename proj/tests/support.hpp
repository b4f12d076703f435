#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dissector/head.hpp"

namespace dissector::testing {

/// Random score matrix with `blocks` blocks, each of 1..max_sent sentences of 1..max_tok tokens.
inline ScoreMatrix random_matrix(std::mt19937_64& rng, int blocks, int max_sent, int max_tok, double spread = 3.0) {
    std::uniform_int_distribution<int> n_sent(1, max_sent);
    std::uniform_int_distribution<int> n_tok(1, max_tok);
    std::normal_distribution<double> value(0.0, spread);
    std::vector<std::pair<int, int>> rows;
    for (int b = 0; b < blocks; ++b) {
        const int s = n_sent(rng);
        for (int i = 0; i < s; ++i) {
            const int t = n_tok(rng);
            for (int k = 0; k < t; ++k) rows.emplace_back(b, i);
        }
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), 3);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = value(rng);
    return ScoreMatrix::from_rows(std::move(m), rows);
}

/// Row provenance of an existing matrix, for rebuilding it with other logits.
inline std::vector<std::pair<int, int>> row_layout(const ScoreMatrix& m) {
    std::vector<std::pair<int, int>> rows(static_cast<std::size_t>(m.rows()));
    for (const auto& p : m.provenances()) {
        for (Eigen::Index r = 0; r < p.row_count; ++r) rows[static_cast<std::size_t>(p.row_begin + r)] = {p.block, p.sentence};
    }
    return rows;
}

/// Central differences of f at every entry of x.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-5) {
    Matrix g(x.rows(), x.cols());
    Matrix probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = probe.data()[i];
        probe.data()[i] = keep + h;
        const double up = f(probe);
        probe.data()[i] = keep - h;
        const double down = f(probe);
        probe.data()[i] = keep;
        g.data()[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
    return (analytic - numeric).norm() / scale;
}

}  // namespace dissector::testing
