#pragma once

// Internal: log-probability of a set of cells of M under a softmax restricted to a domain of cells.

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "dissector/common.hpp"
#include "dissector/head.hpp"

namespace dissector::detail {

using CellMask = Eigen::ArrayXXd;  // 1 where the cell participates, 0 elsewhere

inline double masked_max(const Matrix& m, const CellMask& mask) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        if (mask.data()[i] != 0.0) mx = std::max(mx, m.data()[i]);
    }
    return mx;
}

/// Softmax over the cells of `mask` (zeros elsewhere) and the log-normaliser.
inline CellMask masked_softmax(const Matrix& m, const CellMask& mask, double& log_norm) {
    const double mx = masked_max(m, mask);
    if (!std::isfinite(mx)) throw ContractError("softmax over an empty cell set");
    CellMask e = ((m.array() - mx).exp()) * mask;
    const double z = e.sum();
    log_norm = mx + std::log(z);
    return e / z;
}

/// log sum_{cells in num} P(cell), P = softmax over `domain`; `num` must be a subset of `domain`.
inline LossValue log_mass(const Matrix& m, const CellMask& num, const CellMask& domain) {
    double log_num = 0.0;
    double log_dom = 0.0;
    const CellMask p_num = masked_softmax(m, num, log_num);
    const CellMask p_dom = masked_softmax(m, domain, log_dom);
    return LossValue{log_num - log_dom, (p_num - p_dom).matrix()};
}

inline CellMask rows_mask(Eigen::Index total_rows, Eigen::Index begin, Eigen::Index count, int column = -1) {
    CellMask mask = CellMask::Zero(total_rows, kNumClasses);
    if (column < 0) {
        mask.middleRows(begin, count) = 1.0;
    } else {
        mask.col(column).segment(begin, count) = 1.0;
    }
    return mask;
}

}  // namespace dissector::detail
