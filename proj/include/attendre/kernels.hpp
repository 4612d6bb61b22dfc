#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "attendre/common.hpp"
#include "attendre/matrix.hpp"

namespace attendre {

/// Pairwise dot-product similarity: result(i, j) = queries.row(i) . keys.row(j).
/// `scaled` divides by sqrt(d); off by default.
inline Matrix dot_similarity(const Matrix& queries, const Matrix& keys, bool scaled = false) {
    if (queries.cols() != keys.cols() || queries.cols() == 0) {
        throw DimensionError("dot_similarity: inner dimensions differ or are zero");
    }
    const double scale = scaled ? 1.0 / std::sqrt(static_cast<double>(queries.cols())) : 1.0;
    Matrix out(queries.rows(), keys.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        const auto q = queries.row(i);
        for (std::size_t j = 0; j < keys.rows(); ++j) {
            const auto k = keys.row(j);
            double acc = 0.0;
            for (std::size_t c = 0; c < q.size(); ++c) acc += q[c] * k[c];
            out(i, j) = acc * scale;
        }
    }
    return out;
}

struct SoftmaxResult {
    Matrix weights;
    /// Rows where every entry was masked; such rows are all-zero, not NaN.
    std::vector<bool> row_all_masked;
};

/// Row softmax over the allowed entries (mask != 0). Masked entries are
/// exactly 0 in the result.
inline SoftmaxResult masked_softmax(const Matrix& scores, const Matrix& mask) {
    if (scores.rows() != mask.rows() || scores.cols() != mask.cols()) {
        throw DimensionError("masked_softmax: scores/mask shape mismatch");
    }
    SoftmaxResult result;
    result.weights = Matrix(scores.rows(), scores.cols());
    result.row_all_masked.assign(scores.rows(), false);
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < scores.cols(); ++j) {
            if (mask(i, j) != 0.0) {
                row_max = std::max(row_max, scores(i, j));
                any = true;
            }
        }
        if (!any) {
            result.row_all_masked[i] = true;
            continue;
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < scores.cols(); ++j) {
            if (mask(i, j) != 0.0) {
                const double w = std::exp(scores(i, j) - row_max);
                result.weights(i, j) = w;
                denom += w;
            }
        }
        for (std::size_t j = 0; j < scores.cols(); ++j) {
            if (mask(i, j) != 0.0) result.weights(i, j) /= denom;
        }
    }
    return result;
}

struct TopK {
    std::vector<std::size_t> indices;
    std::vector<double> values;
};

/// The min(k, len) largest entries, sorted descending; ties go to the
/// smaller index.
inline TopK top_k(std::span<const double> scores, std::size_t k) {
    if (scores.empty()) {
        throw EmptyInput("top_k: empty input");
    }
    if (k == 0) {
        throw EmptyInput("top_k: k must be >= 1");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(k, scores.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    TopK out;
    out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    out.values.reserve(take);
    for (std::size_t idx : out.indices) out.values.push_back(scores[idx]);
    return out;
}

/// o_s = sum_r weights(s, r) * values[s].row(r). `values[s]` holds the
/// per-rank vectors retrieved for query s.
inline Matrix weighted_value_sum(const Matrix& weights, const std::vector<Matrix>& values) {
    if (values.size() != weights.rows()) {
        throw DimensionError("weighted_value_sum: one value block required per query");
    }
    const std::size_t dim = values.empty() ? 0 : values.front().cols();
    Matrix out(weights.rows(), dim);
    for (std::size_t s = 0; s < weights.rows(); ++s) {
        const Matrix& block = values[s];
        if (block.rows() != weights.cols() || block.cols() != dim) {
            throw DimensionError("weighted_value_sum: value block shape mismatch");
        }
        for (std::size_t r = 0; r < weights.cols(); ++r) {
            const double w = weights(s, r);
            if (w == 0.0) continue;
            const auto v = block.row(r);
            for (std::size_t c = 0; c < dim; ++c) out(s, c) += w * v[c];
        }
    }
    return out;
}

} // namespace attendre
