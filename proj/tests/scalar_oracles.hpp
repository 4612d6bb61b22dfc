#pragma once

// Slow, obviously-correct reference computations the tests compare the
// library against. Everything here recomputes from first principles: direct
// exp/sum softmax (no max shift), full sorts, triple loops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "attendre/matrix.hpp"
#include "attendre/rng.hpp"

namespace oracle {

inline double naive_dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline attendre::Matrix naive_similarities(const attendre::Matrix& queries,
                                           const attendre::Matrix& keys, bool scaled = false) {
    attendre::Matrix out(queries.rows(), keys.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        for (std::size_t j = 0; j < keys.rows(); ++j) {
            double v = naive_dot(queries.row(i), keys.row(j));
            if (scaled) v /= std::sqrt(static_cast<double>(queries.cols()));
            out(i, j) = v;
        }
    }
    return out;
}

/// Direct exp/sum softmax over the unmasked entries of one row.
inline std::vector<double> naive_masked_softmax_row(std::span<const double> logits,
                                                    std::span<const double> mask) {
    std::vector<double> out(logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        if (mask[j] != 0.0) total += std::exp(logits[j]);
    }
    if (total == 0.0) return out;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        if (mask[j] != 0.0) out[j] = std::exp(logits[j]) / total;
    }
    return out;
}

/// Full-sort top-k: order by value descending, index ascending on ties.
inline std::vector<std::size_t> naive_top_k(std::span<const double> values, std::size_t k) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] > values[b];
        return a < b;
    });
    order.resize(std::min(k, order.size()));
    return order;
}

/// Per-head dense attention, straight from the definition.
inline attendre::Matrix naive_dense_attention(const attendre::Matrix& queries,
                                              const attendre::Matrix& keys,
                                              const attendre::Matrix& values,
                                              const attendre::Matrix& mask, std::size_t heads,
                                              bool scaled = false) {
    const std::size_t head_dim = queries.cols() / heads;
    attendre::Matrix out(queries.rows(), queries.cols());
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < queries.rows(); ++i) {
            std::vector<double> logits(keys.rows(), 0.0);
            std::vector<double> mrow(keys.rows(), 0.0);
            for (std::size_t j = 0; j < keys.rows(); ++j) {
                mrow[j] = mask(i, j);
                double acc = 0.0;
                for (std::size_t c = h * head_dim; c < (h + 1) * head_dim; ++c) {
                    acc += queries(i, c) * keys(j, c);
                }
                logits[j] = scaled ? acc / std::sqrt(static_cast<double>(head_dim)) : acc;
            }
            const auto weights = naive_masked_softmax_row(logits, mrow);
            for (std::size_t j = 0; j < keys.rows(); ++j) {
                for (std::size_t c = h * head_dim; c < (h + 1) * head_dim; ++c) {
                    out(i, c) += weights[j] * values(j, c);
                }
            }
        }
    }
    return out;
}

/// Mean minus offset * population standard deviation.
inline double naive_initial_score(std::span<const double> scores, double offset) {
    if (scores.empty()) return 0.0;
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size());
    return mean - offset * std::sqrt(var);
}

inline attendre::Matrix random_matrix(attendre::SplitMix64& rng, std::size_t rows,
                                      std::size_t cols, double lo = -1.0, double hi = 1.0) {
    attendre::Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    }
    return m;
}

} // namespace oracle
