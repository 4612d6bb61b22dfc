#pragma once

#include <cmath>
#include <cstddef>

#include "attendre/common.hpp"
#include "attendre/kernels.hpp"
#include "attendre/matrix.hpp"

namespace attendre {

enum class MaskKind {
    kCausal,
    kBidirectional,
    kPrefix, // bidirectional over the prefix, causal afterwards
};

/// Builds a queries x keys admission mask (1 = may attend). Causal and prefix
/// masks assume queries and keys index the same sequence.
inline Matrix make_attention_mask(std::size_t n_queries, std::size_t n_keys, MaskKind kind,
                                  std::size_t prefix_len = 0) {
    if (n_queries == 0 || n_keys == 0) throw EmptyInput("mask: empty query or key axis");
    if (kind != MaskKind::kBidirectional && n_queries != n_keys) {
        throw DimensionError("mask: causal/prefix masks need matching query and key counts");
    }
    if (kind == MaskKind::kPrefix && prefix_len > n_keys) {
        throw DimensionError("mask: prefix length exceeds key count");
    }
    Matrix mask(n_queries, n_keys);
    for (std::size_t i = 0; i < n_queries; ++i) {
        for (std::size_t j = 0; j < n_keys; ++j) {
            bool open = true;
            switch (kind) {
                case MaskKind::kBidirectional: open = true; break;
                case MaskKind::kCausal: open = j <= i; break;
                case MaskKind::kPrefix: open = j < prefix_len || j <= i; break;
            }
            mask(i, j) = open ? 1.0 : 0.0;
        }
    }
    return mask;
}

/// Reference attention over the whole sequence at once: per-head softmax of
/// masked query-key products, then the weighted value sum. Rows whose mask is
/// all zero come back as zero.
inline Matrix dense_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                              const Matrix& mask, std::size_t heads = 1, bool scaled = false) {
    if (heads == 0) throw ConfigError("dense attention: heads must be >= 1");
    if (queries.cols() != keys.cols() || keys.cols() != values.cols()) {
        throw DimensionError("dense attention: query/key/value widths differ");
    }
    if (queries.cols() % heads != 0) {
        throw DimensionError("dense attention: width is not a multiple of heads");
    }
    if (keys.rows() != values.rows()) {
        throw DimensionError("dense attention: key and value counts differ");
    }
    if (mask.rows() != queries.rows() || mask.cols() != keys.rows()) {
        throw DimensionError("dense attention: mask shape mismatch");
    }

    const std::size_t head_dim = queries.cols() / heads;
    Matrix out(queries.rows(), queries.cols());
    for (std::size_t h = 0; h < heads; ++h) {
        Matrix logits(queries.rows(), keys.rows());
        for (std::size_t i = 0; i < queries.rows(); ++i) {
            for (std::size_t j = 0; j < keys.rows(); ++j) {
                if (mask(i, j) == 0.0) continue;
                double acc = 0.0;
                for (std::size_t c = h * head_dim; c < (h + 1) * head_dim; ++c) {
                    acc += queries(i, c) * keys(j, c);
                }
                if (scaled) acc /= std::sqrt(static_cast<double>(head_dim));
                logits(i, j) = acc;
            }
        }
        const SoftmaxResult soft = masked_softmax(logits, mask);
        for (std::size_t i = 0; i < queries.rows(); ++i) {
            for (std::size_t j = 0; j < keys.rows(); ++j) {
                const double w = soft.weights(i, j);
                if (w == 0.0) continue;
                for (std::size_t c = h * head_dim; c < (h + 1) * head_dim; ++c) {
                    out(i, c) += w * values(j, c);
                }
            }
        }
    }
    return out;
}

} // namespace attendre
