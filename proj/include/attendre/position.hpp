#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>

namespace attendre {

/// Relative distance capped at n_local. Pairs outside the local band all
/// share the maximum in-band distance.
inline std::int64_t capped_distance(std::int64_t q_pos, std::int64_t k_pos, std::int64_t n_local) {
    const std::int64_t dist = std::llabs(q_pos - k_pos);
    return dist <= n_local ? dist : n_local;
}

/// Additive similarity penalty -beta * log(1 + capped_distance). beta = 0 (or
/// n_local = 0) leaves scores untouched.
struct DistanceTransform {
    std::int64_t n_local = 0;
    double beta = 0.0;

    bool active() const { return beta != 0.0 && n_local > 0; }

    double apply(double similarity, std::int64_t q_pos, std::int64_t k_pos) const {
        if (!active()) return similarity;
        const auto dist = capped_distance(q_pos, k_pos, n_local);
        return similarity - beta * std::log1p(static_cast<double>(dist));
    }
};

} // namespace attendre
