#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "attendre/common.hpp"
#include "attendre/layer.hpp"
#include "attendre/matrix.hpp"
#include "attendre/rng.hpp"

namespace attendre {

enum class TaskKind { kNeedle, kQuestionFirst };

inline const char* task_name(TaskKind kind) {
    return kind == TaskKind::kNeedle ? "needle" : "question_first";
}

inline TaskKind parse_task_kind(const std::string& text) {
    if (text == "needle") return TaskKind::kNeedle;
    if (text == "question_first") return TaskKind::kQuestionFirst;
    throw ConfigError("unknown task '" + text + "' (expected needle or question_first)");
}

struct TaskParams {
    TaskKind kind = TaskKind::kNeedle;
    std::size_t seq_len = 256;
    std::size_t chunk_len = 8; // S
    std::size_t dim = 8;
    std::size_t heads = 1;
    double target_mass = 0.8;
    std::size_t n_distinguished = 1;
    std::size_t distinguished_chunk = 0; // ignored for question_first (always 0)

    void validate() const {
        if (seq_len == 0) throw ConfigError("task: sequence length must be >= 1");
        if (chunk_len == 0) throw ConfigError("task: chunk length must be >= 1");
        if (dim < 2) throw ConfigError("task: dimension must be >= 2");
        if (heads == 0 || dim % heads != 0) {
            throw ConfigError("task: dimension must be a positive multiple of heads");
        }
        if (!(target_mass > 0.0 && target_mass < 1.0)) {
            throw ConfigError("task: target mass must lie strictly between 0 and 1");
        }
        if (n_distinguished == 0) throw ConfigError("task: need at least one distinguished position");
        if (n_distinguished > chunk_len) {
            throw ConfigError("task: distinguished positions must fit in one chunk");
        }
        const std::size_t chunk0 = kind == TaskKind::kQuestionFirst ? 0 : distinguished_chunk;
        const std::size_t last = chunk0 * chunk_len + n_distinguished - 1;
        if (last >= seq_len) {
            throw ConfigError("task: distinguished positions fall outside the sequence");
        }
    }
};

/// One generated stream plus everything a metric needs to find the planted
/// structure again.
struct TaskInstance {
    std::vector<Chunk> chunks; // every chunk padded to exactly chunk_len rows
    std::vector<std::int64_t> distinguished_positions;
    std::vector<double> probe; // pure planted-direction query, also the last valid row
    std::int64_t probe_position = 0;
    std::vector<double> direction; // unit vector the structure is planted along
    double key_gain = 0.0;
    double query_gain = 0.0;
    double target_mass = 0.8;
};

namespace detail {

inline std::vector<double> unit_direction(SplitMix64& rng, std::size_t dim) {
    std::vector<double> u(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : u) {
            x = rng.uniform(-1.0, 1.0);
            norm += x * x;
        }
        norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (double& x : u) x /= norm;
    return u;
}

/// Removes the component along u so planted logits stay exact.
inline void remove_component(std::vector<double>& v, const std::vector<double>& u) {
    double proj = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) proj += v[i] * u[i];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * u[i];
}

} // namespace detail

/// Plants keys along a random direction so that the distinguished positions
/// soak up at least target_mass of every chunk's attention, no matter where
/// the softmax is taken. Deterministic under (params, seed).
inline TaskInstance generate_task(const TaskParams& params, std::uint64_t seed) {
    params.validate();
    SplitMix64 rng = substream(seed, 0x7A5Bu);

    const std::size_t d = params.dim;
    const std::size_t s = params.chunk_len;
    const std::size_t n = params.seq_len;
    const std::size_t n_chunks = (n + s - 1) / s;

    TaskInstance inst;
    inst.target_mass = params.target_mass;
    inst.direction = detail::unit_direction(rng, d);

    // Worst-case off-direction logit is |noise_q . noise_k| <= d/4 for
    // uniform(-.5,.5) entries; pick the planted logit large enough that the
    // distinguished set keeps target_mass against n such competitors.
    const double bound = static_cast<double>(d) / 4.0;
    const double odds = params.target_mass / (1.0 - params.target_mass);
    const double planted_logit =
        std::log(odds) + std::log(static_cast<double>(n)) + 2.0 * bound + 1.0;
    inst.key_gain = std::sqrt(planted_logit);
    inst.query_gain = std::sqrt(planted_logit);

    const std::size_t first_chunk =
        params.kind == TaskKind::kQuestionFirst ? 0 : params.distinguished_chunk;
    const std::int64_t first_pos = static_cast<std::int64_t>(first_chunk * s);
    for (std::size_t i = 0; i < params.n_distinguished; ++i) {
        inst.distinguished_positions.push_back(first_pos + static_cast<std::int64_t>(i));
    }
    inst.probe_position = static_cast<std::int64_t>(n - 1);

    inst.probe.assign(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) inst.probe[c] = inst.query_gain * inst.direction[c];

    inst.chunks.reserve(n_chunks);
    for (std::size_t ci = 0; ci < n_chunks; ++ci) {
        Chunk chunk;
        chunk.positions.resize(s);
        chunk.queries = Matrix(s, d);
        chunk.keys = Matrix(s, d);
        chunk.values = Matrix(s, d);
        chunk.valid.assign(s, false);
        for (std::size_t r = 0; r < s; ++r) {
            const std::size_t pos = ci * s + r;
            chunk.positions[r] = static_cast<std::int64_t>(pos);
            if (pos >= n) continue; // trailing padding in the final chunk
            chunk.valid[r] = true;

            std::vector<double> q(d), k(d);
            for (std::size_t c = 0; c < d; ++c) q[c] = rng.uniform(-0.5, 0.5);
            for (std::size_t c = 0; c < d; ++c) k[c] = rng.uniform(-0.5, 0.5);
            detail::remove_component(q, inst.direction);
            detail::remove_component(k, inst.direction);

            const bool distinguished =
                static_cast<std::int64_t>(pos) >= inst.distinguished_positions.front() &&
                static_cast<std::int64_t>(pos) <= inst.distinguished_positions.back();
            const bool is_probe = pos == n - 1;
            for (std::size_t c = 0; c < d; ++c) {
                const double planted_q = inst.query_gain * inst.direction[c];
                const double planted_k = distinguished ? inst.key_gain * inst.direction[c] : 0.0;
                chunk.queries(r, c) = is_probe ? planted_q : planted_q + q[c];
                chunk.keys(r, c) = distinguished ? planted_k : k[c];
                chunk.values(r, c) = rng.uniform(-1.0, 1.0);
            }
        }
        inst.chunks.push_back(std::move(chunk));
    }
    return inst;
}

} // namespace attendre
