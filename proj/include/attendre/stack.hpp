#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attendre/common.hpp"
#include "attendre/layer.hpp"
#include "attendre/matrix.hpp"
#include "attendre/rng.hpp"

namespace attendre {

/// How to get the queries still waiting in each layer's query memory out at
/// end of stream: one oversized flush batch per layer, or padding tokens
/// pushed through the whole pipeline.
enum class DrainMode { kFlush, kDrain };

inline const char* drain_mode_name(DrainMode m) {
    return m == DrainMode::kFlush ? "flush" : "drain";
}

struct StackConfig {
    std::size_t layers = 1;
    AttendreConfig layer; // shared by every layer
    DrainMode drain = DrainMode::kFlush;
    /// Seeds the fixed random q/k/v maps applied to each layer's inputs;
    /// 0 means identity (rows are used as q = k = v directly).
    std::uint64_t projection_seed = 0;

    void validate() const {
        if (layers == 0) throw ConfigError("stack: layer count must be >= 1");
        layer.validate();
    }
};

/// Raw input rows for one chunk of the stream; the stack derives each
/// layer's q/k/v from these.
struct InputChunk {
    std::vector<std::int64_t> positions;
    Matrix rows;
    std::vector<bool> valid; // empty = all real
};

struct StreamStats {
    std::uint64_t chunks_processed = 0;
    std::uint64_t similarity_ops = 0;
    std::uint64_t kv_evictions = 0;
    std::uint64_t q_evictions = 0;
    std::uint64_t padding_consumed = 0; // tokens appended by DRAIN
    std::vector<LayerCounters> per_layer;
};

struct StackResult {
    Matrix outputs; // one row per valid input position, in stream order
    std::vector<std::int64_t> positions;
    StreamStats stats;
};

/// L stacked wait-to-attend layers. Layer l+1 consumes layer l's delayed
/// output stream; the last layer's valid rows are collected and checked to
/// cover the input positions exactly.
class AttendreStack {
public:
    explicit AttendreStack(StackConfig cfg) : cfg_(validated(std::move(cfg))) {
        layers_.reserve(cfg_.layers);
        for (std::size_t l = 0; l < cfg_.layers; ++l) layers_.emplace_back(cfg_.layer);
        if (cfg_.projection_seed != 0) init_projections();
    }

    const StackConfig& config() const { return cfg_; }
    std::size_t depth() const { return layers_.size(); }
    const AttendreLayer& layer(std::size_t i) const { return layers_.at(i); }

    void set_trace(TraceSink sink) {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            layers_[l].set_trace(sink, "layer" + std::to_string(l));
        }
    }

    void process(const InputChunk& chunk) {
        if (finalized_) throw OrderError("process: stream already finalized");
        const std::vector<bool> valid = checked_input(chunk);
        ++chunks_processed_;
        for (std::size_t i = 0; i < chunk.positions.size(); ++i) {
            if (valid[i]) expected_positions_.push_back(chunk.positions[i]);
        }
        seen_any_ = true;
        last_position_ = chunk.positions.back();
        feed(0, chunk.positions, chunk.rows, valid);
    }

    /// End-of-stream handling (flush or drain), coverage check, and stats.
    StackResult finalize() {
        if (finalized_) throw OrderError("finalize: stream already finalized");
        finalized_ = true;
        if (cfg_.drain == DrainMode::kDrain) {
            run_drain();
        } else {
            run_flush();
        }

        if (collected_positions_ != expected_positions_) {
            throw AlignmentError(
                "stack: output positions do not cover the valid input positions in order");
        }

        StackResult res;
        res.positions = collected_positions_;
        res.outputs = Matrix(collected_rows_.size(), cfg_.layer.dim());
        for (std::size_t i = 0; i < collected_rows_.size(); ++i) {
            res.outputs.set_row(i, std::span<const double>(collected_rows_[i]));
        }
        res.stats.chunks_processed = chunks_processed_;
        res.stats.padding_consumed = padding_appended_;
        for (const AttendreLayer& layer : layers_) {
            const LayerCounters c = layer.counters();
            res.stats.similarity_ops += c.similarity_ops;
            res.stats.kv_evictions += c.kv_evictions;
            res.stats.q_evictions += c.q_evictions;
            res.stats.per_layer.push_back(c);
        }
        return res;
    }

private:
    static StackConfig validated(StackConfig cfg) {
        cfg.validate();
        return cfg;
    }

    std::vector<bool> checked_input(const InputChunk& chunk) const {
        const std::size_t n = chunk.positions.size();
        if (n == 0) throw EmptyInput("stack: input chunk has no rows");
        if (chunk.rows.rows() != n) {
            throw DimensionError("stack: positions and row counts differ");
        }
        if (chunk.rows.cols() != cfg_.layer.dim()) {
            throw DimensionError("stack: input width differs from heads*head_dim");
        }
        if (n > cfg_.layer.chunk_len) {
            throw CapacityError("stack: input chunk larger than the configured chunk length");
        }
        if (!chunk.valid.empty() && chunk.valid.size() != n) {
            throw DimensionError("stack: one valid flag per row required");
        }
        for (std::size_t i = 0; i + 1 < n; ++i) {
            if (chunk.positions[i + 1] != chunk.positions[i] + 1) {
                throw OrderError("stack: chunk positions must be contiguous");
            }
        }
        if (seen_any_ && chunk.positions.front() != last_position_ + 1) {
            throw AlignmentError("stack: chunk does not continue the stream");
        }
        return chunk.valid.empty() ? std::vector<bool>(n, true) : chunk.valid;
    }

    void feed(std::size_t level, const std::vector<std::int64_t>& positions, const Matrix& rows,
              const std::vector<bool>& valid) {
        Chunk c;
        c.positions = positions;
        c.valid = valid;
        c.queries = project(rows, level, 0);
        c.keys = project(rows, level, 1);
        c.values = project(rows, level, 2);
        const auto out = layers_[level].step(c);
        if (out) propagate(level, *out);
    }

    void propagate(std::size_t level, const AttendedOutput& out) {
        if (level + 1 < layers_.size()) {
            feed(level + 1, out.positions, out.outputs, out.valid);
        } else {
            for (std::size_t i = 0; i < out.positions.size(); ++i) {
                if (!out.valid[i]) continue;
                collected_positions_.push_back(out.positions[i]);
                collected_rows_.emplace_back(out.outputs.row(i).begin(), out.outputs.row(i).end());
            }
        }
    }

    void run_flush() {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const AttendedOutput out = layers_[l].flush();
            if (!out.positions.empty()) propagate(l, out);
        }
    }

    void run_drain() {
        // N padding tokens push one layer's pending queries out; the whole
        // stack needs N*L, fed in ordinary chunks (last one may be short).
        std::size_t remaining = cfg_.layer.q_capacity * layers_.size();
        std::int64_t pos = seen_any_ ? last_position_ + 1 : 0;
        while (remaining > 0) {
            const std::size_t n = std::min(cfg_.layer.chunk_len, remaining);
            std::vector<std::int64_t> positions(n);
            for (std::size_t i = 0; i < n; ++i) positions[i] = pos++;
            feed(0, positions, Matrix(n, cfg_.layer.dim()), std::vector<bool>(n, false));
            padding_appended_ += n;
            remaining -= n;
        }
    }

    Matrix project(const Matrix& rows, std::size_t level, std::size_t which) const {
        if (cfg_.projection_seed == 0) return rows;
        const Matrix& w = proj_[level * 3 + which];
        Matrix out(rows.rows(), w.cols());
        for (std::size_t r = 0; r < rows.rows(); ++r) {
            for (std::size_t c = 0; c < w.cols(); ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < w.rows(); ++k) acc += rows(r, k) * w(k, c);
                out(r, c) = acc;
            }
        }
        return out;
    }

    void init_projections() {
        const std::size_t d = cfg_.layer.dim();
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));
        proj_.reserve(layers_.size() * 3);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            for (std::size_t j = 0; j < 3; ++j) {
                SplitMix64 rng = substream(cfg_.projection_seed, l * 3 + j + 1);
                Matrix w(d, d);
                for (std::size_t r = 0; r < d; ++r) {
                    for (std::size_t c = 0; c < d; ++c) w(r, c) = rng.uniform(-1.0, 1.0) * scale;
                }
                proj_.push_back(std::move(w));
            }
        }
    }

    StackConfig cfg_;
    std::vector<AttendreLayer> layers_;
    std::vector<Matrix> proj_;
    std::vector<std::int64_t> expected_positions_;
    std::vector<std::int64_t> collected_positions_;
    std::vector<std::vector<double>> collected_rows_;
    std::uint64_t chunks_processed_ = 0;
    std::uint64_t padding_appended_ = 0;
    bool seen_any_ = false;
    std::int64_t last_position_ = 0;
    bool finalized_ = false;
};

/// Chunks a whole sequence (rows are positions 0..n-1) into exactly-S chunks
/// (short tail padded with invalid rows), streams it through a fresh stack,
/// and finalizes.
inline StackResult run_stack(const StackConfig& cfg, const Matrix& rows) {
    AttendreStack stack(cfg);
    const std::size_t n = rows.rows();
    const std::size_t s = cfg.layer.chunk_len;
    for (std::size_t start = 0; start < n; start += s) {
        InputChunk chunk;
        chunk.positions.resize(s);
        chunk.rows = Matrix(s, rows.cols());
        chunk.valid.assign(s, false);
        for (std::size_t i = 0; i < s; ++i) {
            chunk.positions[i] = static_cast<std::int64_t>(start + i);
            if (start + i < n) {
                chunk.rows.set_row(i, rows.row(start + i));
                chunk.valid[i] = true;
            }
        }
        stack.process(chunk);
    }
    return stack.finalize();
}

} // namespace attendre
