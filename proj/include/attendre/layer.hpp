#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include "attendre/common.hpp"
#include "attendre/kernels.hpp"
#include "attendre/matrix.hpp"
#include "attendre/memory.hpp"
#include "attendre/policy.hpp"
#include "attendre/position.hpp"

namespace attendre {

/// One delayed query waiting in the query memory.
struct QuerySlot {
    std::vector<double> q;
    std::int64_t position = 0;
    bool valid = true;
};

struct AttendreConfig {
    std::size_t kv_capacity = 0;  // M
    std::size_t q_capacity = 0;   // N, 0 = attend immediately
    std::size_t retrieval_k = 1;  // K
    std::size_t chunk_len = 1;    // S
    std::size_t heads = 1;
    std::size_t head_dim = 8;
    PolicyConfig policy;
    std::int64_t n_local = 0;        // local band width for the distance cap
    double distance_penalty = 0.0;   // beta, 0 = off
    bool causal = true;
    bool scaled_similarity = false;

    std::size_t dim() const { return heads * head_dim; }

    void validate() const {
        if (kv_capacity == 0) throw ConfigError("layer: kv capacity must be >= 1");
        if (retrieval_k == 0) throw ConfigError("layer: retrieval k must be >= 1");
        if (chunk_len == 0) throw ConfigError("layer: chunk length must be >= 1");
        if (heads == 0 || head_dim == 0) throw ConfigError("layer: heads and head_dim must be >= 1");
        if (chunk_len > kv_capacity) {
            throw ConfigError("layer: chunk length must not exceed kv capacity");
        }
        if (q_capacity > kv_capacity) {
            throw ConfigError("layer: query capacity must not exceed kv capacity");
        }
        if (q_capacity > 0 && chunk_len > q_capacity) {
            throw ConfigError("layer: chunk length must not exceed query capacity");
        }
        if (n_local < 0) throw ConfigError("layer: n_local must be >= 0");
        if (distance_penalty < 0.0) throw ConfigError("layer: distance penalty must be >= 0");
        policy.validate();
        KeyValueMemoryConfig kv;
        kv.capacity = kv_capacity;
        kv.policy = policy;
        if (kv.config_pins_whole_memory()) {
            throw ConfigError("layer: attention sink size must not exceed kv capacity");
        }
    }
};

/// One stream chunk: queries/keys/values share row count and positions.
/// An empty valid vector means every row is a real token.
struct Chunk {
    std::vector<std::int64_t> positions;
    Matrix queries;
    Matrix keys;
    Matrix values;
    std::vector<bool> valid;
};

/// Attention results for the queries released this step. Rows line up with
/// positions/valid; invalid rows (padding) are zero and carried through so a
/// stacked caller can keep draining.
struct AttendedOutput {
    std::vector<std::int64_t> positions;
    std::vector<bool> valid;
    std::vector<bool> attended; // false when every retrieved key was masked
    Matrix outputs;
    RetrievedKV retrieval;
};

struct LayerCounters {
    std::uint64_t steps = 0;
    std::uint64_t similarity_ops = 0;
    std::uint64_t retrieved_pairs = 0;
    std::uint64_t max_width = 0;
    std::uint64_t kv_evictions = 0;
    std::uint64_t q_evictions = 0;
    std::uint64_t padding_consumed = 0;
};

/// Wait-to-attend layer: queries sit in a bounded FIFO until enough of the
/// stream has arrived, then attend over the top-K of whatever the eviction
/// policy kept around.
class AttendreLayer {
public:
    explicit AttendreLayer(AttendreConfig cfg) : cfg_(validated(std::move(cfg))), kv_(kv_config(cfg_)) {
        if (cfg_.q_capacity > 0) q_mem_.emplace(cfg_.q_capacity);
    }

    const AttendreConfig& config() const { return cfg_; }
    const KeyValueMemory& kv() const { return kv_; }
    std::size_t pending_queries() const { return q_mem_ ? q_mem_->size() : 0; }

    void set_trace(TraceSink sink, const std::string& name = "layer") {
        trace_ = sink;
        trace_name_ = name;
        kv_.set_trace(std::move(sink), name + ".kv");
    }

    LayerCounters counters() const {
        LayerCounters c = counters_;
        c.similarity_ops = kv_.similarity_ops();
        c.kv_evictions = kv_.evictions();
        return c;
    }

    /// Advance the stream by one chunk: queries enter the query memory,
    /// keys/values enter the kv memory, and whatever queries fall out of the
    /// query memory attend. Returns nothing while the query memory is still
    /// filling up.
    std::optional<AttendedOutput> step(const Chunk& chunk) {
        const std::vector<bool> row_valid = checked_valid(chunk);
        ++counters_.steps;
        for (bool v : row_valid) {
            if (!v) ++counters_.padding_consumed;
        }

        std::vector<QuerySlot> incoming;
        incoming.reserve(chunk.positions.size());
        for (std::size_t i = 0; i < chunk.positions.size(); ++i) {
            QuerySlot slot;
            slot.q.assign(chunk.queries.row(i).begin(), chunk.queries.row(i).end());
            slot.position = chunk.positions[i];
            slot.valid = row_valid[i];
            incoming.push_back(std::move(slot));
        }

        std::vector<QuerySlot> released;
        if (q_mem_) {
            released = q_mem_->insert(incoming);
            counters_.q_evictions += released.size();
        } else {
            released = std::move(incoming);
        }

        insert_kv(chunk, row_valid);
        trace_step(chunk, released.size());

        if (released.empty()) return std::nullopt;
        return attend(released);
    }

    /// Release everything still waiting in the query memory as one batch.
    /// Safe to call repeatedly; later calls come back empty.
    AttendedOutput flush() {
        if (!q_mem_ || q_mem_->size() == 0) {
            AttendedOutput empty;
            empty.outputs = Matrix(0, cfg_.dim());
            return empty;
        }
        std::vector<QuerySlot> released = q_mem_->get_all();
        q_mem_->clear();
        counters_.q_evictions += released.size();
        if (trace_) {
            std::ostringstream os;
            os << "event=flush layer=" << trace_name_ << " released=" << released.size();
            trace_(os.str());
        }
        return attend(released);
    }

private:
    static AttendreConfig validated(AttendreConfig cfg) {
        cfg.validate();
        return cfg;
    }

    static KeyValueMemoryConfig kv_config(const AttendreConfig& cfg) {
        KeyValueMemoryConfig kv;
        kv.capacity = cfg.kv_capacity;
        kv.policy = cfg.policy;
        kv.heads = cfg.heads;
        kv.transform = DistanceTransform{cfg.n_local, cfg.distance_penalty};
        kv.scaled_similarity = cfg.scaled_similarity;
        return kv;
    }

    std::vector<bool> checked_valid(const Chunk& chunk) const {
        const std::size_t n = chunk.positions.size();
        if (n == 0) throw EmptyInput("step: chunk has no rows");
        if (chunk.queries.rows() != n || chunk.keys.rows() != n || chunk.values.rows() != n) {
            throw DimensionError("step: positions and matrix row counts differ");
        }
        const std::size_t d = cfg_.dim();
        if (chunk.queries.cols() != d || chunk.keys.cols() != d || chunk.values.cols() != d) {
            throw DimensionError("step: chunk width differs from heads*head_dim");
        }
        if (!chunk.valid.empty() && chunk.valid.size() != n) {
            throw DimensionError("step: one valid flag per row required");
        }
        for (std::size_t i = 0; i + 1 < n; ++i) {
            if (chunk.positions[i + 1] != chunk.positions[i] + 1) {
                throw OrderError("step: chunk positions must be contiguous");
            }
        }
        if (seen_any_ && chunk.positions.front() <= last_position_) {
            throw OrderError("step: chunk positions must advance the stream");
        }
        seen_any_ = true;
        last_position_ = chunk.positions.back();
        return chunk.valid.empty() ? std::vector<bool>(n, true) : chunk.valid;
    }

    void insert_kv(const Chunk& chunk, const std::vector<bool>& row_valid) {
        std::size_t n_real = 0;
        for (bool v : row_valid) n_real += v ? 1 : 0;
        if (n_real == 0) return; // padding never takes up kv space

        Matrix keys(n_real, cfg_.dim());
        Matrix values(n_real, cfg_.dim());
        std::vector<Metadata> meta(n_real);
        std::size_t r = 0;
        for (std::size_t i = 0; i < row_valid.size(); ++i) {
            if (!row_valid[i]) continue;
            keys.set_row(r, chunk.keys.row(i));
            values.set_row(r, chunk.values.row(i));
            meta[r].position = chunk.positions[i];
            ++r;
        }
        kv_.insert(keys, values, meta);
    }

    AttendedOutput attend(const std::vector<QuerySlot>& slots) {
        const std::size_t n = slots.size();
        const std::size_t d = cfg_.dim();

        AttendedOutput out;
        out.positions.resize(n);
        out.valid.resize(n);
        out.attended.assign(n, false);
        out.outputs = Matrix(n, d);

        RetrieveRequest req;
        req.queries = Matrix(n, d);
        req.positions.resize(n);
        req.valid.resize(n);
        req.k = cfg_.retrieval_k;
        req.causal = cfg_.causal;

        std::size_t n_valid = 0;
        for (std::size_t i = 0; i < n; ++i) {
            out.positions[i] = slots[i].position;
            out.valid[i] = slots[i].valid;
            req.positions[i] = slots[i].position;
            req.valid[i] = slots[i].valid;
            if (slots[i].valid) {
                req.queries.set_row(i, std::span<const double>(slots[i].q));
                ++n_valid;
            }
        }

        if (n_valid == 0) return out; // pure padding, nothing to attend

        out.retrieval = kv_.retrieve(req);
        const std::size_t width = out.retrieval.width;
        counters_.retrieved_pairs += static_cast<std::uint64_t>(width) * n_valid;
        counters_.max_width = std::max<std::uint64_t>(counters_.max_width, width);

        const DistanceTransform transform{cfg_.n_local, cfg_.distance_penalty};
        const std::size_t head_dim = cfg_.head_dim;
        for (std::size_t i = 0; i < n; ++i) {
            if (!slots[i].valid) continue;

            Matrix mask(1, width);
            bool any_open = false;
            for (std::size_t r = 0; r < width; ++r) {
                const bool open =
                    !cfg_.causal || out.retrieval.positions[i][r] <= slots[i].position;
                mask(0, r) = open ? 1.0 : 0.0;
                any_open = any_open || open;
            }
            if (!any_open) continue; // retrieved set entirely in the future

            out.attended[i] = true;
            for (std::size_t h = 0; h < cfg_.heads; ++h) {
                Matrix logits(1, width);
                for (std::size_t r = 0; r < width; ++r) {
                    if (mask(0, r) == 0.0) continue;
                    double acc = 0.0;
                    const auto krow = out.retrieval.keys[i].row(r);
                    for (std::size_t c = h * head_dim; c < (h + 1) * head_dim; ++c) {
                        acc += slots[i].q[c] * krow[c];
                    }
                    if (cfg_.scaled_similarity) acc /= std::sqrt(static_cast<double>(head_dim));
                    logits(0, r) =
                        transform.apply(acc, slots[i].position, out.retrieval.positions[i][r]);
                }
                const SoftmaxResult soft = masked_softmax(logits, mask);
                for (std::size_t r = 0; r < width; ++r) {
                    const double w = soft.weights(0, r);
                    if (w == 0.0) continue;
                    const auto vrow = out.retrieval.values[i].row(r);
                    for (std::size_t c = h * head_dim; c < (h + 1) * head_dim; ++c) {
                        out.outputs(i, c) += w * vrow[c];
                    }
                }
            }
        }
        return out;
    }

    void trace_step(const Chunk& chunk, std::size_t released) {
        if (!trace_) return;
        std::ostringstream os;
        os << "event=step layer=" << trace_name_ << " first=" << chunk.positions.front()
           << " last=" << chunk.positions.back() << " released=" << released
           << " pending=" << (q_mem_ ? q_mem_->size() : 0) << " kv_size=" << kv_.size();
        trace_(os.str());
    }

    AttendreConfig cfg_;
    KeyValueMemory kv_;
    std::optional<DataOnlyMemory<QuerySlot>> q_mem_;
    LayerCounters counters_;
    TraceSink trace_;
    std::string trace_name_ = "layer";
    mutable bool seen_any_ = false;
    mutable std::int64_t last_position_ = std::numeric_limits<std::int64_t>::min();
};

} // namespace attendre
