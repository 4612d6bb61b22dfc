#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "attendre/common.hpp"
#include "attendre/kernels.hpp"
#include "attendre/matrix.hpp"
#include "attendre/policy.hpp"
#include "attendre/position.hpp"

namespace attendre {

struct Metadata {
    std::int64_t position = 0;
    std::optional<std::int64_t> document_id;
    std::optional<std::int64_t> epoch;
};

/// One stored position, as copied out of a memory (evictions, get_all).
struct MemoryEntry {
    std::vector<double> key;   // heads*head_dim, empty in data-only memories
    std::vector<double> value; // heads*head_dim
    Metadata meta;
    std::uint64_t insertion_counter = 0;
    double score = 0.0;
};

struct EvictedBatch {
    std::vector<MemoryEntry> entries; // in eviction order
    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
};

/// Top-K retrieval result. Rank r of query q lives at row r of keys[q] /
/// values[q]; similarities are nonincreasing along each row.
struct RetrievedKV {
    std::size_t width = 0; // min(K, memory size)
    std::vector<Matrix> keys;
    std::vector<Matrix> values;
    Matrix similarities;
    std::vector<std::vector<std::int64_t>> positions;
    std::vector<std::vector<std::size_t>> entry_indices;
    std::vector<std::vector<Metadata>> metadata;
};

using TraceSink = std::function<void(const std::string&)>;

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace detail

struct RetrieveRequest {
    Matrix queries; // rows x (heads*head_dim)
    std::vector<std::int64_t> positions;
    std::vector<bool> valid;
    std::size_t k = 1;
    /// Mask pairs where the key position is ahead of the query position.
    bool causal = false;
};

struct KeyValueMemoryConfig {
    std::size_t capacity = 0;
    PolicyConfig policy;
    std::size_t heads = 1;
    DistanceTransform transform;
    bool scaled_similarity = false;

    void validate() const {
        if (capacity == 0) throw ConfigError("kv memory: capacity must be >= 1");
        if (heads == 0) throw ConfigError("kv memory: heads must be >= 1");
        if (config_pins_whole_memory()) {
            throw ConfigError("kv memory: attention sink size must not exceed the capacity");
        }
        policy.validate();
    }

    bool config_pins_whole_memory() const {
        return policy.kind == PolicyKind::kAttentionSink && policy.sink_size > capacity;
    }
};

/// Bounded key-value store with a pluggable eviction policy. insert() may
/// evict, retrieve() reads and reports usage back to the policy.
class KeyValueMemory {
public:
    explicit KeyValueMemory(KeyValueMemoryConfig cfg) : cfg_(cfg), policy_(cfg.policy) {
        cfg_.validate();
    }

    std::size_t size() const { return stored_.size(); }
    std::size_t capacity() const { return cfg_.capacity; }
    std::size_t dim() const { return dim_; }
    const EvictionPolicy& policy() const { return policy_; }
    std::uint64_t similarity_ops() const { return similarity_ops_; }
    std::uint64_t evictions() const { return evictions_; }

    void set_trace(TraceSink sink, std::string name = "kv") {
        trace_ = std::move(sink);
        trace_name_ = std::move(name);
    }

    EvictedBatch insert(const Matrix& keys, const Matrix& values, std::span<const Metadata> metadata) {
        if (keys.rows() != values.rows() || keys.rows() != metadata.size()) {
            throw DimensionError("insert: keys/values/metadata row counts differ");
        }
        if (keys.rows() == 0) return {};
        if (keys.cols() != values.cols()) {
            throw DimensionError("insert: key and value dimensions differ");
        }
        if (dim_ == 0) {
            dim_ = keys.cols();
        } else if (keys.cols() != dim_) {
            throw DimensionError("insert: entry dimension differs from resident entries");
        }
        if (keys.rows() > cfg_.capacity) {
            throw CapacityError("insert: chunk larger than the memory capacity");
        }

        const std::size_t incoming = keys.rows();
        const double initial = policy_.initial_score();
        policy_.register_insertions(incoming);
        for (std::size_t i = 0; i < incoming; ++i) {
            StoredEntry e;
            e.key.assign(keys.row(i).begin(), keys.row(i).end());
            e.value.assign(values.row(i).begin(), values.row(i).end());
            e.meta = metadata[i];
            e.counter = next_counter_++;
            stored_.push_back(std::move(e));
        }
        trace_insert(incoming, metadata, initial);

        EvictedBatch evicted;
        if (stored_.size() > cfg_.capacity) {
            const auto victim_indices = policy_.select_evictions(cfg_.capacity, incoming);
            evicted.entries.reserve(victim_indices.size());
            for (std::size_t idx : victim_indices) {
                evicted.entries.push_back(copy_out(idx));
            }
            policy_.remove_entries(victim_indices);
            remove_stored(victim_indices);
            evictions_ += evicted.size();
            trace_evictions(evicted);
        }
        return evicted;
    }

    /// Nondestructive, insertion-ordered read of the full contents.
    std::vector<MemoryEntry> get_all() const {
        std::vector<MemoryEntry> out;
        out.reserve(stored_.size());
        for (std::size_t i = 0; i < stored_.size(); ++i) out.push_back(copy_out(i));
        return out;
    }

    RetrievedKV retrieve(const RetrieveRequest& req) {
        if (stored_.empty()) throw EmptyMemoryError("retrieve: memory is empty");
        if (req.k == 0) throw ConfigError("retrieve: k must be >= 1");
        const std::size_t n_queries = req.queries.rows();
        if (req.queries.cols() != dim_) {
            throw DimensionError("retrieve: query dimension differs from stored keys");
        }
        if (req.positions.size() != n_queries || req.valid.size() != n_queries) {
            throw DimensionError("retrieve: one position/valid flag per query required");
        }

        const std::size_t n_entries = stored_.size();
        const std::size_t width = std::min(req.k, n_entries);

        // Token-level similarity (summed over heads) against every entry,
        // valid queries only.
        Matrix scores(n_queries, n_entries);
        Matrix pair_valid(n_queries, n_entries);
        for (std::size_t q = 0; q < n_queries; ++q) {
            if (!req.valid[q]) continue;
            const auto qrow = req.queries.row(q);
            for (std::size_t e = 0; e < n_entries; ++e) {
                double acc = 0.0;
                const auto& key = stored_[e].key;
                for (std::size_t c = 0; c < dim_; ++c) acc += qrow[c] * key[c];
                if (cfg_.scaled_similarity) acc /= std::sqrt(static_cast<double>(dim_));
                scores(q, e) = cfg_.transform.apply(acc, req.positions[q], stored_[e].meta.position);
                pair_valid(q, e) =
                    (!req.causal || stored_[e].meta.position <= req.positions[q]) ? 1.0 : 0.0;
            }
            similarity_ops_ += n_entries;
        }

        RetrievedKV out;
        out.width = width;
        out.similarities = Matrix(n_queries, width);
        out.keys.assign(n_queries, Matrix(width, dim_));
        out.values.assign(n_queries, Matrix(width, dim_));
        out.positions.assign(n_queries, std::vector<std::int64_t>(width, -1));
        out.entry_indices.assign(n_queries, std::vector<std::size_t>(width, 0));
        out.metadata.assign(n_queries, std::vector<Metadata>(width));

        Matrix used(n_queries, n_entries);
        for (std::size_t q = 0; q < n_queries; ++q) {
            if (!req.valid[q]) continue;
            const auto ranked = top_k(scores.row(q), width);
            for (std::size_t r = 0; r < ranked.indices.size(); ++r) {
                const std::size_t e = ranked.indices[r];
                out.similarities(q, r) = ranked.values[r];
                out.keys[q].set_row(r, std::span<const double>(stored_[e].key));
                out.values[q].set_row(r, std::span<const double>(stored_[e].value));
                out.positions[q][r] = stored_[e].meta.position;
                out.entry_indices[q][r] = e;
                out.metadata[q][r] = stored_[e].meta;
                used(q, e) = 1.0;
            }
        }

        report_usage(req, scores, pair_valid, used, out);
        trace_retrieve(req, out);
        return out;
    }

    void clear() {
        stored_.clear();
        policy_ = EvictionPolicy(cfg_.policy);
    }

private:
    struct StoredEntry {
        std::vector<double> key;
        std::vector<double> value;
        Metadata meta;
        std::uint64_t counter = 0;
    };

    MemoryEntry copy_out(std::size_t idx) const {
        const StoredEntry& s = stored_[idx];
        MemoryEntry e;
        e.key = s.key;
        e.value = s.value;
        e.meta = s.meta;
        e.insertion_counter = s.counter;
        e.score = policy_.score(idx);
        return e;
    }

    void remove_stored(std::span<const std::size_t> indices) {
        std::vector<std::size_t> sorted(indices.begin(), indices.end());
        std::sort(sorted.begin(), sorted.end());
        std::vector<StoredEntry> kept;
        kept.reserve(stored_.size() - sorted.size());
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < stored_.size(); ++i) {
            if (cursor < sorted.size() && sorted[cursor] == i) {
                ++cursor;
            } else {
                kept.push_back(std::move(stored_[i]));
            }
        }
        stored_ = std::move(kept);
    }

    void report_usage(const RetrieveRequest& req, const Matrix& scores, const Matrix& pair_valid,
                      const Matrix& used, const RetrievedKV& out) {
        AttentionFeedback fb;
        fb.query_positions = req.positions;
        fb.query_valid = req.valid;
        fb.used = used;
        if (!cfg_.policy.post_softmax_scores) {
            fb.scores = scores;
            fb.pair_valid = pair_valid;
            // zero out masked pairs of the validity matrix for invalid queries
            for (std::size_t q = 0; q < req.valid.size(); ++q) {
                if (!req.valid[q]) {
                    for (std::size_t e = 0; e < stored_.size(); ++e) fb.pair_valid(q, e) = 0.0;
                }
            }
        } else {
            // Per-head attention weights over each query's retrieved set,
            // summed across heads and scattered back to entry columns.
            fb.scores = Matrix(scores.rows(), scores.cols());
            fb.pair_valid = Matrix(scores.rows(), scores.cols());
            const std::size_t head_dim = dim_ / cfg_.heads;
            for (std::size_t q = 0; q < req.valid.size(); ++q) {
                if (!req.valid[q]) continue;
                for (std::size_t h = 0; h < cfg_.heads; ++h) {
                    Matrix logits(1, out.width);
                    Matrix mask(1, out.width);
                    for (std::size_t r = 0; r < out.width; ++r) {
                        const std::size_t e = out.entry_indices[q][r];
                        if (pair_valid(q, e) == 0.0) continue;
                        double acc = 0.0;
                        const auto qrow = req.queries.row(q);
                        const auto krow = out.keys[q].row(r);
                        for (std::size_t c = h * head_dim; c < (h + 1) * head_dim; ++c) {
                            acc += qrow[c] * krow[c];
                        }
                        if (cfg_.scaled_similarity) acc /= std::sqrt(static_cast<double>(head_dim));
                        logits(0, r) = cfg_.transform.apply(acc, req.positions[q], out.positions[q][r]);
                        mask(0, r) = 1.0;
                    }
                    const auto soft = masked_softmax(logits, mask);
                    for (std::size_t r = 0; r < out.width; ++r) {
                        const std::size_t e = out.entry_indices[q][r];
                        if (mask(0, r) != 0.0) {
                            fb.scores(q, e) += soft.weights(0, r);
                            fb.pair_valid(q, e) = 1.0;
                        }
                    }
                }
            }
        }
        policy_.observe_attention(fb);
    }

    void trace_insert(std::size_t count, std::span<const Metadata> metadata, double initial) {
        if (!trace_) return;
        std::ostringstream os;
        os << "event=insert memory=" << trace_name_ << " count=" << count << " positions=";
        for (std::size_t i = 0; i < metadata.size(); ++i) {
            os << (i ? "," : "") << metadata[i].position;
        }
        os << " initial_score=" << detail::format_double(initial);
        trace_(os.str());
    }

    void trace_evictions(const EvictedBatch& batch) {
        if (!trace_ || batch.empty()) return;
        std::ostringstream os;
        os << "event=evict memory=" << trace_name_ << " positions=";
        for (std::size_t i = 0; i < batch.entries.size(); ++i) {
            os << (i ? "," : "") << batch.entries[i].meta.position;
        }
        os << " scores=";
        for (std::size_t i = 0; i < batch.entries.size(); ++i) {
            os << (i ? "," : "") << detail::format_double(batch.entries[i].score);
        }
        trace_(os.str());
    }

    void trace_retrieve(const RetrieveRequest& req, const RetrievedKV& out) {
        if (!trace_) return;
        std::ostringstream os;
        os << "event=retrieve memory=" << trace_name_ << " k=" << req.k << " width=" << out.width
           << " queries=";
        bool first = true;
        for (std::size_t q = 0; q < req.positions.size(); ++q) {
            if (!req.valid[q]) continue;
            os << (first ? "" : ",") << req.positions[q];
            first = false;
        }
        trace_(os.str());
    }

    KeyValueMemoryConfig cfg_;
    EvictionPolicy policy_;
    std::vector<StoredEntry> stored_;
    std::size_t dim_ = 0;
    std::uint64_t next_counter_ = 0;
    std::uint64_t similarity_ops_ = 0;
    std::uint64_t evictions_ = 0;
    TraceSink trace_;
    std::string trace_name_ = "kv";
};

/// Bounded insertion-ordered store for whole-batch reads (no retrieval).
/// Defaults to FIFO; any insertion-order policy is accepted.
template <typename Value>
class DataOnlyMemory {
public:
    explicit DataOnlyMemory(std::size_t capacity, PolicyConfig policy = {})
        : capacity_(capacity), policy_cfg_(policy), policy_(policy) {
        if (capacity_ == 0) throw ConfigError("data memory: capacity must be >= 1");
    }

    std::size_t size() const { return values_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::uint64_t evictions() const { return evictions_; }

    /// Stores the batch; returns the entries the policy evicted, in order.
    std::vector<Value> insert(std::span<const Value> batch) {
        if (batch.size() > capacity_) {
            throw CapacityError("insert: chunk larger than the memory capacity");
        }
        policy_.register_insertions(batch.size());
        values_.insert(values_.end(), batch.begin(), batch.end());

        std::vector<Value> evicted;
        if (values_.size() > capacity_) {
            const auto victim_indices = policy_.select_evictions(capacity_, batch.size());
            evicted.reserve(victim_indices.size());
            for (std::size_t idx : victim_indices) evicted.push_back(values_[idx]);
            policy_.remove_entries(victim_indices);

            std::vector<std::size_t> sorted(victim_indices.begin(), victim_indices.end());
            std::sort(sorted.begin(), sorted.end());
            std::vector<Value> kept;
            kept.reserve(values_.size() - sorted.size());
            std::size_t cursor = 0;
            for (std::size_t i = 0; i < values_.size(); ++i) {
                if (cursor < sorted.size() && sorted[cursor] == i) {
                    ++cursor;
                } else {
                    kept.push_back(std::move(values_[i]));
                }
            }
            values_ = std::move(kept);
            evictions_ += evicted.size();
        }
        return evicted;
    }

    /// Insertion-ordered, nondestructive read.
    std::vector<Value> get_all() const { return values_; }

    void clear() {
        values_.clear();
        policy_ = EvictionPolicy(policy_cfg_);
    }

private:
    std::size_t capacity_;
    PolicyConfig policy_cfg_;
    EvictionPolicy policy_;
    std::vector<Value> values_;
    std::uint64_t evictions_ = 0;
};

} // namespace attendre
