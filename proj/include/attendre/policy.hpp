#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attendre/common.hpp"
#include "attendre/matrix.hpp"

namespace attendre {

enum class PolicyKind {
    kFifo,
    kLru,
    kLfu,
    kAttentionSink,
    kLraLast,
    kLraMax,
    kLraSum,
    kLfa,
};

inline bool is_score_based(PolicyKind kind) {
    return kind == PolicyKind::kLraLast || kind == PolicyKind::kLraMax ||
           kind == PolicyKind::kLraSum || kind == PolicyKind::kLfa;
}

inline std::string policy_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::kFifo: return "fifo";
        case PolicyKind::kLru: return "lru";
        case PolicyKind::kLfu: return "lfu";
        case PolicyKind::kAttentionSink: return "sink";
        case PolicyKind::kLraLast: return "lra_last";
        case PolicyKind::kLraMax: return "lra_max";
        case PolicyKind::kLraSum: return "lra_sum";
        case PolicyKind::kLfa: return "lfa";
    }
    return "?";
}

struct PolicyConfig {
    PolicyKind kind = PolicyKind::kFifo;
    /// Entries with insertion counter below this are never evicted (attention sink).
    std::size_t sink_size = 4;
    /// LFA decay factor lambda (>= 0).
    double decay = 0.0;
    /// Initial score is mu - initial_offset * sigma over the resident scores.
    double initial_offset = 1.0;
    /// Feed normalized attention weights instead of raw similarities to the
    /// score-based policies. Off by default: pre-softmax scores keep the
    /// policy state independent of which other entries were retrieved.
    bool post_softmax_scores = false;

    void validate() const {
        if (decay < 0.0) throw ConfigError("policy: decay must be >= 0");
    }
};

/// One step of retrieval feedback, already summed over heads.
struct AttentionFeedback {
    /// queries x entries, post position-transform.
    Matrix scores;
    /// queries x entries, 1 where the pair participates (query valid and not masked).
    Matrix pair_valid;
    /// queries x entries, 1 where the entry was in the query's top-K set.
    Matrix used;
    std::vector<std::int64_t> query_positions;
    std::vector<bool> query_valid;
};

/// Per-entry eviction bookkeeping for one memory instance. Entry indices
/// mirror the owning memory's storage order (insertion order).
class EvictionPolicy {
public:
    explicit EvictionPolicy(PolicyConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    const PolicyConfig& config() const { return cfg_; }
    std::size_t size() const { return entries_.size(); }

    /// mu - c*sigma over the scores currently resident; 0 for an empty memory.
    /// sigma is the population standard deviation.
    double initial_score() const {
        if (entries_.empty()) return 0.0;
        double mean = 0.0;
        for (const auto& e : entries_) mean += e.score;
        mean /= static_cast<double>(entries_.size());
        double var = 0.0;
        for (const auto& e : entries_) var += (e.score - mean) * (e.score - mean);
        var /= static_cast<double>(entries_.size());
        return mean - cfg_.initial_offset * std::sqrt(var);
    }

    /// Registers `count` new entries appended to the memory. They all receive
    /// the initial score computed from the entries present before the call.
    void register_insertions(std::size_t count) {
        const double score = initial_score();
        entries_.reserve(entries_.size() + count);
        for (std::size_t i = 0; i < count; ++i) {
            entries_.push_back(EntryState{score, -1, 0, next_counter_++});
        }
    }

    void observe_attention(const AttentionFeedback& fb) {
        const std::size_t n_queries = fb.scores.rows();
        const std::size_t n_entries = entries_.size();
        if (fb.scores.cols() != n_entries || fb.pair_valid.rows() != n_queries ||
            fb.pair_valid.cols() != n_entries || fb.used.rows() != n_queries ||
            fb.used.cols() != n_entries) {
            throw DimensionError("observe_attention: feedback shape mismatch");
        }
        if (fb.query_positions.size() != n_queries || fb.query_valid.size() != n_queries) {
            throw DimensionError("observe_attention: one position/valid flag per query required");
        }
        for (std::size_t q = 1; q < n_queries; ++q) {
            if (fb.query_positions[q] < fb.query_positions[q - 1]) {
                throw OrderError("observe_attention: query positions must be nondecreasing");
            }
        }

        std::optional<std::int64_t> step_max;
        for (std::size_t q = 0; q < n_queries; ++q) {
            if (fb.query_valid[q]) {
                step_max = step_max ? std::max(*step_max, fb.query_positions[q]) : fb.query_positions[q];
            }
        }
        if (!step_max) return; // no valid queries: not a step

        i_prev_max_ = i_max_;
        i_max_ = i_max_ ? std::max(*i_max_, *step_max) : *step_max;

        switch (cfg_.kind) {
            case PolicyKind::kFifo:
            case PolicyKind::kAttentionSink:
                break;
            case PolicyKind::kLru:
                for (std::size_t e = 0; e < n_entries; ++e) {
                    for (std::size_t q = 0; q < n_queries; ++q) {
                        if (fb.query_valid[q] && fb.used(q, e) != 0.0) {
                            entries_[e].last_used = std::max(entries_[e].last_used, fb.query_positions[q]);
                        }
                    }
                }
                break;
            case PolicyKind::kLfu:
                for (std::size_t e = 0; e < n_entries; ++e) {
                    bool used = false;
                    for (std::size_t q = 0; q < n_queries && !used; ++q) {
                        used = fb.query_valid[q] && fb.used(q, e) != 0.0;
                    }
                    if (used) entries_[e].use_count += 1;
                }
                break;
            case PolicyKind::kLraLast: {
                std::size_t last_q = 0;
                for (std::size_t q = 0; q < n_queries; ++q) {
                    if (fb.query_valid[q]) last_q = q;
                }
                for (std::size_t e = 0; e < n_entries; ++e) {
                    if (fb.pair_valid(last_q, e) != 0.0) entries_[e].score = fb.scores(last_q, e);
                }
                break;
            }
            case PolicyKind::kLraMax:
                for (std::size_t e = 0; e < n_entries; ++e) {
                    bool any = false;
                    double best = 0.0;
                    for (std::size_t q = 0; q < n_queries; ++q) {
                        if (fb.pair_valid(q, e) != 0.0) {
                            best = any ? std::max(best, fb.scores(q, e)) : fb.scores(q, e);
                            any = true;
                        }
                    }
                    if (any) entries_[e].score = best;
                }
                break;
            case PolicyKind::kLraSum:
                for (std::size_t e = 0; e < n_entries; ++e) {
                    bool any = false;
                    double sum = 0.0;
                    for (std::size_t q = 0; q < n_queries; ++q) {
                        if (fb.pair_valid(q, e) != 0.0) {
                            sum += fb.scores(q, e);
                            any = true;
                        }
                    }
                    if (any) entries_[e].score = sum;
                }
                break;
            case PolicyKind::kLfa: {
                // Aggregate from past steps decays by exp(lambda*(i'_max - i_max));
                // each pairwise score decays by exp(lambda*(i - i_max)).
                const double agg_decay =
                    i_prev_max_ ? std::exp(cfg_.decay * static_cast<double>(*i_prev_max_ - *i_max_)) : 1.0;
                for (std::size_t e = 0; e < n_entries; ++e) {
                    double acc = agg_decay * entries_[e].score;
                    for (std::size_t q = 0; q < n_queries; ++q) {
                        if (fb.pair_valid(q, e) != 0.0) {
                            acc += std::exp(cfg_.decay * static_cast<double>(fb.query_positions[q] - *i_max_)) *
                                   fb.scores(q, e);
                        }
                    }
                    entries_[e].score = acc;
                }
                break;
            }
        }
    }

    /// Indices of the entries to evict, in eviction order. Must be called
    /// after the incoming entries were registered; returns exactly
    /// max(0, current_size + n_incoming - capacity) indices.
    std::vector<std::size_t> select_evictions(std::size_t capacity, std::size_t n_incoming) const {
        if (capacity == 0) throw CapacityError("select_evictions: capacity must be >= 1");
        if (n_incoming > capacity) {
            throw CapacityError("select_evictions: a single chunk larger than the memory is rejected");
        }
        const std::size_t total = entries_.size();
        if (total <= capacity) return {};
        const std::size_t overflow = total - capacity;

        std::vector<std::size_t> order;
        order.reserve(total);
        for (std::size_t i = 0; i < total; ++i) {
            if (cfg_.kind == PolicyKind::kAttentionSink &&
                entries_[i].counter < static_cast<std::uint64_t>(cfg_.sink_size)) {
                continue; // pinned
            }
            order.push_back(i);
        }
        if (order.size() < overflow) {
            throw CapacityError("select_evictions: sink pins more entries than the capacity allows");
        }

        auto counter_of = [&](std::size_t i) { return entries_[i].counter; };
        switch (cfg_.kind) {
            case PolicyKind::kFifo:
            case PolicyKind::kAttentionSink:
                std::sort(order.begin(), order.end(),
                          [&](std::size_t a, std::size_t b) { return counter_of(a) < counter_of(b); });
                break;
            case PolicyKind::kLru:
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    if (entries_[a].last_used != entries_[b].last_used)
                        return entries_[a].last_used < entries_[b].last_used;
                    return counter_of(a) < counter_of(b);
                });
                break;
            case PolicyKind::kLfu:
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    if (entries_[a].use_count != entries_[b].use_count)
                        return entries_[a].use_count < entries_[b].use_count;
                    return counter_of(a) < counter_of(b);
                });
                break;
            default:
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    if (entries_[a].score != entries_[b].score) return entries_[a].score < entries_[b].score;
                    return counter_of(a) < counter_of(b);
                });
                break;
        }
        order.resize(overflow);
        return order;
    }

    /// Drops the given entry indices (any order) from the bookkeeping.
    void remove_entries(std::span<const std::size_t> indices) {
        if (indices.empty()) return;
        std::vector<std::size_t> sorted(indices.begin(), indices.end());
        std::sort(sorted.begin(), sorted.end());
        std::vector<EntryState> kept;
        kept.reserve(entries_.size() - sorted.size());
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (cursor < sorted.size() && sorted[cursor] == i) {
                ++cursor;
            } else {
                kept.push_back(entries_[i]);
            }
        }
        entries_ = std::move(kept);
    }

    double score(std::size_t idx) const { return entries_[idx].score; }
    std::int64_t last_used(std::size_t idx) const { return entries_[idx].last_used; }
    std::uint64_t use_count(std::size_t idx) const { return entries_[idx].use_count; }
    std::uint64_t insertion_counter(std::size_t idx) const { return entries_[idx].counter; }
    std::optional<std::int64_t> max_query_position() const { return i_max_; }
    std::optional<std::int64_t> prev_max_query_position() const { return i_prev_max_; }

private:
    struct EntryState {
        double score = 0.0;
        std::int64_t last_used = -1; // -1: never retrieved
        std::uint64_t use_count = 0;
        std::uint64_t counter = 0;
    };

    PolicyConfig cfg_;
    std::vector<EntryState> entries_;
    std::uint64_t next_counter_ = 0;
    std::optional<std::int64_t> i_max_;
    std::optional<std::int64_t> i_prev_max_;
};

} // namespace attendre
