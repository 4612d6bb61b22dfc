#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "attendre/common.hpp"
#include "attendre/config_file.hpp"
#include "attendre/layer.hpp"
#include "attendre/policy.hpp"
#include "attendre/rng.hpp"
#include "attendre/task.hpp"

namespace attendre {

/// Policy spelling used in configs and CSV rows: name, optionally with one
/// parameter ("sink:4", "lfa:0.001").
inline PolicyConfig parse_policy_token(const std::string& token) {
    std::string name = token;
    std::string param;
    if (const auto colon = token.find(':'); colon != std::string::npos) {
        name = token.substr(0, colon);
        param = token.substr(colon + 1);
    }
    PolicyConfig cfg;
    if (name == "fifo") cfg.kind = PolicyKind::kFifo;
    else if (name == "lru") cfg.kind = PolicyKind::kLru;
    else if (name == "lfu") cfg.kind = PolicyKind::kLfu;
    else if (name == "sink") cfg.kind = PolicyKind::kAttentionSink;
    else if (name == "lra_last") cfg.kind = PolicyKind::kLraLast;
    else if (name == "lra_max") cfg.kind = PolicyKind::kLraMax;
    else if (name == "lra_sum") cfg.kind = PolicyKind::kLraSum;
    else if (name == "lfa") cfg.kind = PolicyKind::kLfa;
    else throw ConfigError("unknown policy '" + token + "'");

    if (!param.empty()) {
        char* end = nullptr;
        const double value = std::strtod(param.c_str(), &end);
        if (end == param.c_str() || *end != '\0') {
            throw ConfigError("bad policy parameter in '" + token + "'");
        }
        if (cfg.kind == PolicyKind::kAttentionSink) {
            if (value < 1.0 || value != static_cast<double>(static_cast<std::size_t>(value))) {
                throw ConfigError("sink size must be a positive integer in '" + token + "'");
            }
            cfg.sink_size = static_cast<std::size_t>(value);
        } else if (cfg.kind == PolicyKind::kLfa) {
            if (value < 0.0) throw ConfigError("lfa decay must be >= 0 in '" + token + "'");
            cfg.decay = value;
        } else {
            throw ConfigError("policy '" + name + "' takes no parameter");
        }
    }
    cfg.validate();
    return cfg;
}

inline std::string policy_label(const PolicyConfig& cfg) {
    if (cfg.kind == PolicyKind::kAttentionSink) {
        return policy_name(cfg.kind) + ":" + std::to_string(cfg.sink_size);
    }
    if (cfg.kind == PolicyKind::kLfa) {
        return policy_name(cfg.kind) + ":" + detail::format_double(cfg.decay);
    }
    return policy_name(cfg.kind);
}

struct SweepConfig {
    std::vector<PolicyConfig> policies{PolicyConfig{}};
    std::vector<std::size_t> m_values{64};
    std::vector<std::size_t> n_values; // empty: N = M/2 rule; else paired with m_values
    std::size_t retrieval_k = 16;
    std::size_t chunk_len = 8; // S
    TaskKind task = TaskKind::kNeedle;
    std::size_t seq_len = 256;
    std::size_t trials = 5;
    std::uint64_t seed = 1;
    std::size_t dim = 8;
    std::size_t heads = 1;
    double target_mass = 0.8;
    std::size_t distinguished_chunk = 0;

    std::vector<std::pair<std::size_t, std::size_t>> resolve_pairs() const {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        pairs.reserve(m_values.size());
        for (std::size_t i = 0; i < m_values.size(); ++i) {
            const std::size_t n = n_values.empty() ? m_values[i] / 2 : n_values[i];
            pairs.emplace_back(m_values[i], n);
        }
        return pairs;
    }

    TaskParams task_params() const {
        TaskParams p;
        p.kind = task;
        p.seq_len = seq_len;
        p.chunk_len = chunk_len;
        p.dim = dim;
        p.heads = heads;
        p.target_mass = target_mass;
        p.distinguished_chunk = distinguished_chunk;
        return p;
    }

    AttendreConfig layer_config(const PolicyConfig& policy, std::size_t m, std::size_t n) const {
        AttendreConfig cfg;
        cfg.kv_capacity = m;
        cfg.q_capacity = n;
        cfg.retrieval_k = retrieval_k;
        cfg.chunk_len = chunk_len;
        cfg.heads = heads;
        cfg.head_dim = dim / heads;
        cfg.policy = policy;
        cfg.causal = false;
        return cfg;
    }

    void validate() const {
        if (policies.empty()) throw ConfigError("sweep: need at least one policy");
        if (m_values.empty()) throw ConfigError("sweep: need at least one memory size");
        if (!n_values.empty() && n_values.size() != m_values.size()) {
            throw ConfigError("sweep: n values must pair up with m values (or be omitted)");
        }
        if (trials == 0) throw ConfigError("sweep: trials must be >= 1");
        task_params().validate();
        for (const auto& [m, n] : resolve_pairs()) {
            if (n != 0 && n >= m) {
                throw ConfigError("sweep: every memory pair needs N < M or N = 0");
            }
            for (const PolicyConfig& policy : policies) {
                layer_config(policy, m, n).validate();
            }
        }
    }
};

/// One (policy, M, N) cell aggregated over all trials.
struct CellReport {
    std::string policy;
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t k = 0;
    std::size_t s = 0;
    TaskKind task = TaskKind::kNeedle;
    std::size_t trials = 0;
    double retention_rate = 0.0;
    double final_attention_mass = 0.0;
    std::uint64_t sim_ops = 0;
    std::uint64_t evictions = 0;
};

struct RunReport {
    SweepConfig config;
    std::vector<CellReport> cells;
};

namespace detail {

/// Softmax mass the probe puts on the distinguished entries that are still
/// resident at the end of the run.
inline double probe_mass(const TaskInstance& inst, const std::vector<MemoryEntry>& entries) {
    if (entries.empty()) return 0.0;
    std::vector<double> logits(entries.size());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < entries.size(); ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < inst.probe.size(); ++c) acc += inst.probe[c] * entries[j].key[c];
        logits[j] = acc;
        peak = std::max(peak, acc);
    }
    double total = 0.0;
    double hit = 0.0;
    for (std::size_t j = 0; j < entries.size(); ++j) {
        const double w = std::exp(logits[j] - peak);
        total += w;
        const auto& dp = inst.distinguished_positions;
        if (std::find(dp.begin(), dp.end(), entries[j].meta.position) != dp.end()) hit += w;
    }
    return hit / total;
}

inline bool all_distinguished_resident(const TaskInstance& inst,
                                       const std::vector<MemoryEntry>& entries) {
    for (std::int64_t pos : inst.distinguished_positions) {
        bool found = false;
        for (const MemoryEntry& e : entries) {
            if (e.meta.position == pos) {
                found = true;
                break;
            }
        }
        if (!found) return false;
    }
    return true;
}

} // namespace detail

/// Runs every trial of one sweep cell and aggregates. A trace sink, when
/// given, sees the first trial's memory event log.
inline CellReport run_cell(const SweepConfig& cfg, const PolicyConfig& policy, std::size_t m,
                           std::size_t n, TraceSink trace = nullptr) {
    CellReport cell;
    cell.policy = policy_label(policy);
    cell.m = m;
    cell.n = n;
    cell.k = cfg.retrieval_k;
    cell.s = cfg.chunk_len;
    cell.task = cfg.task;
    cell.trials = cfg.trials;

    const TaskParams params = cfg.task_params();
    std::size_t retained = 0;
    double mass_sum = 0.0;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        const std::uint64_t task_seed = substream(cfg.seed, trial + 1).next();
        const TaskInstance inst = generate_task(params, task_seed);

        AttendreLayer layer(cfg.layer_config(policy, m, n));
        if (trial == 0 && trace) layer.set_trace(trace, cell.policy);
        for (const Chunk& chunk : inst.chunks) layer.step(chunk);
        if (n > 0) layer.flush();

        const LayerCounters counters = layer.counters();
        const std::uint64_t budget =
            (static_cast<std::uint64_t>(inst.chunks.size()) * cfg.chunk_len + n) *
            static_cast<std::uint64_t>(m);
        if (counters.similarity_ops > budget || counters.max_width > cfg.retrieval_k) {
            throw Error("sweep: complexity counters exceeded the (C*S+N)*M / K budget");
        }
        cell.sim_ops += counters.similarity_ops;
        cell.evictions += counters.kv_evictions;

        const std::vector<MemoryEntry> entries = layer.kv().get_all();
        if (detail::all_distinguished_resident(inst, entries)) ++retained;
        mass_sum += detail::probe_mass(inst, entries);
    }
    cell.retention_rate = static_cast<double>(retained) / static_cast<double>(cfg.trials);
    cell.final_attention_mass = mass_sum / static_cast<double>(cfg.trials);
    return cell;
}

inline RunReport run_sweep(const SweepConfig& cfg) {
    cfg.validate();
    RunReport report;
    report.config = cfg;
    for (const PolicyConfig& policy : cfg.policies) {
        for (const auto& [m, n] : cfg.resolve_pairs()) {
            report.cells.push_back(run_cell(cfg, policy, m, n));
        }
    }
    std::sort(report.cells.begin(), report.cells.end(), [](const CellReport& a, const CellReport& b) {
        return std::tie(a.policy, a.m, a.n) < std::tie(b.policy, b.m, b.n);
    });
    return report;
}

/// Runs the first configured cell once with the event log wired to the sink.
inline CellReport run_trace(const SweepConfig& cfg, TraceSink sink) {
    cfg.validate();
    SweepConfig single = cfg;
    single.trials = 1;
    single.policies = {cfg.policies.front()};
    const auto [m, n] = cfg.resolve_pairs().front();
    single.m_values = {m};
    single.n_values = {n};
    return run_cell(single, single.policies.front(), m, n, std::move(sink));
}

/// Every config key the bench understands, with its default. Files and flag
/// overrides are merged over this map before a SweepConfig is built.
inline std::map<std::string, std::string> default_config_strings() {
    return {
        {"policy", "fifo"}, {"m", "64"},       {"n", ""},        {"k", "16"},
        {"chunk", "8"},     {"task", "needle"}, {"len", "256"},   {"trials", "5"},
        {"seed", "1"},      {"dim", "8"},       {"heads", "1"},   {"mass", "0.8"},
        {"needle_chunk", "0"},                  {"out", "sweep.csv"},
    };
}

inline std::map<std::string, std::string> merge_config_strings(
    std::map<std::string, std::string> base, const std::map<std::string, std::string>& overrides) {
    const auto known = default_config_strings();
    for (const auto& [key, value] : overrides) {
        if (known.find(key) == known.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        base[key] = value;
    }
    return base;
}

/// Builds the sweep from merged key=value strings ("out" is left to the
/// caller). Throws ConfigError on anything malformed.
inline SweepConfig sweep_config_from_strings(const std::map<std::string, std::string>& kv) {
    const auto get = [&](const char* key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError(std::string("missing config key '") + key + "'");
        return it->second;
    };

    SweepConfig cfg;
    cfg.policies.clear();
    for (const std::string& token : split_list(get("policy"))) {
        cfg.policies.push_back(parse_policy_token(token));
    }
    cfg.m_values.clear();
    for (const std::string& piece : split_list(get("m"))) {
        cfg.m_values.push_back(parse_u64(piece, "m"));
    }
    cfg.n_values.clear();
    for (const std::string& piece : split_list(get("n"))) {
        cfg.n_values.push_back(parse_u64(piece, "n"));
    }
    cfg.retrieval_k = parse_u64(get("k"), "k");
    cfg.chunk_len = parse_u64(get("chunk"), "chunk");
    cfg.task = parse_task_kind(get("task"));
    cfg.seq_len = parse_u64(get("len"), "len");
    cfg.trials = parse_u64(get("trials"), "trials");
    cfg.seed = parse_u64(get("seed"), "seed");
    cfg.dim = parse_u64(get("dim"), "dim");
    cfg.heads = parse_u64(get("heads"), "heads");
    cfg.target_mass = parse_f64(get("mass"), "mass");
    cfg.distinguished_chunk = parse_u64(get("needle_chunk"), "needle_chunk");
    cfg.validate();
    return cfg;
}

inline const std::string kCsvSchemaLine = "# attendre-sweep-csv v1";
inline const std::string kCsvMetricsLine =
    "# metrics: synthetic retention_rate / final_attention_mass (not exact-match accuracy)";
inline const std::string kCsvHeaderLine =
    "policy,M,N,K,S,task,trials,retention_rate,final_attention_mass,sim_ops,evictions";

inline void write_csv(const RunReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open output file: " + path);
    out << kCsvSchemaLine << "\n" << kCsvMetricsLine << "\n" << kCsvHeaderLine << "\n";
    for (const CellReport& c : report.cells) {
        out << c.policy << ',' << c.m << ',' << c.n << ',' << c.k << ',' << c.s << ','
            << task_name(c.task) << ',' << c.trials << ',' << detail::format_double(c.retention_rate)
            << ',' << detail::format_double(c.final_attention_mass) << ',' << c.sim_ops << ','
            << c.evictions << "\n";
    }
    if (!out) throw Error("failed while writing output file: " + path);
}

inline std::string summary_path_for(const std::string& csv_path) {
    const std::string suffix = ".csv";
    if (csv_path.size() > suffix.size() &&
        csv_path.compare(csv_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return csv_path.substr(0, csv_path.size() - suffix.size()) + ".json";
    }
    return csv_path + ".json";
}

inline void write_summary_json(const RunReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open output file: " + path);
    const SweepConfig& cfg = report.config;
    out << "{\n";
    out << "  \"format\": \"attendre-sweep-summary v1\",\n";
    out << "  \"config\": {\n";
    out << "    \"task\": \"" << task_name(cfg.task) << "\",\n";
    out << "    \"seq_len\": " << cfg.seq_len << ",\n";
    out << "    \"chunk\": " << cfg.chunk_len << ",\n";
    out << "    \"k\": " << cfg.retrieval_k << ",\n";
    out << "    \"trials\": " << cfg.trials << ",\n";
    out << "    \"seed\": " << cfg.seed << "\n";
    out << "  },\n";
    out << "  \"cells\": [\n";
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        const CellReport& c = report.cells[i];
        out << "    {\"policy\": \"" << c.policy << "\", \"m\": " << c.m << ", \"n\": " << c.n
            << ", \"k\": " << c.k << ", \"s\": " << c.s << ", \"task\": \"" << task_name(c.task)
            << "\", \"trials\": " << c.trials
            << ", \"retention_rate\": " << detail::format_double(c.retention_rate)
            << ", \"final_attention_mass\": " << detail::format_double(c.final_attention_mass)
            << ", \"sim_ops\": " << c.sim_ops << ", \"evictions\": " << c.evictions << "}"
            << (i + 1 < report.cells.size() ? "," : "") << "\n";
    }
    out << "  ]\n";
    out << "}\n";
    if (!out) throw Error("failed while writing output file: " + path);
}

} // namespace attendre
