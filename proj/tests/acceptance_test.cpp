// Each test checks one release gate and prints a single [PASS]/[FAIL] line.
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "attendre/attendre.hpp"
#include "scalar_oracles.hpp"

using namespace attendre;

namespace {

struct Criterion {
    int id;
    const char* text;
    ~Criterion() {
        std::printf("[%s] criterion %d: %s\n",
                    ::testing::Test::HasFailure() ? "FAIL" : "PASS", id, text);
        std::fflush(stdout);
    }
};

StackConfig wide_stack(std::size_t n, bool causal) {
    StackConfig cfg;
    cfg.layers = 1;
    cfg.layer.kv_capacity = 256;
    cfg.layer.q_capacity = n;
    cfg.layer.retrieval_k = 256;
    cfg.layer.chunk_len = 8;
    cfg.layer.heads = 2;
    cfg.layer.head_dim = 8; // d = 16
    cfg.layer.causal = causal;
    return cfg;
}

Matrix dense_oracle(const Matrix& rows, MaskKind kind, std::size_t heads) {
    const Matrix mask = make_attention_mask(rows.rows(), rows.rows(), kind);
    return oracle::naive_dense_attention(rows, rows, rows, mask, heads);
}

} // namespace

TEST(Acceptance, CausalEquivalence) {
    Criterion c{1, "streaming causal attention matches the dense oracle (<= 1e-9, < 5 s)"};
    SplitMix64 rng(1001);
    const Matrix rows = oracle::random_matrix(rng, 128, 16);

    const auto t0 = std::chrono::steady_clock::now();
    const StackResult res = run_stack(wide_stack(0, true), rows);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 5.0);

    ASSERT_EQ(res.outputs.rows(), 128u);
    for (std::size_t i = 0; i < 128; ++i) {
        ASSERT_EQ(res.positions[i], static_cast<std::int64_t>(i));
    }
    EXPECT_LE(max_rel_diff(res.outputs, dense_oracle(rows, MaskKind::kCausal, 2)), 1e-9);
}

TEST(Acceptance, BidirectionalEquivalence) {
    Criterion c{2, "delayed queries plus flush match dense bidirectional attention (<= 1e-9)"};
    SplitMix64 rng(1002);
    const Matrix rows = oracle::random_matrix(rng, 128, 16);
    const StackResult res = run_stack(wide_stack(256, false), rows);
    ASSERT_EQ(res.outputs.rows(), 128u);
    EXPECT_LE(max_rel_diff(res.outputs, dense_oracle(rows, MaskKind::kBidirectional, 2)), 1e-9);
}

TEST(Acceptance, DrainArithmetic) {
    Criterion c{3, "drain feeds exactly N*L padding, keeps positions, and equals flush (<= 1e-9)"};
    SplitMix64 rng(1003);
    const Matrix rows = oracle::random_matrix(rng, 16, 4);

    StackConfig cfg;
    cfg.layers = 3;
    cfg.layer.kv_capacity = 64;
    cfg.layer.q_capacity = 8;
    cfg.layer.retrieval_k = 64;
    cfg.layer.chunk_len = 4;
    cfg.layer.head_dim = 4;

    StackConfig drain_cfg = cfg;
    drain_cfg.drain = DrainMode::kDrain;
    const StackResult drained = run_stack(drain_cfg, rows);
    EXPECT_EQ(drained.stats.padding_consumed, 24u); // N * L = 8 * 3
    ASSERT_EQ(drained.positions.size(), 16u);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_EQ(drained.positions[i], static_cast<std::int64_t>(i));
    }

    const StackResult flushed = run_stack(cfg, rows);
    ASSERT_EQ(flushed.positions, drained.positions);
    EXPECT_LE(max_rel_diff(flushed.outputs, drained.outputs), 1e-9);
}

TEST(Acceptance, CapacityAndOrderProperties) {
    Criterion c{4, "1050 random traces: size <= capacity, FIFO order, sink pins first 4"};
    SplitMix64 rng(1004);
    std::uint64_t traces = 0;
    for (std::size_t rep = 0; rep < 350; ++rep) {
        for (int which = 0; which < 3; ++which) {
            ++traces;
            KeyValueMemoryConfig cfg;
            cfg.capacity = 2 + rng.below(7);
            if (which == 1) {
                cfg.policy.kind = PolicyKind::kAttentionSink;
                cfg.capacity = 5 + rng.below(5); // room beyond the pinned prefix
            } else if (which == 2) {
                cfg.policy.kind = PolicyKind::kLraSum;
            }
            KeyValueMemory mem(cfg);

            std::uint64_t next_counter = 0;
            std::uint64_t next_evicted = 0; // FIFO must evict counters in order
            std::int64_t pos = 0;
            const std::size_t steps = 4 + rng.below(8);
            for (std::size_t step = 0; step < steps; ++step) {
                const std::size_t rows = 1 + rng.below(std::min<std::size_t>(cfg.capacity, 3));
                Matrix keys(rows, 3);
                std::vector<Metadata> meta(rows);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t col = 0; col < 3; ++col) keys(r, col) = rng.uniform(-1, 1);
                    meta[r].position = pos++;
                }
                const EvictedBatch evicted = mem.insert(keys, keys, meta);
                EXPECT_LE(mem.size(), cfg.capacity);
                for (const MemoryEntry& e : evicted.entries) {
                    if (which == 0) EXPECT_EQ(e.insertion_counter, next_evicted++);
                    if (which == 1) EXPECT_GE(e.insertion_counter, 4u);
                }
                next_counter += rows;

                if (step % 2 == 1) {
                    RetrieveRequest req;
                    req.queries = Matrix(1, 3);
                    for (std::size_t col = 0; col < 3; ++col) req.queries(0, col) = rng.uniform(-1, 1);
                    req.positions = {pos - 1};
                    req.valid = {true};
                    req.k = 2;
                    mem.retrieve(req);
                    EXPECT_LE(mem.size(), cfg.capacity);
                }
            }
            if (which == 1 && next_counter >= 4) {
                // The pinned prefix must still be resident at the end.
                std::vector<bool> seen(4, false);
                for (const MemoryEntry& e : mem.get_all()) {
                    if (e.insertion_counter < 4) seen[e.insertion_counter] = true;
                }
                for (bool s : seen) EXPECT_TRUE(s);
            }
        }
    }
    EXPECT_GE(traces, 1000u);
}

namespace {

AttentionFeedback random_feedback(SplitMix64& rng, std::size_t n_entries, std::int64_t position) {
    AttentionFeedback fb;
    fb.scores = Matrix(1, n_entries);
    fb.pair_valid = Matrix(1, n_entries);
    fb.used = Matrix(1, n_entries);
    fb.query_positions = {position};
    fb.query_valid = {true};
    for (std::size_t e = 0; e < n_entries; ++e) {
        fb.scores(0, e) = rng.uniform(-2.0, 2.0);
        fb.pair_valid(0, e) = rng.below(4) != 0 ? 1.0 : 0.0;
        fb.used(0, e) = fb.pair_valid(0, e);
    }
    return fb;
}

} // namespace

TEST(Acceptance, PolicyIdentities) {
    Criterion c{5, "lfa(0) tracks cumulative lra_sum (<= 1e-9); lfa decay step is exact (<= 1e-12)"};
    SplitMix64 rng(1005);

    for (std::size_t rep = 0; rep < 30; ++rep) {
        PolicyConfig sum_cfg;
        sum_cfg.kind = PolicyKind::kLraSum;
        PolicyConfig lfa_cfg;
        lfa_cfg.kind = PolicyKind::kLfa;
        lfa_cfg.decay = 0.0;
        EvictionPolicy lra(sum_cfg);
        EvictionPolicy lfa(lfa_cfg);

        const std::size_t n_entries = 3 + rng.below(4);
        lra.register_insertions(n_entries); // one batch into empty memory:
        lfa.register_insertions(n_entries); // every starting score is zero
        std::vector<double> running(n_entries, 0.0);

        std::int64_t position = 0;
        const std::size_t steps = 5 + rng.below(6);
        for (std::size_t step = 0; step < steps; ++step) {
            position += 1 + static_cast<std::int64_t>(rng.below(3));
            const AttentionFeedback fb = random_feedback(rng, n_entries, position);
            lra.observe_attention(fb);
            lfa.observe_attention(fb);
            for (std::size_t e = 0; e < n_entries; ++e) {
                if (fb.pair_valid(0, e) != 0.0) running[e] += lra.score(e);
            }
        }
        for (std::size_t e = 0; e < n_entries; ++e) {
            EXPECT_NEAR(lfa.score(e), running[e], 1e-9);
        }
    }

    // A step that attends nothing decays every aggregate by exp(-lambda * di).
    PolicyConfig decay_cfg;
    decay_cfg.kind = PolicyKind::kLfa;
    decay_cfg.decay = 0.001;
    EvictionPolicy lfa(decay_cfg);
    lfa.register_insertions(4);
    lfa.observe_attention(random_feedback(rng, 4, 8));
    std::vector<double> before(4);
    for (std::size_t e = 0; e < 4; ++e) before[e] = lfa.score(e);

    AttentionFeedback idle;
    idle.scores = Matrix(1, 4);
    idle.pair_valid = Matrix(1, 4);
    idle.used = Matrix(1, 4);
    idle.query_positions = {15};
    idle.query_valid = {true};
    lfa.observe_attention(idle);
    const double factor = std::exp(-0.001 * (15.0 - 8.0));
    for (std::size_t e = 0; e < 4; ++e) {
        EXPECT_NEAR(lfa.score(e), factor * before[e], 1e-12);
    }
}

TEST(Acceptance, NeedleRetentionContrast) {
    Criterion c{6, "32-chunk needle, M=16: fifo retains 0/20, lra_sum and lfa(0) retain 20/20"};
    SweepConfig cfg;
    cfg.policies = {parse_policy_token("fifo"), parse_policy_token("lra_sum"),
                    parse_policy_token("lfa:0")};
    cfg.m_values = {16};
    cfg.n_values = {0};
    cfg.retrieval_k = 16;
    cfg.chunk_len = 4;
    cfg.seq_len = 128; // 32 chunks
    cfg.trials = 20;
    cfg.seed = 1;
    cfg.dim = 8;
    cfg.heads = 1;
    cfg.target_mass = 0.8;

    // The construction itself must plant >= 0.8 of every query's attention
    // mass on the distinguished key.
    const TaskInstance inst = generate_task(cfg.task_params(), 77);
    std::vector<std::vector<double>> keys;
    std::vector<bool> planted;
    for (const Chunk& chunk : inst.chunks) {
        for (std::size_t r = 0; r < chunk.positions.size(); ++r) {
            if (!chunk.valid[r]) continue;
            const auto row = chunk.keys.row(r);
            keys.emplace_back(row.begin(), row.end());
            planted.push_back(chunk.positions[r] == inst.distinguished_positions.front());
        }
    }
    double total = 0.0;
    double hit = 0.0;
    for (std::size_t j = 0; j < keys.size(); ++j) {
        const double w = std::exp(oracle::naive_dot(inst.probe, keys[j]));
        total += w;
        if (planted[j]) hit += w;
    }
    EXPECT_GE(hit / total, 0.8);

    const RunReport report = run_sweep(cfg);
    ASSERT_EQ(report.cells.size(), 3u); // sorted: fifo, lfa:0, lra_sum
    EXPECT_EQ(report.cells[0].policy, "fifo");
    EXPECT_EQ(report.cells[0].retention_rate, 0.0);
    EXPECT_EQ(report.cells[1].policy, "lfa:0");
    EXPECT_EQ(report.cells[1].retention_rate, 1.0);
    EXPECT_EQ(report.cells[2].policy, "lra_sum");
    EXPECT_EQ(report.cells[2].retention_rate, 1.0);
    EXPECT_GE(report.cells[1].final_attention_mass, 0.8);
    EXPECT_GE(report.cells[2].final_attention_mass, 0.8);
}

TEST(Acceptance, ComplexityCounters) {
    Criterion c{7, "per layer, similarity ops <= (C*S+N)*M and retrieved set width <= K"};
    SplitMix64 rng(1007);
    StackConfig cfg;
    cfg.layers = 3;
    cfg.layer.kv_capacity = 12;
    cfg.layer.q_capacity = 6;
    cfg.layer.retrieval_k = 5;
    cfg.layer.chunk_len = 3;
    cfg.layer.head_dim = 4;
    cfg.layer.policy.kind = PolicyKind::kLraSum;
    cfg.drain = DrainMode::kDrain;

    const Matrix rows = oracle::random_matrix(rng, 27, 4);
    const StackResult res = run_stack(cfg, rows);
    const std::uint64_t budget =
        (res.stats.chunks_processed * cfg.layer.chunk_len + cfg.layer.q_capacity) *
        cfg.layer.kv_capacity;
    ASSERT_EQ(res.stats.per_layer.size(), 3u);
    for (const LayerCounters& counters : res.stats.per_layer) {
        EXPECT_LE(counters.similarity_ops, budget);
        EXPECT_LE(counters.max_width, cfg.layer.retrieval_k);
    }

    // Same envelope on a wide immediate-mode run.
    SplitMix64 rng2(1008);
    const Matrix wide = oracle::random_matrix(rng2, 64, 16);
    const StackResult res2 = run_stack(wide_stack(0, true), wide);
    const std::uint64_t budget2 = (res2.stats.chunks_processed * 8 + 0) * 256;
    EXPECT_LE(res2.stats.per_layer[0].similarity_ops, budget2);
    EXPECT_LE(res2.stats.per_layer[0].max_width, 256u);
}

TEST(Acceptance, EncoderChunkInvariance) {
    Criterion c{8, "decoder output invariant to encoder chunking S in {4,8,16} (<= 1e-9)"};
    SplitMix64 rng(1009);
    const Matrix input = oracle::random_matrix(rng, 16, 4);
    const Matrix queries = oracle::random_matrix(rng, 5, 4);

    Matrix first;
    for (std::size_t s : {std::size_t{4}, std::size_t{8}, std::size_t{16}}) {
        EncoderDecoderConfig cfg;
        cfg.encoder.layers = 2;
        cfg.encoder.layer.kv_capacity = 64;
        cfg.encoder.layer.q_capacity = 16; // >= total input: nothing released early
        cfg.encoder.layer.retrieval_k = 64;
        cfg.encoder.layer.chunk_len = s;
        cfg.encoder.layer.head_dim = 4;
        cfg.encoder.layer.causal = false;
        cfg.output_capacity = 64;
        cfg.decoder_chunk = 4;
        const Matrix out = run_encoder_decoder(cfg, input, queries);
        if (first.empty()) {
            first = out;
        } else {
            EXPECT_LE(max_rel_diff(out, first), 1e-9);
        }
    }
}

TEST(Acceptance, SweepDeterminism) {
    Criterion c{9, "one sweep config, two runs: byte-identical csv and summary"};
    SweepConfig cfg;
    cfg.policies = {parse_policy_token("fifo"), parse_policy_token("lra_sum")};
    cfg.m_values = {16};
    cfg.n_values = {0};
    cfg.retrieval_k = 8;
    cfg.chunk_len = 4;
    cfg.seq_len = 32;
    cfg.trials = 3;
    cfg.seed = 5;
    cfg.dim = 8;

    const auto slurp = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    };

    const std::string a = ::testing::TempDir() + "acceptance_a.csv";
    const std::string b = ::testing::TempDir() + "acceptance_b.csv";
    const RunReport first = run_sweep(cfg);
    write_csv(first, a);
    write_summary_json(first, summary_path_for(a));
    const RunReport second = run_sweep(cfg);
    write_csv(second, b);
    write_summary_json(second, summary_path_for(b));

    const std::string bytes = slurp(a);
    EXPECT_FALSE(bytes.empty());
    EXPECT_EQ(bytes, slurp(b));
    EXPECT_EQ(slurp(summary_path_for(a)), slurp(summary_path_for(b)));
}
