#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "attendre/common.hpp"
#include "attendre/matrix.hpp"
#include "attendre/memory.hpp"
#include "attendre/oracle.hpp"
#include "attendre/stack.hpp"

namespace attendre {

struct EncoderDecoderConfig {
    StackConfig encoder;
    std::size_t output_capacity = 1; // O
    std::size_t decoder_chunk = 1;

    void validate() const {
        if (output_capacity == 0) throw ConfigError("encdec: output capacity must be >= 1");
        if (decoder_chunk == 0) throw ConfigError("encdec: decoder chunk must be >= 1");
        encoder.validate();
    }
};

/// One encoder output row as the decoder sees it. Data-only: the row doubles
/// as key and value during cross attention.
struct EncodedRow {
    std::vector<double> value;
    std::int64_t position = 0;
};

/// Encoder stack feeding a bounded FIFO output memory, decoded by dense cross
/// attention over everything the memory still holds.
class EncoderDecoder {
public:
    explicit EncoderDecoder(EncoderDecoderConfig cfg)
        : cfg_(validated(std::move(cfg))), memory_(cfg_.output_capacity) {}

    const EncoderDecoderConfig& config() const { return cfg_; }
    const DataOnlyMemory<EncodedRow>& memory() const { return memory_; }
    bool encoded() const { return encoded_; }

    /// Streams the input through the encoder stack (including its drain) and
    /// pushes the outputs chunk-by-chunk into the output memory.
    StreamStats encode(const Matrix& rows) {
        if (encoded_) throw OrderError("encode: input was already encoded");
        StackResult enc = run_stack(cfg_.encoder, rows);
        const std::size_t s = cfg_.encoder.layer.chunk_len;
        std::vector<EncodedRow> batch;
        batch.reserve(s);
        for (std::size_t i = 0; i < enc.outputs.rows(); ++i) {
            EncodedRow row;
            row.value.assign(enc.outputs.row(i).begin(), enc.outputs.row(i).end());
            row.position = enc.positions[i];
            batch.push_back(std::move(row));
            if (batch.size() == s) {
                memory_.insert(batch);
                batch.clear();
            }
        }
        if (!batch.empty()) memory_.insert(batch);
        encoded_ = true;
        return enc.stats;
    }

    /// One decoder step: dense per-head cross attention of the queries
    /// against the entire memory contents (no retrieval, no top-K).
    Matrix decode(const Matrix& queries) const {
        if (!encoded_) throw OrderError("decode: encoder has not run yet");
        if (queries.rows() == 0) throw EmptyInput("decode: no queries");
        if (queries.rows() > cfg_.decoder_chunk) {
            throw CapacityError("decode: more queries than the decoder chunk size");
        }
        const std::size_t d = cfg_.encoder.layer.dim();
        if (queries.cols() != d) {
            throw DimensionError("decode: query width differs from encoder output width");
        }
        const std::vector<EncodedRow> entries = memory_.get_all();
        if (entries.empty()) throw EmptyMemoryError("decode: encoder output memory is empty");

        Matrix stored(entries.size(), d);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            stored.set_row(i, std::span<const double>(entries[i].value));
        }
        const Matrix mask(queries.rows(), stored.rows(), 1.0);
        return dense_attention(queries, stored, stored, mask, cfg_.encoder.layer.heads,
                               cfg_.encoder.layer.scaled_similarity);
    }

private:
    static EncoderDecoderConfig validated(EncoderDecoderConfig cfg) {
        cfg.validate();
        return cfg;
    }

    EncoderDecoderConfig cfg_;
    DataOnlyMemory<EncodedRow> memory_;
    bool encoded_ = false;
};

/// Encode the whole input, then decode the queries in decoder-chunk batches.
inline Matrix run_encoder_decoder(const EncoderDecoderConfig& cfg, const Matrix& input,
                                  const Matrix& decoder_queries) {
    EncoderDecoder ed(cfg);
    ed.encode(input);
    Matrix out(decoder_queries.rows(), decoder_queries.cols());
    const std::size_t step = cfg.decoder_chunk;
    for (std::size_t start = 0; start < decoder_queries.rows(); start += step) {
        const std::size_t len = std::min(step, decoder_queries.rows() - start);
        Matrix batch(len, decoder_queries.cols());
        for (std::size_t i = 0; i < len; ++i) batch.set_row(i, decoder_queries.row(start + i));
        const Matrix dec = ed.decode(batch);
        for (std::size_t i = 0; i < len; ++i) out.set_row(start + i, dec.row(i));
    }
    return out;
}

} // namespace attendre
