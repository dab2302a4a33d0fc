#pragma once

#include "speechboost/nncore.hpp"
#include "speechboost/quantfx.hpp"
#include "speechboost/sparse.hpp"

#include <memory>
#include <span>

namespace sb {

// Stateful chunk-by-chunk execution with exactly chunk_len + lookahead
// (48 samples, 3 ms at 16 kHz) of algorithmic latency. Pushing chunk j
// returns nothing for j == 0 and output chunk j-1 afterwards; the first
// lookahead samples of chunk j are the look-ahead for chunk j-1. flush()
// zero-pads the pending look-ahead and drains the remaining chunk so that
// emitted == consumed.
//
// The model must outlive the stream. A stream is single-owner; distinct
// streams over one shared model are independent. push() does not allocate.
class Stream {
public:
    explicit Stream(const DenseModel& m);
    explicit Stream(const SparseModel& m);
    explicit Stream(const QuantModel& m);
    ~Stream();
    Stream(Stream&&) noexcept;
    Stream& operator=(Stream&&) noexcept;

    int chunk_len() const;
    int lookahead() const;
    int latency_samples() const { return chunk_len() + lookahead(); }

    // chunk.size() must be exactly chunk_len(); out must hold chunk_len().
    // Returns true when an output chunk was written.
    bool push(std::span<const float> chunk, std::span<float> out);

    // Returns the number of samples written (0 or chunk_len()).
    size_t flush(std::span<float> out);

    void reset();

    uint64_t consumed() const;
    uint64_t emitted() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Convenience: run a whole signal through a stream (zero-padding the final
// partial chunk), returning exactly wav.size() samples. Matches
// forward_offline on the same model.
std::vector<float> stream_process_all(Stream& s, const std::vector<float>& wav);

} // namespace sb
