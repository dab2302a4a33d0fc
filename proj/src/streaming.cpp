#include "speechboost/streaming.hpp"

#include "pipeline.hpp"
#include "quant_impl.hpp"

#include <cstring>
#include <variant>

namespace sb {

struct Stream::Impl {
    std::variant<detail::FloatChunkEngine<DenseModel>, detail::FloatChunkEngine<SparseModel>,
                 detail::QuantChunkEngine<int64_t>>
        engine;
    int chunk = 0;
    int lookahead = 0;
    std::vector<float> staged;  // chunk + lookahead scratch
    std::vector<float> pending; // last pushed chunk
    bool has_pending = false;
    uint64_t consumed = 0;
    uint64_t emitted = 0;

    template <class E>
    Impl(E&& e, const ModelConfig& cfg)
        : engine(std::forward<E>(e)), chunk(cfg.chunk_len), lookahead(cfg.lookahead) {
        staged.assign((size_t)chunk + lookahead, 0.f);
        pending.assign((size_t)chunk, 0.f);
    }

    void run(float* out) {
        std::visit([&](auto& e) { e.process(staged.data(), out); }, engine);
    }

    void reset() {
        std::visit([](auto& e) { e.reset(); }, engine);
        std::fill(staged.begin(), staged.end(), 0.f);
        std::fill(pending.begin(), pending.end(), 0.f);
        has_pending = false;
        consumed = emitted = 0;
    }
};

Stream::Stream(const DenseModel& m)
    : impl_(std::make_unique<Impl>(detail::FloatChunkEngine<DenseModel>(m), m.config)) {}
Stream::Stream(const SparseModel& m)
    : impl_(std::make_unique<Impl>(detail::FloatChunkEngine<SparseModel>(m), m.config)) {}
Stream::Stream(const QuantModel& m)
    : impl_(std::make_unique<Impl>(detail::QuantChunkEngine<int64_t>(m), m.config)) {}
Stream::~Stream() = default;
Stream::Stream(Stream&&) noexcept = default;
Stream& Stream::operator=(Stream&&) noexcept = default;

int Stream::chunk_len() const { return impl_->chunk; }
int Stream::lookahead() const { return impl_->lookahead; }
uint64_t Stream::consumed() const { return impl_->consumed; }
uint64_t Stream::emitted() const { return impl_->emitted; }

bool Stream::push(std::span<const float> chunk, std::span<float> out) {
    Impl& s = *impl_;
    if ((int)chunk.size() != s.chunk)
        fail(ErrCode::Shape, "stream push: chunk must have exactly " + std::to_string(s.chunk) +
                                 " samples, got " + std::to_string(chunk.size()));
    if ((int)out.size() < s.chunk) fail(ErrCode::Shape, "stream push: output buffer too small");
    s.consumed += s.chunk;
    if (!s.has_pending) {
        std::memcpy(s.pending.data(), chunk.data(), s.chunk * sizeof(float));
        s.has_pending = true;
        return false;
    }
    std::memcpy(s.staged.data(), s.pending.data(), s.chunk * sizeof(float));
    std::memcpy(s.staged.data() + s.chunk, chunk.data(), s.lookahead * sizeof(float));
    s.run(out.data());
    std::memcpy(s.pending.data(), chunk.data(), s.chunk * sizeof(float));
    s.emitted += s.chunk;
    return true;
}

size_t Stream::flush(std::span<float> out) {
    Impl& s = *impl_;
    if (!s.has_pending) return 0;
    if ((int)out.size() < s.chunk) fail(ErrCode::Shape, "stream flush: output buffer too small");
    std::memcpy(s.staged.data(), s.pending.data(), s.chunk * sizeof(float));
    std::memset(s.staged.data() + s.chunk, 0, s.lookahead * sizeof(float));
    s.run(out.data());
    s.emitted += s.chunk;
    s.has_pending = false;
    return (size_t)s.chunk;
}

void Stream::reset() { impl_->reset(); }

std::vector<float> stream_process_all(Stream& s, const std::vector<float>& wav) {
    if (wav.empty()) fail(ErrCode::InvalidArg, "stream_process_all: empty input");
    const int chunk = s.chunk_len();
    const size_t n_chunks = (wav.size() + chunk - 1) / chunk;
    std::vector<float> out;
    out.reserve(n_chunks * chunk);
    std::vector<float> buf((size_t)chunk), in((size_t)chunk);
    for (size_t cix = 0; cix < n_chunks; ++cix) {
        const size_t off = cix * chunk;
        const size_t have = std::min((size_t)chunk, wav.size() - off);
        std::memcpy(in.data(), wav.data() + off, have * sizeof(float));
        std::fill(in.begin() + have, in.end(), 0.f);
        if (s.push(in, buf)) out.insert(out.end(), buf.begin(), buf.end());
    }
    if (s.flush(buf) > 0) out.insert(out.end(), buf.begin(), buf.end());
    out.resize(wav.size());
    return out;
}

} // namespace sb
