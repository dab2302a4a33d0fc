#pragma once

// Shared float execution pipeline for dense and sparse models. The offline
// and chunked paths below are written so every output element is produced by
// the same sequence of floating point operations: normal convolutions compute
// each output frame as one dot product over a buffer that already contains
// the causal left context, and transposed convolutions scatter contributions
// in increasing input-frame order into zero-initialized accumulators, with
// bias and activation applied once at finalize time.

#include "speechboost/nncore.hpp"
#include "speechboost/sparse.hpp"

#include <cmath>
#include <cstring>
#include <vector>

namespace sb {
namespace detail {

// ---- customization points (dense) ----

void conv_forward_into(const Conv1dLayer& layer, const Frames& input, Frames& out);
void transposed_accumulate(const Conv1dLayer& layer, const Frames& input, Frames& out, int base);
void lstm_gates_into(const LstmLayer& l, const float* x, const float* h, float* gates);
void proj_into(const LinearLayer& p, const float* h, float* out);

// ---- customization points (sparse) ----

void conv_forward_into(const SparseConvLayer& layer, const Frames& input, Frames& out);
void transposed_accumulate(const SparseConvLayer& layer, const Frames& input, Frames& out, int base);
void lstm_gates_into(const SparseLstm& l, const float* x, const float* h, float* gates);
void proj_into(const SparseLinear& p, const float* h, float* out);

template <class ConvT>
void finalize_bias_relu_t(const ConvT& layer, Frames& out, int len) {
    for (int o = 0; o < layer.out_ch; ++o) {
        float* dst = out.row(o);
        const float bias = layer.b[o];
        for (int t = 0; t < len; ++t) {
            float v = bias + dst[t];
            dst[t] = layer.relu && v < 0.f ? 0.f : v;
        }
    }
}

inline void lstm_elementwise(int hidden, const float* gates, float* h, float* c);

// Observation hooks used by calibration capture. Slots: encoder layers are
// 0..L-1, decoders L..2L-1, head 2L.
struct ForwardTaps {
    virtual ~ForwardTaps() = default;
    virtual void on_conv_input(int slot, const Frames& padded_input) { (void)slot; (void)padded_input; }
    virtual void on_lstm_step(const float* x, const float* h_prev) { (void)x; (void)h_prev; }
    virtual void on_proj_input(const float* h) { (void)h; }
};

template <class ModelT>
std::vector<float> float_forward_offline(const ModelT& model, const std::vector<float>& waveform,
                                         ForwardTaps* taps = nullptr) {
    if (waveform.empty()) fail(ErrCode::InvalidArg, "forward: empty input");
    const ModelConfig& cfg = model.config;
    const int T = (int)waveform.size();
    const int Tp = ceil_div(T, cfg.chunk_len) * cfg.chunk_len;
    const int L = cfg.num_enc_layers();

    std::vector<float> padded(waveform);
    padded.resize((size_t)Tp + cfg.lookahead, 0.f);

    // shifted input channels; shifts read into the look-ahead tail
    Frames cur(cfg.input_channels(), Tp);
    for (int s = 0; s < cfg.input_channels(); ++s)
        std::memcpy(cur.row(s), padded.data() + s, Tp * sizeof(float));

    std::vector<Frames> skips(L);
    for (int i = 0; i < L; ++i) {
        const auto& layer = model.encoder[i];
        const int pad = layer.kernel - layer.stride;
        Frames pin(cur.ch, cur.len + pad);
        for (int ch = 0; ch < cur.ch; ++ch)
            std::memcpy(pin.row(ch) + pad, cur.row(ch), cur.len * sizeof(float));
        if (taps) taps->on_conv_input(i, pin);
        Frames out(layer.out_ch, cur.len / layer.stride);
        conv_forward_into(layer, pin, out);
        cur = std::move(out);
        skips[i] = cur;
    }

    const int steps = cur.len;
    const int H = cfg.lstm_hidden, C = cfg.bottleneck_channels();
    Frames bneck(C, steps);
    {
        std::vector<float> h(H, 0.f), c(H, 0.f), gates(4 * (size_t)H), x(C);
        std::vector<float> po(C);
        for (int t = 0; t < steps; ++t) {
            for (int i = 0; i < C; ++i) x[i] = cur.at(i, t);
            if (taps) taps->on_lstm_step(x.data(), h.data());
            lstm_gates_into(model.lstm, x.data(), h.data(), gates.data());
            lstm_elementwise(H, gates.data(), h.data(), c.data());
            if (taps) taps->on_proj_input(h.data());
            proj_into(model.proj, h.data(), po.data());
            for (int o = 0; o < C; ++o) bneck.at(o, t) = po[o];
        }
    }

    cur = std::move(bneck);
    for (int i = 0; i < L; ++i) {
        const auto& dec = model.decoder[i];
        const Frames& skip = skips[L - 1 - i];
        Frames din(dec.in_ch, cur.len);
        std::memcpy(din.data.data(), cur.data.data(), cur.data.size() * sizeof(float));
        std::memcpy(din.data.data() + cur.data.size(), skip.data.data(), skip.data.size() * sizeof(float));
        if (taps) taps->on_conv_input(L + i, din);
        Frames out(dec.out_ch, din.len * dec.stride + (dec.kernel - dec.stride));
        transposed_accumulate(dec, din, out, 0);
        Frames cropped(dec.out_ch, din.len * dec.stride);
        for (int o = 0; o < dec.out_ch; ++o)
            std::memcpy(cropped.row(o), out.row(o), cropped.len * sizeof(float));
        finalize_bias_relu_t(dec, cropped, cropped.len);
        cur = std::move(cropped);
    }

    if (taps) taps->on_conv_input(2 * L, cur);
    Frames y(1, cur.len);
    conv_forward_into(model.head, cur, y);
    std::vector<float> result(T);
    std::memcpy(result.data(), y.row(0), T * sizeof(float));
    return result;
}

// Chunk-recurrent execution state. All buffers are allocated at construction;
// process() performs no allocation.
template <class ModelT>
class FloatChunkEngine {
public:
    explicit FloatChunkEngine(const ModelT& model) : model_(&model) {
        const ModelConfig& cfg = model.config;
        const int L = cfg.num_enc_layers();
        chunk_ = cfg.chunk_len;
        x0_ = Frames(cfg.input_channels(), chunk_);
        int w = chunk_;
        for (int i = 0; i < L; ++i) {
            const auto& e = model.encoder[i];
            enc_in_.emplace_back(e.in_ch, (e.kernel - e.stride) + w);
            w /= e.stride;
            enc_out_.emplace_back(e.out_ch, w);
        }
        const int H = cfg.lstm_hidden, C = cfg.bottleneck_channels();
        h_.assign(H, 0.f);
        c_.assign(H, 0.f);
        gates_.assign((size_t)4 * H, 0.f);
        xv_.assign(C, 0.f);
        bneck_ = Frames(C, 1);
        w = 1;
        for (int i = 0; i < L; ++i) {
            const auto& d = model.decoder[i];
            dec_in_.emplace_back(d.in_ch, w);
            const int pad = d.kernel - d.stride;
            dec_scratch_.emplace_back(d.out_ch, w * d.stride + pad);
            dec_carry_.emplace_back(d.out_ch, pad);
            w *= d.stride;
            dec_out_.emplace_back(d.out_ch, w);
        }
        head_out_ = Frames(1, chunk_);
    }

    void reset() {
        for (auto& f : enc_in_) f.zero();
        for (auto& f : dec_carry_) f.zero();
        std::fill(h_.begin(), h_.end(), 0.f);
        std::fill(c_.begin(), c_.end(), 0.f);
    }

    // staged points at chunk_len + lookahead samples; writes chunk_len outputs
    void process(const float* staged, float* out) {
        const ModelConfig& cfg = model_->config;
        const int L = cfg.num_enc_layers();
        for (int s = 0; s < cfg.input_channels(); ++s)
            std::memcpy(x0_.row(s), staged + s, chunk_ * sizeof(float));

        const Frames* cur = &x0_;
        for (int i = 0; i < L; ++i) {
            Frames& ib = enc_in_[i];
            const int w = cur->len;
            const int pad = ib.len - w;
            for (int ch = 0; ch < ib.ch; ++ch) {
                float* r = ib.row(ch);
                if (pad > 0) std::memmove(r, r + w, pad * sizeof(float));
                std::memcpy(r + pad, cur->row(ch), w * sizeof(float));
            }
            conv_forward_into(model_->encoder[i], ib, enc_out_[i]);
            cur = &enc_out_[i];
        }

        for (int i = 0; i < (int)xv_.size(); ++i) xv_[i] = cur->at(i, 0);
        lstm_gates_into(model_->lstm, xv_.data(), h_.data(), gates_.data());
        lstm_elementwise(cfg.lstm_hidden, gates_.data(), h_.data(), c_.data());
        proj_into(model_->proj, h_.data(), bneck_.data.data());

        cur = &bneck_;
        for (int i = 0; i < L; ++i) {
            const auto& dec = model_->decoder[i];
            Frames& din = dec_in_[i];
            const Frames& skip = enc_out_[L - 1 - i];
            std::memcpy(din.data.data(), cur->data.data(), cur->data.size() * sizeof(float));
            std::memcpy(din.data.data() + cur->data.size(), skip.data.data(),
                        skip.data.size() * sizeof(float));

            Frames& scr = dec_scratch_[i];
            Frames& carry = dec_carry_[i];
            const int fin = din.len * dec.stride;
            const int pad = dec.kernel - dec.stride;
            for (int o = 0; o < dec.out_ch; ++o) {
                float* r = scr.row(o);
                std::memcpy(r, carry.row(o), pad * sizeof(float));
                std::memset(r + pad, 0, (scr.len - pad) * sizeof(float));
            }
            transposed_accumulate(dec, din, scr, 0);
            for (int o = 0; o < dec.out_ch; ++o) {
                std::memcpy(dec_carry_[i].row(o), scr.row(o) + fin, pad * sizeof(float));
                std::memcpy(dec_out_[i].row(o), scr.row(o), fin * sizeof(float));
            }
            finalize_bias_relu_t(dec, dec_out_[i], fin);
            cur = &dec_out_[i];
        }

        conv_forward_into(model_->head, *cur, head_out_);
        std::memcpy(out, head_out_.row(0), chunk_ * sizeof(float));
    }

private:
    const ModelT* model_;
    int chunk_ = 0;
    Frames x0_;
    std::vector<Frames> enc_in_, enc_out_;
    std::vector<float> h_, c_, gates_, xv_;
    Frames bneck_;
    std::vector<Frames> dec_in_, dec_scratch_, dec_out_, dec_carry_;
    Frames head_out_;
};

inline void lstm_elementwise(int hidden, const float* gates, float* h, float* c) {
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    for (int d = 0; d < hidden; ++d) {
        const double gi = sig(gates[d]);
        const double gf = sig(gates[hidden + d]);
        const double gg = std::tanh((double)gates[2 * hidden + d]);
        const double go = sig(gates[3 * hidden + d]);
        const double cn = gf * c[d] + gi * gg;
        c[d] = (float)cn;
        h[d] = (float)(go * std::tanh(cn));
    }
}

} // namespace detail
} // namespace sb
