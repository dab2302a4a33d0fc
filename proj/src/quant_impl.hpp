#pragma once

// Integer execution pipeline for quantized models, templated on the
// accumulator type. Production code instantiates Acc = int64_t; tests
// instantiate Acc = __int128 and count accumulators that would not fit the
// declared 64-bit width. Integer addition is associative, so the chunked and
// whole-signal paths are bit-identical by construction.

#include "speechboost/quantfx.hpp"

#include <cstring>
#include <limits>
#include <vector>

namespace sb {
namespace detail {

struct QuantExecStats {
    uint64_t acc_overflows = 0; // accumulator left the declared 64-bit range
};

template <class Acc>
inline void note_acc(Acc v, QuantExecStats* st) {
    if constexpr (sizeof(Acc) > 8) {
        if (st && (v > Acc(std::numeric_limits<int64_t>::max()) ||
                   v < Acc(std::numeric_limits<int64_t>::min())))
            st->acc_overflows++;
    } else {
        (void)v;
        (void)st;
    }
}

// acc holds Q25 partial sums; adds bias, shifts to Q12, saturates, relu
template <class Acc>
inline void q_conv_finalize(const QConvLayer& l, const Rows<Acc>& acc, int len, QFrames& out,
                            QuantExecStats* st) {
    for (int j = 0; j < l.out_ch; ++j) {
        const Acc* src = acc.row(j);
        int32_t* dst = out.row(j);
        const Acc bias = (Acc)l.b[j];
        for (int t = 0; t < len; ++t) {
            Acc v = src[t] + bias;
            note_acc(v, st);
            int32_t q = round_shift_sat32((int64_t)v, 13);
            dst[t] = l.relu && q < 0 ? 0 : q;
        }
    }
}

template <class Acc>
void q_conv_accumulate(const QConvLayer& l, const QFrames& input, Rows<Acc>& acc, int out_len) {
    const int K = l.kernel, S = l.stride;
    for (size_t n = 0; n < l.idx.size(); ++n) {
        const int j = (int)l.idx[n].first, i = (int)l.idx[n].second;
        const int16_t* wk = l.w.data() + n * K;
        Acc* dst = acc.row(j);
        const int32_t* src = input.row(i);
        for (int t = 0; t < out_len; ++t) {
            Acc a = dst[t];
            const int32_t* s = src + t * S;
            for (int k = 0; k < K; ++k) a += (Acc)s[k] * wk[k];
            dst[t] = a;
        }
    }
}

template <class Acc>
void q_transposed_accumulate(const QConvLayer& l, const QFrames& input, Rows<Acc>& out, int base) {
    const int K = l.kernel, S = l.stride;
    for (int m = 0; m < input.len; ++m) {
        const int pos = base + m * S;
        for (size_t n = 0; n < l.idx.size(); ++n) {
            const int o = (int)l.idx[n].first, i = (int)l.idx[n].second;
            const Acc x = (Acc)input.at(i, m);
            const int16_t* wk = l.w.data() + n * K;
            Acc* dst = out.row(o) + pos;
            for (int k = 0; k < K; ++k) dst[k] += x * wk[k];
        }
    }
}

// gates in Q12 (int32): 64-bit Q25 accumulate of Q12xQ13 products plus the
// Q13 bias shifted to Q25, then rounding shift by 13. acc is caller scratch
// of 4*hidden entries.
template <class Acc>
void q_lstm_gates(const QLstm& l, const int32_t* x, const int32_t* h, Acc* acc, int32_t* gates,
                  QuantExecStats* st) {
    const int R = 4 * l.hidden;
    for (int r = 0; r < R; ++r) acc[r] = (Acc)l.bias[r] << 12;
    const int G = 16;
    auto add_mat = [&](const QBlockMatrix& m, const int32_t* v) {
        for (size_t n = 0; n < m.blocks.size(); ++n) {
            const int g = (int)m.blocks[n].first;
            const Acc xv = (Acc)v[m.blocks[n].second];
            const int16_t* bw = m.w.data() + n * G;
            Acc* a = acc + (size_t)g * G;
            for (int r = 0; r < G; ++r) a[r] += xv * bw[r];
        }
    };
    add_mat(l.w_ih, x);
    add_mat(l.w_hh, h);
    for (int r = 0; r < R; ++r) {
        note_acc(acc[r], st);
        gates[r] = round_shift_sat32((int64_t)acc[r], 13);
    }
}

// c' = sig(f)*c + sig(i)*tanh(g); h' = sig(o)*tanh(c'); Q12 throughout.
// Elementwise Q12xQ12 products peak below 2^43, well inside int64.
inline void q_lstm_elementwise(int hidden, const int32_t* gates, const int16_t* sig_lut,
                               const int16_t* tanh_lut, int32_t* h, int32_t* c) {
    for (int d = 0; d < hidden; ++d) {
        const int64_t gi = lut_lookup(sig_lut, gates[d]);
        const int64_t gf = lut_lookup(sig_lut, gates[hidden + d]);
        const int64_t gg = lut_lookup(tanh_lut, gates[2 * hidden + d]);
        const int64_t go = lut_lookup(sig_lut, gates[3 * hidden + d]);
        const int64_t cn = round_shift(gf * c[d], 12) + round_shift(gi * gg, 12);
        const int32_t cq = round_shift_sat32(cn, 0);
        c[d] = cq;
        h[d] = round_shift_sat32(go * (int64_t)lut_lookup(tanh_lut, cq), 12);
    }
}

template <class Acc>
void q_proj_into(const QLinear& p, const int32_t* h, Acc* acc, int32_t* out, QuantExecStats* st) {
    for (int o = 0; o < p.out; ++o) acc[o] = (Acc)p.b[o];
    const int G = 16;
    for (size_t n = 0; n < p.w.blocks.size(); ++n) {
        const int g = (int)p.w.blocks[n].first;
        const Acc xv = (Acc)h[p.w.blocks[n].second];
        const int16_t* bw = p.w.w.data() + n * G;
        Acc* a = acc + (size_t)g * G;
        for (int r = 0; r < G; ++r) a[r] += xv * bw[r];
    }
    for (int o = 0; o < p.out; ++o) {
        note_acc(acc[o], st);
        out[o] = round_shift_sat32((int64_t)acc[o], 13);
    }
}

template <class Acc>
std::vector<float> quant_forward_offline_t(const QuantModel& model, const std::vector<float>& waveform,
                                           QuantExecStats* st) {
    if (waveform.empty()) fail(ErrCode::InvalidArg, "forward: empty input");
    const ModelConfig& cfg = model.config;
    const int T = (int)waveform.size();
    const int Tp = ceil_div(T, cfg.chunk_len) * cfg.chunk_len;
    const int L = cfg.num_enc_layers();

    std::vector<int32_t> padded((size_t)Tp + cfg.lookahead, 0);
    for (int t = 0; t < T; ++t) padded[t] = quantize_sample(waveform[t]);

    QFrames cur(cfg.input_channels(), Tp);
    for (int s = 0; s < cfg.input_channels(); ++s)
        std::memcpy(cur.row(s), padded.data() + s, Tp * sizeof(int32_t));

    std::vector<QFrames> skips(L);
    for (int i = 0; i < L; ++i) {
        const QConvLayer& layer = model.encoder[i];
        const int pad = layer.kernel - layer.stride;
        QFrames pin(cur.ch, cur.len + pad);
        for (int ch = 0; ch < cur.ch; ++ch)
            std::memcpy(pin.row(ch) + pad, cur.row(ch), cur.len * sizeof(int32_t));
        const int out_len = cur.len / layer.stride;
        Rows<Acc> acc(layer.out_ch, out_len);
        q_conv_accumulate<Acc>(layer, pin, acc, out_len);
        QFrames out(layer.out_ch, out_len);
        q_conv_finalize<Acc>(layer, acc, out_len, out, st);
        cur = std::move(out);
        skips[i] = cur;
    }

    const int steps = cur.len;
    const int H = cfg.lstm_hidden, C = cfg.bottleneck_channels();
    QFrames bneck(C, steps);
    {
        std::vector<int32_t> h((size_t)H, 0), c((size_t)H, 0), gates((size_t)4 * H), x((size_t)C),
            po((size_t)C);
        std::vector<Acc> acc((size_t)4 * H), pacc((size_t)C);
        for (int t = 0; t < steps; ++t) {
            for (int i = 0; i < C; ++i) x[i] = cur.at(i, t);
            q_lstm_gates<Acc>(model.lstm, x.data(), h.data(), acc.data(), gates.data(), st);
            q_lstm_elementwise(H, gates.data(), model.sigmoid_lut.data(), model.tanh_lut.data(),
                               h.data(), c.data());
            q_proj_into<Acc>(model.proj, h.data(), pacc.data(), po.data(), st);
            for (int o = 0; o < C; ++o) bneck.at(o, t) = po[o];
        }
    }

    cur = std::move(bneck);
    for (int i = 0; i < L; ++i) {
        const QConvLayer& dec = model.decoder[i];
        const QFrames& skip = skips[L - 1 - i];
        QFrames din(dec.in_ch, cur.len);
        std::memcpy(din.data.data(), cur.data.data(), cur.data.size() * sizeof(int32_t));
        std::memcpy(din.data.data() + cur.data.size(), skip.data.data(),
                    skip.data.size() * sizeof(int32_t));
        const int fin = din.len * dec.stride;
        Rows<Acc> acc(dec.out_ch, fin + (dec.kernel - dec.stride));
        q_transposed_accumulate<Acc>(dec, din, acc, 0);
        QFrames out(dec.out_ch, fin);
        q_conv_finalize<Acc>(dec, acc, fin, out, st);
        cur = std::move(out);
    }

    Rows<Acc> hacc(1, cur.len);
    q_conv_accumulate<Acc>(model.head, cur, hacc, cur.len);
    QFrames y(1, cur.len);
    q_conv_finalize<Acc>(model.head, hacc, cur.len, y, st);

    std::vector<float> result((size_t)T);
    for (int t = 0; t < T; ++t) result[t] = dequantize_sample(y.at(0, t));
    return result;
}

template <class Acc>
class QuantChunkEngine {
public:
    explicit QuantChunkEngine(const QuantModel& model) : model_(&model) {
        const ModelConfig& cfg = model.config;
        const int L = cfg.num_enc_layers();
        chunk_ = cfg.chunk_len;
        staged_q_.assign((size_t)chunk_ + cfg.lookahead, 0);
        x0_ = QFrames(cfg.input_channels(), chunk_);
        int w = chunk_;
        for (int i = 0; i < L; ++i) {
            const auto& e = model.encoder[i];
            enc_in_.emplace_back(e.in_ch, (e.kernel - e.stride) + w);
            w /= e.stride;
            enc_acc_.emplace_back(e.out_ch, w);
            enc_out_.emplace_back(e.out_ch, w);
        }
        const int H = cfg.lstm_hidden, C = cfg.bottleneck_channels();
        h_.assign((size_t)H, 0);
        c_.assign((size_t)H, 0);
        gates_.assign((size_t)4 * H, 0);
        xv_.assign((size_t)C, 0);
        lstm_acc_.assign((size_t)4 * H, Acc(0));
        proj_acc_.assign((size_t)C, Acc(0));
        bneck_ = QFrames(C, 1);
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
        head_acc_ = Rows<Acc>(1, chunk_);
        head_out_ = QFrames(1, chunk_);
    }

    void set_stats(QuantExecStats* st) { stats_ = st; }

    void reset() {
        for (auto& f : enc_in_) f.zero();
        for (auto& f : dec_carry_) f.zero();
        std::fill(h_.begin(), h_.end(), 0);
        std::fill(c_.begin(), c_.end(), 0);
    }

    void process(const float* staged, float* out) {
        const ModelConfig& cfg = model_->config;
        const int L = cfg.num_enc_layers();
        for (size_t t = 0; t < staged_q_.size(); ++t) staged_q_[t] = quantize_sample(staged[t]);
        for (int s = 0; s < cfg.input_channels(); ++s)
            std::memcpy(x0_.row(s), staged_q_.data() + s, chunk_ * sizeof(int32_t));

        const QFrames* cur = &x0_;
        for (int i = 0; i < L; ++i) {
            QFrames& ib = enc_in_[i];
            const int w = cur->len;
            const int pad = ib.len - w;
            for (int ch = 0; ch < ib.ch; ++ch) {
                int32_t* r = ib.row(ch);
                if (pad > 0) std::memmove(r, r + w, pad * sizeof(int32_t));
                std::memcpy(r + pad, cur->row(ch), w * sizeof(int32_t));
            }
            enc_acc_[i].zero();
            q_conv_accumulate<Acc>(model_->encoder[i], ib, enc_acc_[i], enc_out_[i].len);
            q_conv_finalize<Acc>(model_->encoder[i], enc_acc_[i], enc_out_[i].len, enc_out_[i], stats_);
            cur = &enc_out_[i];
        }

        for (int i = 0; i < (int)xv_.size(); ++i) xv_[i] = cur->at(i, 0);
        q_lstm_gates<Acc>(model_->lstm, xv_.data(), h_.data(), lstm_acc_.data(), gates_.data(), stats_);
        q_lstm_elementwise(cfg.lstm_hidden, gates_.data(), model_->sigmoid_lut.data(),
                           model_->tanh_lut.data(), h_.data(), c_.data());
        q_proj_into<Acc>(model_->proj, h_.data(), proj_acc_.data(), bneck_.data.data(), stats_);

        cur = &bneck_;
        for (int i = 0; i < L; ++i) {
            const QConvLayer& dec = model_->decoder[i];
            QFrames& din = dec_in_[i];
            const QFrames& skip = enc_out_[L - 1 - i];
            std::memcpy(din.data.data(), cur->data.data(), cur->data.size() * sizeof(int32_t));
            std::memcpy(din.data.data() + cur->data.size(), skip.data.data(),
                        skip.data.size() * sizeof(int32_t));

            Rows<Acc>& scr = dec_scratch_[i];
            Rows<Acc>& carry = dec_carry_[i];
            const int fin = din.len * dec.stride;
            const int pad = dec.kernel - dec.stride;
            for (int o = 0; o < dec.out_ch; ++o) {
                Acc* r = scr.row(o);
                std::memcpy(r, carry.row(o), pad * sizeof(Acc));
                std::fill(r + pad, r + scr.len, Acc(0));
            }
            q_transposed_accumulate<Acc>(dec, din, scr, 0);
            for (int o = 0; o < dec.out_ch; ++o)
                std::memcpy(dec_carry_[i].row(o), scr.row(o) + fin, pad * sizeof(Acc));
            q_conv_finalize<Acc>(dec, scr, fin, dec_out_[i], stats_);
            cur = &dec_out_[i];
        }

        head_acc_.zero();
        q_conv_accumulate<Acc>(model_->head, *cur, head_acc_, chunk_);
        q_conv_finalize<Acc>(model_->head, head_acc_, chunk_, head_out_, stats_);
        for (int t = 0; t < chunk_; ++t) out[t] = dequantize_sample(head_out_.at(0, t));
    }

private:
    const QuantModel* model_;
    int chunk_ = 0;
    QuantExecStats* stats_ = nullptr;
    std::vector<int32_t> staged_q_;
    QFrames x0_;
    std::vector<QFrames> enc_in_, enc_out_;
    std::vector<Rows<Acc>> enc_acc_;
    std::vector<int32_t> h_, c_, gates_, xv_;
    std::vector<Acc> lstm_acc_, proj_acc_;
    QFrames bneck_;
    std::vector<QFrames> dec_in_, dec_out_;
    std::vector<Rows<Acc>> dec_scratch_, dec_carry_;
    Rows<Acc> head_acc_;
    QFrames head_out_;
};

} // namespace detail
} // namespace sb
