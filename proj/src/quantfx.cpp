#include "speechboost/quantfx.hpp"

#include "quant_impl.hpp"

#include <cmath>
#include <limits>

namespace sb {

int64_t float_to_q(double x, QFormat fmt) {
    const double scaled = x * std::ldexp(1.0, fmt.frac_bits);
    // round half away from zero
    double r = scaled >= 0 ? std::floor(scaled + 0.5) : std::ceil(scaled - 0.5);
    if (r < (double)fmt.min_raw()) return fmt.min_raw();
    if (r > (double)fmt.max_raw()) return fmt.max_raw();
    return (int64_t)r;
}

double q_to_float(int64_t raw, QFormat fmt) { return std::ldexp((double)raw, -fmt.frac_bits); }

int64_t round_shift(int64_t v, int bits) {
    if (bits == 0) return v;
    const int64_t half = int64_t(1) << (bits - 1);
    if (v >= 0) return (v + half) >> bits;
    return -((-v + half) >> bits);
}

int32_t round_shift_sat32(int64_t v, int bits) {
    const int64_t r = round_shift(v, bits);
    if (r > std::numeric_limits<int32_t>::max()) return std::numeric_limits<int32_t>::max();
    if (r < std::numeric_limits<int32_t>::min()) return std::numeric_limits<int32_t>::min();
    return (int32_t)r;
}

int32_t quantize_sample(float x) { return (int32_t)float_to_q(x, kFmtAct); }

float dequantize_sample(int32_t v) { return (float)q_to_float(v, kFmtAct); }

namespace {

std::vector<int16_t> make_lut(double (*f)(double)) {
    std::vector<int16_t> lut(kLutSize);
    for (int i = 0; i < kLutSize; ++i) {
        const double x = -8.0 + 16.0 * i / (kLutSize - 1);
        lut[i] = (int16_t)float_to_q(f(x), kFmtAct);
    }
    return lut;
}

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double tanh_d(double x) { return std::tanh(x); }

} // namespace

std::vector<int16_t> make_sigmoid_lut() { return make_lut(&sigmoid_d); }
std::vector<int16_t> make_tanh_lut() { return make_lut(&tanh_d); }

int32_t lut_lookup(const int16_t* lut, int32_t x_q12) {
    // table spans [-8, 8] in Q12 = [-32768, 32768], 64 Q12 units per segment
    if (x_q12 <= -32768) return lut[0];
    if (x_q12 >= 32768) return lut[kLutSize - 1];
    const int32_t off = x_q12 + 32768;
    const int i = off >> 6;
    const int frac = off & 63;
    const int64_t d = (int64_t)(lut[i + 1] - lut[i]) * frac;
    return lut[i] + (int32_t)round_shift(d, 6);
}

namespace {

struct SatCounter {
    uint64_t saturated = 0;
    double max_err = 0;

    int64_t quantize(float x, QFormat fmt) {
        const double scaled = (double)x * std::ldexp(1.0, fmt.frac_bits);
        const double r = scaled >= 0 ? std::floor(scaled + 0.5) : std::ceil(scaled - 0.5);
        if (r > (double)fmt.max_raw() || r < (double)fmt.min_raw()) ++saturated;
        const int64_t q = float_to_q(x, fmt);
        max_err = std::max(max_err, std::fabs(q_to_float(q, fmt) - (double)x));
        return q;
    }
    int16_t weight(float x) { return (int16_t)quantize(x, kFmtWeight); }
    int32_t conv_bias(float x) { return (int32_t)quantize(x, kFmtConvBias); }
    int16_t lstm_bias(float x) { return (int16_t)quantize(x, kFmtLstmBias); }
};

QuantReport::Layer finish_layer(const std::string& name, const SatCounter& c) {
    QuantReport::Layer l;
    l.name = name;
    l.saturated = c.saturated;
    l.max_abs_err = c.max_err;
    return l;
}

QConvLayer quantize_conv(const SparseConvLayer& s, const std::string& name, QuantReport* rep) {
    QConvLayer q;
    q.out_ch = s.out_ch;
    q.in_ch = s.in_ch;
    q.kernel = s.kernel;
    q.stride = s.stride;
    q.transposed = s.transposed;
    q.relu = s.relu;
    q.dense_layout = s.idx.size() == (size_t)s.out_ch * s.in_ch;
    q.idx = s.idx;
    SatCounter c;
    q.w.reserve(s.w.size());
    for (float x : s.w) q.w.push_back(c.weight(x));
    q.b.reserve(s.b.size());
    for (float x : s.b) q.b.push_back(c.conv_bias(x));
    if (rep) rep->layers.push_back(finish_layer(name, c));
    return q;
}

QBlockMatrix quantize_blocks(const BlockSparseMatrix& m, size_t total_blocks, SatCounter& c) {
    QBlockMatrix q;
    q.rows = m.rows;
    q.cols = m.cols;
    q.dense_layout = m.blocks.size() == total_blocks;
    q.blocks = m.blocks;
    q.w.reserve(m.w.size());
    for (float x : m.w) q.w.push_back(c.weight(x));
    return q;
}

QuantModel quantize_sparse(const SparseModel& s, QuantReport* rep) {
    QuantModel q;
    q.config = s.config;
    for (size_t i = 0; i < s.encoder.size(); ++i)
        q.encoder.push_back(quantize_conv(s.encoder[i], "enc" + std::to_string(i), rep));
    {
        SatCounter c;
        q.lstm.hidden = s.lstm.hidden;
        q.lstm.input = s.lstm.input;
        q.lstm.w_ih = quantize_blocks(s.lstm.w_ih, (size_t)(4 * s.lstm.hidden / 16) * s.lstm.input, c);
        q.lstm.w_hh = quantize_blocks(s.lstm.w_hh, (size_t)(4 * s.lstm.hidden / 16) * s.lstm.hidden, c);
        q.lstm.bias.reserve(s.lstm.bias.size());
        for (float x : s.lstm.bias) q.lstm.bias.push_back(c.lstm_bias(x));
        if (rep) rep->layers.push_back(finish_layer("lstm", c));
    }
    {
        SatCounter c;
        q.proj.out = s.proj.out;
        q.proj.in = s.proj.in;
        q.proj.w = quantize_blocks(s.proj.w, (size_t)(s.proj.out / 16) * s.proj.in, c);
        q.proj.b.reserve(s.proj.b.size());
        for (float x : s.proj.b) q.proj.b.push_back(c.conv_bias(x));
        if (rep) rep->layers.push_back(finish_layer("proj", c));
    }
    for (size_t i = 0; i < s.decoder.size(); ++i)
        q.decoder.push_back(quantize_conv(s.decoder[i], "dec" + std::to_string(i), rep));
    q.head = quantize_conv(s.head, "head", rep);
    q.sigmoid_lut = make_sigmoid_lut();
    q.tanh_lut = make_tanh_lut();
    if (rep) {
        for (const auto& l : rep->layers) {
            rep->total_saturated += l.saturated;
            rep->max_abs_err = std::max(rep->max_abs_err, l.max_abs_err);
        }
    }
    return q;
}

} // namespace

QuantModel quantize_model(const SparseModel& m, QuantReport* report) { return quantize_sparse(m, report); }

QuantModel quantize_model(const DenseModel& m, QuantReport* report) {
    return quantize_sparse(sparsify_model(m), report);
}

void q_conv_forward(const QConvLayer& layer, const QFrames& input, QFrames& out) {
    if (layer.transposed) fail(ErrCode::Shape, "q_conv_forward called on a transposed layer");
    if (input.ch != layer.in_ch) fail(ErrCode::Shape, "q_conv_forward: channel mismatch");
    if (input.len < layer.kernel) fail(ErrCode::Shape, "q_conv_forward: input shorter than kernel");
    const int out_len = (input.len - layer.kernel) / layer.stride + 1;
    if (out.ch != layer.out_ch || out.len != out_len) out = QFrames(layer.out_ch, out_len);
    Rows<int64_t> acc(layer.out_ch, out_len);
    detail::q_conv_accumulate<int64_t>(layer, input, acc, out_len);
    detail::q_conv_finalize<int64_t>(layer, acc, out_len, out, nullptr);
}

void q_lstm_step(const QLstm& l, const int16_t* sig_lut, const int16_t* tanh_lut, const int32_t* x,
                 int32_t* h, int32_t* c, int32_t* gate_scratch) {
    std::vector<int64_t> acc((size_t)4 * l.hidden);
    detail::q_lstm_gates<int64_t>(l, x, h, acc.data(), gate_scratch, nullptr);
    detail::q_lstm_elementwise(l.hidden, gate_scratch, sig_lut, tanh_lut, h, c);
}

std::vector<float> forward_offline(const QuantModel& model, const std::vector<float>& waveform) {
    return detail::quant_forward_offline_t<int64_t>(model, waveform, nullptr);
}

QuantFidelity quant_report(const std::vector<float>& float_out, const std::vector<float>& q_out) {
    if (float_out.size() != q_out.size()) fail(ErrCode::Shape, "quant_report: length mismatch");
    double ref = 0, err = 0, max_err = 0;
    for (size_t i = 0; i < float_out.size(); ++i) {
        const double d = (double)float_out[i] - q_out[i];
        ref += (double)float_out[i] * float_out[i];
        err += d * d;
        max_err = std::max(max_err, std::fabs(d));
    }
    QuantFidelity f;
    f.max_abs_err = max_err;
    if (err == 0)
        f.snr_db = 100.0; // identical: report the cap
    else if (ref == 0)
        f.snr_db = -100.0;
    else
        f.snr_db = std::min(100.0, 10.0 * std::log10(ref / err));
    return f;
}

} // namespace sb
