#include "speechboost/nncore.hpp"

#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace sb {

namespace {

void check_finite(const std::vector<float>& v, const std::string& what) {
    for (float x : v)
        if (!std::isfinite(x)) fail(ErrCode::InvalidArg, what + " contains a non-finite value");
}

} // namespace

void ModelConfig::validate() const {
    if (sample_rate_hz != 16000) fail(ErrCode::InvalidArg, "sample_rate_hz must be 16000");
    if (chunk_len <= 0 || lookahead < 0) fail(ErrCode::InvalidArg, "chunk_len/lookahead out of range");
    if (lookahead >= chunk_len) fail(ErrCode::InvalidArg, "lookahead must be smaller than chunk_len");
    size_t n = strides.size();
    if (n == 0 || channels.size() != n || kernel_sizes.size() != n)
        fail(ErrCode::InvalidArg, "strides/channels/kernel_sizes must have equal nonzero length");
    int prod = 1;
    for (size_t i = 0; i < n; ++i) {
        if (strides[i] <= 0 || channels[i] <= 0 || kernel_sizes[i] <= 0)
            fail(ErrCode::InvalidArg, "layer sizes must be positive");
        if (kernel_sizes[i] < strides[i])
            fail(ErrCode::InvalidArg, "kernel_sizes[" + std::to_string(i) + "] must be >= stride");
        prod *= strides[i];
    }
    if (prod != chunk_len)
        fail(ErrCode::InvalidArg, "product of strides (" + std::to_string(prod) +
                                      ") must equal chunk_len (" + std::to_string(chunk_len) + ")");
    if (lookahead_copies < 1 || lookahead_copies > lookahead + 1)
        fail(ErrCode::InvalidArg, "lookahead_copies must be in [1, lookahead+1]");
    if (lstm_hidden <= 0 || (4 * lstm_hidden) % 16 != 0)
        fail(ErrCode::InvalidArg, "4*lstm_hidden must be divisible by 16");
    if (channels.back() % 16 != 0)
        fail(ErrCode::InvalidArg, "channels.back() must be divisible by 16");
}

void DenseModel::validate() const {
    config.validate();
    int L = config.num_enc_layers();
    if ((int)encoder.size() != L || (int)decoder.size() != L)
        fail(ErrCode::Shape, "encoder/decoder must each have " + std::to_string(L) + " layers");
    for (int i = 0; i < L; ++i) {
        const Conv1dLayer& e = encoder[i];
        int want_in = i == 0 ? config.input_channels() : config.channels[i - 1];
        if (e.transposed || e.in_ch != want_in || e.out_ch != config.channels[i] ||
            e.stride != config.strides[i] || e.kernel != config.kernel_sizes[i])
            fail(ErrCode::Shape, "encoder layer " + std::to_string(i) + " has inconsistent shape");
        if (e.w.size() != e.weight_count() || (int)e.b.size() != e.out_ch)
            fail(ErrCode::Shape, "encoder layer " + std::to_string(i) + " has wrong weight/bias size");
        check_finite(e.w, "encoder weight");
        check_finite(e.b, "encoder bias");
    }
    for (int i = 0; i < L; ++i) {
        const Conv1dLayer& d = decoder[i];
        int mirror = L - 1 - i;
        int want_in = 2 * config.channels[mirror];
        int want_out = mirror == 0 ? config.channels[0] : config.channels[mirror - 1];
        if (!d.transposed || d.in_ch != want_in || d.out_ch != want_out ||
            d.stride != config.strides[mirror] || d.kernel != config.kernel_sizes[mirror])
            fail(ErrCode::Shape, "decoder layer " + std::to_string(i) + " has inconsistent shape");
        if (d.w.size() != d.weight_count() || (int)d.b.size() != d.out_ch)
            fail(ErrCode::Shape, "decoder layer " + std::to_string(i) + " has wrong weight/bias size");
        check_finite(d.w, "decoder weight");
        check_finite(d.b, "decoder bias");
    }
    if (head.transposed || head.in_ch != config.channels[0] || head.out_ch != 1 || head.kernel != 1 ||
        head.stride != 1 || head.relu)
        fail(ErrCode::Shape, "output head must be a linear 1x1 conv to one channel");
    if (lstm.input != config.bottleneck_channels() || lstm.hidden != config.lstm_hidden)
        fail(ErrCode::Shape, "lstm dimensions do not match config");
    if ((int)lstm.w_ih.size() != 4 * lstm.hidden * lstm.input ||
        (int)lstm.w_hh.size() != 4 * lstm.hidden * lstm.hidden || (int)lstm.bias.size() != 4 * lstm.hidden)
        fail(ErrCode::Shape, "lstm weight sizes inconsistent");
    if (proj.in != config.lstm_hidden || proj.out != config.bottleneck_channels() ||
        (int)proj.w.size() != proj.in * proj.out || (int)proj.b.size() != proj.out)
        fail(ErrCode::Shape, "projection dimensions inconsistent");
    check_finite(lstm.w_ih, "lstm w_ih");
    check_finite(lstm.w_hh, "lstm w_hh");
    check_finite(lstm.bias, "lstm bias");
    check_finite(proj.w, "projection weight");
    check_finite(head.w, "head weight");
}

namespace detail {

void conv_forward_into(const Conv1dLayer& layer, const Frames& input, Frames& out) {
    const int K = layer.kernel, S = layer.stride;
    for (int j = 0; j < layer.out_ch; ++j) {
        float* dst = out.row(j);
        for (int t = 0; t < out.len; ++t) {
            double acc = layer.b[j];
            const int base = t * S;
            for (int i = 0; i < layer.in_ch; ++i) {
                const float* wk = layer.kernel_ptr(j, i);
                const float* src = input.row(i) + base;
                for (int k = 0; k < K; ++k) acc += (double)wk[k] * src[k];
            }
            float v = (float)acc;
            dst[t] = layer.relu && v < 0.f ? 0.f : v;
        }
    }
}

void transposed_accumulate(const Conv1dLayer& layer, const Frames& input, Frames& out, int base) {
    const int K = layer.kernel, S = layer.stride;
    for (int m = 0; m < input.len; ++m) {
        const int pos = base + m * S;
        for (int o = 0; o < layer.out_ch; ++o) {
            float* dst = out.row(o) + pos;
            for (int i = 0; i < layer.in_ch; ++i) {
                const float x = input.at(i, m);
                const float* wk = layer.kernel_ptr(o, i);
                for (int k = 0; k < K; ++k) dst[k] += wk[k] * x;
            }
        }
    }
}

void lstm_gates_into(const LstmLayer& l, const float* x, const float* h, float* gates) {
    const int H = l.hidden, D = l.input;
    for (int r = 0; r < 4 * H; ++r) {
        double acc = l.bias[r];
        const float* wi = l.w_ih.data() + (size_t)r * D;
        for (int d = 0; d < D; ++d) acc += (double)wi[d] * x[d];
        const float* wh = l.w_hh.data() + (size_t)r * H;
        for (int d = 0; d < H; ++d) acc += (double)wh[d] * h[d];
        gates[r] = (float)acc;
    }
}

void proj_into(const LinearLayer& p, const float* h, float* out) {
    for (int o = 0; o < p.out; ++o) {
        double acc = p.b[o];
        const float* wr = p.w.data() + (size_t)o * p.in;
        for (int d = 0; d < p.in; ++d) acc += (double)wr[d] * h[d];
        out[o] = (float)acc;
    }
}

} // namespace detail

Frames conv1d_forward(const Conv1dLayer& layer, const Frames& input) {
    if (layer.transposed) fail(ErrCode::Shape, "conv1d_forward called on a transposed layer");
    if (input.ch != layer.in_ch)
        fail(ErrCode::Shape, "conv input has " + std::to_string(input.ch) + " channels, layer expects " +
                                 std::to_string(layer.in_ch));
    if (input.len < layer.kernel)
        fail(ErrCode::Shape, "conv input length " + std::to_string(input.len) + " shorter than kernel " +
                                 std::to_string(layer.kernel));
    Frames out(layer.out_ch, (input.len - layer.kernel) / layer.stride + 1);
    detail::conv_forward_into(layer, input, out);
    return out;
}

Frames conv1d_transposed_forward(const Conv1dLayer& layer, const Frames& input) {
    if (!layer.transposed) fail(ErrCode::Shape, "conv1d_transposed_forward needs a transposed layer");
    if (input.ch != layer.in_ch)
        fail(ErrCode::Shape, "transposed conv input has " + std::to_string(input.ch) +
                                 " channels, layer expects " + std::to_string(layer.in_ch));
    if (input.len < 1) fail(ErrCode::Shape, "transposed conv input is empty");
    const int out_len = (input.len - 1) * layer.stride + layer.kernel;
    Frames out(layer.out_ch, out_len);
    detail::transposed_accumulate(layer, input, out, 0);
    detail::finalize_bias_relu_t(layer, out, out_len);
    return out;
}

void lstm_step(const LstmLayer& layer, const float* x, float* h, float* c, float* gate_scratch) {
    detail::lstm_gates_into(layer, x, h, gate_scratch);
    detail::lstm_elementwise(layer.hidden, gate_scratch, h, c);
}

Frames make_lookahead_channels(const std::vector<float>& waveform, const ModelConfig& config) {
    const int T = (int)waveform.size();
    Frames out(config.lookahead_copies, T);
    for (int s = 0; s < config.lookahead_copies; ++s) {
        float* dst = out.row(s);
        const int n = std::max(0, T - s);
        if (n > 0) std::memcpy(dst, waveform.data() + s, n * sizeof(float));
    }
    return out;
}

std::vector<float> forward_offline(const DenseModel& model, const std::vector<float>& waveform) {
    return detail::float_forward_offline(model, waveform);
}

DenseModel make_random_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(seed);
    auto fill = [&rng](std::vector<float>& v, size_t n, double scale) {
        v.resize(n);
        for (auto& x : v) x = (float)rng.uniform(-scale, scale);
    };

    DenseModel m;
    m.config = config;
    const int L = config.num_enc_layers();
    for (int i = 0; i < L; ++i) {
        Conv1dLayer e;
        e.in_ch = i == 0 ? config.input_channels() : config.channels[i - 1];
        e.out_ch = config.channels[i];
        e.kernel = config.kernel_sizes[i];
        e.stride = config.strides[i];
        double a = 1.0 / std::sqrt((double)e.in_ch * e.kernel);
        fill(e.w, e.weight_count(), a);
        fill(e.b, e.out_ch, 0.1 * a);
        m.encoder.push_back(std::move(e));
    }
    const int H = config.lstm_hidden, C = config.bottleneck_channels();
    m.lstm.hidden = H;
    m.lstm.input = C;
    fill(m.lstm.w_ih, (size_t)4 * H * C, 1.0 / std::sqrt((double)C));
    fill(m.lstm.w_hh, (size_t)4 * H * H, 1.0 / std::sqrt((double)H));
    fill(m.lstm.bias, (size_t)4 * H, 0.05);
    for (int d = 0; d < H; ++d) m.lstm.bias[H + d] += 1.0f; // forget-gate bias keeps early state alive
    m.proj.in = H;
    m.proj.out = C;
    fill(m.proj.w, (size_t)H * C, 1.0 / std::sqrt((double)H));
    fill(m.proj.b, C, 0.01);
    for (int i = 0; i < L; ++i) {
        Conv1dLayer d;
        int mirror = L - 1 - i;
        d.transposed = true;
        d.in_ch = 2 * config.channels[mirror];
        d.out_ch = mirror == 0 ? config.channels[0] : config.channels[mirror - 1];
        d.kernel = config.kernel_sizes[mirror];
        d.stride = config.strides[mirror];
        double a = 1.0 / std::sqrt((double)d.in_ch * d.kernel / d.stride);
        fill(d.w, d.weight_count(), a);
        fill(d.b, d.out_ch, 0.1 * a);
        m.decoder.push_back(std::move(d));
    }
    m.head.in_ch = config.channels[0];
    m.head.out_ch = 1;
    m.head.kernel = 1;
    m.head.stride = 1;
    m.head.relu = false;
    fill(m.head.w, m.head.weight_count(), 1.0 / std::sqrt((double)m.head.in_ch));
    m.head.b.assign(1, 0.f);
    m.validate();
    return m;
}

DenseModel make_passthrough_model(const ModelConfig& config) {
    config.validate();
    const int S0 = config.strides[0];
    if (config.channels[0] < 2 * S0)
        fail(ErrCode::InvalidArg, "passthrough model needs channels[0] >= 2*strides[0]");

    DenseModel m = make_random_model(config, 0);
    auto zero_all = [](Conv1dLayer& l) {
        std::fill(l.w.begin(), l.w.end(), 0.f);
        std::fill(l.b.begin(), l.b.end(), 0.f);
    };
    for (auto& e : m.encoder) zero_all(e);
    for (auto& d : m.decoder) zero_all(d);
    zero_all(m.head);
    std::fill(m.lstm.w_ih.begin(), m.lstm.w_ih.end(), 0.f);
    std::fill(m.lstm.w_hh.begin(), m.lstm.w_hh.end(), 0.f);
    std::fill(m.lstm.bias.begin(), m.lstm.bias.end(), 0.f);
    std::fill(m.proj.w.begin(), m.proj.w.end(), 0.f);
    std::fill(m.proj.b.begin(), m.proj.b.end(), 0.f);

    // stage 0 encodes sample x as the pair (relu(x), relu(-x)); the current
    // stride's samples occupy kernel taps [K-S, K)
    Conv1dLayer& e0 = m.encoder[0];
    const int tap0 = e0.kernel - e0.stride;
    for (int j = 0; j < S0; ++j) {
        e0.kernel_ptr(j, 0)[tap0 + j] = 1.f;
        e0.kernel_ptr(S0 + j, 0)[tap0 + j] = -1.f;
    }
    // the last decoder reads the stage-0 skip (second half of its input
    // channels) and re-expands each frame into stride samples, +/- split kept
    Conv1dLayer& dl = m.decoder.back();
    const int skip0 = config.channels[0];
    for (int j = 0; j < S0; ++j) {
        dl.kernel_ptr(0, skip0 + j)[j] = 1.f;
        dl.kernel_ptr(1, skip0 + S0 + j)[j] = 1.f;
    }
    // head recombines: x = relu(x) - relu(-x)
    m.head.kernel_ptr(0, 0)[0] = 1.f;
    m.head.kernel_ptr(0, 1)[0] = -1.f;
    m.validate();
    return m;
}

} // namespace sb
