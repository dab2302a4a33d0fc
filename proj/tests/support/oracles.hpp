#pragma once

// Independent reference implementations used to freeze expected values.
// Everything here is deliberately written as plain loops over the math
// definitions, sharing nothing with the library's compute paths.

#include "speechboost/nncore.hpp"

#include <cmath>
#include <vector>

namespace oracle {

// direct triple-loop valid convolution, double precision
inline sb::Frames conv_naive(const sb::Conv1dLayer& l, const sb::Frames& in) {
    const int out_len = (in.len - l.kernel) / l.stride + 1;
    sb::Frames out(l.out_ch, out_len);
    for (int j = 0; j < l.out_ch; ++j)
        for (int t = 0; t < out_len; ++t) {
            double acc = l.b[j];
            for (int i = 0; i < l.in_ch; ++i)
                for (int k = 0; k < l.kernel; ++k)
                    acc += (double)l.kernel_ptr(j, i)[k] * in.at(i, t * l.stride + k);
            if (l.relu && acc < 0) acc = 0;
            out.at(j, t) = (float)acc;
        }
    return out;
}

inline sb::Frames conv_transposed_naive(const sb::Conv1dLayer& l, const sb::Frames& in) {
    const int out_len = (in.len - 1) * l.stride + l.kernel;
    std::vector<std::vector<double>> acc(l.out_ch, std::vector<double>(out_len, 0.0));
    for (int m = 0; m < in.len; ++m)
        for (int o = 0; o < l.out_ch; ++o)
            for (int i = 0; i < l.in_ch; ++i)
                for (int k = 0; k < l.kernel; ++k)
                    acc[o][m * l.stride + k] += (double)l.kernel_ptr(o, i)[k] * in.at(i, m);
    sb::Frames out(l.out_ch, out_len);
    for (int o = 0; o < l.out_ch; ++o)
        for (int t = 0; t < out_len; ++t) {
            double v = acc[o][t] + l.b[o];
            if (l.relu && v < 0) v = 0;
            out.at(o, t) = (float)v;
        }
    return out;
}

// per-gate scalar LSTM step
inline void lstm_naive(const sb::LstmLayer& l, const std::vector<float>& x, std::vector<float>& h,
                       std::vector<float>& c) {
    const int H = l.hidden, D = l.input;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> g(4 * H);
    for (int r = 0; r < 4 * H; ++r) {
        double acc = l.bias[r];
        for (int d = 0; d < D; ++d) acc += (double)l.w_ih[(size_t)r * D + d] * x[d];
        for (int d = 0; d < H; ++d) acc += (double)l.w_hh[(size_t)r * H + d] * h[d];
        g[r] = acc;
    }
    for (int d = 0; d < H; ++d) {
        const double cn = sig(g[H + d]) * c[d] + sig(g[d]) * std::tanh(g[2 * H + d]);
        c[d] = (float)cn;
        h[d] = (float)(sig(g[3 * H + d]) * std::tanh(cn));
    }
}

inline std::vector<double> matvec_naive(const std::vector<float>& m, int rows, int cols,
                                        const std::vector<float>& x) {
    std::vector<double> y(rows, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int ccol = 0; ccol < cols; ++ccol) y[r] += (double)m[(size_t)r * cols + ccol] * x[ccol];
    return y;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs((double)a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const sb::Frames& a, const sb::Frames& b) {
    double m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs((double)a.data[i] - b.data[i]));
    return m;
}

// small, fast architecture for randomized tests
inline sb::ModelConfig tiny_config() {
    sb::ModelConfig cfg;
    cfg.strides = {4, 4, 2};
    cfg.channels = {8, 8, 16};
    cfg.kernel_sizes = {8, 8, 4};
    cfg.lstm_hidden = 16;
    cfg.lookahead_copies = 17;
    return cfg;
}

// band-limited noise with a slow envelope, roughly speech-scaled
inline std::vector<float> speech_like(uint64_t seed, size_t n, float amp = 0.3f) {
    sb::Rng rng(seed);
    std::vector<float> v(n);
    double lp = 0;
    for (size_t t = 0; t < n; ++t) {
        lp = 0.9 * lp + 0.1 * rng.uniform(-1.0, 1.0);
        const double env = 0.6 + 0.4 * std::sin(2.0 * 3.14159265358979 * (double)t / 2900.0);
        v[t] = (float)(amp * env * (4.0 * lp + 0.3 * rng.uniform(-1.0, 1.0)));
    }
    return v;
}

inline std::vector<float> random_signal(uint64_t seed, size_t n, float amp = 0.5f) {
    sb::Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = (float)rng.uniform(-amp, amp);
    return v;
}

inline sb::Frames random_frames(uint64_t seed, int ch, int len, float amp = 1.f) {
    sb::Rng rng(seed);
    sb::Frames f(ch, len);
    for (auto& x : f.data) x = (float)rng.uniform(-amp, amp);
    return f;
}

inline sb::Conv1dLayer random_conv(uint64_t seed, int out_ch, int in_ch, int kernel, int stride,
                                   bool transposed = false, bool relu = false) {
    sb::Rng rng(seed);
    sb::Conv1dLayer l;
    l.out_ch = out_ch;
    l.in_ch = in_ch;
    l.kernel = kernel;
    l.stride = stride;
    l.transposed = transposed;
    l.relu = relu;
    l.w.resize(l.weight_count());
    for (auto& x : l.w) x = (float)rng.uniform(-1.0, 1.0);
    l.b.resize(out_ch);
    for (auto& x : l.b) x = (float)rng.uniform(-0.5, 0.5);
    return l;
}

} // namespace oracle
