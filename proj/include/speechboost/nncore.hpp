#pragma once

#include "speechboost/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sb {

// Architecture hyperparameters. Defaults give the stock 16 kHz model:
// three encoder stages with strides 4/4/2 and 32/64/128 channels, an LSTM
// bottleneck, mirrored transposed-conv decoder with skip concatenation, and
// 17 shifted input channels realizing a 16-sample look-ahead. The product of
// the strides must equal the 32-sample chunk so the bottleneck advances one
// step per chunk and total algorithmic latency is chunk + look-ahead = 48
// samples (3 ms).
struct ModelConfig {
    int sample_rate_hz = 16000;
    int chunk_len = 32;
    int lookahead = 16;
    std::vector<int> strides = {4, 4, 2};
    std::vector<int> channels = {32, 64, 128};
    std::vector<int> kernel_sizes = {8, 8, 4};
    int lstm_hidden = 512;
    int lookahead_copies = 17;

    int num_enc_layers() const { return (int)strides.size(); }
    int input_channels() const { return lookahead_copies; }
    int bottleneck_channels() const { return channels.back(); }

    // throws Error(InvalidArg) when any structural invariant is violated
    void validate() const;
};

// One convolution stage. Weight layout:
//   normal:     w[out][in][k]
//   transposed: w[in][out][k]   (adjoint of the normal layout)
struct Conv1dLayer {
    int out_ch = 0;
    int in_ch = 0;
    int kernel = 1;
    int stride = 1;
    bool transposed = false;
    bool relu = true;
    std::vector<float> w;
    std::vector<float> b;

    size_t weight_count() const { return (size_t)out_ch * in_ch * kernel; }
    // normal: kernel vector of (out j, in i); transposed: same logical pair
    const float* kernel_ptr(int oc, int ic) const {
        size_t idx = transposed ? ((size_t)ic * out_ch + oc) : ((size_t)oc * in_ch + ic);
        return w.data() + idx * kernel;
    }
    float* kernel_ptr(int oc, int ic) {
        size_t idx = transposed ? ((size_t)ic * out_ch + oc) : ((size_t)oc * in_ch + ic);
        return w.data() + idx * kernel;
    }
};

// Single unidirectional LSTM cell, gates packed i,f,g,o (4*hidden rows).
struct LstmLayer {
    int hidden = 0;
    int input = 0;
    std::vector<float> w_ih; // [4*hidden][input]
    std::vector<float> w_hh; // [4*hidden][hidden]
    std::vector<float> bias; // [4*hidden]
};

struct LinearLayer {
    int out = 0;
    int in = 0;
    std::vector<float> w; // [out][in]
    std::vector<float> b; // [out]
};

struct DenseModel {
    ModelConfig config;
    std::vector<Conv1dLayer> encoder; // applied in order
    LstmLayer lstm;
    LinearLayer proj;                 // hidden -> channels.back()
    std::vector<Conv1dLayer> decoder; // applied in order, deepest first
    Conv1dLayer head;                 // channels[0] -> 1, kernel 1, linear

    void validate() const;
};

// ---- kernels ----

// Valid strided convolution, out[j][t] = b[j] + sum_{i,k} w[j][i][k] * in[i][t*S+k].
// Output length floor((T-K)/S)+1. relu applied when layer.relu.
Frames conv1d_forward(const Conv1dLayer& layer, const Frames& input);

// Fractionally strided (transposed) convolution; output length (T-1)*S+K.
Frames conv1d_transposed_forward(const Conv1dLayer& layer, const Frames& input);

// One LSTM cell step; h and c are updated in place.
void lstm_step(const LstmLayer& layer, const float* x, float* h, float* c, float* gate_scratch);

// Duplicates the waveform into lookahead_copies channels; channel s holds the
// input advanced by s samples, zero padded at the tail.
Frames make_lookahead_channels(const std::vector<float>& waveform, const ModelConfig& config);

// Whole-signal forward pass. Input of any positive length; output has the same
// length. Output sample t depends only on input up to the end of t's chunk
// plus the look-ahead, exactly as the streaming engine produces.
std::vector<float> forward_offline(const DenseModel& model, const std::vector<float>& waveform);

// ---- construction ----

// Seeded random model (uniform weights scaled by fan-in); test/dev fixture
// and the `init-random` CLI backend.
DenseModel make_random_model(const ModelConfig& config, uint64_t seed);

// Analytically constructed model whose forward pass reproduces its input:
// encoder stage 0 splits each sample into (relu(x), relu(-x)) pairs at 1/stride
// rate, everything deeper is zero, and the last decoder + linear head
// recombine the pair into x. Used as a fixture wherever a known-output model
// is needed.
DenseModel make_passthrough_model(const ModelConfig& config);

} // namespace sb
