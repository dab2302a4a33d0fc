#pragma once

#include "speechboost/nncore.hpp"
#include "speechboost/sparse.hpp"

#include <array>
#include <cstdint>

namespace sb {

// Q-format descriptor: frac_bits fractional bits inside a total_bits signed
// integer. Presets mirror the fixed-point port: activations Q12 in int32,
// conv/LSTM weights Q13 in int16, conv biases Q25 in int32, LSTM biases Q13
// in int16.
struct QFormat {
    int total_bits;
    int frac_bits;

    int64_t min_raw() const { return -(int64_t(1) << (total_bits - 1)); }
    int64_t max_raw() const { return (int64_t(1) << (total_bits - 1)) - 1; }
};

inline constexpr QFormat kFmtAct{32, 12};
inline constexpr QFormat kFmtWeight{16, 13};
inline constexpr QFormat kFmtConvBias{32, 25};
inline constexpr QFormat kFmtLstmBias{16, 13};

// round-half-away-from-zero of x * 2^frac, saturated to the format's range
int64_t float_to_q(double x, QFormat fmt);
double q_to_float(int64_t raw, QFormat fmt);

// sign-aware rounding right shift (round half away from zero), no saturation
int64_t round_shift(int64_t v, int bits);
// same, saturated into int32
int32_t round_shift_sat32(int64_t v, int bits);

int32_t quantize_sample(float x);    // float -> Q12/int32
float dequantize_sample(int32_t v);  // Q12/int32 -> float

// ---- model ----

struct QConvLayer {
    int out_ch = 0;
    int in_ch = 0;
    int kernel = 1;
    int stride = 1;
    bool transposed = false;
    bool relu = true;
    bool dense_layout = true; // full index list (no coordinates serialized)
    std::vector<std::pair<uint32_t, uint32_t>> idx; // (out, in), sorted out-major
    std::vector<int16_t> w;                         // Q13, [idx.size()][kernel]
    std::vector<int32_t> b;                         // Q25
};

struct QBlockMatrix {
    int rows = 0;
    int cols = 0;
    bool dense_layout = true;
    std::vector<std::pair<uint32_t, uint32_t>> blocks; // (row_block, col)
    std::vector<int16_t> w;                            // Q13, [blocks.size()][16]
};

struct QLstm {
    int hidden = 0;
    int input = 0;
    QBlockMatrix w_ih;
    QBlockMatrix w_hh;
    std::vector<int16_t> bias; // Q13
};

struct QLinear {
    int out = 0;
    int in = 0;
    QBlockMatrix w;
    std::vector<int32_t> b; // Q25, conv-style
};

// 1025-entry sigmoid/tanh tables over [-8, 8], Q12 in and out, linearly
// interpolated, clamped outside. Tables are stored with the model so loading
// never re-derives them from libm.
inline constexpr int kLutSize = 1025;

struct QuantModel {
    ModelConfig config;
    std::vector<QConvLayer> encoder;
    QLstm lstm;
    QLinear proj;
    std::vector<QConvLayer> decoder;
    QConvLayer head;
    std::vector<int16_t> sigmoid_lut; // kLutSize
    std::vector<int16_t> tanh_lut;    // kLutSize
};

struct QuantReport {
    struct Layer {
        std::string name;
        uint64_t saturated = 0;
        double max_abs_err = 0; // dequantized weight vs float source
    };
    std::vector<Layer> layers;
    uint64_t total_saturated = 0;
    double max_abs_err = 0;
};

std::vector<int16_t> make_sigmoid_lut();
std::vector<int16_t> make_tanh_lut();
int32_t lut_lookup(const int16_t* lut, int32_t x_q12);

QuantModel quantize_model(const DenseModel& m, QuantReport* report = nullptr);
QuantModel quantize_model(const SparseModel& m, QuantReport* report = nullptr);

// ---- kernels ----

// valid strided conv on Q12 activations: 64-bit accumulation of int32*int16
// products to Q25, bias add, rounding shift back to Q12, saturate, relu
void q_conv_forward(const QConvLayer& layer, const QFrames& input, QFrames& out);

// gates and state in Q12; returns via h/c in place
void q_lstm_step(const QLstm& l, const int16_t* sig_lut, const int16_t* tanh_lut, const int32_t* x,
                 int32_t* h, int32_t* c, int32_t* gate_scratch);

std::vector<float> forward_offline(const QuantModel& model, const std::vector<float>& waveform);

// SNR of a quantized path against its float reference; +inf is reported as
// the 100 dB cap
struct QuantFidelity {
    double snr_db = 0;
    double max_abs_err = 0;
};
QuantFidelity quant_report(const std::vector<float>& float_out, const std::vector<float>& q_out);

} // namespace sb
