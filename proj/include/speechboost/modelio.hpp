#pragma once

#include "speechboost/nncore.hpp"
#include "speechboost/obc.hpp"
#include "speechboost/quantfx.hpp"
#include "speechboost/sparse.hpp"

#include <string>
#include <variant>
#include <vector>

namespace sb {

enum class Backend { DenseF32 = 0, SparseF32 = 1, Quant = 2 };

using Model = std::variant<DenseModel, SparseModel, QuantModel>;

Backend model_backend(const Model& m);
const ModelConfig& model_config(const Model& m);
const char* backend_name(Backend b);

// ---- audio ----

// mono PCM16 RIFF at exactly 16 kHz; samples mapped to float by x/32768
struct WavClip {
    std::vector<float> samples;
    int sample_rate_hz = 16000;
};

WavClip wav_read(const std::string& path);
void wav_write(const std::string& path, const std::vector<float>& samples);

// ---- model / bank / calibration files ----
//
// All three containers share the framing
//   magic[4] version:u32 header... payload_size:u32 payload crc32:u32
// little-endian, CRC-32 (IEEE) over the payload bytes. Magics: "SBM1" model,
// "SBK1" sparsity bank, "SBC1" calibration set. Loading verifies magic,
// version and CRC and reports each failure distinctly.

void model_save(const Model& m, const std::string& path);
Model model_load(const std::string& path);
std::vector<uint8_t> model_serialize(const Model& m); // whole file image
uint64_t model_file_size(const Model& m);

void bank_save(const SparsityBank& b, const std::string& path);
SparsityBank bank_load(const std::string& path);

// calibration file: source audio (capture + holdout) plus the captured
// per-layer activation matrices
struct CalibFile {
    CalibAudio audio;
    CalibrationSet set;
};

void calib_save(const CalibFile& c, const std::string& path);
CalibFile calib_load(const std::string& path);

// ---- metrics ----

// scale-invariant SDR in dB, capped at 100 (the +inf sentinel)
double si_sdr(const std::vector<float>& reference, const std::vector<float>& estimate);

// mean over 512-sample frames (hop 256, Hann window) of the RMS log-magnitude
// spectral difference, in dB
double log_spectral_distance(const std::vector<float>& reference, const std::vector<float>& estimate);

uint32_t crc32_ieee(const uint8_t* data, size_t n);

} // namespace sb
