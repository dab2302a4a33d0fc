#pragma once

#include "speechboost/nncore.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace sb {

// Kernel-pruned convolution: whole length-K kernels are dropped per
// (output channel, input channel) pair; only the surviving kernels and their
// coordinates are stored. Coordinates are unique and sorted out_ch-major.
struct SparseConvLayer {
    int out_ch = 0;
    int in_ch = 0;
    int kernel = 1;
    int stride = 1;
    bool transposed = false;
    bool relu = true;
    std::vector<std::pair<uint32_t, uint32_t>> idx; // (out j, in i)
    std::vector<float> w;                           // [idx.size()][kernel]
    std::vector<float> b;

    size_t nnz() const { return idx.size(); }
};

// Block-sparse matrix with fixed 16x1 blocks (16 consecutive rows, one
// column). rows must be divisible by 16.
struct BlockSparseMatrix {
    static constexpr int kBlockRows = 16;
    int rows = 0;
    int cols = 0;
    std::vector<std::pair<uint32_t, uint32_t>> blocks; // (row_block, col), sorted
    std::vector<float> w;                              // [blocks.size()][16]

    size_t nnz_blocks() const { return blocks.size(); }
};

struct SparseLstm {
    int hidden = 0;
    int input = 0;
    BlockSparseMatrix w_ih;
    BlockSparseMatrix w_hh;
    std::vector<float> bias; // dense, never pruned
};

struct SparseLinear {
    int out = 0;
    int in = 0;
    BlockSparseMatrix w;
    std::vector<float> b;
};

struct SparseModel {
    ModelConfig config;
    std::vector<SparseConvLayer> encoder;
    SparseLstm lstm;
    SparseLinear proj;
    std::vector<SparseConvLayer> decoder;
    SparseConvLayer head;
};

// ---- format conversions ----

// keep[j*in_ch + i] selects which kernels survive. Biases are never pruned.
SparseConvLayer sparsify_conv(const Conv1dLayer& dense, const std::vector<uint8_t>& keep);
Conv1dLayer densify(const SparseConvLayer& s);

// mask of kernels that are not entirely zero
std::vector<uint8_t> nonzero_kernel_mask(const Conv1dLayer& dense);

// drops all-zero 16x1 blocks
BlockSparseMatrix block_sparsify(const std::vector<float>& dense, int rows, int cols);
std::vector<float> block_densify(const BlockSparseMatrix& m);

// every kernel / nonzero block kept
SparseModel sparsify_model(const DenseModel& m);
DenseModel densify_model(const SparseModel& m);

// ---- compute kernels ----

Frames sparse_conv_forward(const SparseConvLayer& layer, const Frames& input);
Frames sparse_conv_transposed_forward(const SparseConvLayer& layer, const Frames& input);

// y = M x
void block_sparse_matvec(const BlockSparseMatrix& m, const float* x, int xdim, float* y);

std::vector<float> forward_offline(const SparseModel& model, const std::vector<float>& waveform);

// ---- cost model ----

struct LayerCost {
    std::string name;
    double macs_per_s = 0;       // multiply-accumulates per second of audio
    double dense_macs_per_s = 0; // same layer with every kernel/block present
    double sparsity = 0;         // complexity-wise: fraction of MACs removed
    uint64_t payload_bytes = 0;  // weight + coordinate storage estimate
};

struct CostReport {
    std::vector<LayerCost> layers;
    double total_macs_per_s = 0;
    double dense_total_macs_per_s = 0;
    uint64_t payload_bytes = 0;

    double ratio() const { return dense_total_macs_per_s > 0 ? total_macs_per_s / dense_total_macs_per_s : 0; }
};

// MAC-count building blocks (multiply-accumulates only; bias adds and
// activations excluded)
double conv_macs_per_second(double frames_per_second, int kernel, size_t nnz_kernels);
double block_macs_per_second(double steps_per_second, size_t nnz_blocks);

CostReport count_macs(const DenseModel& m);
CostReport count_macs(const SparseModel& m);

// canonical names for the prunable layers, in model order:
// enc0..encN, lstm_ih, lstm_hh, proj, dec0..decN, head
std::vector<std::string> prunable_layer_names(const ModelConfig& config);

} // namespace sb
