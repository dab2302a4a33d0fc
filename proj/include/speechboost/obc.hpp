#pragma once

#include "speechboost/nncore.hpp"
#include "speechboost/sparse.hpp"

#include <string>
#include <vector>

namespace sb {

// Calibration audio, split once: capture clips feed the layer Hessians,
// held-out clips score candidate sparsity profiles.
struct CalibAudio {
    std::vector<std::vector<float>> capture;
    std::vector<std::vector<float>> holdout;
    int max_cols = 16000;
};

// deterministic split: the last holdout_frac of the clip list is held out
CalibAudio split_calib_clips(std::vector<std::vector<float>> clips, int max_cols,
                             double holdout_frac = 0.2);

// Per-layer input activation matrices X [d x n], captured by running the
// model over the capture clips. Conv layers store im2col patches of their
// (causally padded) input; transposed convs store raw input frames; the LSTM
// input and recurrent matrices and the projection store the step inputs.
struct CalibrationSet {
    struct LayerX {
        std::string name;
        int d = 0;
        int n = 0;
        std::vector<float> x; // row-major [d][n]
    };
    std::vector<LayerX> layers;

    const LayerX* find(const std::string& name) const;
};

CalibrationSet capture_calibration(const DenseModel& m, const std::vector<std::vector<float>>& clips,
                                   int max_cols);
CalibrationSet capture_calibration(const SparseModel& m, const std::vector<std::vector<float>>& clips,
                                   int max_cols);

// minimal dense double matrix
struct MatD {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    MatD() = default;
    MatD(int r, int c) : rows(r), cols(c), a((size_t)r * c, 0.0) {}
    double* row(int r) { return a.data() + (size_t)r * cols; }
    const double* row(int r) const { return a.data() + (size_t)r * cols; }
    double& at(int r, int c) { return a[(size_t)r * cols + c]; }
    double at(int r, int c) const { return a[(size_t)r * cols + c]; }
    static MatD identity(int n) {
        MatD m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

// Pruning granularity of one weight matrix: group_rows rows share one mask
// trajectory (and one maintained H^-1); each removal zeroes block_cols
// consecutive columns across the group.
//   normal conv kernels:      {1, K}
//   transposed conv kernels:  {K, 1}  (matrix laid out rows = out*K, cols = in)
//   LSTM / linear 16x1:       {16, 1}
//   unstructured (tests):     {1, 1}
struct BlockSpec {
    int group_rows = 1;
    int block_cols = 1;
};

struct BankEntry {
    double sparsity = 0;     // fraction of the layer's blocks removed
    double est_eps = 0;      // cumulative OBS error estimate sum
    double measured_err = 0; // ||W X - W' X||_F^2 / n against the capture set
    std::vector<uint32_t> kept;  // canonical block ids (group * n_col_blocks + cb), ascending
    std::vector<float> values;   // [kept.size()][group_rows * block_cols]
};

struct LayerBank {
    std::string name;
    int rows = 0;
    int cols = 0;
    BlockSpec spec;
    double damping = 0;
    double macs_per_block = 0; // model MAC/s contributed by one block
    std::vector<BankEntry> entries; // sparsity strictly increasing

    int n_groups() const { return spec.group_rows ? rows / spec.group_rows : 0; }
    int n_col_blocks() const { return spec.block_cols ? cols / spec.block_cols : 0; }
    size_t total_blocks() const { return (size_t)n_groups() * n_col_blocks(); }
};

struct SparsityBank {
    std::vector<LayerBank> layers;
    const LayerBank* find(const std::string& name) const;
};

// {0, .40, .50, .60, .70, .75, .80, .85, .90, .925, .95, .975}: denser at the
// high end where quality moves fastest
std::vector<double> default_sparsity_grid();

struct ObcOptions {
    std::vector<double> levels = default_sparsity_grid();
    double damping_rel = 0.01; // lambda = damping_rel * mean(diag(gram))
    int threads = 1;
};

// Exact greedy optimal-brain-surgeon pruning of one weight matrix against
// H = gram + lambda*I. Greedy removal across all groups ordered by the OBS
// score eps = w_B^T ([H^-1]_BB)^-1 w_B (summed over the group's rows), with
// weight compensation and incremental H^-1 maintenance; snapshots are taken
// whenever the cumulative removed-block fraction crosses a target level.
LayerBank obc_prune_layer(const std::string& name, const MatD& w, const MatD& gram, int n_samples,
                          BlockSpec spec, const ObcOptions& opts);

// ||W X - What X||_F^2 / n
double measure_reconstruction_error(const MatD& w, const MatD& what, const MatD& x);

// Bank over every prunable layer of the current model, pruning further from
// its current weights. macs_per_block fields are filled from the config.
SparsityBank build_bank(const SparseModel& current, const CalibrationSet& calib,
                        const ObcOptions& opts);

// Replace each prunable layer with its bank snapshot at the chosen level.
SparseModel assemble_from_bank(const SparseModel& base, const SparsityBank& bank,
                               const std::vector<int>& level_choice);

} // namespace sb
