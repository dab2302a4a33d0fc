#include "speechboost/sparse.hpp"

#include "pipeline.hpp"

#include <algorithm>
#include <cstring>

namespace sb {

SparseConvLayer sparsify_conv(const Conv1dLayer& dense, const std::vector<uint8_t>& keep) {
    if (keep.size() != (size_t)dense.out_ch * dense.in_ch)
        fail(ErrCode::Shape, "sparsify_conv: keep mask size mismatch");
    SparseConvLayer s;
    s.out_ch = dense.out_ch;
    s.in_ch = dense.in_ch;
    s.kernel = dense.kernel;
    s.stride = dense.stride;
    s.transposed = dense.transposed;
    s.relu = dense.relu;
    s.b = dense.b;
    for (int j = 0; j < dense.out_ch; ++j)
        for (int i = 0; i < dense.in_ch; ++i) {
            if (!keep[(size_t)j * dense.in_ch + i]) continue;
            s.idx.emplace_back(j, i);
            const float* wk = dense.kernel_ptr(j, i);
            s.w.insert(s.w.end(), wk, wk + dense.kernel);
        }
    return s;
}

std::vector<uint8_t> nonzero_kernel_mask(const Conv1dLayer& dense) {
    std::vector<uint8_t> keep((size_t)dense.out_ch * dense.in_ch, 0);
    for (int j = 0; j < dense.out_ch; ++j)
        for (int i = 0; i < dense.in_ch; ++i) {
            const float* wk = dense.kernel_ptr(j, i);
            for (int k = 0; k < dense.kernel; ++k)
                if (wk[k] != 0.f) {
                    keep[(size_t)j * dense.in_ch + i] = 1;
                    break;
                }
        }
    return keep;
}

Conv1dLayer densify(const SparseConvLayer& s) {
    Conv1dLayer d;
    d.out_ch = s.out_ch;
    d.in_ch = s.in_ch;
    d.kernel = s.kernel;
    d.stride = s.stride;
    d.transposed = s.transposed;
    d.relu = s.relu;
    d.b = s.b;
    d.w.assign((size_t)s.out_ch * s.in_ch * s.kernel, 0.f);
    for (size_t n = 0; n < s.idx.size(); ++n) {
        float* dst = d.kernel_ptr((int)s.idx[n].first, (int)s.idx[n].second);
        std::memcpy(dst, s.w.data() + n * s.kernel, s.kernel * sizeof(float));
    }
    return d;
}

BlockSparseMatrix block_sparsify(const std::vector<float>& dense, int rows, int cols) {
    if (rows % BlockSparseMatrix::kBlockRows != 0)
        fail(ErrCode::Shape, "block_sparsify: rows must be divisible by 16");
    if ((int)dense.size() != rows * cols) fail(ErrCode::Shape, "block_sparsify: size mismatch");
    BlockSparseMatrix m;
    m.rows = rows;
    m.cols = cols;
    const int G = BlockSparseMatrix::kBlockRows;
    for (int g = 0; g < rows / G; ++g)
        for (int col = 0; col < cols; ++col) {
            bool nz = false;
            for (int r = 0; r < G && !nz; ++r) nz = dense[(size_t)(g * G + r) * cols + col] != 0.f;
            if (!nz) continue;
            m.blocks.emplace_back(g, col);
            for (int r = 0; r < G; ++r) m.w.push_back(dense[(size_t)(g * G + r) * cols + col]);
        }
    return m;
}

std::vector<float> block_densify(const BlockSparseMatrix& m) {
    std::vector<float> d((size_t)m.rows * m.cols, 0.f);
    const int G = BlockSparseMatrix::kBlockRows;
    for (size_t n = 0; n < m.blocks.size(); ++n) {
        const int g = (int)m.blocks[n].first, col = (int)m.blocks[n].second;
        for (int r = 0; r < G; ++r) d[(size_t)(g * G + r) * m.cols + col] = m.w[n * G + r];
    }
    return d;
}

void block_sparse_matvec(const BlockSparseMatrix& m, const float* x, int xdim, float* y) {
    if (xdim != m.cols) fail(ErrCode::Shape, "block_sparse_matvec: dimension mismatch");
    std::fill(y, y + m.rows, 0.f);
    const int G = BlockSparseMatrix::kBlockRows;
    size_t n = 0;
    while (n < m.blocks.size()) {
        const int g = (int)m.blocks[n].first;
        double acc[BlockSparseMatrix::kBlockRows] = {0};
        while (n < m.blocks.size() && (int)m.blocks[n].first == g) {
            const double xv = x[m.blocks[n].second];
            const float* bw = m.w.data() + n * G;
            for (int r = 0; r < G; ++r) acc[r] += bw[r] * xv;
            ++n;
        }
        for (int r = 0; r < G; ++r) y[g * G + r] = (float)acc[r];
    }
}

namespace detail {

namespace {

// accumulates y += M x with double row accumulators seeded from y
void block_matvec_add(const BlockSparseMatrix& m, const float* x, float* y) {
    const int G = BlockSparseMatrix::kBlockRows;
    size_t n = 0;
    while (n < m.blocks.size()) {
        const int g = (int)m.blocks[n].first;
        double acc[BlockSparseMatrix::kBlockRows];
        for (int r = 0; r < G; ++r) acc[r] = y[g * G + r];
        while (n < m.blocks.size() && (int)m.blocks[n].first == g) {
            const double xv = x[m.blocks[n].second];
            const float* bw = m.w.data() + n * G;
            for (int r = 0; r < G; ++r) acc[r] += bw[r] * xv;
            ++n;
        }
        for (int r = 0; r < G; ++r) y[g * G + r] = (float)acc[r];
    }
}

} // namespace

void conv_forward_into(const SparseConvLayer& layer, const Frames& input, Frames& out) {
    const int K = layer.kernel, S = layer.stride;
    for (int j = 0; j < layer.out_ch; ++j) {
        float* dst = out.row(j);
        for (int t = 0; t < out.len; ++t) dst[t] = layer.b[j];
    }
    for (size_t n = 0; n < layer.idx.size(); ++n) {
        const int j = (int)layer.idx[n].first, i = (int)layer.idx[n].second;
        const float* wk = layer.w.data() + n * K;
        float* dst = out.row(j);
        const float* src = input.row(i);
        for (int t = 0; t < out.len; ++t) {
            double acc = dst[t];
            const float* s = src + t * S;
            for (int k = 0; k < K; ++k) acc += (double)wk[k] * s[k];
            dst[t] = (float)acc;
        }
    }
    if (layer.relu)
        for (int j = 0; j < layer.out_ch; ++j) {
            float* dst = out.row(j);
            for (int t = 0; t < out.len; ++t)
                if (dst[t] < 0.f) dst[t] = 0.f;
        }
}

void transposed_accumulate(const SparseConvLayer& layer, const Frames& input, Frames& out, int base) {
    const int K = layer.kernel, S = layer.stride;
    for (int m = 0; m < input.len; ++m) {
        const int pos = base + m * S;
        for (size_t n = 0; n < layer.idx.size(); ++n) {
            const int o = (int)layer.idx[n].first, i = (int)layer.idx[n].second;
            const float x = input.at(i, m);
            const float* wk = layer.w.data() + n * K;
            float* dst = out.row(o) + pos;
            for (int k = 0; k < K; ++k) dst[k] += wk[k] * x;
        }
    }
}

void lstm_gates_into(const SparseLstm& l, const float* x, const float* h, float* gates) {
    for (int r = 0; r < 4 * l.hidden; ++r) gates[r] = l.bias[r];
    block_matvec_add(l.w_ih, x, gates);
    block_matvec_add(l.w_hh, h, gates);
}

void proj_into(const SparseLinear& p, const float* h, float* out) {
    for (int o = 0; o < p.out; ++o) out[o] = p.b[o];
    block_matvec_add(p.w, h, out);
}

} // namespace detail

Frames sparse_conv_forward(const SparseConvLayer& layer, const Frames& input) {
    if (layer.transposed) fail(ErrCode::Shape, "sparse_conv_forward called on a transposed layer");
    if (input.ch != layer.in_ch) fail(ErrCode::Shape, "sparse conv input channel mismatch");
    if (input.len < layer.kernel) fail(ErrCode::Shape, "sparse conv input shorter than kernel");
    Frames out(layer.out_ch, (input.len - layer.kernel) / layer.stride + 1);
    detail::conv_forward_into(layer, input, out);
    return out;
}

Frames sparse_conv_transposed_forward(const SparseConvLayer& layer, const Frames& input) {
    if (!layer.transposed) fail(ErrCode::Shape, "sparse_conv_transposed_forward needs transposed layer");
    if (input.ch != layer.in_ch) fail(ErrCode::Shape, "sparse conv input channel mismatch");
    Frames out(layer.out_ch, (input.len - 1) * layer.stride + layer.kernel);
    detail::transposed_accumulate(layer, input, out, 0);
    detail::finalize_bias_relu_t(layer, out, out.len);
    return out;
}

SparseModel sparsify_model(const DenseModel& m) {
    m.validate();
    SparseModel s;
    s.config = m.config;
    auto all_keep = [](const Conv1dLayer& l) {
        return std::vector<uint8_t>((size_t)l.out_ch * l.in_ch, 1);
    };
    for (const auto& e : m.encoder) s.encoder.push_back(sparsify_conv(e, all_keep(e)));
    for (const auto& d : m.decoder) s.decoder.push_back(sparsify_conv(d, all_keep(d)));
    s.head = sparsify_conv(m.head, all_keep(m.head));
    s.lstm.hidden = m.lstm.hidden;
    s.lstm.input = m.lstm.input;
    s.lstm.w_ih = block_sparsify(m.lstm.w_ih, 4 * m.lstm.hidden, m.lstm.input);
    s.lstm.w_hh = block_sparsify(m.lstm.w_hh, 4 * m.lstm.hidden, m.lstm.hidden);
    s.lstm.bias = m.lstm.bias;
    s.proj.out = m.proj.out;
    s.proj.in = m.proj.in;
    s.proj.w = block_sparsify(m.proj.w, m.proj.out, m.proj.in);
    s.proj.b = m.proj.b;
    return s;
}

DenseModel densify_model(const SparseModel& s) {
    DenseModel m;
    m.config = s.config;
    for (const auto& e : s.encoder) m.encoder.push_back(densify(e));
    for (const auto& d : s.decoder) m.decoder.push_back(densify(d));
    m.head = densify(s.head);
    m.lstm.hidden = s.lstm.hidden;
    m.lstm.input = s.lstm.input;
    m.lstm.w_ih = block_densify(s.lstm.w_ih);
    m.lstm.w_hh = block_densify(s.lstm.w_hh);
    m.lstm.bias = s.lstm.bias;
    m.proj.out = s.proj.out;
    m.proj.in = s.proj.in;
    m.proj.w = block_densify(s.proj.w);
    m.proj.b = s.proj.b;
    m.validate();
    return m;
}

std::vector<float> forward_offline(const SparseModel& model, const std::vector<float>& waveform) {
    return detail::float_forward_offline(model, waveform);
}

double conv_macs_per_second(double frames_per_second, int kernel, size_t nnz_kernels) {
    return frames_per_second * kernel * (double)nnz_kernels;
}

double block_macs_per_second(double steps_per_second, size_t nnz_blocks) {
    return steps_per_second * 16.0 * (double)nnz_blocks;
}

namespace {

// Output frame rate of encoder stage i; decoders mirror the encoder, and for
// transposed layers the MAC count is per input frame, which is the same rate.
double stage_rate(const ModelConfig& cfg, int stage) {
    double r = cfg.sample_rate_hz;
    for (int i = 0; i <= stage; ++i) r /= cfg.strides[i];
    return r;
}

LayerCost conv_cost(const ModelConfig& cfg, const std::string& name, int stage, bool coords,
                    int out_ch, int in_ch, int kernel, size_t nnz) {
    // normal conv: MACs per output frame; transposed: per input frame. The
    // two coincide at the same stage rate.
    double rate = stage < 0 ? cfg.sample_rate_hz : stage_rate(cfg, stage);
    LayerCost c;
    c.name = name;
    c.macs_per_s = conv_macs_per_second(rate, kernel, nnz);
    c.dense_macs_per_s = conv_macs_per_second(rate, kernel, (size_t)out_ch * in_ch);
    c.sparsity = c.dense_macs_per_s > 0 ? 1.0 - c.macs_per_s / c.dense_macs_per_s : 0.0;
    c.payload_bytes = nnz * (4ull * kernel) + (coords ? nnz * 8ull : 0) + 4ull * out_ch;
    return c;
}

LayerCost block_cost(const ModelConfig& cfg, const std::string& name, bool coords, int rows, int cols,
                     size_t nnz_blocks, size_t bias_count) {
    double steps = stage_rate(cfg, cfg.num_enc_layers() - 1); // one step per chunk
    LayerCost c;
    c.name = name;
    c.macs_per_s = block_macs_per_second(steps, nnz_blocks);
    c.dense_macs_per_s = block_macs_per_second(steps, (size_t)(rows / 16) * cols);
    c.sparsity = c.dense_macs_per_s > 0 ? 1.0 - c.macs_per_s / c.dense_macs_per_s : 0.0;
    c.payload_bytes = nnz_blocks * 64ull + (coords ? nnz_blocks * 8ull : 0) + 4ull * bias_count;
    return c;
}

CostReport finish(CostReport r) {
    for (const auto& l : r.layers) {
        r.total_macs_per_s += l.macs_per_s;
        r.dense_total_macs_per_s += l.dense_macs_per_s;
        r.payload_bytes += l.payload_bytes;
    }
    return r;
}

} // namespace

std::vector<std::string> prunable_layer_names(const ModelConfig& config) {
    std::vector<std::string> names;
    for (int i = 0; i < config.num_enc_layers(); ++i) names.push_back("enc" + std::to_string(i));
    names.push_back("lstm_ih");
    names.push_back("lstm_hh");
    names.push_back("proj");
    for (int i = 0; i < config.num_enc_layers(); ++i) names.push_back("dec" + std::to_string(i));
    names.push_back("head");
    return names;
}

CostReport count_macs(const DenseModel& m) {
    const ModelConfig& cfg = m.config;
    CostReport r;
    const int L = cfg.num_enc_layers();
    for (int i = 0; i < L; ++i)
        r.layers.push_back(conv_cost(cfg, "enc" + std::to_string(i), i, false, m.encoder[i].out_ch,
                                     m.encoder[i].in_ch, m.encoder[i].kernel,
                                     (size_t)m.encoder[i].out_ch * m.encoder[i].in_ch));
    r.layers.push_back(block_cost(cfg, "lstm_ih", false, 4 * m.lstm.hidden, m.lstm.input,
                                  (size_t)(4 * m.lstm.hidden / 16) * m.lstm.input, 4 * m.lstm.hidden));
    r.layers.push_back(block_cost(cfg, "lstm_hh", false, 4 * m.lstm.hidden, m.lstm.hidden,
                                  (size_t)(4 * m.lstm.hidden / 16) * m.lstm.hidden, 0));
    r.layers.push_back(block_cost(cfg, "proj", false, m.proj.out, m.proj.in,
                                  (size_t)(m.proj.out / 16) * m.proj.in, m.proj.out));
    for (int i = 0; i < L; ++i)
        r.layers.push_back(conv_cost(cfg, "dec" + std::to_string(i), L - 1 - i, false,
                                     m.decoder[i].out_ch, m.decoder[i].in_ch, m.decoder[i].kernel,
                                     (size_t)m.decoder[i].out_ch * m.decoder[i].in_ch));
    r.layers.push_back(conv_cost(cfg, "head", -1, false, 1, m.head.in_ch, 1, (size_t)m.head.in_ch));
    return finish(std::move(r));
}

CostReport count_macs(const SparseModel& m) {
    const ModelConfig& cfg = m.config;
    CostReport r;
    const int L = cfg.num_enc_layers();
    for (int i = 0; i < L; ++i)
        r.layers.push_back(conv_cost(cfg, "enc" + std::to_string(i), i, true, m.encoder[i].out_ch,
                                     m.encoder[i].in_ch, m.encoder[i].kernel, m.encoder[i].nnz()));
    r.layers.push_back(block_cost(cfg, "lstm_ih", true, 4 * m.lstm.hidden, m.lstm.input,
                                  m.lstm.w_ih.nnz_blocks(), 4 * m.lstm.hidden));
    r.layers.push_back(
        block_cost(cfg, "lstm_hh", true, 4 * m.lstm.hidden, m.lstm.hidden, m.lstm.w_hh.nnz_blocks(), 0));
    r.layers.push_back(
        block_cost(cfg, "proj", true, m.proj.out, m.proj.in, m.proj.w.nnz_blocks(), m.proj.out));
    for (int i = 0; i < L; ++i)
        r.layers.push_back(conv_cost(cfg, "dec" + std::to_string(i), L - 1 - i, true,
                                     m.decoder[i].out_ch, m.decoder[i].in_ch, m.decoder[i].kernel,
                                     m.decoder[i].nnz()));
    r.layers.push_back(conv_cost(cfg, "head", -1, true, 1, m.head.in_ch, 1, m.head.nnz()));
    return finish(std::move(r));
}

} // namespace sb
