#include "speechboost/compress.hpp"

#include <algorithm>
#include <cmath>

namespace sb {

PruneResult iterative_prune(const DenseModel& model, const CalibAudio& calib,
                            const PruneOptions& opts) {
    if (opts.target_ratio <= 0 || opts.target_ratio >= 1)
        fail(ErrCode::InvalidArg, "target_ratio must be in (0,1)");
    model.validate();

    const double dense_total = count_macs(model).total_macs_per_s;
    const double target_macs = opts.target_ratio * dense_total;

    PruneResult res;
    SparseModel current = sparsify_model(model);
    int k = 0;
    while (true) {
        ++k;
        double budget = opts.one_shot ? target_macs : dense_total * std::pow(0.9, k);
        if (budget <= target_macs) budget = target_macs;

        CalibrationSet set = capture_calibration(current, calib.capture, calib.max_cols);
        SparsityBank bank = build_bank(current, set, opts.obc);

        SpdyOptions so = opts.spdy;
        so.seed = opts.seed + (uint64_t)k * 1000003u;
        SpdyResult found = spdy_search(model, current, bank, budget, dense_total, calib, so);

        current = assemble_from_bank(current, bank, found.profile.levels);
        PruneHistoryEntry h;
        h.iteration = k;
        h.budget_macs = budget;
        h.achieved_macs = count_macs(current).total_macs_per_s;
        h.calib_loss = found.profile.loss;
        res.history.push_back(h);

        if (opts.one_shot || budget <= target_macs) break;
    }
    res.cost = count_macs(current);
    res.model = std::move(current);
    return res;
}

namespace {

struct BlockRef {
    int layer;    // index into the cost-report layer order
    uint32_t id;  // canonical block id within the layer
    double norm;  // L2 norm of the block
    double cost;  // MAC/s contributed by the block
};

double kernel_norm(const SparseConvLayer& l, size_t n) {
    double s = 0;
    for (int k = 0; k < l.kernel; ++k) {
        const double v = l.w[n * l.kernel + k];
        s += v * v;
    }
    return std::sqrt(s);
}

double block_norm(const BlockSparseMatrix& m, size_t n) {
    double s = 0;
    for (int r = 0; r < 16; ++r) {
        const double v = m.w[n * 16 + r];
        s += v * v;
    }
    return std::sqrt(s);
}

void drop_conv_blocks(SparseConvLayer& l, const std::vector<uint8_t>& removed) {
    SparseConvLayer out = l;
    out.idx.clear();
    out.w.clear();
    for (size_t n = 0; n < l.idx.size(); ++n) {
        if (removed[n]) continue;
        out.idx.push_back(l.idx[n]);
        out.w.insert(out.w.end(), l.w.begin() + n * l.kernel, l.w.begin() + (n + 1) * l.kernel);
    }
    l = std::move(out);
}

void drop_matrix_blocks(BlockSparseMatrix& m, const std::vector<uint8_t>& removed) {
    BlockSparseMatrix out;
    out.rows = m.rows;
    out.cols = m.cols;
    for (size_t n = 0; n < m.blocks.size(); ++n) {
        if (removed[n]) continue;
        out.blocks.push_back(m.blocks[n]);
        out.w.insert(out.w.end(), m.w.begin() + n * 16, m.w.begin() + (n + 1) * 16);
    }
    m = std::move(out);
}

} // namespace

SparseModel magnitude_prune(const DenseModel& model, double target_ratio, bool per_layer_uniform) {
    if (target_ratio <= 0 || target_ratio > 1)
        fail(ErrCode::InvalidArg, "target_ratio must be in (0,1]");
    model.validate();
    SparseModel sm = sparsify_model(model);
    CostReport cost = count_macs(sm);

    // flatten every prunable unit with its per-block cost
    struct LayerHandle {
        SparseConvLayer* conv = nullptr;
        BlockSparseMatrix* mat = nullptr;
        double block_cost = 0;
        size_t count() const { return conv ? conv->idx.size() : mat->blocks.size(); }
        double norm(size_t n) const { return conv ? kernel_norm(*conv, n) : block_norm(*mat, n); }
    };
    std::vector<LayerHandle> handles;
    const int L = sm.config.num_enc_layers();
    for (int i = 0; i < L; ++i) handles.push_back({&sm.encoder[i], nullptr, 0});
    handles.push_back({nullptr, &sm.lstm.w_ih, 0});
    handles.push_back({nullptr, &sm.lstm.w_hh, 0});
    handles.push_back({nullptr, &sm.proj.w, 0});
    for (int i = 0; i < L; ++i) handles.push_back({&sm.decoder[i], nullptr, 0});
    handles.push_back({&sm.head, nullptr, 0});
    for (size_t l = 0; l < handles.size(); ++l)
        handles[l].block_cost = cost.layers[l].dense_macs_per_s /
                                std::max<size_t>(1, handles[l].count());

    std::vector<std::vector<uint8_t>> removed(handles.size());
    for (size_t l = 0; l < handles.size(); ++l) removed[l].assign(handles[l].count(), 0);

    if (per_layer_uniform) {
        for (size_t l = 0; l < handles.size(); ++l) {
            std::vector<std::pair<double, size_t>> order;
            for (size_t n = 0; n < handles[l].count(); ++n) order.emplace_back(handles[l].norm(n), n);
            std::sort(order.begin(), order.end());
            double macs = cost.layers[l].dense_macs_per_s;
            const double layer_target = target_ratio * cost.layers[l].dense_macs_per_s;
            for (const auto& [norm, n] : order) {
                if (macs <= layer_target) break;
                removed[l][n] = 1;
                macs -= handles[l].block_cost;
            }
        }
    } else {
        std::vector<BlockRef> refs;
        for (size_t l = 0; l < handles.size(); ++l)
            for (size_t n = 0; n < handles[l].count(); ++n)
                refs.push_back({(int)l, (uint32_t)n, handles[l].norm(n), handles[l].block_cost});
        std::sort(refs.begin(), refs.end(), [](const BlockRef& a, const BlockRef& b) {
            const double sa = a.norm / a.cost, sb = b.norm / b.cost;
            if (sa != sb) return sa < sb;
            if (a.layer != b.layer) return a.layer < b.layer;
            return a.id < b.id;
        });
        double total = cost.total_macs_per_s;
        const double target = target_ratio * cost.dense_total_macs_per_s;
        for (const auto& r : refs) {
            if (total <= target) break;
            removed[r.layer][r.id] = 1;
            total -= r.cost;
        }
    }

    for (size_t l = 0; l < handles.size(); ++l) {
        if (handles[l].conv)
            drop_conv_blocks(*handles[l].conv, removed[l]);
        else
            drop_matrix_blocks(*handles[l].mat, removed[l]);
    }
    return sm;
}

PruneResult prune(const DenseModel& model, const CalibAudio* calib, const PruneOptions& opts) {
    if (opts.method == "magnitude") {
        PruneResult r;
        r.model = magnitude_prune(model, opts.target_ratio, opts.per_layer_uniform);
        r.cost = count_macs(r.model);
        PruneHistoryEntry h;
        h.iteration = 1;
        h.budget_macs = opts.target_ratio * count_macs(model).total_macs_per_s;
        h.achieved_macs = r.cost.total_macs_per_s;
        h.calib_loss = 0;
        r.history.push_back(h);
        return r;
    }
    if (opts.method != "spdy-obc")
        fail(ErrCode::InvalidArg, "unknown prune method '" + opts.method + "'");
    if (!calib) fail(ErrCode::InvalidArg, "spdy-obc pruning requires calibration data");
    return iterative_prune(model, *calib, opts);
}

} // namespace sb
