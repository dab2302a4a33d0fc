#include "speechboost/obc.hpp"

#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace sb {

CalibAudio split_calib_clips(std::vector<std::vector<float>> clips, int max_cols,
                             double holdout_frac) {
    if (clips.empty()) fail(ErrCode::InvalidArg, "calibration needs at least one clip");
    for (const auto& c : clips)
        if (c.empty()) fail(ErrCode::InvalidArg, "calibration clip is empty");
    CalibAudio a;
    a.max_cols = max_cols;
    size_t n_hold = (size_t)std::floor(clips.size() * holdout_frac);
    if (clips.size() > 1 && n_hold == 0) n_hold = 1;
    const size_t n_cap = clips.size() - n_hold;
    for (size_t i = 0; i < clips.size(); ++i)
        (i < n_cap ? a.capture : a.holdout).push_back(std::move(clips[i]));
    if (a.capture.empty()) fail(ErrCode::InvalidArg, "no capture clips after holdout split");
    return a;
}

const CalibrationSet::LayerX* CalibrationSet::find(const std::string& name) const {
    for (const auto& l : layers)
        if (l.name == name) return &l;
    return nullptr;
}

const LayerBank* SparsityBank::find(const std::string& name) const {
    for (const auto& l : layers)
        if (l.name == name) return &l;
    return nullptr;
}

std::vector<double> default_sparsity_grid() {
    return {0.0, 0.40, 0.50, 0.60, 0.70, 0.75, 0.80, 0.85, 0.90, 0.925, 0.95, 0.975};
}

// ---- calibration capture ----

namespace {

// deterministic uniform subsample: index i -> floor(i * total / m)
std::vector<size_t> uniform_picks(size_t total, size_t m) {
    m = std::min(m, total);
    std::vector<size_t> picks(m);
    for (size_t i = 0; i < m; ++i) picks[i] = i * total / m;
    return picks;
}

struct SlotPlan {
    std::string name;
    int d = 0;        // patch dimension
    int in_ch = 0;
    int kernel = 1;   // 1 for frame captures
    int stride = 1;
    size_t total = 0; // columns available over all clips
};

struct CaptureTaps : detail::ForwardTaps {
    // conv slots 0..2L, then lstm_ih (x), lstm_hh (h_prev), proj (h)
    std::vector<SlotPlan> plan;
    std::vector<std::vector<size_t>> picks; // per slot, ascending global indices
    std::vector<size_t> next;               // per slot, cursor into picks
    std::vector<size_t> seen;               // per slot, columns consumed so far
    CalibrationSet* out;
    int L = 0;

    void grab_columns(int slot, const Frames& f, bool patches) {
        const SlotPlan& p = plan[slot];
        auto& lx = out->layers[slot];
        const int frames = patches ? (f.len - p.kernel + p.stride) / p.stride : f.len;
        for (int t = 0; t < frames; ++t) {
            const size_t global = seen[slot] + t;
            if (next[slot] >= picks[slot].size() || picks[slot][next[slot]] != global) continue;
            const size_t col = next[slot]++;
            for (int i = 0; i < p.in_ch; ++i)
                for (int k = 0; k < p.kernel; ++k)
                    lx.x[((size_t)i * p.kernel + k) * lx.n + col] = f.at(i, t * p.stride + k);
        }
        seen[slot] += frames;
    }

    void on_conv_input(int slot, const Frames& padded) override { grab_columns(slot, padded, true); }

    void grab_vector(int slot, const float* v, int d) {
        const size_t global = seen[slot]++;
        if (next[slot] >= picks[slot].size() || picks[slot][next[slot]] != global) return;
        auto& lx = out->layers[slot];
        const size_t col = next[slot]++;
        for (int i = 0; i < d; ++i) lx.x[(size_t)i * lx.n + col] = v[i];
    }

    void on_lstm_step(const float* x, const float* h_prev) override {
        grab_vector(2 * L + 1, x, plan[2 * L + 1].d);
        grab_vector(2 * L + 2, h_prev, plan[2 * L + 2].d);
    }

    void on_proj_input(const float* h) override { grab_vector(2 * L + 3, h, plan[2 * L + 3].d); }
};

template <class ModelT>
CalibrationSet capture_impl(const ModelT& m, const std::vector<std::vector<float>>& clips,
                            int max_cols) {
    if (clips.empty()) fail(ErrCode::InvalidArg, "capture_calibration: no clips");
    const ModelConfig& cfg = m.config;
    const int L = cfg.num_enc_layers();

    // plan slots: conv inputs (0..2L), lstm x, lstm h, proj h
    std::vector<SlotPlan> plan(2 * L + 4);
    {
        for (int i = 0; i < L; ++i) {
            plan[i].name = "enc" + std::to_string(i);
            plan[i].in_ch = m.encoder[i].in_ch;
            plan[i].kernel = m.encoder[i].kernel;
            plan[i].stride = m.encoder[i].stride;
            plan[i].d = plan[i].in_ch * plan[i].kernel;
        }
        for (int i = 0; i < L; ++i) {
            plan[L + i].name = "dec" + std::to_string(i);
            plan[L + i].in_ch = m.decoder[i].in_ch;
            plan[L + i].d = plan[L + i].in_ch;
        }
        plan[2 * L].name = "head";
        plan[2 * L].in_ch = m.head.in_ch;
        plan[2 * L].d = m.head.in_ch;
        plan[2 * L + 1] = {"lstm_ih", cfg.bottleneck_channels(), 0, 1, 1, 0};
        plan[2 * L + 2] = {"lstm_hh", cfg.lstm_hidden, 0, 1, 1, 0};
        plan[2 * L + 3] = {"proj", cfg.lstm_hidden, 0, 1, 1, 0};

        for (const auto& clip : clips) {
            if (clip.empty()) fail(ErrCode::InvalidArg, "capture_calibration: empty clip");
            const size_t tp = (size_t)ceil_div((int)clip.size(), cfg.chunk_len) * cfg.chunk_len;
            size_t w = tp;
            for (int i = 0; i < L; ++i) {
                plan[i].total += w / cfg.strides[i];
                w /= cfg.strides[i];
            }
            // decoder/head inputs: widths mirror back up
            size_t steps = w; // == tp / chunk
            size_t dw = steps;
            for (int i = 0; i < L; ++i) {
                plan[L + i].total += dw;
                dw *= cfg.strides[L - 1 - i];
            }
            plan[2 * L].total += tp;
            plan[2 * L + 1].total += steps;
            plan[2 * L + 2].total += steps;
            plan[2 * L + 3].total += steps;
        }
    }

    CalibrationSet set;
    CaptureTaps taps;
    taps.L = L;
    taps.plan = plan;
    taps.out = &set;
    for (const auto& p : plan) {
        CalibrationSet::LayerX lx;
        lx.name = p.name;
        lx.d = p.d;
        lx.n = (int)std::min((size_t)max_cols, p.total);
        lx.x.assign((size_t)lx.d * lx.n, 0.f);
        set.layers.push_back(std::move(lx));
        taps.picks.push_back(uniform_picks(p.total, (size_t)max_cols));
    }
    taps.next.assign(plan.size(), 0);
    taps.seen.assign(plan.size(), 0);

    for (const auto& clip : clips) detail::float_forward_offline(m, clip, &taps);

    for (const auto& lx : set.layers)
        for (float v : lx.x)
            if (!std::isfinite(v))
                fail(ErrCode::Internal, "calibration capture produced a non-finite activation in '" +
                                            lx.name + "'");

    // reorder to the canonical prunable-layer order
    CalibrationSet ordered;
    for (const auto& name : prunable_layer_names(cfg)) {
        for (auto& lx : set.layers)
            if (lx.name == name) ordered.layers.push_back(std::move(lx));
    }
    return ordered;
}

} // namespace

CalibrationSet capture_calibration(const DenseModel& m, const std::vector<std::vector<float>>& clips,
                                   int max_cols) {
    return capture_impl(m, clips, max_cols);
}

CalibrationSet capture_calibration(const SparseModel& m, const std::vector<std::vector<float>>& clips,
                                   int max_cols) {
    return capture_impl(m, clips, max_cols);
}

// ---- linear algebra ----

namespace {

// in-place lower Cholesky; false when not positive definite
bool cholesky(std::vector<double>& a, int n) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[(size_t)i * n + j];
            for (int k = 0; k < j; ++k) s -= a[(size_t)i * n + k] * a[(size_t)j * n + k];
            if (i == j) {
                if (s <= 0 || !std::isfinite(s)) return false;
                a[(size_t)i * n + i] = std::sqrt(s);
            } else {
                a[(size_t)i * n + j] = s / a[(size_t)j * n + j];
            }
        }
    }
    return true;
}

// solve (L L^T) x = b given the Cholesky factor
void chol_solve(const std::vector<double>& l, int n, const double* b, double* x) {
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= l[(size_t)i * n + k] * x[k];
        x[i] = s / l[(size_t)i * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = x[i];
        for (int k = i + 1; k < n; ++k) s -= l[(size_t)k * n + i] * x[k];
        x[i] = s / l[(size_t)i * n + i];
    }
}

MatD spd_inverse(const MatD& h) {
    const int n = h.rows;
    std::vector<double> l = h.a;
    if (!cholesky(l, n)) {
        // one damping retry, then give up with a structured error
        l = h.a;
        double tr = 0;
        for (int i = 0; i < n; ++i) tr += h.at(i, i);
        const double bump = std::max(1e-12, 1e-10 * tr / std::max(1, n));
        for (int i = 0; i < n; ++i) l[(size_t)i * n + i] += bump;
        if (!cholesky(l, n))
            fail(ErrCode::Internal, "hessian is singular even after damping retry");
    }
    // columns of the inverse via two triangular solves
    MatD inv(n, n);
    std::vector<double> e(n, 0.0), x(n);
    for (int j = 0; j < n; ++j) {
        e[j] = 1.0;
        chol_solve(l, n, e.data(), x.data());
        for (int i = 0; i < n; ++i) inv.at(i, j) = x[i];
        e[j] = 0.0;
    }
    // symmetrize against round-off
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double v = 0.5 * (inv.at(i, j) + inv.at(j, i));
            inv.at(i, j) = v;
            inv.at(j, i) = v;
        }
    return inv;
}

// Greedy OBS trace over one row group. The inverse Hessian is kept compact
// over active columns; removed columns are swapped to the tail.
class GroupTrace {
public:
    // h is the damped layer Hessian; hinv_full() lazily provides its full
    // inverse (shared across groups that start from a dense support)
    template <class HinvProvider>
    GroupTrace(const MatD& h, HinvProvider&& hinv_full, std::vector<double*> wrows, BlockSpec spec)
        : d_(h.rows), kw_(spec.block_cols), rows_(std::move(wrows)) {
        const int ncb = d_ / kw_;
        for (int cb = 0; cb < ncb; ++cb) {
            bool nz = false;
            for (double* row : rows_)
                for (int k = 0; k < kw_ && !nz; ++k) nz = row[cb * kw_ + k] != 0.0;
            (nz ? cands_ : zero_cbs_).push_back(cb);
        }
        vbuf_.resize((size_t)kw_ * d_);
        w2buf_.resize((size_t)kw_ * d_);
        sub_.resize((size_t)kw_ * kw_);
        wb_.resize(kw_);
        sol_.resize(kw_);
        hinv_.assign((size_t)d_ * d_, 0.0);
        perm_.resize(d_);
        pos_.assign(d_, -1);

        // The subproblem Hessian over the surviving support is H restricted to
        // the active columns. With a mostly-dense support it is cheaper to
        // eliminate the pruned columns from the shared full inverse; for a
        // sparse one, invert the restricted Hessian directly.
        const size_t n_zero_cols = zero_cbs_.size() * (size_t)kw_;
        if (n_zero_cols == 0 || (double)n_zero_cols < 0.35 * d_) {
            const MatD& full = hinv_full();
            std::memcpy(hinv_.data(), full.a.data(), (size_t)d_ * d_ * sizeof(double));
            na_ = d_;
            for (int i = 0; i < d_; ++i) perm_[i] = pos_[i] = i;
            for (int cb : zero_cbs_) eliminate(cb, /*compensate=*/false);
        } else {
            na_ = 0;
            for (int cb : cands_)
                for (int k = 0; k < kw_; ++k) {
                    perm_[na_] = cb * kw_ + k;
                    pos_[cb * kw_ + k] = na_;
                    ++na_;
                }
            MatD hsub(na_, na_);
            for (int i = 0; i < na_; ++i)
                for (int j = 0; j < na_; ++j) hsub.at(i, j) = h.at(perm_[i], perm_[j]);
            MatD inv = spd_inverse(hsub);
            for (int i = 0; i < na_; ++i)
                std::memcpy(hinv_.data() + (size_t)i * d_, inv.row(i), (size_t)na_ * sizeof(double));
        }
    }

    int base_removed() const { return (int)zero_cbs_.size(); }
    const std::vector<int>& candidates() const { return cands_; }

    // score every remaining candidate and remove the cheapest; returns (eps, cb)
    std::pair<double, int> step() {
        double best = 0;
        int best_cb = -1;
        for (int cb : cands_) {
            const double eps = score(cb);
            if (best_cb < 0 || eps < best) {
                best = eps;
                best_cb = cb;
            }
        }
        remove_block(best_cb);
        return {std::max(0.0, best), best_cb};
    }

    // replay a recorded removal
    void replay(int cb) { remove_block(cb); }

    std::vector<int> active_sorted() const {
        std::vector<int> v = cands_;
        std::sort(v.begin(), v.end());
        return v;
    }

private:
    double score(int cb) {
        if (kw_ == 1) {
            const int c = pos_[cb];
            const double hcc = hinv_[(size_t)c * d_ + c];
            double eps = 0;
            for (double* row : rows_) eps += row[cb] * row[cb];
            return eps / hcc;
        }
        gather_sub(cb);
        std::vector<double> l = sub_;
        if (!chol_sub(l)) fail(ErrCode::Internal, "singular block submatrix in OBS score");
        double eps = 0;
        for (double* row : rows_) {
            for (int k = 0; k < kw_; ++k) wb_[k] = row[cb * kw_ + k];
            chol_solve(l, kw_, wb_.data(), sol_.data());
            for (int k = 0; k < kw_; ++k) eps += wb_[k] * sol_[k];
        }
        return eps;
    }

    void gather_sub(int cb) {
        for (int a = 0; a < kw_; ++a)
            for (int b = 0; b < kw_; ++b)
                sub_[(size_t)a * kw_ + b] =
                    hinv_[(size_t)pos_[cb * kw_ + a] * d_ + pos_[cb * kw_ + b]];
    }

    bool chol_sub(std::vector<double>& l) {
        if (cholesky(l, kw_)) return true;
        l = sub_;
        double tr = 0;
        for (int k = 0; k < kw_; ++k) tr += sub_[(size_t)k * kw_ + k];
        for (int k = 0; k < kw_; ++k) l[(size_t)k * kw_ + k] += std::max(1e-12, 1e-10 * tr);
        return cholesky(l, kw_);
    }

    void remove_block(int cb) {
        eliminate(cb, true);
        cands_.erase(std::find(cands_.begin(), cands_.end(), cb));
    }

    void eliminate(int cb, bool compensate) {
        if (kw_ == 1) {
            eliminate1(cb, compensate);
            return;
        }
        gather_sub(cb);
        std::vector<double> l = sub_;
        if (!chol_sub(l)) fail(ErrCode::Internal, "singular block submatrix in OBS update");

        // V = rows of H^-1 at the block (compact layout)
        for (int k = 0; k < kw_; ++k)
            std::memcpy(vbuf_.data() + (size_t)k * d_, hinv_.data() + (size_t)pos_[cb * kw_ + k] * d_,
                        (size_t)na_ * sizeof(double));

        if (compensate) {
            for (double* row : rows_) {
                for (int k = 0; k < kw_; ++k) wb_[k] = row[cb * kw_ + k];
                chol_solve(l, kw_, wb_.data(), sol_.data());
                for (int j = 0; j < na_; ++j) {
                    double acc = 0;
                    for (int k = 0; k < kw_; ++k) acc += vbuf_[(size_t)k * d_ + j] * sol_[k];
                    row[perm_[j]] -= acc;
                }
                for (int k = 0; k < kw_; ++k) row[cb * kw_ + k] = 0.0;
            }
        }

        // W2 = (H^-1_BB)^-1 V, column by column
        std::vector<double> col(kw_), out(kw_);
        for (int j = 0; j < na_; ++j) {
            for (int k = 0; k < kw_; ++k) col[k] = vbuf_[(size_t)k * d_ + j];
            chol_solve(l, kw_, col.data(), out.data());
            for (int k = 0; k < kw_; ++k) w2buf_[(size_t)k * d_ + j] = out[k];
        }
        // H^-1 <- H^-1 - V^T W2 over the active region
        for (int i = 0; i < na_; ++i) {
            double* hrow = hinv_.data() + (size_t)i * d_;
            for (int k = 0; k < kw_; ++k) {
                const double vi = vbuf_[(size_t)k * d_ + i];
                if (vi == 0.0) continue;
                const double* w2 = w2buf_.data() + (size_t)k * d_;
                for (int j = 0; j < na_; ++j) hrow[j] -= vi * w2[j];
            }
        }
        // drop the block's columns (descending compact index)
        std::vector<int> bidx(kw_);
        for (int k = 0; k < kw_; ++k) bidx[k] = pos_[cb * kw_ + k];
        std::sort(bidx.begin(), bidx.end(), std::greater<int>());
        for (int b : bidx) swap_out(b);
    }

    // single-column Gaussian elimination, the hot path for 16x1 blocks
    void eliminate1(int col, bool compensate) {
        const int c = pos_[col];
        const double hcc = hinv_[(size_t)c * d_ + c];
        if (!(hcc > 0)) fail(ErrCode::Internal, "singular block submatrix in OBS update");
        std::memcpy(vbuf_.data(), hinv_.data() + (size_t)c * d_, (size_t)na_ * sizeof(double));
        if (compensate) {
            for (double* row : rows_) {
                const double scale = row[col] / hcc;
                if (scale != 0.0)
                    for (int j = 0; j < na_; ++j) row[perm_[j]] -= vbuf_[j] * scale;
                row[col] = 0.0;
            }
        }
        for (int i = 0; i < na_; ++i) {
            const double f = vbuf_[i] / hcc;
            if (f == 0.0) continue;
            double* hrow = hinv_.data() + (size_t)i * d_;
            for (int j = 0; j < na_; ++j) hrow[j] -= f * vbuf_[j];
        }
        swap_out(c);
    }

    void swap_out(int c) {
        const int last = na_ - 1;
        if (c != last) {
            for (int i = 0; i < na_; ++i)
                std::swap(hinv_[(size_t)i * d_ + c], hinv_[(size_t)i * d_ + last]);
            for (int j = 0; j < na_; ++j)
                std::swap(hinv_[(size_t)c * d_ + j], hinv_[(size_t)last * d_ + j]);
            std::swap(perm_[c], perm_[last]);
            pos_[perm_[c]] = c;
        }
        pos_[perm_[last]] = -1;
        --na_;
    }

    int d_;
    int kw_;
    std::vector<double*> rows_;
    std::vector<double> hinv_;
    std::vector<int> perm_, pos_;
    std::vector<int> cands_, zero_cbs_;
    int na_ = 0;
    std::vector<double> vbuf_, w2buf_, sub_, wb_, sol_;
};

struct MergedStep {
    double eps;
    int group;
    int cb;
};

} // namespace

double measure_reconstruction_error(const MatD& w, const MatD& what, const MatD& x) {
    if (w.rows != what.rows || w.cols != what.cols || w.cols != x.rows)
        fail(ErrCode::Shape, "measure_reconstruction_error: shape mismatch");
    double total = 0;
    for (int r = 0; r < w.rows; ++r)
        for (int s = 0; s < x.cols; ++s) {
            double acc = 0;
            for (int c = 0; c < w.cols; ++c)
                acc += (w.at(r, c) - what.at(r, c)) * x.at(c, s);
            total += acc * acc;
        }
    return x.cols > 0 ? total / x.cols : 0.0;
}

LayerBank obc_prune_layer(const std::string& name, const MatD& w, const MatD& gram, int n_samples,
                          BlockSpec spec, const ObcOptions& opts) {
    if (w.cols != gram.rows || gram.rows != gram.cols)
        fail(ErrCode::Shape, "obc_prune_layer: weight/hessian dims mismatch");
    if (spec.group_rows <= 0 || w.rows % spec.group_rows != 0)
        fail(ErrCode::Shape, "obc_prune_layer: rows not divisible by group_rows");
    if (spec.block_cols <= 0 || w.cols % spec.block_cols != 0)
        fail(ErrCode::Shape, "obc_prune_layer: cols not divisible by block_cols");

    const int d = w.cols;
    const int n_groups = w.rows / spec.group_rows;
    const int ncb = d / spec.block_cols;
    const size_t total = (size_t)n_groups * ncb;

    double lambda = 0;
    {
        double tr = 0;
        for (int i = 0; i < d; ++i) tr += gram.at(i, i);
        lambda = opts.damping_rel * tr / d;
        if (tr == 0) lambda = std::max(lambda, 1e-8); // silent calibration still yields SPD H
    }
    MatD h = gram;
    for (int i = 0; i < d; ++i) h.at(i, i) += lambda;
    MatD hinv0_cache;
    bool have_hinv0 = false;
    auto hinv0 = [&]() -> const MatD& {
        if (!have_hinv0) {
            hinv0_cache = spd_inverse(h);
            have_hinv0 = true;
        }
        return hinv0_cache;
    };

    // working copy of the weights, grouped row pointers
    MatD wcur = w;
    auto group_rows = [&](int g) {
        std::vector<double*> rows(spec.group_rows);
        for (int r = 0; r < spec.group_rows; ++r) rows[r] = wcur.row(g * spec.group_rows + r);
        return rows;
    };

    // pass 1: per-group greedy traces
    std::vector<std::vector<std::pair<double, int>>> traces(n_groups);
    size_t base_removed = 0;
    {
        MatD wtmp = w;
        for (int g = 0; g < n_groups; ++g) {
            std::vector<double*> rows(spec.group_rows);
            for (int r = 0; r < spec.group_rows; ++r) rows[r] = wtmp.row(g * spec.group_rows + r);
            GroupTrace tr(h, hinv0, rows, spec);
            base_removed += (size_t)tr.base_removed();
            const size_t n_steps = tr.candidates().size();
            traces[g].reserve(n_steps);
            for (size_t s = 0; s < n_steps; ++s) traces[g].push_back(tr.step());
        }
    }

    // merge into the global greedy order (groups are independent, so the
    // global argmin is always some group's next local step)
    std::vector<MergedStep> merged;
    merged.reserve(total - base_removed);
    {
        std::vector<size_t> cursor(n_groups, 0);
        while (true) {
            int best_g = -1;
            for (int g = 0; g < n_groups; ++g) {
                if (cursor[g] >= traces[g].size()) continue;
                if (best_g < 0) {
                    best_g = g;
                    continue;
                }
                const auto& a = traces[g][cursor[g]];
                const auto& b = traces[best_g][cursor[best_g]];
                if (a.first < b.first ||
                    (a.first == b.first &&
                     (g < best_g || (g == best_g && a.second < b.second))))
                    best_g = g;
            }
            if (best_g < 0) break;
            const auto& s = traces[best_g][cursor[best_g]++];
            merged.push_back({s.first, best_g, s.second});
        }
    }

    // snapshot counts for each requested level
    std::vector<double> levels = opts.levels;
    std::sort(levels.begin(), levels.end());
    std::vector<size_t> counts;
    for (double lv : levels) {
        if (lv < 0 || lv >= 1.0 + 1e-12) continue;
        size_t m = (size_t)std::ceil(lv * (double)total - 1e-9);
        m = std::max(m, base_removed);
        m = std::min(m, total);
        if (counts.empty() || m > counts.back()) counts.push_back(m);
    }
    if (counts.empty() || counts.front() > base_removed)
        counts.insert(counts.begin(), base_removed);

    // per-level per-group removal counts and estimated eps prefix sums
    const size_t n_levels = counts.size();
    std::vector<std::vector<size_t>> group_counts(n_levels, std::vector<size_t>(n_groups, 0));
    std::vector<double> eps_at(n_levels, 0.0);
    {
        std::vector<size_t> cur(n_groups, 0);
        double eps_sum = 0;
        size_t removed = base_removed;
        size_t li = 0;
        while (li < n_levels && counts[li] <= removed) {
            group_counts[li] = cur;
            eps_at[li] = eps_sum;
            ++li;
        }
        for (const auto& s : merged) {
            eps_sum += s.eps;
            ++cur[s.group];
            ++removed;
            while (li < n_levels && counts[li] == removed) {
                group_counts[li] = cur;
                eps_at[li] = eps_sum;
                ++li;
            }
        }
    }

    // pass 2: replay per group, snapshotting weights at the level counts
    LayerBank bank;
    bank.name = name;
    bank.rows = w.rows;
    bank.cols = w.cols;
    bank.spec = spec;
    bank.damping = lambda;
    bank.entries.resize(n_levels);
    for (size_t li = 0; li < n_levels; ++li) {
        bank.entries[li].sparsity = (double)counts[li] / (double)total;
        bank.entries[li].est_eps = eps_at[li];
    }

    const size_t block_elems = (size_t)spec.group_rows * spec.block_cols;
    std::vector<std::vector<std::vector<float>>> snap_vals(n_levels); // per level, per group appended later
    for (auto& sv : snap_vals) sv.resize(n_groups);
    std::vector<std::vector<std::vector<uint32_t>>> snap_kept(n_levels);
    for (auto& sk : snap_kept) sk.resize(n_groups);

    std::vector<double> delta(d);
    std::vector<double> gd(d);
    for (int g = 0; g < n_groups; ++g) {
        auto rows = group_rows(g);
        GroupTrace tr(h, hinv0, rows, spec);
        size_t done = 0;
        size_t trace_pos = 0;
        for (size_t li = 0; li < n_levels; ++li) {
            const size_t want = group_counts[li][g];
            while (done < want) {
                tr.replay(traces[g][trace_pos++].second);
                ++done;
            }
            // record surviving blocks of this group
            auto active = tr.active_sorted();
            auto& kept = snap_kept[li][g];
            auto& vals = snap_vals[li][g];
            kept.reserve(active.size());
            vals.reserve(active.size() * block_elems);
            for (int cb : active) {
                kept.push_back((uint32_t)((size_t)g * ncb + cb));
                for (int r = 0; r < spec.group_rows; ++r)
                    for (int k = 0; k < spec.block_cols; ++k)
                        vals.push_back((float)rows[r][cb * spec.block_cols + k]);
            }
            // measured reconstruction error contribution of this group;
            // nothing was compensated yet at the base entry
            double err = 0;
            if (done > 0)
                for (int r = 0; r < spec.group_rows; ++r) {
                    const double* w0 = w.row(g * spec.group_rows + r);
                    const double* w1 = rows[r];
                    for (int c = 0; c < d; ++c) delta[c] = w0[c] - w1[c];
                    for (int i = 0; i < d; ++i) {
                        double acc = 0;
                        const double* gr = gram.row(i);
                        for (int c = 0; c < d; ++c) acc += gr[c] * delta[c];
                        gd[i] = acc;
                    }
                    for (int c = 0; c < d; ++c) err += delta[c] * gd[c];
                }
            bank.entries[li].measured_err += err;
        }
    }
    if (n_samples > 0)
        for (auto& e : bank.entries) e.measured_err /= (double)n_samples;

    for (size_t li = 0; li < n_levels; ++li) {
        auto& e = bank.entries[li];
        for (int g = 0; g < n_groups; ++g) {
            e.kept.insert(e.kept.end(), snap_kept[li][g].begin(), snap_kept[li][g].end());
            e.values.insert(e.values.end(), snap_vals[li][g].begin(), snap_vals[li][g].end());
        }
    }
    return bank;
}

// ---- whole-model bank construction and assembly ----

namespace {

struct LayerView {
    std::string name;
    MatD w;
    BlockSpec spec;

    // fraction of blocks already entirely zero
    double base_sparsity() const {
        const int ncb = w.cols / spec.block_cols;
        const int ngr = w.rows / spec.group_rows;
        size_t zero = 0;
        for (int g = 0; g < ngr; ++g)
            for (int cb = 0; cb < ncb; ++cb) {
                bool nz = false;
                for (int r = 0; r < spec.group_rows && !nz; ++r)
                    for (int k = 0; k < spec.block_cols && !nz; ++k)
                        nz = w.at(g * spec.group_rows + r, cb * spec.block_cols + k) != 0.0;
                if (!nz) ++zero;
            }
        return (double)zero / ((double)ngr * ncb);
    }
};

MatD conv_weight_matrix(const SparseConvLayer& s) {
    Conv1dLayer dl = densify(s);
    if (!s.transposed) {
        MatD w(s.out_ch, s.in_ch * s.kernel);
        for (int j = 0; j < s.out_ch; ++j)
            for (int i = 0; i < s.in_ch; ++i)
                for (int k = 0; k < s.kernel; ++k)
                    w.at(j, i * s.kernel + k) = dl.kernel_ptr(j, i)[k];
        return w;
    }
    MatD w(s.out_ch * s.kernel, s.in_ch);
    for (int o = 0; o < s.out_ch; ++o)
        for (int i = 0; i < s.in_ch; ++i)
            for (int k = 0; k < s.kernel; ++k) w.at(o * s.kernel + k, i) = dl.kernel_ptr(o, i)[k];
    return w;
}

MatD block_weight_matrix(const BlockSparseMatrix& m) {
    std::vector<float> dense = block_densify(m);
    MatD w(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) w.at(r, c) = dense[(size_t)r * m.cols + c];
    return w;
}

std::vector<LayerView> layer_views(const SparseModel& m) {
    std::vector<LayerView> v;
    const int L = m.config.num_enc_layers();
    for (int i = 0; i < L; ++i)
        v.push_back({"enc" + std::to_string(i), conv_weight_matrix(m.encoder[i]),
                     {1, m.encoder[i].kernel}});
    v.push_back({"lstm_ih", block_weight_matrix(m.lstm.w_ih), {16, 1}});
    v.push_back({"lstm_hh", block_weight_matrix(m.lstm.w_hh), {16, 1}});
    v.push_back({"proj", block_weight_matrix(m.proj.w), {16, 1}});
    for (int i = 0; i < L; ++i)
        v.push_back({"dec" + std::to_string(i), conv_weight_matrix(m.decoder[i]),
                     {m.decoder[i].kernel, 1}});
    v.push_back({"head", conv_weight_matrix(m.head), {1, m.head.kernel}});
    return v;
}

MatD gram_from_x(const CalibrationSet::LayerX& lx) {
    MatD g(lx.d, lx.d);
    for (int i = 0; i < lx.d; ++i) {
        const float* ri = lx.x.data() + (size_t)i * lx.n;
        for (int j = i; j < lx.d; ++j) {
            const float* rj = lx.x.data() + (size_t)j * lx.n;
            double acc = 0;
            for (int s = 0; s < lx.n; ++s) acc += (double)ri[s] * rj[s];
            g.at(i, j) = acc;
            g.at(j, i) = acc;
        }
    }
    return g;
}

SparseConvLayer conv_from_entry(const SparseConvLayer& base, const BankEntry& e, int kernel) {
    SparseConvLayer out = base;
    out.idx.clear();
    out.w.clear();
    // canonical block id = out_ch-major (j * in_ch + i) for both orientations
    for (size_t b = 0; b < e.kept.size(); ++b) {
        const uint32_t id = e.kept[b];
        out.idx.emplace_back(id / base.in_ch, id % base.in_ch);
        const float* vals = e.values.data() + b * kernel;
        out.w.insert(out.w.end(), vals, vals + kernel);
    }
    return out;
}

BlockSparseMatrix blocks_from_entry(const BlockSparseMatrix& base, const BankEntry& e) {
    BlockSparseMatrix out;
    out.rows = base.rows;
    out.cols = base.cols;
    for (size_t b = 0; b < e.kept.size(); ++b) {
        const uint32_t id = e.kept[b];
        out.blocks.emplace_back(id / base.cols, id % base.cols);
        const float* vals = e.values.data() + b * 16;
        out.w.insert(out.w.end(), vals, vals + 16);
    }
    return out;
}

} // namespace

SparsityBank build_bank(const SparseModel& current, const CalibrationSet& calib,
                        const ObcOptions& opts) {
    CostReport cost = count_macs(current);
    auto views = layer_views(current);
    for (const auto& view : views) {
        const CalibrationSet::LayerX* lx = calib.find(view.name);
        if (!lx) fail(ErrCode::InvalidArg, "calibration set is missing layer '" + view.name + "'");
        if (lx->d != view.w.cols)
            fail(ErrCode::Format, "calibration for '" + view.name +
                                      "' was captured for a different architecture");
    }
    SparsityBank bank;
    bank.layers.resize(views.size());
    parallel_for(views.size(), opts.threads, [&](size_t i) {
        const auto& view = views[i];
        const CalibrationSet::LayerX* lx = calib.find(view.name);
        if (lx->n < lx->d)
            std::fprintf(stderr,
                         "speechboost: warning: layer '%s' has %d calibration columns for %d "
                         "dimensions; damping will dominate the hessian\n",
                         view.name.c_str(), lx->n, lx->d);
        MatD gram = gram_from_x(*lx);
        // besides the coarse grid, snapshot a few fine steps relative to the
        // layer's surviving blocks so the profile search can track a 0.9^k
        // budget schedule without overshooting
        ObcOptions lopts = opts;
        const double base = view.base_sparsity();
        for (double rel : {0.1, 0.2, 0.3})
            lopts.levels.push_back(base + (1.0 - base) * rel);
        LayerBank lb = obc_prune_layer(view.name, view.w, gram, lx->n, view.spec, lopts);
        for (const auto& lc : cost.layers)
            if (lc.name == view.name)
                lb.macs_per_block = lc.dense_macs_per_s / (double)lb.total_blocks();
        bank.layers[i] = std::move(lb);
    });
    return bank;
}

SparseModel assemble_from_bank(const SparseModel& base, const SparsityBank& bank,
                               const std::vector<int>& level_choice) {
    if (level_choice.size() != bank.layers.size())
        fail(ErrCode::Shape, "assemble_from_bank: one level index per bank layer required");
    SparseModel out = base;
    const int L = base.config.num_enc_layers();
    for (size_t li = 0; li < bank.layers.size(); ++li) {
        const LayerBank& lb = bank.layers[li];
        const int lev = level_choice[li];
        if (lev < 0 || lev >= (int)lb.entries.size())
            fail(ErrCode::InvalidArg, "assemble_from_bank: level index out of range for '" +
                                          lb.name + "'");
        const BankEntry& e = lb.entries[lev];
        if (lb.name == "lstm_ih")
            out.lstm.w_ih = blocks_from_entry(base.lstm.w_ih, e);
        else if (lb.name == "lstm_hh")
            out.lstm.w_hh = blocks_from_entry(base.lstm.w_hh, e);
        else if (lb.name == "proj")
            out.proj.w = blocks_from_entry(base.proj.w, e);
        else if (lb.name == "head")
            out.head = conv_from_entry(base.head, e, base.head.kernel);
        else if (lb.name.rfind("enc", 0) == 0) {
            const int i = std::stoi(lb.name.substr(3));
            if (i < 0 || i >= L) fail(ErrCode::Format, "bank names an unknown encoder layer");
            out.encoder[i] = conv_from_entry(base.encoder[i], e, base.encoder[i].kernel);
        } else if (lb.name.rfind("dec", 0) == 0) {
            const int i = std::stoi(lb.name.substr(3));
            if (i < 0 || i >= L) fail(ErrCode::Format, "bank names an unknown decoder layer");
            out.decoder[i] = conv_from_entry(base.decoder[i], e, base.decoder[i].kernel);
        } else {
            fail(ErrCode::Format, "bank contains unknown layer '" + lb.name + "'");
        }
    }
    return out;
}

} // namespace sb
