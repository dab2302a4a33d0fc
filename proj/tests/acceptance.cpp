// Acceptance suite: runs every release criterion end to end and prints one
// pass/fail line each. Criteria 3/6/7/10 share one compression run on the
// stock architecture; everything else uses small randomized models so the
// whole suite stays within its time budget on a laptop core.

#include "quant_impl.hpp"
#include "speechboost/compress.hpp"
#include "speechboost/modelio.hpp"
#include "speechboost/streaming.hpp"
#include "support/oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>

using namespace sb;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

int g_failures = 0;
std::vector<int> g_only; // empty: run everything

void run_criterion(int id, const std::string& name, const std::function<void(Outcome&)>& body) {
    if (!g_only.empty() && std::find(g_only.begin(), g_only.end(), id) == g_only.end()) return;
    Outcome out;
    const auto t0 = Clock::now();
    try {
        body(out);
    } catch (const std::exception& e) {
        out.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (!out.pass) ++g_failures;
    std::printf("[%s] criterion %2d (%6.1fs): %s%s%s\n", out.pass ? "PASS" : "FAIL", id, secs,
                name.c_str(), out.detail.empty() ? "" : " -- ", out.detail.c_str());
    std::fflush(stdout);
}

ModelConfig small_variant(uint64_t seed) {
    ModelConfig cfg;
    switch (seed % 4) {
    case 0:
        cfg.strides = {4, 4, 2};
        cfg.channels = {8, 8, 16};
        cfg.kernel_sizes = {8, 8, 4};
        break;
    case 1:
        cfg.strides = {2, 4, 4};
        cfg.channels = {8, 8, 16};
        cfg.kernel_sizes = {4, 8, 8};
        break;
    case 2:
        cfg.strides = {8, 4};
        cfg.channels = {16, 16};
        cfg.kernel_sizes = {16, 8};
        break;
    default:
        cfg.strides = {4, 2, 4};
        cfg.channels = {8, 16, 16};
        cfg.kernel_sizes = {8, 4, 8};
        break;
    }
    cfg.lstm_hidden = (seed % 3 == 0) ? 32 : 16;
    return cfg;
}

double max_abs(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs((double)a[i] - b[i]));
    return m;
}

double output_mse(const DenseModel& reference, const SparseModel& pruned,
                  const std::vector<std::vector<float>>& clips) {
    double err = 0;
    size_t n = 0;
    for (const auto& clip : clips) {
        auto ref = forward_offline(reference, clip);
        auto out = forward_offline(pruned, clip);
        for (size_t i = 0; i < ref.size(); ++i) {
            const double d = (double)ref[i] - out[i];
            err += d * d;
        }
        n += ref.size();
    }
    return err / (double)n;
}

// shared artifacts of the default-architecture compression run
struct PipelineArtifacts {
    DenseModel dense;
    CalibAudio calib;
    PruneResult spdy;
    double dense_macs = 0;
    bool ready = false;
};

PipelineArtifacts g_pipe;

} // namespace

// 1. Latency contract: outputs are bit-invariant to samples beyond
//    chunk_end + 16 and sensitive within the horizon.
static void criterion_latency(Outcome& out) {
    int checked = 0;
    for (uint64_t pair = 0; pair < 200 && out.pass; ++pair) {
        DenseModel m = make_random_model(small_variant(pair), 1000 + pair);
        auto wav = oracle::random_signal(2000 + pair, 160); // 5 chunks
        auto base = forward_offline(m, wav);

        const int j = 1 + (int)(pair % 3); // guard chunk j-1
        for (int probe : {32 * j + 16, 32 * j + 17 + (int)(pair % 13), 159}) {
            if (probe <= 32 * j + 15) continue;
            auto mod = wav;
            mod[probe] += 1.0f;
            auto pert = forward_offline(m, mod);
            for (int t = 0; t < 32 * j && out.pass; ++t) {
                out.require(pert[t] == base[t],
                            "offline output changed at t=" + std::to_string(t) +
                                " after perturbing sample " + std::to_string(probe));
            }
            ++checked;
        }
        {
            // the streaming engine agrees sample for sample on the prefix
            auto mod = wav;
            mod[32 * j + 16] += 1.0f;
            Stream s1(m), s2(m);
            auto a = stream_process_all(s1, wav);
            auto b = stream_process_all(s2, mod);
            for (int t = 0; t < 32 * j && out.pass; ++t)
                out.require(a[t] == b[t], "streaming prefix changed past the horizon");
        }
        {
            // ... and the look-ahead region genuinely matters: some small
            // modification at chunk_end + 16 - s must change the chunk
            bool sensitive = false;
            for (int s : {0, 3, 7}) {
                for (float delta : {1.5f, -1.5f}) {
                    auto mod = wav;
                    mod[32 * j + 15 - s] += delta;
                    auto pert = forward_offline(m, mod);
                    for (int t = 32 * (j - 1); t < 32 * j && !sensitive; ++t)
                        sensitive = pert[t] != base[t];
                    if (sensitive) break;
                }
                if (sensitive) break;
            }
            out.require(sensitive,
                        "look-ahead region had no effect (pair " + std::to_string(pair) + ")");
        }
    }
    if (out.pass) out.detail = std::to_string(checked) + " perturbation sweeps";
}

// 2. Streaming/offline equivalence: <=1e-5 float, bit-exact quantized.
static void criterion_stream_equivalence(Outcome& out) {
    double worst = 0;
    for (uint64_t i = 0; i < 20 && out.pass; ++i) {
        DenseModel m = make_random_model(small_variant(i + 7), 3000 + i);
        auto wav = oracle::speech_like(4000 + i, 48000); // 3 s
        Stream s(m);
        auto streamed = stream_process_all(s, wav);
        auto offline = forward_offline(m, wav);
        const double d = max_abs(streamed, offline);
        worst = std::max(worst, d);
        out.require(d <= 1e-5, "float path diverged by " + std::to_string(d));

        QuantModel qm = quantize_model(m);
        Stream qs(qm);
        auto q_streamed = stream_process_all(qs, wav);
        auto q_offline = forward_offline(qm, wav);
        out.require(q_streamed == q_offline, "quantized path not bit-exact");
    }
    if (out.pass) {
        std::ostringstream os;
        os << "20 models x 3 s, worst float |diff| " << worst;
        out.detail = os.str();
    }
}

// 3. Complexity reduction: SPDY+OBC at target 0.105 lands in [0.095, 0.115].
static void criterion_complexity(Outcome& out) {
    g_pipe.dense = make_random_model(ModelConfig{}, 20260808);
    g_pipe.dense_macs = count_macs(g_pipe.dense).total_macs_per_s;
    std::vector<std::vector<float>> clips;
    for (int i = 0; i < 16; ++i) clips.push_back(oracle::speech_like(6000 + i, 4000)); // 0.25 s
    g_pipe.calib = split_calib_clips(clips, 4000);

    PruneOptions opts;
    opts.method = "spdy-obc";
    opts.target_ratio = 0.105;
    opts.seed = 11;
    g_pipe.spdy = iterative_prune(g_pipe.dense, g_pipe.calib, opts);
    g_pipe.ready = true;

    const double ratio = g_pipe.spdy.cost.total_macs_per_s / g_pipe.dense_macs;
    out.require(g_pipe.spdy.history.size() == 22,
                "expected 22 iterations, got " + std::to_string(g_pipe.spdy.history.size()));
    out.require(ratio >= 0.095 && ratio <= 0.115,
                "achieved MAC ratio " + std::to_string(ratio) + " outside [0.095, 0.115]");
    std::ostringstream os;
    os << "dense " << g_pipe.dense_macs / 1e9 << " GMAC/s -> " << g_pipe.spdy.cost.total_macs_per_s / 1e9
       << " GMAC/s, ratio " << ratio << " over " << g_pipe.spdy.history.size() << " iterations";
    if (out.pass) out.detail = os.str();
}

// 4. OBC correctness: H=I magnitude equivalence, eps == measured increments,
//    and dominance over magnitude pruning.
static void criterion_obc(Outcome& out) {
    // (a) identity Hessian: removal order equals ascending |w|, for the
    // unstructured and the 16x1 block shapes
    for (uint64_t seed = 0; seed < 10 && out.pass; ++seed) {
        const int d = 12;
        MatD w(1, d);
        Rng rng(seed + 1);
        for (auto& v : w.a) v = rng.uniform(-2.0, 2.0);
        ObcOptions opts;
        opts.damping_rel = 0;
        opts.levels.clear();
        for (int i = 0; i <= d; ++i) opts.levels.push_back((double)i / d);
        LayerBank bank = obc_prune_layer("t", w, MatD::identity(d), 1, {1, 1}, opts);

        std::vector<int> order(d);
        for (int i = 0; i < d; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return std::fabs(w.at(0, a)) < std::fabs(w.at(0, b)); });
        for (int step = 0; step < d && out.pass; ++step) {
            const auto& kept = bank.entries[step].kept;
            for (int later = step; later < d; ++later)
                out.require(std::find(kept.begin(), kept.end(), (uint32_t)order[later]) != kept.end(),
                            "H=I trace deviates from magnitude order");
            // no compensation: survivors keep their original values
            for (size_t b = 0; b < kept.size(); ++b)
                out.require(bank.entries[step].values[b] == (float)w.at(0, kept[b]),
                            "H=I trace compensated a weight");
        }
    }
    // (b) estimated eps increments match recomputed reconstruction increments
    int matched = 0, totals = 0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        const int d = 6 + (int)(seed % 4), rows = 2, n = 24;
        Rng rng(seed + 40);
        MatD x(d, n);
        for (auto& v : x.a) v = rng.uniform(-1.0, 1.0);
        MatD gram(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                double acc = 0;
                for (int s = 0; s < n; ++s) acc += x.at(i, s) * x.at(j, s);
                gram.at(i, j) = gram.at(j, i) = acc;
            }
        MatD w(rows, d);
        for (auto& v : w.a) v = rng.uniform(-1.0, 1.0);
        ObcOptions opts;
        opts.damping_rel = 0;
        opts.levels.clear();
        for (int i = 0; i <= rows * d; ++i) opts.levels.push_back((double)i / (rows * d));
        LayerBank bank = obc_prune_layer("t", w, gram, n, {1, 1}, opts);
        for (size_t e = 1; e < bank.entries.size(); ++e) {
            const double de = bank.entries[e].est_eps - bank.entries[e - 1].est_eps;
            const double dm = (bank.entries[e].measured_err - bank.entries[e - 1].measured_err) * n;
            ++totals;
            if (std::fabs(de - dm) <= 1e-6 * std::max(1.0, std::fabs(de))) ++matched;
        }
    }
    out.require(matched == totals, "eps/measured increments diverged (" + std::to_string(matched) +
                                       "/" + std::to_string(totals) + ")");
    // (c) OBC beats magnitude at 50% sparsity in >= 90% of 100 trials
    int wins = 0;
    for (int t = 0; t < 100; ++t) {
        const int d = 10, n = 30;
        Rng rng(500 + t);
        MatD x(d, n);
        for (auto& v : x.a) v = rng.uniform(-1.0, 1.0);
        MatD gram(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) {
                double acc = 0;
                for (int s = 0; s < n; ++s) acc += x.at(i, s) * x.at(j, s);
                gram.at(i, j) = gram.at(j, i) = acc;
            }
        MatD w(2, d);
        for (auto& v : w.a) v = rng.uniform(-1.0, 1.0);
        ObcOptions opts;
        opts.damping_rel = 0;
        opts.levels = {0.0, 0.5};
        LayerBank bank = obc_prune_layer("t", w, gram, n, {1, 1}, opts);
        MatD what = w;
        for (int r = 0; r < 2; ++r) {
            std::vector<std::pair<double, int>> mags;
            for (int c = 0; c < d; ++c) mags.emplace_back(std::fabs(w.at(r, c)), c);
            std::sort(mags.begin(), mags.end());
            for (int k = 0; k < d / 2; ++k) what.at(r, mags[k].second) = 0;
        }
        if (bank.entries[1].measured_err <= measure_reconstruction_error(w, what, x)) ++wins;
    }
    out.require(wins >= 90, "OBC beat magnitude only " + std::to_string(wins) + "/100 times");
    if (out.pass)
        out.detail = "trace==magnitude (H=I), " + std::to_string(matched) + "/" +
                     std::to_string(totals) + " increment matches, " + std::to_string(wins) +
                     "/100 wins vs magnitude";
}

// 5. SPDY DP optimality against brute force plus coefficient scale invariance.
static void criterion_dp(Outcome& out) {
    int infeasible = 0;
    for (uint64_t seed = 0; seed < 200 && out.pass; ++seed) {
        Rng rng(seed + 9);
        const int L = 2 + (int)rng.below(3);
        std::vector<std::vector<double>> macs(L), err(L);
        double dense_total = 0;
        for (int l = 0; l < L; ++l) {
            const int levels = 2 + (int)rng.below(4);
            double m = 50 + rng.uniform() * 100;
            dense_total += m;
            double e = 0;
            for (int v = 0; v < levels; ++v) {
                macs[l].push_back(m);
                err[l].push_back(e);
                m *= 0.4 + 0.4 * rng.uniform();
                e += rng.uniform();
            }
        }
        const double budget = dense_total * (0.15 + 0.8 * rng.uniform());
        std::vector<double> coeffs(L);
        for (auto& c : coeffs) c = rng.uniform(0.05, 1.0);
        std::vector<std::vector<double>> score(L);
        for (int l = 0; l < L; ++l)
            for (double e : err[l]) score[l].push_back(coeffs[l] * e);

        // exhaustive enumeration with the identical bucket rule
        const int buckets = 1000;
        const double unit = dense_total / buckets;
        const int budget_b = (int)std::floor(budget / unit + 1e-9);
        std::vector<int> cur(L, 0), best;
        double best_score = 0, best_macs = 0;
        bool found = false;
        while (true) {
            int used = 0;
            double sc = 0, mc = 0;
            for (int l = 0; l < L; ++l) {
                used += std::max(0, (int)std::ceil(macs[l][cur[l]] / unit - 1e-9));
                sc += score[l][cur[l]];
                mc += macs[l][cur[l]];
            }
            if (used <= budget_b &&
                (!found || sc < best_score ||
                 (sc == best_score && (mc < best_macs || (mc == best_macs && cur < best))))) {
                best = cur;
                best_score = sc;
                best_macs = mc;
                found = true;
            }
            int l = L - 1;
            while (l >= 0 && cur[l] + 1 == (int)macs[l].size()) cur[l--] = 0;
            if (l < 0) break;
            ++cur[l];
        }
        if (!found) {
            ++infeasible;
            bool threw = false;
            try {
                dp_core(macs, score, budget, dense_total, buckets);
            } catch (const Error& e) {
                threw = e.code() == ErrCode::Infeasible;
            }
            out.require(threw, "dp missed an infeasible instance");
            continue;
        }
        auto got = dp_core(macs, score, budget, dense_total, buckets);
        out.require(got == best, "dp result differs from brute force (seed " +
                                     std::to_string(seed) + ")");
        // scale invariance of the argmin
        for (double alpha : {2.0, 0.0625, 3.0}) {
            std::vector<std::vector<double>> scaled(L);
            for (int l = 0; l < L; ++l)
                for (double s : score[l]) scaled[l].push_back(alpha * s);
            out.require(dp_core(macs, scaled, budget, dense_total, buckets) == got,
                        "dp argmin changed under coefficient scaling");
        }
    }
    if (out.pass)
        out.detail = "200 instances vs brute force (" + std::to_string(infeasible) +
                     " infeasible), scale-invariant";
}

// 6. Pruning quality ordering: SPDY+OBC <= magnitude at the same budget.
static void criterion_quality_order(Outcome& out) {
    out.require(g_pipe.ready, "pipeline artifacts missing (criterion 3 failed)");
    if (!out.pass) return;
    SparseModel mag = magnitude_prune(g_pipe.dense, 0.105);
    const double mag_ratio = count_macs(mag).total_macs_per_s / g_pipe.dense_macs;
    const double spdy_mse = output_mse(g_pipe.dense, g_pipe.spdy.model, g_pipe.calib.holdout);
    const double mag_mse = output_mse(g_pipe.dense, mag, g_pipe.calib.holdout);
    out.require(mag_ratio <= 0.105 + 1e-6, "magnitude missed its budget");
    out.require(spdy_mse <= mag_mse, "SPDY+OBC mse " + std::to_string(spdy_mse) +
                                         " worse than magnitude " + std::to_string(mag_mse));
    std::ostringstream os;
    os << "held-out MSE: spdy+obc " << spdy_mse << " vs magnitude " << mag_mse;
    if (out.pass) out.detail = os.str();
}

// 7. Quantization fidelity on the pruned model: SNR >= 30 dB, no undetected
//    overflows under the wide-integer shadow, half-ULP weight round trip.
static void criterion_quant(Outcome& out) {
    out.require(g_pipe.ready, "pipeline artifacts missing (criterion 3 failed)");
    if (!out.pass) return;
    QuantReport rep;
    QuantModel qm = quantize_model(g_pipe.spdy.model, &rep);
    out.require(rep.total_saturated == 0,
                std::to_string(rep.total_saturated) + " saturated weights");
    out.require(rep.max_abs_err <= std::ldexp(1.0, -14),
                "weight round-trip error " + std::to_string(rep.max_abs_err));

    double min_snr = 1e300;
    for (int i = 0; i < 10 && out.pass; ++i) {
        auto wav = oracle::speech_like(7000 + i, 16000); // 1 s
        auto fref = forward_offline(densify_model(g_pipe.spdy.model), wav);
        auto qout = forward_offline(qm, wav);
        const QuantFidelity fid = quant_report(fref, qout);
        min_snr = std::min(min_snr, fid.snr_db);
        out.require(fid.snr_db >= 30.0, "SNR " + std::to_string(fid.snr_db) + " dB on input " +
                                            std::to_string(i));

        detail::QuantExecStats st;
        auto shadow = detail::quant_forward_offline_t<__int128>(qm, wav, &st);
        out.require(st.acc_overflows == 0,
                    std::to_string(st.acc_overflows) + " accumulator overflows in shadow run");
        out.require(shadow == qout, "shadow accumulation diverged from the 64-bit path");
    }
    if (out.pass) {
        std::ostringstream os;
        os << "min SNR " << min_snr << " dB, zero shadow overflows, max weight err "
           << rep.max_abs_err;
        out.detail = os.str();
    }
}

// 8. Sparse-kernel equivalence across random configurations.
static void criterion_sparse_equiv(Outcome& out) {
    for (uint64_t seed = 0; seed < 100 && out.pass; ++seed) {
        Rng rng(seed + 77);
        const int out_ch = 1 + (int)rng.below(6), in_ch = 1 + (int)rng.below(5);
        const int K = 1 + (int)rng.below(6);
        const int S = 1 + (int)rng.below(K);
        const bool transposed = seed % 3 == 0;
        Conv1dLayer l = oracle::random_conv(seed + 200, out_ch, in_ch, K, S, transposed,
                                            seed % 2 == 0);
        const double keep_p = seed % 10 == 0 ? 0.0 : (seed % 10 == 1 ? 1.0 : rng.uniform());
        std::vector<uint8_t> keep((size_t)out_ch * in_ch);
        for (auto& v : keep) v = rng.uniform() < keep_p ? 1 : 0;
        Conv1dLayer zeroed = l;
        for (int j = 0; j < out_ch; ++j)
            for (int i = 0; i < in_ch; ++i)
                if (!keep[(size_t)j * in_ch + i]) {
                    float* wk = zeroed.kernel_ptr(j, i);
                    std::fill(wk, wk + K, 0.f);
                }
        SparseConvLayer s = sparsify_conv(l, keep);
        Frames in = oracle::random_frames(seed + 300, in_ch, K + 11);
        Frames a = transposed ? sparse_conv_transposed_forward(s, in) : sparse_conv_forward(s, in);
        Frames b = transposed ? conv1d_transposed_forward(zeroed, in) : conv1d_forward(zeroed, in);
        double d = 0;
        for (size_t i = 0; i < a.data.size(); ++i)
            d = std::max(d, std::fabs((double)a.data[i] - b.data[i]));
        out.require(d <= 1e-6, "sparse/dense diverged by " + std::to_string(d));
    }
    if (out.pass) out.detail = "100 random configurations incl. empty and full masks";
}

// 9. Serialization: bit-exact round trips and structured corruption errors.
static void criterion_serialization(Outcome& out) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "sb_acceptance_io";
    fs::create_directories(dir);
    auto p = [&](const char* n) { return (dir / n).string(); };

    DenseModel dm = make_random_model(oracle::tiny_config(), 314);
    SparseModel sm = sparsify_model(dm);
    sm.decoder[0].idx.resize(sm.decoder[0].idx.size() / 2);
    sm.decoder[0].w.resize(sm.decoder[0].idx.size() * sm.decoder[0].kernel);
    QuantModel qm = quantize_model(sm);

    model_save(dm, p("d.sbm"));
    model_save(sm, p("s.sbm"));
    model_save(qm, p("q.sbm"));
    out.require(model_serialize(model_load(p("d.sbm"))) == model_serialize(Model(dm)),
                "dense round trip not bit-exact");
    out.require(model_serialize(model_load(p("s.sbm"))) == model_serialize(Model(sm)),
                "sparse round trip not bit-exact");
    out.require(model_serialize(model_load(p("q.sbm"))) == model_serialize(Model(qm)),
                "quant round trip not bit-exact");

    // bank round trip through a real bank
    std::vector<std::vector<float>> clips = {oracle::speech_like(315, 480)};
    CalibrationSet set = capture_calibration(sm, clips, 64);
    ObcOptions oo;
    oo.levels = {0.0, 0.5, 0.9};
    SparsityBank bank = build_bank(sm, set, oo);
    bank_save(bank, p("b.sbk"));
    SparsityBank bback = bank_load(p("b.sbk"));
    bool bank_ok = bback.layers.size() == bank.layers.size();
    for (size_t i = 0; bank_ok && i < bank.layers.size(); ++i) {
        bank_ok = bback.layers[i].name == bank.layers[i].name &&
                  bback.layers[i].entries.size() == bank.layers[i].entries.size();
        for (size_t e = 0; bank_ok && e < bank.layers[i].entries.size(); ++e)
            bank_ok = bback.layers[i].entries[e].kept == bank.layers[i].entries[e].kept &&
                      bback.layers[i].entries[e].values == bank.layers[i].entries[e].values;
    }
    out.require(bank_ok, "bank round trip mismatch");

    // corruption: magic, version, truncation, payload flip
    auto bytes = model_serialize(Model(dm));
    auto check_err = [&](std::vector<uint8_t> mut, const char* what) {
        const std::string path = p("corrupt.sbm");
        FILE* f = fopen(path.c_str(), "wb");
        fwrite(mut.data(), 1, mut.size(), f);
        fclose(f);
        bool threw = false;
        try {
            model_load(path);
        } catch (const Error& e) {
            threw = e.code() == ErrCode::Format;
        } catch (...) {
        }
        out.require(threw, std::string("corrupted file (") + what + ") not rejected cleanly");
    };
    auto m1 = bytes;
    m1[0] = 'Z';
    check_err(m1, "magic");
    auto m2 = bytes;
    m2[4] = 9;
    check_err(m2, "version");
    auto m3 = bytes;
    m3.resize(m3.size() - 7);
    check_err(m3, "truncated");
    auto m4 = bytes;
    m4[m4.size() / 2] ^= 0xA5;
    check_err(m4, "crc");

    fs::remove_all(dir);
    if (out.pass) out.detail = "dense/sparse/quant/bank round trips + 4 corruption modes";
}

// 10. Size sanity: the ~90%-sparse quantized model ships well under a quarter
//     of the dense float file.
static void criterion_size(Outcome& out) {
    out.require(g_pipe.ready, "pipeline artifacts missing (criterion 3 failed)");
    if (!out.pass) return;
    const uint64_t dense_bytes = model_file_size(Model(g_pipe.dense));
    QuantModel qm = quantize_model(g_pipe.spdy.model);
    const uint64_t quant_bytes = model_file_size(Model(qm));
    out.require(quant_bytes * 4 < dense_bytes,
                "quantized file " + std::to_string(quant_bytes) + " B not under 25% of dense " +
                    std::to_string(dense_bytes) + " B");
    std::ostringstream os;
    os << "dense f32 " << dense_bytes / 1024 << " kB -> quantized sparse " << quant_bytes / 1024
       << " kB (" << (100.0 * quant_bytes / dense_bytes) << "%)";
    if (out.pass) out.detail = os.str();
}

// Companion check for the iterative schedule: pruning gradually (with bank
// refreshes) should not lose to jumping straight to the target budget.
static void extra_iterative_vs_oneshot(Outcome& out) {
    out.require(g_pipe.ready, "pipeline artifacts missing (criterion 3 failed)");
    if (!out.pass) return;
    PruneOptions opts;
    opts.method = "spdy-obc";
    opts.target_ratio = 0.105;
    opts.seed = 11;
    opts.one_shot = true;
    PruneResult oneshot = iterative_prune(g_pipe.dense, g_pipe.calib, opts);
    const double iter_mse = output_mse(g_pipe.dense, g_pipe.spdy.model, g_pipe.calib.holdout);
    const double shot_mse = output_mse(g_pipe.dense, oneshot.model, g_pipe.calib.holdout);
    out.require(iter_mse <= shot_mse, "iterative mse " + std::to_string(iter_mse) +
                                          " worse than one-shot " + std::to_string(shot_mse));
    std::ostringstream os;
    os << "held-out MSE: iterative " << iter_mse << " vs one-shot " << shot_mse;
    if (out.pass) out.detail = os.str();
}

int main(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) g_only.push_back(std::atoi(argv[i]));
    std::printf("speechboost acceptance suite\n");
    run_criterion(1, "latency contract: bit-invariance beyond chunk end + 16", criterion_latency);
    run_criterion(2, "streaming/offline equivalence (float 1e-5, quantized bit-exact)",
                  criterion_stream_equivalence);
    run_criterion(3, "SPDY+OBC complexity reduction to 0.105 of dense MACs", criterion_complexity);
    run_criterion(4, "OBC correctness (H=I trace, eps increments, beats magnitude)", criterion_obc);
    run_criterion(5, "SPDY DP optimality and coefficient scale invariance", criterion_dp);
    run_criterion(6, "quality ordering: SPDY+OBC <= magnitude at equal budget",
                  criterion_quality_order);
    run_criterion(7, "quantization fidelity (>=30 dB SNR, no overflow, half-ULP weights)",
                  criterion_quant);
    run_criterion(8, "sparse kernels match dense-with-zeros", criterion_sparse_equiv);
    run_criterion(9, "serialization round trips and corruption handling", criterion_serialization);
    run_criterion(10, "quantized sparse file under 25% of dense f32", criterion_size);
    run_criterion(11, "extra: iterative schedule no worse than one-shot pruning",
                  extra_iterative_vs_oneshot);

    if (g_failures == 0)
        std::printf("all criteria passed\n");
    else
        std::printf("%d criteria FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
