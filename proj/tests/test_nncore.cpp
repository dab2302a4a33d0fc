#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pipeline.hpp"
#include "speechboost/nncore.hpp"
#include "support/oracles.hpp"

#include <cmath>

using namespace sb;

namespace {

Frames frames_from(const std::vector<float>& v) {
    Frames f(1, (int)v.size());
    std::copy(v.begin(), v.end(), f.row(0));
    return f;
}

void zero_biases(DenseModel& m) {
    for (auto& e : m.encoder) std::fill(e.b.begin(), e.b.end(), 0.f);
    for (auto& d : m.decoder) std::fill(d.b.begin(), d.b.end(), 0.f);
    std::fill(m.head.b.begin(), m.head.b.end(), 0.f);
    std::fill(m.lstm.bias.begin(), m.lstm.bias.end(), 0.f);
    std::fill(m.proj.b.begin(), m.proj.b.end(), 0.f);
}

} // namespace

TEST_CASE("config invariants") {
    ModelConfig cfg = oracle::tiny_config();
    CHECK_NOTHROW(cfg.validate());

    ModelConfig bad = cfg;
    bad.strides = {4, 4, 4}; // product 64 != 32
    bad.channels = {8, 8, 16};
    bad.kernel_sizes = {8, 8, 8};
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = cfg;
    bad.lookahead = 32;
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = cfg;
    bad.kernel_sizes = {8, 8, 1}; // kernel < stride
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = cfg;
    bad.lookahead_copies = 18; // shift beyond look-ahead
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = cfg;
    bad.channels = {8, 8, 12}; // not divisible by 16
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("conv1d identity kernel") {
    Conv1dLayer l = oracle::random_conv(1, 1, 1, 1, 1);
    l.w = {1.f};
    l.b = {0.f};
    Frames out = conv1d_forward(l, frames_from({1, 2, 3}));
    CHECK(out.len == 3);
    CHECK(out.at(0, 0) == 1.f);
    CHECK(out.at(0, 1) == 2.f);
    CHECK(out.at(0, 2) == 3.f);
}

TEST_CASE("conv1d analytic strided sum") {
    Conv1dLayer l = oracle::random_conv(2, 1, 1, 2, 2);
    l.w = {1.f, 1.f};
    l.b = {0.f};
    Frames out = conv1d_forward(l, frames_from({1, 2, 3, 4}));
    CHECK(out.len == 2);
    CHECK(out.at(0, 0) == 3.f);
    CHECK(out.at(0, 1) == 7.f);
}

TEST_CASE("conv1d matches naive triple-loop oracle") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Conv1dLayer l = oracle::random_conv(seed, 3, 5, 8, 4);
        Frames in = oracle::random_frames(seed + 100, 5, 8 + 4 * (int)(seed % 7));
        CHECK(oracle::max_abs_diff(conv1d_forward(l, in), oracle::conv_naive(l, in)) <= 1e-6);
    }
}

TEST_CASE("conv1d shape errors name the mismatch") {
    Conv1dLayer l = oracle::random_conv(3, 2, 3, 4, 2);
    Frames wrong_ch(2, 16);
    CHECK_THROWS_WITH_AS(conv1d_forward(l, wrong_ch), doctest::Contains("channels"), Error);
    Frames too_short(3, 2);
    CHECK_THROWS_AS(conv1d_forward(l, too_short), Error);
}

TEST_CASE("transposed conv identity and analytic") {
    Conv1dLayer l = oracle::random_conv(4, 1, 1, 1, 1, true);
    l.w = {1.f};
    l.b = {0.f};
    Frames out = conv1d_transposed_forward(l, frames_from({5, -3, 2}));
    CHECK(out.at(0, 0) == 5.f);
    CHECK(out.at(0, 1) == -3.f);
    CHECK(out.at(0, 2) == 2.f);

    Conv1dLayer u = oracle::random_conv(5, 1, 1, 2, 2, true);
    u.w = {1.f, 1.f};
    u.b = {0.f};
    Frames o2 = conv1d_transposed_forward(u, frames_from({1, 2}));
    CHECK(o2.len == 4);
    CHECK(o2.at(0, 0) == 1.f);
    CHECK(o2.at(0, 1) == 1.f);
    CHECK(o2.at(0, 2) == 2.f);
    CHECK(o2.at(0, 3) == 2.f);
}

TEST_CASE("transposed conv matches naive oracle") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Conv1dLayer l = oracle::random_conv(seed + 40, 4, 3, 6, 3, true);
        Frames in = oracle::random_frames(seed + 140, 3, 5);
        CHECK(oracle::max_abs_diff(conv1d_transposed_forward(l, in),
                                   oracle::conv_transposed_naive(l, in)) <= 1e-6);
    }
}

TEST_CASE("conv / transposed conv adjoint inner product") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const int in_ch = 3, out_ch = 4, K = 6, S = 2, M = 7;
        const int T = (M - 1) * S + K;
        Conv1dLayer fwd = oracle::random_conv(seed + 60, out_ch, in_ch, K, S);
        Conv1dLayer adj = fwd;
        adj.transposed = true;
        std::swap(adj.out_ch, adj.in_ch); // same buffer, adjoint interpretation
        adj.b.assign(adj.out_ch, 0.f);
        fwd.b.assign(out_ch, 0.f);

        Frames x = oracle::random_frames(seed + 160, in_ch, T);
        Frames y = oracle::random_frames(seed + 260, out_ch, M);
        Frames ax = conv1d_forward(fwd, x);
        Frames aty = conv1d_transposed_forward(adj, y);
        REQUIRE(ax.len == M);
        REQUIRE(aty.len == T);
        double lhs = 0, rhs = 0;
        for (size_t i = 0; i < ax.data.size(); ++i) lhs += (double)ax.data[i] * y.data[i];
        for (size_t i = 0; i < x.data.size(); ++i) rhs += (double)x.data[i] * aty.data[i];
        CHECK(std::fabs(lhs - rhs) <= 1e-5 * (1.0 + std::fabs(lhs)));
    }
}

TEST_CASE("lstm step: zeros stay zero") {
    LstmLayer l;
    l.hidden = 4;
    l.input = 3;
    l.w_ih.assign(4 * 4 * 3, 0.f);
    l.w_hh.assign(4 * 4 * 4, 0.f);
    l.bias.assign(16, 0.f);
    std::vector<float> x(3, 0.f), h(4, 0.f), c(4, 0.f), g(16);
    lstm_step(l, x.data(), h.data(), c.data(), g.data());
    for (float v : h) CHECK(v == 0.f);
    for (float v : c) CHECK(v == 0.f);
}

TEST_CASE("lstm step: forget-gate bias carries the cell state") {
    LstmLayer l;
    l.hidden = 1;
    l.input = 1;
    l.w_ih.assign(4, 0.f);
    l.w_hh.assign(4, 0.f);
    l.bias = {0.f, 20.f, 0.f, 0.f}; // i,f,g,o
    std::vector<float> x{0.f}, h{0.f}, c{1.f}, g(4);
    lstm_step(l, x.data(), h.data(), c.data(), g.data());
    CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(h[0] == doctest::Approx(0.38079).epsilon(1e-4));
}

TEST_CASE("lstm step matches per-gate oracle") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed + 700);
        LstmLayer l;
        l.hidden = 6;
        l.input = 5;
        auto fill = [&](std::vector<float>& v, size_t n) {
            v.resize(n);
            for (auto& x : v) x = (float)rng.uniform(-1.0, 1.0);
        };
        fill(l.w_ih, 4 * 6 * 5);
        fill(l.w_hh, 4 * 6 * 6);
        fill(l.bias, 24);
        std::vector<float> x(5), h(6), c(6), g(24);
        for (auto& v : x) v = (float)rng.uniform(-1.0, 1.0);
        for (auto& v : h) v = (float)rng.uniform(-1.0, 1.0);
        for (auto& v : c) v = (float)rng.uniform(-1.0, 1.0);
        std::vector<float> ho = h, co = c;
        lstm_step(l, x.data(), h.data(), c.data(), g.data());
        oracle::lstm_naive(l, x, ho, co);
        for (int d = 0; d < 6; ++d) {
            CHECK(std::fabs(h[d] - ho[d]) <= 1e-6);
            CHECK(std::fabs(c[d] - co[d]) <= 1e-6);
        }
    }
}

TEST_CASE("lookahead channels") {
    ModelConfig cfg = oracle::tiny_config();
    std::vector<float> wav(100);
    for (size_t i = 0; i < wav.size(); ++i) wav[i] = (float)(i + 1);
    Frames ch = make_lookahead_channels(wav, cfg);
    REQUIRE(ch.ch == 17);
    CHECK(ch.at(1, 0) == 2.f);                    // shift by one
    for (int t = 0; t < 100; ++t) CHECK(ch.at(0, t) == wav[t]); // channel 0 unshifted
    CHECK(ch.at(16, 99) == 0.f);                  // tail padding
    CHECK(ch.at(16, 83) == 100.f);
}

TEST_CASE("forward_offline: zero input through zero-bias model is zero") {
    DenseModel m = make_random_model(oracle::tiny_config(), 11);
    zero_biases(m);
    std::vector<float> wav(256, 0.f);
    auto out = forward_offline(m, wav);
    REQUIRE(out.size() == wav.size());
    for (float v : out) CHECK(v == 0.f);
}

TEST_CASE("forward_offline: empty input is an error") {
    DenseModel m = make_random_model(oracle::tiny_config(), 11);
    CHECK_THROWS_AS(forward_offline(m, {}), Error);
}

TEST_CASE("passthrough model reproduces its input") {
    ModelConfig cfg = oracle::tiny_config();
    DenseModel m = make_passthrough_model(cfg);
    auto wav = oracle::random_signal(3, 300);
    auto out = forward_offline(m, wav);
    REQUIRE(out.size() == wav.size());
    CHECK(oracle::max_abs_diff(out, wav) <= 1e-5);
}

TEST_CASE("forward_offline length preserved for any input length") {
    DenseModel m = make_random_model(oracle::tiny_config(), 17);
    for (size_t len : {1u, 31u, 32u, 33u, 64u, 100u, 1024u}) {
        auto wav = oracle::random_signal(len, len);
        CHECK(forward_offline(m, wav).size() == len);
    }
}

TEST_CASE("forward_offline deterministic") {
    DenseModel m = make_random_model(oracle::tiny_config(), 23);
    auto wav = oracle::random_signal(9, 320);
    auto a = forward_offline(m, wav);
    auto b = forward_offline(m, wav);
    CHECK(a == b);
}

TEST_CASE("bottleneck advances one LSTM step per chunk") {
    struct Counter : detail::ForwardTaps {
        int steps = 0;
        void on_lstm_step(const float*, const float*) override { ++steps; }
    } taps;
    DenseModel m = make_random_model(oracle::tiny_config(), 29);
    auto wav = oracle::random_signal(5, 320);
    detail::float_forward_offline(m, wav, &taps);
    CHECK(taps.steps == 320 / 32);
}

TEST_CASE("causality: output depends only on chunk end plus look-ahead") {
    DenseModel m = make_random_model(oracle::tiny_config(), 31);
    auto wav = oracle::random_signal(13, 160); // 5 chunks
    auto base = forward_offline(m, wav);
    // perturb a sample in chunk 3 beyond chunk 1's horizon (32*2+16-1 = 79)
    auto mod = wav;
    mod[100] += 0.7f;
    auto pert = forward_offline(m, mod);
    for (int t = 0; t < 64; ++t) CHECK(pert[t] == base[t]); // chunks 0..1 bit-identical
    // and perturbing inside the horizon changes the chunk (generic model)
    auto mod2 = wav;
    mod2[79] += 0.7f; // last look-ahead sample of chunk 1
    auto pert2 = forward_offline(m, mod2);
    double diff = 0;
    for (int t = 32; t < 64; ++t) diff = std::max(diff, std::fabs((double)pert2[t] - base[t]));
    CHECK(diff > 0.0);
}
