// speechboost command line: model creation, inspection, denoising, pruning,
// quantization, benchmarking and evaluation. Talks to the engine exclusively
// through the shared library's C interface.

#include "speechboost.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

const char* code_name(sb_status s) {
    switch (s) {
    case SB_OK: return "ok";
    case SB_ERR_IO: return "io";
    case SB_ERR_FORMAT: return "format";
    case SB_ERR_SHAPE: return "shape";
    case SB_ERR_INFEASIBLE: return "infeasible-budget";
    case SB_ERR_INVALID_ARG: return "invalid-argument";
    case SB_ERR_INTERNAL: return "internal";
    }
    return "internal";
}

int exit_code(sb_status s) {
    switch (s) {
    case SB_OK: return 0;
    case SB_ERR_IO: return 2;
    case SB_ERR_FORMAT: return 3;
    case SB_ERR_INFEASIBLE: return 4;
    case SB_ERR_SHAPE: return 5;
    case SB_ERR_INVALID_ARG: return 6;
    case SB_ERR_INTERNAL: return 7;
    }
    return 7;
}

[[noreturn]] void die(sb_status s, const std::string& context) {
    json err;
    err["error"]["code"] = code_name(s);
    err["error"]["message"] = std::string(sb_last_error());
    err["error"]["context"] = context;
    std::cerr << err.dump() << "\n";
    std::exit(exit_code(s));
}

void check(sb_status s, const std::string& context) {
    if (s != SB_OK) die(s, context);
}

struct ModelHandle {
    sb_model* m = nullptr;
    ~ModelHandle() { sb_model_free(m); }
};

struct CalibHandle {
    sb_calib* c = nullptr;
    ~CalibHandle() { sb_calib_free(c); }
};

struct WavBuffer {
    float* samples = nullptr;
    size_t n = 0;
    ~WavBuffer() { sb_buffer_free(samples); }
};

std::string take_string(char* s) {
    std::string out = s ? s : "";
    sb_string_free(s);
    return out;
}

void load_model(const std::string& path, ModelHandle& h) {
    check(sb_model_load(path.c_str(), &h.m), "loading model '" + path + "'");
}

std::string slurp_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) {
        json err;
        err["error"]["code"] = "io";
        err["error"]["message"] = "cannot open config file '" + path + "'";
        std::cerr << err.dump() << "\n";
        std::exit(2);
    }
    std::string s;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) s.append(buf, n);
    std::fclose(f);
    return s;
}

int threads_or_env(int threads_flag) {
    if (threads_flag > 0) return threads_flag;
    if (const char* env = std::getenv("SPEECHBOOST_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

std::vector<float> denoise_streaming(sb_model* model, const std::vector<float>& in) {
    sb_stream* stream = nullptr;
    check(sb_stream_create(model, &stream), "creating stream");
    const int chunk = sb_model_chunk_len(model);
    std::vector<float> out;
    out.reserve(in.size() + chunk);
    std::vector<float> buf((size_t)chunk), cbuf((size_t)chunk);
    const size_t n_chunks = (in.size() + chunk - 1) / chunk;
    for (size_t c = 0; c < n_chunks; ++c) {
        const size_t off = c * chunk;
        const size_t have = std::min((size_t)chunk, in.size() - off);
        std::copy(in.begin() + off, in.begin() + off + have, cbuf.begin());
        std::fill(cbuf.begin() + have, cbuf.end(), 0.f);
        int has = 0;
        check(sb_stream_push(stream, cbuf.data(), (size_t)chunk, buf.data(), &has), "stream push");
        if (has) out.insert(out.end(), buf.begin(), buf.end());
    }
    size_t tail = 0;
    check(sb_stream_flush(stream, buf.data(), &tail), "stream flush");
    out.insert(out.end(), buf.begin(), buf.begin() + tail);
    sb_stream_free(stream);
    out.resize(in.size());
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"speechboost: streaming low-latency speech enhancement and model compression"};
    app.require_subcommand(1);

    // init-random
    auto* init = app.add_subcommand("init-random", "create a seeded random dense model");
    std::string init_config, init_out;
    uint64_t init_seed = 1;
    init->add_option("--config", init_config, "architecture config JSON file");
    init->add_option("--seed", init_seed, "RNG seed");
    init->add_option("--out", init_out, "output model path")->required();

    // info
    auto* info = app.add_subcommand("info", "print model header, shapes, sparsity and cost");
    std::string info_model;
    info->add_option("model", info_model, "model file")->required();

    // denoise
    auto* den = app.add_subcommand("denoise", "enhance a wav file");
    std::string den_model, den_in, den_out;
    bool den_streaming = false, den_quantized = false;
    den->add_option("--model", den_model)->required();
    den->add_option("--in", den_in, "noisy input wav")->required();
    den->add_option("--out", den_out, "enhanced output wav")->required();
    den->add_flag("--streaming", den_streaming, "chunked low-latency path");
    den->add_flag("--quantized", den_quantized, "run the fixed-point path");

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "capture per-layer activations for pruning");
    std::string cal_model, cal_wavs, cal_out;
    int cal_max_cols = 16000;
    cal->add_option("--model", cal_model)->required();
    cal->add_option("--wavs", cal_wavs, "directory of 16 kHz mono wav files")->required();
    cal->add_option("--out", cal_out, "calibration output file")->required();
    cal->add_option("--max-cols", cal_max_cols, "max activation columns per layer");

    // prune
    auto* pr = app.add_subcommand("prune", "compress a dense model");
    std::string pr_method = "spdy-obc", pr_model, pr_calib, pr_out;
    double pr_target = 0.105;
    uint64_t pr_seed = 1;
    bool pr_one_shot = false, pr_plu = false;
    int pr_threads = 0;
    pr->add_option("--method", pr_method, "magnitude | spdy-obc");
    pr->add_option("--target-ratio", pr_target, "kept fraction of dense MACs");
    pr->add_option("--model", pr_model)->required();
    pr->add_option("--calib", pr_calib, "calibration file (required for spdy-obc)");
    pr->add_option("--out", pr_out)->required();
    pr->add_option("--seed", pr_seed);
    pr->add_flag("--one-shot", pr_one_shot, "single search at the target budget");
    pr->add_flag("--per-layer-uniform", pr_plu, "uniform per-layer magnitude variant");
    pr->add_option("--threads", pr_threads, "worker threads (default SPEECHBOOST_THREADS or 1)");

    // quantize
    auto* qz = app.add_subcommand("quantize", "convert to the fixed-point representation");
    std::string qz_model, qz_out;
    qz->add_option("--model", qz_model)->required();
    qz->add_option("--out", qz_out)->required();

    // bench
    auto* be = app.add_subcommand("bench", "measure MAC/s and streaming wall-clock");
    std::string be_model;
    double be_seconds = 10.0;
    uint64_t be_seed = 1;
    be->add_option("--model", be_model)->required();
    be->add_option("--seconds", be_seconds, "synthetic audio duration");
    be->add_option("--seed", be_seed);

    // eval
    auto* ev = app.add_subcommand("eval", "SI-SDR and log-spectral distance between two wavs");
    std::string ev_clean, ev_test;
    ev->add_option("--clean", ev_clean, "reference wav")->required();
    ev->add_option("--test", ev_test, "wav under test")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) {
            json err;
            err["error"]["code"] = "usage";
            err["error"]["message"] = e.what();
            std::cerr << err.dump() << "\n";
            return 64;
        }
        return app.exit(e); // --help and friends
    }

    if (init->parsed()) {
        std::string cfg = init_config.empty() ? "{}" : slurp_file(init_config);
        ModelHandle m;
        check(sb_model_random(cfg.c_str(), init_seed, &m.m), "building random model");
        check(sb_model_save(m.m, init_out.c_str()), "saving model");
        char* j = nullptr;
        check(sb_model_info_json(m.m, &j), "model info");
        std::cout << take_string(j) << "\n";
        return 0;
    }

    if (info->parsed()) {
        ModelHandle m;
        load_model(info_model, m);
        char* j = nullptr;
        check(sb_model_info_json(m.m, &j), "model info");
        std::cout << take_string(j) << "\n";
        return 0;
    }

    if (den->parsed()) {
        ModelHandle m;
        load_model(den_model, m);
        if (den_quantized && std::string(sb_model_backend(m.m)) != "quant") {
            ModelHandle q;
            check(sb_model_quantize(m.m, &q.m, nullptr), "quantizing model");
            std::swap(m.m, q.m);
        }
        WavBuffer wav;
        check(sb_wav_read(den_in.c_str(), &wav.samples, &wav.n), "reading input wav");
        std::vector<float> in(wav.samples, wav.samples + wav.n);
        std::vector<float> out;
        if (den_streaming) {
            out = denoise_streaming(m.m, in);
        } else {
            out.resize(in.size());
            check(sb_denoise_offline(m.m, in.data(), in.size(), out.data()), "offline forward");
        }
        check(sb_wav_write(den_out.c_str(), out.data(), out.size()), "writing output wav");
        const int latency = sb_model_chunk_len(m.m) + sb_model_lookahead(m.m);
        json j;
        j["algorithmic_latency_samples"] = latency;
        j["algorithmic_latency_ms"] = latency / 16.0;
        j["samples"] = in.size();
        j["streaming"] = den_streaming;
        j["backend"] = sb_model_backend(m.m);
        j["out"] = den_out;
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (cal->parsed()) {
        ModelHandle m;
        load_model(cal_model, m);
        std::vector<std::string> paths;
        std::error_code ec;
        for (const auto& entry : std::filesystem::directory_iterator(cal_wavs, ec)) {
            if (entry.path().extension() == ".wav") paths.push_back(entry.path().string());
        }
        if (ec || paths.empty()) {
            json err;
            err["error"]["code"] = "io";
            err["error"]["message"] = "no .wav files found in '" + cal_wavs + "'";
            std::cerr << err.dump() << "\n";
            return 2;
        }
        std::sort(paths.begin(), paths.end());
        std::vector<const char*> cpaths;
        for (const auto& p : paths) cpaths.push_back(p.c_str());
        CalibHandle c;
        check(sb_calibrate(m.m, cpaths.data(), cpaths.size(), cal_max_cols, &c.c), "calibrating");
        check(sb_calib_save(c.c, cal_out.c_str()), "saving calibration");
        json j;
        j["clips"] = paths.size();
        j["max_cols"] = cal_max_cols;
        j["out"] = cal_out;
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (pr->parsed()) {
        ModelHandle m;
        load_model(pr_model, m);
        CalibHandle c;
        if (!pr_calib.empty()) check(sb_calib_load(pr_calib.c_str(), &c.c), "loading calibration");
        json opts;
        opts["method"] = pr_method;
        opts["target_ratio"] = pr_target;
        opts["seed"] = pr_seed;
        opts["one_shot"] = pr_one_shot;
        opts["per_layer_uniform"] = pr_plu;
        opts["threads"] = threads_or_env(pr_threads);
        ModelHandle out;
        char* hist = nullptr;
        check(sb_prune(m.m, c.c, opts.dump().c_str(), &out.m, &hist), "pruning");
        check(sb_model_save(out.m, pr_out.c_str()), "saving pruned model");
        std::cout << take_string(hist) << "\n";
        return 0;
    }

    if (qz->parsed()) {
        ModelHandle m;
        load_model(qz_model, m);
        ModelHandle q;
        char* rep = nullptr;
        check(sb_model_quantize(m.m, &q.m, &rep), "quantizing");
        check(sb_model_save(q.m, qz_out.c_str()), "saving quantized model");
        std::cout << take_string(rep) << "\n";
        return 0;
    }

    if (be->parsed()) {
        ModelHandle m;
        load_model(be_model, m);
        char* j = nullptr;
        check(sb_bench_json(m.m, be_seconds, be_seed, &j), "benchmarking");
        std::cout << take_string(j) << "\n";
        return 0;
    }

    if (ev->parsed()) {
        WavBuffer clean, test;
        check(sb_wav_read(ev_clean.c_str(), &clean.samples, &clean.n), "reading clean wav");
        check(sb_wav_read(ev_test.c_str(), &test.samples, &test.n), "reading test wav");
        if (clean.n != test.n) {
            json err;
            err["error"]["code"] = "shape";
            err["error"]["message"] = "clean and test wavs differ in length";
            std::cerr << err.dump() << "\n";
            return 5;
        }
        double sdr = 0, lsd = 0;
        check(sb_metric_si_sdr(clean.samples, test.samples, clean.n, &sdr), "si-sdr");
        check(sb_metric_lsd(clean.samples, test.samples, clean.n, &lsd), "lsd");
        json j;
        j["si_sdr_db"] = sdr;
        j["lsd_db"] = lsd;
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    return 0;
}
