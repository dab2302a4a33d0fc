#include "speechboost.h"

#include "speechboost/compress.hpp"
#include "speechboost/modelio.hpp"
#include "speechboost/streaming.hpp"

#include "json.hpp"

#include <chrono>
#include <cstring>
#include <memory>

using nlohmann::json;

struct sb_model {
    std::shared_ptr<sb::Model> m;
};

struct sb_stream {
    std::shared_ptr<sb::Model> keepalive;
    std::unique_ptr<sb::Stream> s;
};

struct sb_calib {
    sb::CalibFile c;
};

namespace {

thread_local std::string g_last_error;

sb_status set_error(sb::ErrCode code, const std::string& msg) {
    g_last_error = msg;
    switch (code) {
    case sb::ErrCode::Io: return SB_ERR_IO;
    case sb::ErrCode::Format: return SB_ERR_FORMAT;
    case sb::ErrCode::Shape: return SB_ERR_SHAPE;
    case sb::ErrCode::Infeasible: return SB_ERR_INFEASIBLE;
    case sb::ErrCode::InvalidArg: return SB_ERR_INVALID_ARG;
    case sb::ErrCode::Internal: return SB_ERR_INTERNAL;
    }
    return SB_ERR_INTERNAL;
}

template <class Fn>
sb_status guarded(Fn&& fn) {
    try {
        fn();
        return SB_OK;
    } catch (const sb::Error& e) {
        return set_error(e.code(), e.what());
    } catch (const json::exception& e) {
        return set_error(sb::ErrCode::InvalidArg, std::string("json: ") + e.what());
    } catch (const std::exception& e) {
        return set_error(sb::ErrCode::Internal, e.what());
    }
}

char* dup_string(const std::string& s) {
    char* p = (char*)std::malloc(s.size() + 1);
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

sb::ModelConfig config_from_json(const char* config_json) {
    sb::ModelConfig cfg;
    if (!config_json || !*config_json) return cfg;
    json j = json::parse(config_json);
    if (j.contains("sample_rate_hz")) cfg.sample_rate_hz = j["sample_rate_hz"];
    if (j.contains("chunk_len")) cfg.chunk_len = j["chunk_len"];
    if (j.contains("lookahead")) cfg.lookahead = j["lookahead"];
    if (j.contains("strides")) cfg.strides = j["strides"].get<std::vector<int>>();
    if (j.contains("channels")) cfg.channels = j["channels"].get<std::vector<int>>();
    if (j.contains("kernel_sizes")) cfg.kernel_sizes = j["kernel_sizes"].get<std::vector<int>>();
    if (j.contains("lstm_hidden")) cfg.lstm_hidden = j["lstm_hidden"];
    if (j.contains("lookahead_copies")) cfg.lookahead_copies = j["lookahead_copies"];
    if (j.contains("num_enc_layers") &&
        j["num_enc_layers"].get<int>() != (int)cfg.strides.size())
        sb::fail(sb::ErrCode::InvalidArg, "num_enc_layers does not match strides length");
    cfg.validate();
    return cfg;
}

json config_to_json(const sb::ModelConfig& c) {
    json j;
    j["sample_rate_hz"] = c.sample_rate_hz;
    j["chunk_len"] = c.chunk_len;
    j["lookahead"] = c.lookahead;
    j["num_enc_layers"] = c.num_enc_layers();
    j["strides"] = c.strides;
    j["channels"] = c.channels;
    j["kernel_sizes"] = c.kernel_sizes;
    j["lstm_hidden"] = c.lstm_hidden;
    j["lookahead_copies"] = c.lookahead_copies;
    return j;
}

json cost_to_json(const sb::CostReport& r) {
    json j;
    j["total_macs_per_s"] = r.total_macs_per_s;
    j["dense_total_macs_per_s"] = r.dense_total_macs_per_s;
    j["ratio"] = r.ratio();
    j["total_gmacs_per_s"] = r.total_macs_per_s / 1e9;
    j["payload_bytes"] = r.payload_bytes;
    j["layers"] = json::array();
    for (const auto& l : r.layers) {
        json lj;
        lj["name"] = l.name;
        lj["macs_per_s"] = l.macs_per_s;
        lj["dense_macs_per_s"] = l.dense_macs_per_s;
        lj["sparsity"] = l.sparsity;
        lj["payload_bytes"] = l.payload_bytes;
        j["layers"].push_back(lj);
    }
    return j;
}

json layer_shapes(const sb::Model& m) {
    json out = json::array();
    auto conv_row = [](const std::string& name, int out_ch, int in_ch, int kernel, int stride,
                       bool transposed, size_t nnz) {
        json j;
        j["name"] = name;
        j["kind"] = transposed ? "conv1d_transposed" : "conv1d";
        j["out_ch"] = out_ch;
        j["in_ch"] = in_ch;
        j["kernel"] = kernel;
        j["stride"] = stride;
        j["nnz_kernels"] = nnz;
        return j;
    };
    auto mat_row = [](const std::string& name, const char* kind, int rows, int cols, size_t nnz) {
        json j;
        j["name"] = name;
        j["kind"] = kind;
        j["rows"] = rows;
        j["cols"] = cols;
        j["nnz_blocks"] = nnz;
        return j;
    };
    std::visit(
        [&](const auto& model) {
            using T = std::decay_t<decltype(model)>;
            for (size_t i = 0; i < model.encoder.size(); ++i) {
                const auto& e = model.encoder[i];
                size_t nnz;
                if constexpr (std::is_same_v<T, sb::DenseModel>)
                    nnz = (size_t)e.out_ch * e.in_ch;
                else
                    nnz = e.idx.size();
                out.push_back(conv_row("enc" + std::to_string(i), e.out_ch, e.in_ch, e.kernel,
                                       e.stride, false, nnz));
            }
            const int hidden = model.lstm.hidden, input = model.lstm.input;
            if constexpr (std::is_same_v<T, sb::DenseModel>) {
                out.push_back(mat_row("lstm_ih", "lstm", 4 * hidden, input,
                                      (size_t)(4 * hidden / 16) * input));
                out.push_back(mat_row("lstm_hh", "lstm", 4 * hidden, hidden,
                                      (size_t)(4 * hidden / 16) * hidden));
                out.push_back(mat_row("proj", "linear", model.proj.out, model.proj.in,
                                      (size_t)(model.proj.out / 16) * model.proj.in));
            } else {
                out.push_back(mat_row("lstm_ih", "lstm", 4 * hidden, input,
                                      model.lstm.w_ih.blocks.size()));
                out.push_back(mat_row("lstm_hh", "lstm", 4 * hidden, hidden,
                                      model.lstm.w_hh.blocks.size()));
                out.push_back(mat_row("proj", "linear", model.proj.out, model.proj.in,
                                      model.proj.w.blocks.size()));
            }
            for (size_t i = 0; i < model.decoder.size(); ++i) {
                const auto& d = model.decoder[i];
                size_t nnz;
                if constexpr (std::is_same_v<T, sb::DenseModel>)
                    nnz = (size_t)d.out_ch * d.in_ch;
                else
                    nnz = d.idx.size();
                out.push_back(conv_row("dec" + std::to_string(i), d.out_ch, d.in_ch, d.kernel,
                                       d.stride, true, nnz));
            }
            size_t hn;
            if constexpr (std::is_same_v<T, sb::DenseModel>)
                hn = (size_t)model.head.in_ch;
            else
                hn = model.head.idx.size();
            out.push_back(conv_row("head", model.head.out_ch, model.head.in_ch, model.head.kernel,
                                   model.head.stride, false, hn));
        },
        m);
    return out;
}

sb::CostReport model_cost(const sb::Model& m) {
    if (std::holds_alternative<sb::DenseModel>(m)) return count_macs(std::get<sb::DenseModel>(m));
    if (std::holds_alternative<sb::SparseModel>(m)) return count_macs(std::get<sb::SparseModel>(m));
    // quantized models keep the sparse structure; count through the coordinates
    const sb::QuantModel& q = std::get<sb::QuantModel>(m);
    sb::SparseModel s;
    s.config = q.config;
    auto conv = [](const sb::QConvLayer& ql) {
        sb::SparseConvLayer sl;
        sl.out_ch = ql.out_ch;
        sl.in_ch = ql.in_ch;
        sl.kernel = ql.kernel;
        sl.stride = ql.stride;
        sl.transposed = ql.transposed;
        sl.relu = ql.relu;
        sl.idx = ql.idx;
        sl.w.assign(ql.idx.size() * ql.kernel, 0.f);
        sl.b.assign(ql.out_ch, 0.f);
        return sl;
    };
    auto blocks = [](const sb::QBlockMatrix& qb) {
        sb::BlockSparseMatrix b;
        b.rows = qb.rows;
        b.cols = qb.cols;
        b.blocks = qb.blocks;
        b.w.assign(qb.blocks.size() * 16, 0.f);
        return b;
    };
    for (const auto& e : q.encoder) s.encoder.push_back(conv(e));
    for (const auto& d : q.decoder) s.decoder.push_back(conv(d));
    s.head = conv(q.head);
    s.lstm.hidden = q.lstm.hidden;
    s.lstm.input = q.lstm.input;
    s.lstm.w_ih = blocks(q.lstm.w_ih);
    s.lstm.w_hh = blocks(q.lstm.w_hh);
    s.lstm.bias.assign((size_t)4 * q.lstm.hidden, 0.f);
    s.proj.out = q.proj.out;
    s.proj.in = q.proj.in;
    s.proj.w = blocks(q.proj.w);
    s.proj.b.assign(q.proj.out, 0.f);
    sb::CostReport r = count_macs(s);
    // quantized payloads store int16 weights
    for (auto& l : r.layers) l.payload_bytes /= 2;
    r.payload_bytes /= 2;
    return r;
}

} // namespace

extern "C" {

const char* sb_version(void) { return "1.0.0"; }

const char* sb_last_error(void) { return g_last_error.c_str(); }

void sb_string_free(char* s) { std::free(s); }
void sb_buffer_free(float* p) { std::free(p); }

sb_status sb_model_random(const char* config_json, uint64_t seed, sb_model** out) {
    return guarded([&] {
        if (!out) sb::fail(sb::ErrCode::InvalidArg, "null output handle");
        sb::ModelConfig cfg = config_from_json(config_json);
        auto model = std::make_shared<sb::Model>(sb::make_random_model(cfg, seed));
        *out = new sb_model{std::move(model)};
    });
}

sb_status sb_model_load(const char* path, sb_model** out) {
    return guarded([&] {
        if (!path || !out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        auto model = std::make_shared<sb::Model>(sb::model_load(path));
        *out = new sb_model{std::move(model)};
    });
}

sb_status sb_model_save(const sb_model* m, const char* path) {
    return guarded([&] {
        if (!m || !path) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        sb::model_save(*m->m, path);
    });
}

void sb_model_free(sb_model* m) { delete m; }

sb_status sb_model_info_json(const sb_model* m, char** json_out) {
    return guarded([&] {
        if (!m || !json_out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        json j;
        j["backend"] = sb::backend_name(sb::model_backend(*m->m));
        j["config"] = config_to_json(sb::model_config(*m->m));
        j["gate_order"] = "ifgo";
        j["algorithmic_latency_samples"] =
            sb::model_config(*m->m).chunk_len + sb::model_config(*m->m).lookahead;
        j["layers"] = layer_shapes(*m->m);
        j["cost"] = cost_to_json(model_cost(*m->m));
        j["file_bytes"] = sb::model_file_size(*m->m);
        *json_out = dup_string(j.dump(2));
    });
}

const char* sb_model_backend(const sb_model* m) {
    return m ? sb::backend_name(sb::model_backend(*m->m)) : "?";
}

int sb_model_chunk_len(const sb_model* m) { return m ? sb::model_config(*m->m).chunk_len : 0; }
int sb_model_lookahead(const sb_model* m) { return m ? sb::model_config(*m->m).lookahead : 0; }

sb_status sb_model_quantize(const sb_model* m, sb_model** out, char** report_json) {
    return guarded([&] {
        if (!m || !out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        sb::QuantReport rep;
        sb::QuantModel qm;
        if (std::holds_alternative<sb::DenseModel>(*m->m))
            qm = sb::quantize_model(std::get<sb::DenseModel>(*m->m), &rep);
        else if (std::holds_alternative<sb::SparseModel>(*m->m))
            qm = sb::quantize_model(std::get<sb::SparseModel>(*m->m), &rep);
        else
            sb::fail(sb::ErrCode::InvalidArg, "model is already quantized");
        if (report_json) {
            json j;
            j["total_saturated"] = rep.total_saturated;
            j["max_abs_weight_err"] = rep.max_abs_err;
            j["layers"] = json::array();
            for (const auto& l : rep.layers) {
                json lj;
                lj["name"] = l.name;
                lj["saturated"] = l.saturated;
                lj["max_abs_err"] = l.max_abs_err;
                j["layers"].push_back(lj);
            }
            *report_json = dup_string(j.dump(2));
        }
        *out = new sb_model{std::make_shared<sb::Model>(std::move(qm))};
    });
}

sb_status sb_denoise_offline(const sb_model* m, const float* in, size_t n, float* out) {
    return guarded([&] {
        if (!m || !in || !out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        std::vector<float> wav(in, in + n);
        std::vector<float> y = std::visit([&](const auto& model) { return forward_offline(model, wav); },
                                          *m->m);
        std::memcpy(out, y.data(), y.size() * sizeof(float));
    });
}

sb_status sb_stream_create(const sb_model* m, sb_stream** out) {
    return guarded([&] {
        if (!m || !out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        auto stream = std::visit([](const auto& model) { return std::make_unique<sb::Stream>(model); },
                                 *m->m);
        *out = new sb_stream{m->m, std::move(stream)};
    });
}

sb_status sb_stream_push(sb_stream* s, const float* chunk, size_t chunk_len, float* out,
                         int* has_output) {
    return guarded([&] {
        if (!s || !chunk || !out || !has_output) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        *has_output = s->s->push(std::span<const float>(chunk, chunk_len),
                                 std::span<float>(out, (size_t)s->s->chunk_len()))
                          ? 1
                          : 0;
    });
}

sb_status sb_stream_flush(sb_stream* s, float* out, size_t* out_len) {
    return guarded([&] {
        if (!s || !out || !out_len) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        *out_len = s->s->flush(std::span<float>(out, (size_t)s->s->chunk_len()));
    });
}

sb_status sb_stream_reset(sb_stream* s) {
    return guarded([&] {
        if (!s) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        s->s->reset();
    });
}

uint64_t sb_stream_consumed(const sb_stream* s) { return s ? s->s->consumed() : 0; }
uint64_t sb_stream_emitted(const sb_stream* s) { return s ? s->s->emitted() : 0; }

void sb_stream_free(sb_stream* s) { delete s; }

sb_status sb_wav_read(const char* path, float** samples, size_t* n) {
    return guarded([&] {
        if (!path || !samples || !n) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        sb::WavClip clip = sb::wav_read(path);
        float* buf = (float*)std::malloc(clip.samples.size() * sizeof(float));
        std::memcpy(buf, clip.samples.data(), clip.samples.size() * sizeof(float));
        *samples = buf;
        *n = clip.samples.size();
    });
}

sb_status sb_wav_write(const char* path, const float* samples, size_t n) {
    return guarded([&] {
        if (!path || (!samples && n)) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        sb::wav_write(path, std::vector<float>(samples, samples + n));
    });
}

sb_status sb_calibrate(const sb_model* m, const char* const* wav_paths, size_t n_paths,
                       int max_cols, sb_calib** out) {
    return guarded([&] {
        if (!m || !wav_paths || !out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        if (n_paths == 0) sb::fail(sb::ErrCode::InvalidArg, "calibrate needs at least one wav");
        std::vector<std::vector<float>> clips;
        for (size_t i = 0; i < n_paths; ++i) clips.push_back(sb::wav_read(wav_paths[i]).samples);
        auto calib = std::make_unique<sb_calib>();
        calib->c.audio = sb::split_calib_clips(std::move(clips), max_cols > 0 ? max_cols : 16000);
        if (std::holds_alternative<sb::DenseModel>(*m->m))
            calib->c.set = sb::capture_calibration(std::get<sb::DenseModel>(*m->m),
                                                   calib->c.audio.capture, calib->c.audio.max_cols);
        else if (std::holds_alternative<sb::SparseModel>(*m->m))
            calib->c.set = sb::capture_calibration(std::get<sb::SparseModel>(*m->m),
                                                   calib->c.audio.capture, calib->c.audio.max_cols);
        else
            sb::fail(sb::ErrCode::InvalidArg, "calibrate expects a float (dense or sparse) model");
        *out = calib.release();
    });
}

sb_status sb_calib_save(const sb_calib* c, const char* path) {
    return guarded([&] {
        if (!c || !path) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        sb::calib_save(c->c, path);
    });
}

sb_status sb_calib_load(const char* path, sb_calib** out) {
    return guarded([&] {
        if (!path || !out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        auto calib = std::make_unique<sb_calib>();
        calib->c = sb::calib_load(path);
        *out = calib.release();
    });
}

void sb_calib_free(sb_calib* c) { delete c; }

sb_status sb_prune(const sb_model* m, const sb_calib* calib, const char* options_json,
                   sb_model** out, char** history_json) {
    return guarded([&] {
        if (!m || !out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        if (!std::holds_alternative<sb::DenseModel>(*m->m))
            sb::fail(sb::ErrCode::InvalidArg, "prune expects a dense model");
        sb::PruneOptions opts;
        if (options_json && *options_json) {
            json j = json::parse(options_json);
            if (j.contains("method")) opts.method = j["method"];
            if (j.contains("target_ratio")) opts.target_ratio = j["target_ratio"];
            if (j.contains("one_shot")) opts.one_shot = j["one_shot"];
            if (j.contains("per_layer_uniform")) opts.per_layer_uniform = j["per_layer_uniform"];
            if (j.contains("seed")) opts.seed = j["seed"].get<uint64_t>();
            if (j.contains("threads")) {
                opts.obc.threads = j["threads"];
                opts.spdy.threads = j["threads"];
            }
            if (j.contains("trace_path")) opts.spdy.trace_path = j["trace_path"];
        }
        sb::PruneResult r =
            sb::prune(std::get<sb::DenseModel>(*m->m), calib ? &calib->c.audio : nullptr, opts);
        if (history_json) {
            json j;
            j["method"] = opts.method;
            j["target_ratio"] = opts.target_ratio;
            j["seed"] = opts.seed;
            j["iterations"] = json::array();
            for (const auto& h : r.history) {
                json hj;
                hj["iteration"] = h.iteration;
                hj["budget_macs"] = h.budget_macs;
                hj["achieved_macs"] = h.achieved_macs;
                hj["calib_loss"] = h.calib_loss;
                j["iterations"].push_back(hj);
            }
            j["final_cost"] = cost_to_json(r.cost);
            *history_json = dup_string(j.dump(2));
        }
        *out = new sb_model{std::make_shared<sb::Model>(std::move(r.model))};
    });
}

sb_status sb_bench_json(const sb_model* m, double seconds, uint64_t seed, char** json_out) {
    return guarded([&] {
        if (!m || !json_out) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        if (seconds <= 0) seconds = 10.0;
        const sb::ModelConfig& cfg = sb::model_config(*m->m);
        const int chunk = cfg.chunk_len;
        const size_t n_chunks = (size_t)(seconds * cfg.sample_rate_hz / chunk);

        auto stream = std::visit([](const auto& model) { return std::make_unique<sb::Stream>(model); },
                                 *m->m);
        sb::Rng rng(seed ? seed : 1);
        std::vector<float> in((size_t)chunk), out((size_t)chunk);
        std::vector<double> per_chunk_us;
        per_chunk_us.reserve(n_chunks);
        const auto t0 = std::chrono::steady_clock::now();
        for (size_t c = 0; c < n_chunks; ++c) {
            for (auto& v : in) v = (float)rng.uniform(-0.3, 0.3);
            const auto a = std::chrono::steady_clock::now();
            stream->push(in, out);
            const auto b = std::chrono::steady_clock::now();
            per_chunk_us.push_back(std::chrono::duration<double, std::micro>(b - a).count());
        }
        const auto t1 = std::chrono::steady_clock::now();
        const double wall_s = std::chrono::duration<double>(t1 - t0).count();
        std::sort(per_chunk_us.begin(), per_chunk_us.end());
        auto pct = [&](double p) {
            if (per_chunk_us.empty()) return 0.0;
            size_t i = (size_t)(p * (per_chunk_us.size() - 1));
            return per_chunk_us[i];
        };
        json j;
        j["cost"] = cost_to_json(model_cost(*m->m));
        j["audio_seconds"] = (double)(n_chunks * chunk) / cfg.sample_rate_hz;
        j["wall_seconds"] = wall_s;
        j["real_time_factor"] = wall_s > 0 ? ((double)(n_chunks * chunk) / cfg.sample_rate_hz) / wall_s
                                           : 0.0;
        j["chunks"] = n_chunks;
        j["per_chunk_us"] = {{"p50", pct(0.50)}, {"p90", pct(0.90)}, {"p99", pct(0.99)},
                             {"max", per_chunk_us.empty() ? 0.0 : per_chunk_us.back()}};
        j["algorithmic_latency_samples"] = cfg.chunk_len + cfg.lookahead;
        j["algorithmic_latency_ms"] = 1000.0 * (cfg.chunk_len + cfg.lookahead) / cfg.sample_rate_hz;
        *json_out = dup_string(j.dump(2));
    });
}

sb_status sb_metric_si_sdr(const float* reference, const float* estimate, size_t n, double* out_db) {
    return guarded([&] {
        if (!reference || !estimate || !out_db) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        *out_db = sb::si_sdr(std::vector<float>(reference, reference + n),
                             std::vector<float>(estimate, estimate + n));
    });
}

sb_status sb_metric_lsd(const float* reference, const float* estimate, size_t n, double* out_db) {
    return guarded([&] {
        if (!reference || !estimate || !out_db) sb::fail(sb::ErrCode::InvalidArg, "null argument");
        *out_db = sb::log_spectral_distance(std::vector<float>(reference, reference + n),
                                            std::vector<float>(estimate, estimate + n));
    });
}

} // extern "C"
