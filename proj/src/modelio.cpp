#include "speechboost/modelio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace sb {

uint32_t crc32_ieee(const uint8_t* data, size_t n) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

namespace {

// little-endian byte buffer helpers

struct Writer {
    std::vector<uint8_t> buf;

    void bytes(const void* p, size_t n) {
        const uint8_t* b = (const uint8_t*)p;
        buf.insert(buf.end(), b, b + n);
    }
    void u8(uint8_t v) { buf.push_back(v); }
    void u16(uint16_t v) { bytes(&v, 2); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void i32(int32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void f32(float v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32((uint32_t)s.size());
        bytes(s.data(), s.size());
    }
    void f32v(const std::vector<float>& v) { bytes(v.data(), v.size() * 4); }
    void i16v(const std::vector<int16_t>& v) { bytes(v.data(), v.size() * 2); }
    void i32v(const std::vector<int32_t>& v) { bytes(v.data(), v.size() * 4); }
    void pairs(const std::vector<std::pair<uint32_t, uint32_t>>& v) {
        for (const auto& p : v) {
            u32(p.first);
            u32(p.second);
        }
    }
};

struct Reader {
    const uint8_t* p;
    size_t n;
    size_t pos = 0;

    Reader(const uint8_t* data, size_t len) : p(data), n(len) {}

    void need(size_t k) const {
        if (pos + k > n) fail(ErrCode::Format, "file truncated inside a record");
    }
    void bytes(void* dst, size_t k) {
        need(k);
        std::memcpy(dst, p + pos, k);
        pos += k;
    }
    uint8_t u8() {
        need(1);
        return p[pos++];
    }
    uint16_t u16() {
        uint16_t v;
        bytes(&v, 2);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, 4);
        return v;
    }
    int32_t i32() {
        int32_t v;
        bytes(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        bytes(&v, 8);
        return v;
    }
    float f32() {
        float v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    std::string str() {
        uint32_t len = u32();
        if (len > 1u << 20) fail(ErrCode::Format, "string record too large");
        std::string s(len, '\0');
        bytes(s.data(), len);
        return s;
    }
    std::vector<float> f32v(size_t count) {
        std::vector<float> v(count);
        bytes(v.data(), count * 4);
        return v;
    }
    std::vector<int16_t> i16v(size_t count) {
        std::vector<int16_t> v(count);
        bytes(v.data(), count * 2);
        return v;
    }
    std::vector<int32_t> i32v(size_t count) {
        std::vector<int32_t> v(count);
        bytes(v.data(), count * 4);
        return v;
    }
    std::vector<std::pair<uint32_t, uint32_t>> pairs(size_t count) {
        std::vector<std::pair<uint32_t, uint32_t>> v(count);
        for (auto& q : v) {
            q.first = u32();
            q.second = u32();
        }
        return v;
    }
};

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrCode::Io, "cannot open '" + path + "' for reading");
    f.seekg(0, std::ios::end);
    std::vector<uint8_t> buf((size_t)f.tellg());
    f.seekg(0);
    f.read((char*)buf.data(), (std::streamsize)buf.size());
    if (!f) fail(ErrCode::Io, "read failed on '" + path + "'");
    return buf;
}

void write_file(const std::string& path, const std::vector<uint8_t>& buf) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrCode::Io, "cannot open '" + path + "' for writing");
    f.write((const char*)buf.data(), (std::streamsize)buf.size());
    if (!f) fail(ErrCode::Io, "write failed on '" + path + "'");
}

constexpr uint32_t kFormatVersion = 1;

// frame payload into magic/version/size/payload/crc
std::vector<uint8_t> frame(const char magic[4], const std::vector<uint8_t>& payload) {
    Writer w;
    w.bytes(magic, 4);
    w.u32(kFormatVersion);
    w.u32((uint32_t)payload.size());
    w.bytes(payload.data(), payload.size());
    w.u32(crc32_ieee(payload.data(), payload.size()));
    return std::move(w.buf);
}

std::vector<uint8_t> unframe(const std::vector<uint8_t>& buf, const char magic[4],
                             const std::string& what) {
    if (buf.size() < 16 || std::memcmp(buf.data(), magic, 4) != 0)
        fail(ErrCode::Format, what + ": bad magic");
    Reader r(buf.data() + 4, buf.size() - 4);
    const uint32_t version = r.u32();
    if (version != kFormatVersion)
        fail(ErrCode::Format, what + ": unsupported format version " + std::to_string(version));
    const uint32_t size = r.u32();
    if (buf.size() != 4 + 4 + 4 + (size_t)size + 4) fail(ErrCode::Format, what + ": truncated file");
    const uint8_t* payload = buf.data() + 12;
    uint32_t crc;
    std::memcpy(&crc, buf.data() + 12 + size, 4);
    if (crc32_ieee(payload, size) != crc) fail(ErrCode::Format, what + ": CRC mismatch");
    return std::vector<uint8_t>(payload, payload + size);
}

// ---- model payload ----

void put_config(Writer& w, const ModelConfig& c) {
    w.u32((uint32_t)c.sample_rate_hz);
    w.u32((uint32_t)c.chunk_len);
    w.u32((uint32_t)c.lookahead);
    w.u32((uint32_t)c.num_enc_layers());
    w.u32((uint32_t)c.lstm_hidden);
    w.u32((uint32_t)c.lookahead_copies);
    for (int i = 0; i < c.num_enc_layers(); ++i) {
        w.u32((uint32_t)c.strides[i]);
        w.u32((uint32_t)c.channels[i]);
        w.u32((uint32_t)c.kernel_sizes[i]);
    }
}

ModelConfig get_config(Reader& r) {
    ModelConfig c;
    c.sample_rate_hz = (int)r.u32();
    c.chunk_len = (int)r.u32();
    c.lookahead = (int)r.u32();
    const int L = (int)r.u32();
    if (L <= 0 || L > 16) fail(ErrCode::Format, "model file: implausible layer count");
    c.lstm_hidden = (int)r.u32();
    c.lookahead_copies = (int)r.u32();
    c.strides.resize(L);
    c.channels.resize(L);
    c.kernel_sizes.resize(L);
    for (int i = 0; i < L; ++i) {
        c.strides[i] = (int)r.u32();
        c.channels[i] = (int)r.u32();
        c.kernel_sizes[i] = (int)r.u32();
    }
    c.validate();
    return c;
}

void put_conv_dims(Writer& w, int out_ch, int in_ch, int kernel, int stride, bool transposed,
                   bool relu) {
    w.u32((uint32_t)out_ch);
    w.u32((uint32_t)in_ch);
    w.u32((uint32_t)kernel);
    w.u32((uint32_t)stride);
    w.u8(transposed ? 1 : 0);
    w.u8(relu ? 1 : 0);
}

void put_conv(Writer& w, const Conv1dLayer& l) {
    put_conv_dims(w, l.out_ch, l.in_ch, l.kernel, l.stride, l.transposed, l.relu);
    w.f32v(l.w);
    w.f32v(l.b);
}

Conv1dLayer get_conv(Reader& r) {
    Conv1dLayer l;
    l.out_ch = (int)r.u32();
    l.in_ch = (int)r.u32();
    l.kernel = (int)r.u32();
    l.stride = (int)r.u32();
    l.transposed = r.u8() != 0;
    l.relu = r.u8() != 0;
    l.w = r.f32v(l.weight_count());
    l.b = r.f32v((size_t)l.out_ch);
    return l;
}

void put_sparse_conv(Writer& w, const SparseConvLayer& l) {
    put_conv_dims(w, l.out_ch, l.in_ch, l.kernel, l.stride, l.transposed, l.relu);
    w.u32((uint32_t)l.idx.size());
    w.pairs(l.idx);
    w.f32v(l.w);
    w.f32v(l.b);
}

void check_kernel_coords(const std::vector<std::pair<uint32_t, uint32_t>>& idx, int out_ch,
                         int in_ch) {
    for (size_t n = 0; n < idx.size(); ++n) {
        if ((int)idx[n].first >= out_ch || (int)idx[n].second >= in_ch)
            fail(ErrCode::Format, "sparse conv: kernel coordinate out of range");
        if (n && idx[n] <= idx[n - 1])
            fail(ErrCode::Format, "sparse conv: kernel coordinates not strictly ascending");
    }
}

void check_block_coords(const std::vector<std::pair<uint32_t, uint32_t>>& blocks, int rows,
                        int cols) {
    for (size_t n = 0; n < blocks.size(); ++n) {
        if ((int)blocks[n].first >= rows / 16 || (int)blocks[n].second >= cols)
            fail(ErrCode::Format, "block matrix: block coordinate out of range");
        if (n && blocks[n] <= blocks[n - 1])
            fail(ErrCode::Format, "block matrix: block coordinates not strictly ascending");
    }
}

SparseConvLayer get_sparse_conv(Reader& r) {
    SparseConvLayer l;
    l.out_ch = (int)r.u32();
    l.in_ch = (int)r.u32();
    l.kernel = (int)r.u32();
    l.stride = (int)r.u32();
    l.transposed = r.u8() != 0;
    l.relu = r.u8() != 0;
    const uint32_t nnz = r.u32();
    if (nnz > (uint64_t)l.out_ch * l.in_ch) fail(ErrCode::Format, "sparse conv: nnz out of range");
    l.idx = r.pairs(nnz);
    check_kernel_coords(l.idx, l.out_ch, l.in_ch);
    l.w = r.f32v((size_t)nnz * l.kernel);
    l.b = r.f32v((size_t)l.out_ch);
    return l;
}

void put_qconv(Writer& w, const QConvLayer& l) {
    put_conv_dims(w, l.out_ch, l.in_ch, l.kernel, l.stride, l.transposed, l.relu);
    w.u8(l.dense_layout ? 1 : 0);
    w.u8((uint8_t)kFmtWeight.frac_bits);
    w.u8((uint8_t)kFmtConvBias.frac_bits);
    w.u32((uint32_t)l.idx.size());
    if (!l.dense_layout) w.pairs(l.idx);
    w.i16v(l.w);
    w.i32v(l.b);
}

QConvLayer get_qconv(Reader& r) {
    QConvLayer l;
    l.out_ch = (int)r.u32();
    l.in_ch = (int)r.u32();
    l.kernel = (int)r.u32();
    l.stride = (int)r.u32();
    l.transposed = r.u8() != 0;
    l.relu = r.u8() != 0;
    l.dense_layout = r.u8() != 0;
    if (r.u8() != kFmtWeight.frac_bits || r.u8() != kFmtConvBias.frac_bits)
        fail(ErrCode::Format, "quant conv: unexpected Q formats");
    const uint32_t nnz = r.u32();
    if (l.dense_layout) {
        if (nnz != (uint64_t)l.out_ch * l.in_ch) fail(ErrCode::Format, "quant conv: bad dense nnz");
        l.idx.reserve(nnz);
        for (int j = 0; j < l.out_ch; ++j)
            for (int i = 0; i < l.in_ch; ++i) l.idx.emplace_back(j, i);
    } else {
        l.idx = r.pairs(nnz);
        check_kernel_coords(l.idx, l.out_ch, l.in_ch);
    }
    l.w = r.i16v((size_t)nnz * l.kernel);
    l.b = r.i32v((size_t)l.out_ch);
    return l;
}

void put_blocks(Writer& w, const BlockSparseMatrix& m) {
    w.u32((uint32_t)m.rows);
    w.u32((uint32_t)m.cols);
    w.u32((uint32_t)m.blocks.size());
    w.pairs(m.blocks);
    w.f32v(m.w);
}

BlockSparseMatrix get_blocks(Reader& r) {
    BlockSparseMatrix m;
    m.rows = (int)r.u32();
    m.cols = (int)r.u32();
    const uint32_t nb = r.u32();
    if (m.rows % 16 != 0 || nb > (uint64_t)(m.rows / 16) * m.cols)
        fail(ErrCode::Format, "block matrix: bad shape");
    m.blocks = r.pairs(nb);
    check_block_coords(m.blocks, m.rows, m.cols);
    m.w = r.f32v((size_t)nb * 16);
    return m;
}

void put_qblocks(Writer& w, const QBlockMatrix& m) {
    w.u32((uint32_t)m.rows);
    w.u32((uint32_t)m.cols);
    w.u8(m.dense_layout ? 1 : 0);
    w.u32((uint32_t)m.blocks.size());
    if (!m.dense_layout) w.pairs(m.blocks);
    w.i16v(m.w);
}

QBlockMatrix get_qblocks(Reader& r) {
    QBlockMatrix m;
    m.rows = (int)r.u32();
    m.cols = (int)r.u32();
    m.dense_layout = r.u8() != 0;
    const uint32_t nb = r.u32();
    if (m.rows % 16 != 0 || nb > (uint64_t)(m.rows / 16) * m.cols)
        fail(ErrCode::Format, "quant block matrix: bad shape");
    if (m.dense_layout) {
        m.blocks.reserve(nb);
        for (int g = 0; g < m.rows / 16; ++g)
            for (int col = 0; col < m.cols; ++col) m.blocks.emplace_back(g, col);
        if (m.blocks.size() != nb) fail(ErrCode::Format, "quant block matrix: bad dense count");
    } else {
        m.blocks = r.pairs(nb);
        check_block_coords(m.blocks, m.rows, m.cols);
    }
    m.w = r.i16v((size_t)nb * 16);
    return m;
}

// shape consistency for loaded sparse/quant models (field-compatible types)
template <class M>
void validate_structured(const M& m) {
    const ModelConfig& cfg = m.config;
    const int L = cfg.num_enc_layers();
    auto bad = [](const std::string& what) {
        fail(ErrCode::Format, "model file: " + what + " inconsistent with config");
    };
    for (int i = 0; i < L; ++i) {
        const auto& e = m.encoder[i];
        const int want_in = i == 0 ? cfg.input_channels() : cfg.channels[i - 1];
        if (e.transposed || e.in_ch != want_in || e.out_ch != cfg.channels[i] ||
            e.stride != cfg.strides[i] || e.kernel != cfg.kernel_sizes[i])
            bad("encoder layer " + std::to_string(i));
        if (e.w.size() != e.idx.size() * e.kernel || (int)e.b.size() != e.out_ch)
            bad("encoder payload " + std::to_string(i));
    }
    for (int i = 0; i < L; ++i) {
        const auto& d = m.decoder[i];
        const int mirror = L - 1 - i;
        const int want_out = mirror == 0 ? cfg.channels[0] : cfg.channels[mirror - 1];
        if (!d.transposed || d.in_ch != 2 * cfg.channels[mirror] || d.out_ch != want_out ||
            d.stride != cfg.strides[mirror] || d.kernel != cfg.kernel_sizes[mirror])
            bad("decoder layer " + std::to_string(i));
        if (d.w.size() != d.idx.size() * d.kernel || (int)d.b.size() != d.out_ch)
            bad("decoder payload " + std::to_string(i));
    }
    if (m.head.transposed || m.head.in_ch != cfg.channels[0] || m.head.out_ch != 1 ||
        m.head.kernel != 1 || m.head.stride != 1 || m.head.relu ||
        m.head.w.size() != m.head.idx.size() || m.head.b.size() != 1)
        bad("output head");
    const int H = cfg.lstm_hidden, C = cfg.bottleneck_channels();
    if (m.lstm.hidden != H || m.lstm.input != C || m.lstm.w_ih.rows != 4 * H ||
        m.lstm.w_ih.cols != C || m.lstm.w_hh.rows != 4 * H || m.lstm.w_hh.cols != H ||
        (int)m.lstm.bias.size() != 4 * H ||
        m.lstm.w_ih.w.size() != m.lstm.w_ih.blocks.size() * 16 ||
        m.lstm.w_hh.w.size() != m.lstm.w_hh.blocks.size() * 16)
        bad("lstm");
    if (m.proj.out != C || m.proj.in != H || m.proj.w.rows != C || m.proj.w.cols != H ||
        (int)m.proj.b.size() != C || m.proj.w.w.size() != m.proj.w.blocks.size() * 16)
        bad("projection");
}

std::vector<uint8_t> model_payload(const Model& m) {
    Writer w;
    const Backend be = model_backend(m);
    w.u8((uint8_t)be);
    w.u8(0); // gate packing order tag: 0 = i,f,g,o
    w.u16(0);
    put_config(w, model_config(m));
    if (be == Backend::DenseF32) {
        const DenseModel& dm = std::get<DenseModel>(m);
        for (const auto& e : dm.encoder) put_conv(w, e);
        w.u32((uint32_t)dm.lstm.hidden);
        w.u32((uint32_t)dm.lstm.input);
        w.f32v(dm.lstm.w_ih);
        w.f32v(dm.lstm.w_hh);
        w.f32v(dm.lstm.bias);
        w.u32((uint32_t)dm.proj.out);
        w.u32((uint32_t)dm.proj.in);
        w.f32v(dm.proj.w);
        w.f32v(dm.proj.b);
        for (const auto& d : dm.decoder) put_conv(w, d);
        put_conv(w, dm.head);
    } else if (be == Backend::SparseF32) {
        const SparseModel& sm = std::get<SparseModel>(m);
        for (const auto& e : sm.encoder) put_sparse_conv(w, e);
        w.u32((uint32_t)sm.lstm.hidden);
        w.u32((uint32_t)sm.lstm.input);
        put_blocks(w, sm.lstm.w_ih);
        put_blocks(w, sm.lstm.w_hh);
        w.f32v(sm.lstm.bias);
        w.u32((uint32_t)sm.proj.out);
        w.u32((uint32_t)sm.proj.in);
        put_blocks(w, sm.proj.w);
        w.f32v(sm.proj.b);
        for (const auto& d : sm.decoder) put_sparse_conv(w, d);
        put_sparse_conv(w, sm.head);
    } else {
        const QuantModel& qm = std::get<QuantModel>(m);
        for (const auto& e : qm.encoder) put_qconv(w, e);
        w.u32((uint32_t)qm.lstm.hidden);
        w.u32((uint32_t)qm.lstm.input);
        put_qblocks(w, qm.lstm.w_ih);
        put_qblocks(w, qm.lstm.w_hh);
        w.i16v(qm.lstm.bias);
        w.u32((uint32_t)qm.proj.out);
        w.u32((uint32_t)qm.proj.in);
        put_qblocks(w, qm.proj.w);
        w.i32v(qm.proj.b);
        for (const auto& d : qm.decoder) put_qconv(w, d);
        put_qconv(w, qm.head);
        w.i16v(qm.sigmoid_lut);
        w.i16v(qm.tanh_lut);
    }
    return std::move(w.buf);
}

Model model_unpayload(const std::vector<uint8_t>& payload) {
    Reader r(payload.data(), payload.size());
    const uint8_t be = r.u8();
    const uint8_t gate_order = r.u8();
    r.u16();
    if (gate_order != 0) fail(ErrCode::Format, "model file: unknown gate packing order");
    if (be > 2) fail(ErrCode::Format, "model file: unknown backend tag");
    ModelConfig cfg = get_config(r);
    const int L = cfg.num_enc_layers();
    if (be == (uint8_t)Backend::DenseF32) {
        DenseModel m;
        m.config = cfg;
        for (int i = 0; i < L; ++i) m.encoder.push_back(get_conv(r));
        m.lstm.hidden = (int)r.u32();
        m.lstm.input = (int)r.u32();
        m.lstm.w_ih = r.f32v((size_t)4 * m.lstm.hidden * m.lstm.input);
        m.lstm.w_hh = r.f32v((size_t)4 * m.lstm.hidden * m.lstm.hidden);
        m.lstm.bias = r.f32v((size_t)4 * m.lstm.hidden);
        m.proj.out = (int)r.u32();
        m.proj.in = (int)r.u32();
        m.proj.w = r.f32v((size_t)m.proj.out * m.proj.in);
        m.proj.b = r.f32v((size_t)m.proj.out);
        for (int i = 0; i < L; ++i) m.decoder.push_back(get_conv(r));
        m.head = get_conv(r);
        m.validate();
        return m;
    }
    if (be == (uint8_t)Backend::SparseF32) {
        SparseModel m;
        m.config = cfg;
        for (int i = 0; i < L; ++i) m.encoder.push_back(get_sparse_conv(r));
        m.lstm.hidden = (int)r.u32();
        m.lstm.input = (int)r.u32();
        m.lstm.w_ih = get_blocks(r);
        m.lstm.w_hh = get_blocks(r);
        m.lstm.bias = r.f32v((size_t)4 * m.lstm.hidden);
        m.proj.out = (int)r.u32();
        m.proj.in = (int)r.u32();
        m.proj.w = get_blocks(r);
        m.proj.b = r.f32v((size_t)m.proj.out);
        for (int i = 0; i < L; ++i) m.decoder.push_back(get_sparse_conv(r));
        m.head = get_sparse_conv(r);
        validate_structured(m);
        return m;
    }
    QuantModel m;
    m.config = cfg;
    for (int i = 0; i < L; ++i) m.encoder.push_back(get_qconv(r));
    m.lstm.hidden = (int)r.u32();
    m.lstm.input = (int)r.u32();
    m.lstm.w_ih = get_qblocks(r);
    m.lstm.w_hh = get_qblocks(r);
    m.lstm.bias = r.i16v((size_t)4 * m.lstm.hidden);
    m.proj.out = (int)r.u32();
    m.proj.in = (int)r.u32();
    m.proj.w = get_qblocks(r);
    m.proj.b = r.i32v((size_t)m.proj.out);
    for (int i = 0; i < L; ++i) m.decoder.push_back(get_qconv(r));
    m.head = get_qconv(r);
    m.sigmoid_lut = r.i16v(kLutSize);
    m.tanh_lut = r.i16v(kLutSize);
    validate_structured(m);
    return m;
}

} // namespace

Backend model_backend(const Model& m) {
    if (std::holds_alternative<DenseModel>(m)) return Backend::DenseF32;
    if (std::holds_alternative<SparseModel>(m)) return Backend::SparseF32;
    return Backend::Quant;
}

const ModelConfig& model_config(const Model& m) {
    return std::visit([](const auto& v) -> const ModelConfig& { return v.config; }, m);
}

const char* backend_name(Backend b) {
    switch (b) {
    case Backend::DenseF32: return "dense-f32";
    case Backend::SparseF32: return "sparse-f32";
    case Backend::Quant: return "quant";
    }
    return "?";
}

std::vector<uint8_t> model_serialize(const Model& m) { return frame("SBM1", model_payload(m)); }

uint64_t model_file_size(const Model& m) { return (uint64_t)model_serialize(m).size(); }

void model_save(const Model& m, const std::string& path) { write_file(path, model_serialize(m)); }

Model model_load(const std::string& path) {
    return model_unpayload(unframe(read_file(path), "SBM1", "model file"));
}

// ---- bank ----

void bank_save(const SparsityBank& b, const std::string& path) {
    Writer w;
    w.u32((uint32_t)b.layers.size());
    for (const auto& lb : b.layers) {
        w.str(lb.name);
        w.u32((uint32_t)lb.rows);
        w.u32((uint32_t)lb.cols);
        w.u32((uint32_t)lb.spec.group_rows);
        w.u32((uint32_t)lb.spec.block_cols);
        w.f64(lb.damping);
        w.f64(lb.macs_per_block);
        w.u32((uint32_t)lb.entries.size());
        for (const auto& e : lb.entries) {
            w.f64(e.sparsity);
            w.f64(e.est_eps);
            w.f64(e.measured_err);
            w.u32((uint32_t)e.kept.size());
            for (uint32_t id : e.kept) w.u32(id);
            w.f32v(e.values);
        }
    }
    write_file(path, frame("SBK1", w.buf));
}

SparsityBank bank_load(const std::string& path) {
    std::vector<uint8_t> payload = unframe(read_file(path), "SBK1", "bank file");
    Reader r(payload.data(), payload.size());
    SparsityBank b;
    const uint32_t n_layers = r.u32();
    if (n_layers > 256) fail(ErrCode::Format, "bank file: implausible layer count");
    for (uint32_t i = 0; i < n_layers; ++i) {
        LayerBank lb;
        lb.name = r.str();
        lb.rows = (int)r.u32();
        lb.cols = (int)r.u32();
        lb.spec.group_rows = (int)r.u32();
        lb.spec.block_cols = (int)r.u32();
        lb.damping = r.f64();
        lb.macs_per_block = r.f64();
        const uint32_t ne = r.u32();
        if (lb.spec.group_rows <= 0 || lb.spec.block_cols <= 0 || lb.rows <= 0 || lb.cols <= 0 ||
            ne > 4096)
            fail(ErrCode::Format, "bank file: bad layer header");
        const size_t block_elems = (size_t)lb.spec.group_rows * lb.spec.block_cols;
        for (uint32_t k = 0; k < ne; ++k) {
            BankEntry e;
            e.sparsity = r.f64();
            e.est_eps = r.f64();
            e.measured_err = r.f64();
            const uint32_t nk = r.u32();
            if (nk > lb.total_blocks()) fail(ErrCode::Format, "bank file: kept count out of range");
            e.kept.resize(nk);
            for (auto& id : e.kept) id = r.u32();
            e.values = r.f32v((size_t)nk * block_elems);
            lb.entries.push_back(std::move(e));
        }
        b.layers.push_back(std::move(lb));
    }
    return b;
}

// ---- calibration ----

void calib_save(const CalibFile& c, const std::string& path) {
    Writer w;
    w.u32((uint32_t)c.audio.max_cols);
    w.u32((uint32_t)c.audio.capture.size());
    w.u32((uint32_t)c.audio.holdout.size());
    for (const auto& clip : c.audio.capture) {
        w.u32((uint32_t)clip.size());
        w.f32v(clip);
    }
    for (const auto& clip : c.audio.holdout) {
        w.u32((uint32_t)clip.size());
        w.f32v(clip);
    }
    w.u32((uint32_t)c.set.layers.size());
    for (const auto& lx : c.set.layers) {
        w.str(lx.name);
        w.u32((uint32_t)lx.d);
        w.u32((uint32_t)lx.n);
        w.f32v(lx.x);
    }
    write_file(path, frame("SBC1", w.buf));
}

CalibFile calib_load(const std::string& path) {
    std::vector<uint8_t> payload = unframe(read_file(path), "SBC1", "calibration file");
    Reader r(payload.data(), payload.size());
    CalibFile c;
    c.audio.max_cols = (int)r.u32();
    const uint32_t nc = r.u32(), nh = r.u32();
    if (nc > 1u << 20 || nh > 1u << 20) fail(ErrCode::Format, "calibration file: bad clip count");
    for (uint32_t i = 0; i < nc; ++i) c.audio.capture.push_back(r.f32v(r.u32()));
    for (uint32_t i = 0; i < nh; ++i) c.audio.holdout.push_back(r.f32v(r.u32()));
    const uint32_t nl = r.u32();
    if (nl > 256) fail(ErrCode::Format, "calibration file: bad layer count");
    for (uint32_t i = 0; i < nl; ++i) {
        CalibrationSet::LayerX lx;
        lx.name = r.str();
        lx.d = (int)r.u32();
        lx.n = (int)r.u32();
        if (lx.d < 0 || lx.n < 0) fail(ErrCode::Format, "calibration file: bad layer dims");
        lx.x = r.f32v((size_t)lx.d * lx.n);
        c.set.layers.push_back(std::move(lx));
    }
    return c;
}

// ---- WAV ----

WavClip wav_read(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        fail(ErrCode::Format, "'" + path + "' is not a RIFF/WAVE file");

    bool have_fmt = false;
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const uint8_t* data = nullptr;
    uint32_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        char id[4];
        std::memcpy(id, buf.data() + pos, 4);
        uint32_t len;
        std::memcpy(&len, buf.data() + pos + 4, 4);
        pos += 8;
        if (pos + len > buf.size()) fail(ErrCode::Format, "'" + path + "': truncated chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) fail(ErrCode::Format, "'" + path + "': short fmt chunk");
            std::memcpy(&format, buf.data() + pos, 2);
            std::memcpy(&channels, buf.data() + pos + 2, 2);
            std::memcpy(&rate, buf.data() + pos + 4, 4);
            std::memcpy(&bits, buf.data() + pos + 14, 2);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = buf.data() + pos;
            data_len = len;
        }
        pos += len + (len & 1); // chunks are word aligned
    }
    if (!have_fmt || !data) fail(ErrCode::Format, "'" + path + "': missing fmt or data chunk");
    if (format != 1) fail(ErrCode::Format, "'" + path + "': only PCM wav is supported");
    if (channels != 1) fail(ErrCode::Format, "'" + path + "': expected mono, got " +
                                                 std::to_string(channels) + " channels");
    if (rate != 16000) fail(ErrCode::Format, "'" + path + "': expected 16000 Hz, got " +
                                                 std::to_string(rate) + " (no resampling)");
    if (bits != 16) fail(ErrCode::Format, "'" + path + "': expected 16-bit PCM, got " +
                                              std::to_string(bits) + " bits");

    WavClip clip;
    const size_t n = data_len / 2;
    clip.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        int16_t s;
        std::memcpy(&s, data + 2 * i, 2);
        clip.samples[i] = (float)s / 32768.0f;
    }
    return clip;
}

void wav_write(const std::string& path, const std::vector<float>& samples) {
    Writer w;
    const uint32_t data_len = (uint32_t)(samples.size() * 2);
    w.bytes("RIFF", 4);
    w.u32(36 + data_len);
    w.bytes("WAVE", 4);
    w.bytes("fmt ", 4);
    w.u32(16);
    w.u16(1); // PCM
    w.u16(1); // mono
    w.u32(16000);
    w.u32(16000 * 2); // byte rate
    w.u16(2);         // block align
    w.u16(16);        // bits
    w.bytes("data", 4);
    w.u32(data_len);
    for (float x : samples) {
        double r = (double)x * 32768.0;
        r = r >= 0 ? std::floor(r + 0.5) : std::ceil(r - 0.5);
        if (r > 32767) r = 32767;
        if (r < -32768) r = -32768;
        int16_t s = (int16_t)r;
        w.bytes(&s, 2);
    }
    write_file(path, w.buf);
}

// ---- metrics ----

double si_sdr(const std::vector<float>& reference, const std::vector<float>& estimate) {
    if (reference.size() != estimate.size()) fail(ErrCode::Shape, "si_sdr: length mismatch");
    if (reference.empty()) fail(ErrCode::InvalidArg, "si_sdr: empty input");
    double rr = 0, er = 0;
    for (size_t i = 0; i < reference.size(); ++i) {
        rr += (double)reference[i] * reference[i];
        er += (double)estimate[i] * reference[i];
    }
    if (rr == 0) fail(ErrCode::InvalidArg, "si_sdr: zero reference");
    const double alpha = er / rr;
    double sig = 0, dist = 0;
    for (size_t i = 0; i < reference.size(); ++i) {
        const double s = alpha * reference[i];
        const double d = (double)estimate[i] - s;
        sig += s * s;
        dist += d * d;
    }
    if (dist == 0 || sig / dist > 1e10) return 100.0;
    return 10.0 * std::log10(sig / dist);
}

namespace {

// iterative radix-2 FFT, n a power of two
void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.14159265358979323846 / (double)len;
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cwr = 1, cwi = 0;
            for (size_t k = 0; k < len / 2; ++k) {
                const double ur = re[i + k], ui = im[i + k];
                const double vr = re[i + k + len / 2] * cwr - im[i + k + len / 2] * cwi;
                const double vi = re[i + k + len / 2] * cwi + im[i + k + len / 2] * cwr;
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                const double nwr = cwr * wr - cwi * wi;
                cwi = cwr * wi + cwi * wr;
                cwr = nwr;
            }
        }
    }
}

} // namespace

double log_spectral_distance(const std::vector<float>& reference, const std::vector<float>& estimate) {
    if (reference.size() != estimate.size()) fail(ErrCode::Shape, "lsd: length mismatch");
    const size_t frame = 512, hop = 256;
    if (reference.size() < frame) fail(ErrCode::InvalidArg, "lsd: input shorter than one 512 frame");
    std::vector<double> win(frame);
    for (size_t i = 0; i < frame; ++i)
        win[i] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * (double)i / (double)frame);

    const double floor_mag = 1e-10;
    double total = 0;
    size_t frames = 0;
    std::vector<double> re_r(frame), im_r(frame), re_e(frame), im_e(frame);
    for (size_t start = 0; start + frame <= reference.size(); start += hop) {
        for (size_t i = 0; i < frame; ++i) {
            re_r[i] = win[i] * reference[start + i];
            re_e[i] = win[i] * estimate[start + i];
            im_r[i] = im_e[i] = 0;
        }
        fft_inplace(re_r, im_r);
        fft_inplace(re_e, im_e);
        double acc = 0;
        const size_t bins = frame / 2 + 1;
        for (size_t k = 0; k < bins; ++k) {
            const double mr = std::max(floor_mag, std::hypot(re_r[k], im_r[k]));
            const double me = std::max(floor_mag, std::hypot(re_e[k], im_e[k]));
            const double d = 20.0 * (std::log10(mr) - std::log10(me));
            acc += d * d;
        }
        total += std::sqrt(acc / (double)bins);
        ++frames;
    }
    return total / (double)frames;
}

} // namespace sb
