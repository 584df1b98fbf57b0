#include "sct/weights.hpp"

#include "bytes.hpp"

#include <zlib.h>

#include <set>

namespace sct {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr std::array<char, 4> kMagic{'S', 'C', 'T', 'W'};

std::vector<float> config_vector(const TrainedModel& m) {
    if (const auto* p = std::get_if<SctModelParams<float>>(&m)) {
        const auto& c = p->config;
        std::vector<float> v{0.0f, static_cast<float>(c.input_dim), static_cast<float>(c.stages.size()),
                             static_cast<float>(c.aggregate), static_cast<float>(c.head)};
        for (const auto& s : c.stages)
            for (int x : {s.width, s.embed, s.kernel, s.pool, s.stride, static_cast<int>(s.pool_mode), s.heads, s.hidden})
                v.push_back(static_cast<float>(x));
        return v;
    }
    const auto& c = std::get<AbmilParams<float>>(m).config;
    return {1.0f, static_cast<float>(c.input_dim), static_cast<float>(c.attention_dim), c.gated ? 1.0f : 0.0f};
}

int as_int(float f, const char* what) {
    if (!(f >= 0 && f < 1e7f) || f != std::floor(f)) fail(ErrorKind::Schema, std::string("__config__: invalid ") + what);
    return static_cast<int>(f);
}

// Rebuilds a zero-initialised model with the shapes implied by the metadata tensor.
TrainedModel model_from_config(const std::vector<float>& v) {
    if (v.empty()) fail(ErrorKind::Schema, "__config__ tensor is empty");
    const int kind = as_int(v[0], "model kind");
    if (kind == 1) {
        if (v.size() != 4) fail(ErrorKind::Schema, "__config__: ABMIL config needs 4 entries");
        AbmilConfig c;
        c.input_dim = as_int(v[1], "input_dim");
        c.attention_dim = as_int(v[2], "attention_dim");
        c.gated = as_int(v[3], "gated") != 0;
        try {
            return TrainedModel(init_abmil<float>(c, 0));
        } catch (const Error& e) {
            fail(ErrorKind::Schema, std::string("__config__: ") + e.what());
        }
    }
    if (kind != 0) fail(ErrorKind::Schema, "__config__: unknown model kind " + std::to_string(kind));
    if (v.size() < 5) fail(ErrorKind::Schema, "__config__: truncated SCT config");
    SctConfig c;
    c.input_dim = as_int(v[1], "input_dim");
    const int n = as_int(v[2], "stage count");
    const int agg = as_int(v[3], "aggregate");
    const int head = as_int(v[4], "head");
    if (agg > 1 || head > 2) fail(ErrorKind::Schema, "__config__: invalid aggregate/head code");
    c.aggregate = static_cast<Aggregation>(agg);
    c.head = static_cast<HeadKind>(head);
    if (v.size() != 5 + 8 * static_cast<std::size_t>(n)) fail(ErrorKind::Schema, "__config__: stage list length mismatch");
    for (int s = 0; s < n; ++s) {
        const float* f = v.data() + 5 + 8 * s;
        StageConfig st;
        st.width = as_int(f[0], "width");
        st.embed = as_int(f[1], "embed");
        st.kernel = as_int(f[2], "kernel");
        st.pool = as_int(f[3], "pool");
        st.stride = as_int(f[4], "stride");
        const int mode = as_int(f[5], "pool_mode");
        if (mode > 1) fail(ErrorKind::Schema, "__config__: invalid pool mode");
        st.pool_mode = static_cast<PoolMode>(mode);
        st.heads = as_int(f[6], "heads");
        st.hidden = as_int(f[7], "hidden");
        c.stages.push_back(st);
    }
    try {
        c.validate();
        return TrainedModel(init_sct<float>(c, 0));
    } catch (const Error& e) {
        fail(ErrorKind::Schema, std::string("__config__: ") + e.what());
    }
}

void put_tensor(ByteWriter& w, const std::string& name, std::span<const std::uint32_t> dims, const float* data, std::size_t n) {
    w.put_string16(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) w.put<std::uint32_t>(d);
    w.put_bytes(std::string_view(reinterpret_cast<const char*>(data), n * sizeof(float)));
}

template <class F>
void visit_model(TrainedModel& m, F&& f) {
    std::visit([&](auto& p) { std::remove_reference_t<decltype(p)>::visit(p, "", f); }, m);
}

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string encode_weights(const TrainedModel& model) {
    TrainedModel copy = model;
    std::vector<std::pair<std::string, Mat<float>*>> tensors;
    visit_model(copy, [&](const std::string& name, Mat<float>& m) { tensors.emplace_back(name, &m); });

    ByteWriter w;
    w.put_bytes(std::string_view(kMagic.data(), 4));
    w.put<std::uint16_t>(kWeightsVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size() + 1));
    const auto cfg = config_vector(model);
    const std::uint32_t cfg_dims[]{static_cast<std::uint32_t>(cfg.size())};
    put_tensor(w, kConfigTensor, cfg_dims, cfg.data(), cfg.size());
    for (const auto& [name, m] : tensors) {
        const std::uint32_t dims[]{static_cast<std::uint32_t>(m->rows()), static_cast<std::uint32_t>(m->cols())};
        put_tensor(w, name, dims, m->data(), static_cast<std::size_t>(m->size()));
    }
    w.put<std::uint32_t>(crc32_of(w.str()));
    return std::move(w.str());
}

TrainedModel decode_weights(const std::string& bytes) {
    ByteReader r(bytes);
    const auto magic = r.get_bytes(4, ErrorKind::Format, "SCTW header");
    if (magic != std::string_view(kMagic.data(), 4)) fail(ErrorKind::Format, "bad magic, expected SCTW");
    const auto version = r.get<std::uint16_t>(ErrorKind::Corruption, "SCTW header");
    if (version != kWeightsVersion)
        fail(ErrorKind::Format, "unsupported SCTW version " + std::to_string(version) + " (this build reads version " +
                                    std::to_string(kWeightsVersion) + ")");
    if (bytes.size() < 14) fail(ErrorKind::Corruption, "SCTW file truncated");
    const std::string_view payload(bytes.data(), bytes.size() - 4);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (crc32_of(payload) != stored) fail(ErrorKind::Corruption, "SCTW checksum mismatch (file truncated or corrupted)");

    ByteReader body(payload);
    body.get_bytes(6, ErrorKind::Corruption, "SCTW header");
    const auto count = body.get<std::uint32_t>(ErrorKind::Corruption, "SCTW header");

    const auto read_header = [&](std::size_t index, std::vector<std::uint32_t>& dims) {
        const std::string ctx = "tensor " + std::to_string(index);
        std::string name = body.get_string16(ErrorKind::Schema, ctx);
        const auto rank = body.get<std::uint8_t>(ErrorKind::Schema, ctx + " ('" + name + "')");
        dims.resize(rank);
        for (auto& d : dims) d = body.get<std::uint32_t>(ErrorKind::Schema, ctx + " ('" + name + "')");
        return name;
    };

    std::vector<std::uint32_t> dims;
    const std::string first = read_header(0, dims);
    if (first != kConfigTensor) fail(ErrorKind::Schema, "first tensor must be __config__, found '" + first + "'");
    if (dims.size() != 1) fail(ErrorKind::Schema, "tensor '__config__' must have rank 1");
    std::vector<float> cfg(dims[0]);
    const auto raw = body.get_bytes(cfg.size() * sizeof(float), ErrorKind::Schema, "tensor '__config__'");
    std::memcpy(cfg.data(), raw.data(), raw.size());
    TrainedModel model = model_from_config(cfg);

    std::vector<std::pair<std::string, Mat<float>*>> expected;
    visit_model(model, [&](const std::string& name, Mat<float>& m) { expected.emplace_back(name, &m); });
    if (count != expected.size() + 1)
        fail(ErrorKind::Schema, "tensor count " + std::to_string(count) + " does not match the embedded config (expected " +
                                    std::to_string(expected.size() + 1) + ")");
    std::set<std::string> seen{kConfigTensor};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const std::string name = read_header(i + 1, dims);
        if (!seen.insert(name).second) fail(ErrorKind::Schema, "duplicate tensor name '" + name + "'");
        auto& [want, m] = expected[i];
        if (name != want) fail(ErrorKind::Schema, "tensor " + std::to_string(i + 1) + " is '" + name + "', expected '" + want + "'");
        if (dims.size() != 2 || dims[0] != static_cast<std::uint32_t>(m->rows()) || dims[1] != static_cast<std::uint32_t>(m->cols())) {
            std::string got;
            for (auto d : dims) got += (got.empty() ? "" : "x") + std::to_string(d);
            fail(ErrorKind::Schema, "tensor '" + name + "' has shape " + got + ", config requires " + std::to_string(m->rows()) +
                                        "x" + std::to_string(m->cols()));
        }
        const auto data = body.get_bytes(static_cast<std::size_t>(m->size()) * sizeof(float), ErrorKind::Schema, "tensor '" + name + "'");
        std::memcpy(m->data(), data.data(), data.size());
    }
    if (!body.at_end()) fail(ErrorKind::Schema, "trailing bytes after the last tensor");
    return model;
}

void save_weights(const std::filesystem::path& path, const TrainedModel& model) {
    detail::write_file(path, encode_weights(model));
}

TrainedModel load_weights(const std::filesystem::path& path) { return decode_weights(detail::read_file(path)); }

}  // namespace sct
