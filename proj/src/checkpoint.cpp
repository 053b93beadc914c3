#include "syntaxlm/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

#include "byte_io.hpp"
#include "syntaxlm/errors.hpp"

namespace syntaxlm {

namespace {

void write_config(Writer& w, const ModelConfig& c) {
    for (int v : {c.layers, c.hidden, c.heads, c.ff, c.vocab_size, c.max_len, c.distance_classes}) w.i32(v);
    w.f64(c.alpha_init);
    w.u8(c.alpha_enabled);
    w.u8(c.alpha_per_layer);
    w.u8(c.syntax_layer_enabled);
    w.u8(c.syntax_bias);
    w.u8(static_cast<std::uint8_t>(c.activation));
    w.u8(static_cast<std::uint8_t>(c.syntax_activation));
    w.f64(c.dropout);
    w.f64(c.init_std);
    w.f64(c.ln_eps);
}

ModelConfig read_config(Reader& r) {
    ModelConfig c;
    c.layers = r.i32();
    c.hidden = r.i32();
    c.heads = r.i32();
    c.ff = r.i32();
    c.vocab_size = r.i32();
    c.max_len = r.i32();
    c.distance_classes = r.i32();
    c.alpha_init = r.f64();
    c.alpha_enabled = r.u8() != 0;
    c.alpha_per_layer = r.u8() != 0;
    c.syntax_layer_enabled = r.u8() != 0;
    c.syntax_bias = r.u8() != 0;
    const auto act = r.u8(), syn_act = r.u8();
    if (act > 3 || syn_act > 3) throw DataError("checkpoint has an unknown activation id");
    c.activation = static_cast<Activation>(act);
    c.syntax_activation = static_cast<Activation>(syn_act);
    c.dropout = r.f64();
    c.init_std = r.f64();
    c.ln_eps = r.f64();
    return c;
}

}  // namespace

std::string encode_checkpoint(const ModelParams& params, CheckpointPrecision precision) {
    Writer w;
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(precision == CheckpointPrecision::f32 ? 4 : 8);
    write_config(w, params.config);
    const auto& st = params.store;
    w.u32(static_cast<std::uint32_t>(st.slot_count()));
    const auto values = st.values();
    for (const auto& s : st.slots()) {
        w.u32(static_cast<std::uint32_t>(s.name.size()));
        w.bytes(s.name);
        w.u8(static_cast<std::uint8_t>(s.kind));
        w.u32(static_cast<std::uint32_t>(s.rows));
        w.u32(static_cast<std::uint32_t>(s.cols));
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double v = values[s.offset + i];
            if (precision == CheckpointPrecision::f32)
                w.f32(static_cast<float>(v));
            else
                w.f64(v);
        }
    }
    return w.take();
}

ModelParams decode_checkpoint(std::string_view bytes) {
    Reader r(bytes, "checkpoint");
    if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw DataError("not a checkpoint (bad magic)");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto scalar_bytes = r.u32();
    if (scalar_bytes != 4 && scalar_bytes != 8) throw DataError("checkpoint scalar width must be 4 or 8 bytes");
    ModelParams p;
    p.config = read_config(r);
    try {
        p.config.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint carries an invalid config: ") + e.what());
    }
    const auto count = r.u32();
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = r.u32();
        std::string name(r.bytes(name_len));
        const auto kind = r.u8();
        if (kind > 3) throw DataError("tensor '" + name + "' has an unknown kind");
        const auto rows = r.u32(), cols = r.u32();
        const auto id = p.store.add(name, rows, cols, static_cast<ParamKind>(kind));
        auto m = p.store.tensor(id);
        for (std::uint32_t i = 0; i < rows; ++i)
            for (std::uint32_t j = 0; j < cols; ++j)
                m(i, j) = scalar_bytes == 4 ? static_cast<double>(r.f32()) : r.f64();
    }
    if (!r.done()) throw DataError("trailing bytes after checkpoint tensors");
    p.slots = ModelSlots::bind(p.store, p.config);
    return p;
}

void save_checkpoint(const std::string& path, const ModelParams& params, CheckpointPrecision precision) {
    const auto bytes = encode_checkpoint(params, precision);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_checkpoint(buf.str());
}

ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected) {
    auto p = load_checkpoint(path);
    if (!p.config.same_architecture(expected))
        throw DataError("checkpoint '" + path + "' was written for a different model configuration");
    return p;
}

}  // namespace syntaxlm
