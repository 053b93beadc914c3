#include "syntaxlm/corpus_io.hpp"

#include <fstream>
#include <sstream>

#include "byte_io.hpp"
#include "syntaxlm/errors.hpp"

namespace syntaxlm {

namespace {

std::string encode_example(const PretrainExample& ex) {
    Writer w;
    w.u32(static_cast<std::uint32_t>(ex.sentence_id.size()));
    w.bytes(ex.sentence_id);
    w.u32(static_cast<std::uint32_t>(ex.ids.size()));
    for (int id : ex.ids) w.i32(id);
    w.u32(static_cast<std::uint32_t>(ex.alignment.word_spans.size()));
    for (const auto& [start, len] : ex.alignment.word_spans) {
        w.i32(start);
        w.i32(len);
    }
    for (int h : ex.head_of) w.i32(h);
    const int n = ex.distances.size();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) w.i32(ex.distances(i, j));
    return w.take();
}

PretrainExample decode_example(std::string_view payload, int vocab_size) {
    Reader r(payload, "corpus record");
    PretrainExample ex;
    ex.sentence_id = std::string(r.bytes(r.u32()));
    const auto n = r.u32();
    if (n > payload.size()) throw DataError("corpus record for " + ex.sentence_id + " has an implausible length");
    for (std::uint32_t i = 0; i < n; ++i) {
        const int id = r.i32();
        if (id < 0 || id >= vocab_size)
            throw DataError("corpus record " + ex.sentence_id + " holds id " + std::to_string(id) +
                            " outside the vocabulary");
        ex.ids.push_back(id);
    }
    const auto words = r.u32();
    if (words > n) throw DataError("corpus record " + ex.sentence_id + " has more words than subwords");
    for (std::uint32_t i = 0; i < words; ++i) {
        const int start = r.i32(), len = r.i32();
        if (start < 0 || len < 1 || start + len > static_cast<int>(n))
            throw DataError("corpus record " + ex.sentence_id + " has a word span outside the sequence");
        ex.alignment.word_spans.emplace_back(start, len);
    }
    for (std::uint32_t i = 0; i < words; ++i) ex.head_of.push_back(r.i32());
    ex.distances = DistanceMatrix(static_cast<int>(n));
    for (int i = 0; i < static_cast<int>(n); ++i)
        for (int j = 0; j < static_cast<int>(n); ++j) ex.distances(i, j) = r.i32();
    if (!r.done()) throw DataError("corpus record " + ex.sentence_id + " has trailing bytes");
    return ex;
}

}  // namespace

std::string encode_corpus(const PreparedCorpus& corpus) {
    Writer w;
    w.bytes(kCorpusMagic);
    w.u32(kCorpusVersion);
    w.u32(static_cast<std::uint32_t>(corpus.vocab_size));
    w.u8(corpus.mode == DistanceMode::undirected ? 1 : 0);
    w.u8(corpus.intra_word_edges ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(corpus.examples.size()));
    for (const auto& ex : corpus.examples) {
        const auto payload = encode_example(ex);
        w.u32(static_cast<std::uint32_t>(payload.size()));
        w.bytes(payload);
    }
    return w.take();
}

PreparedCorpus decode_corpus(std::string_view bytes) {
    Reader r(bytes, "preprocessed corpus");
    if (r.bytes(kCorpusMagic.size()) != kCorpusMagic) throw DataError("not a preprocessed corpus (bad magic)");
    const auto version = r.u32();
    if (version != kCorpusVersion) throw DataError("unsupported corpus version " + std::to_string(version));
    PreparedCorpus c;
    c.vocab_size = static_cast<int>(r.u32());
    const auto mode = r.u8();
    if (mode > 1) throw DataError("corpus has an unknown distance mode");
    c.mode = mode == 1 ? DistanceMode::undirected : DistanceMode::directed;
    c.intra_word_edges = r.u8() != 0;
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) c.examples.push_back(decode_example(r.bytes(r.u32()), c.vocab_size));
    if (!r.done()) throw DataError("trailing bytes after corpus records");
    return c;
}

void save_corpus(const std::string& path, const PreparedCorpus& corpus) {
    const auto bytes = encode_corpus(corpus);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write corpus '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing corpus '" + path + "'");
}

PreparedCorpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_corpus(buf.str());
}

}  // namespace syntaxlm
