#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "syntaxlm/pretrain.hpp"

namespace syntaxlm {

// Preprocessed corpus layout (little-endian):
//   "SXLMPREP"        8-byte magic
//   u32 version       currently 1
//   u32 vocab_size    size of the vocabulary the ids refer to
//   u8 mode           0 directed, 1 undirected
//   u8 intra_word_edges
//   u32 record_count
//   per record: u32 payload_bytes, then
//     u32 id_len, id bytes; u32 n, n x i32 ids; u32 words, words x (i32 start, i32 length);
//     words x i32 head; n*n x i32 distances, row-major
struct PreparedCorpus {
    int vocab_size = 0;
    DistanceMode mode = DistanceMode::directed;
    bool intra_word_edges = true;
    std::vector<PretrainExample> examples;
};

inline constexpr std::string_view kCorpusMagic = "SXLMPREP";
inline constexpr unsigned kCorpusVersion = 1;

std::string encode_corpus(const PreparedCorpus& corpus);
PreparedCorpus decode_corpus(std::string_view bytes);

void save_corpus(const std::string& path, const PreparedCorpus& corpus);
PreparedCorpus load_corpus(const std::string& path);

}  // namespace syntaxlm
