#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "syntaxlm/treebank.hpp"

namespace syntaxlm {

// Special units occupy the lowest ids, in this order.
enum SpecialToken : int {
    kPad = 0,
    kUnk = 1,
    kMask = 2,
    kSepOpen = 3,
    kSepClose = 4,
    kEntAt = 5,
    kEntHash = 6,
};
inline constexpr int kNumSpecials = 7;
inline constexpr std::string_view kSpecialStrings[kNumSpecials] = {"<pad>", "<unk>", "<mask>", "<s>",
                                                                  "</s>",  "@",     "#"};

class Vocab {
public:
    Vocab();  // specials only
    explicit Vocab(std::vector<std::string> units);

    int size() const noexcept { return static_cast<int>(units_.size()); }
    const std::string& unit(int id) const { return units_.at(static_cast<std::size_t>(id)); }
    // -1 when absent.
    int id_of(std::string_view unit) const;
    static bool is_special(int id) noexcept { return id >= 0 && id < kNumSpecials; }
    std::size_t max_unit_chars() const noexcept { return max_unit_chars_; }

    // One unit per line; line number (0-based) is the id.
    std::string serialize() const;
    static Vocab parse(std::string_view text);
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

    bool operator==(const Vocab& other) const { return units_ == other.units_; }

private:
    std::vector<std::string> units_;
    std::unordered_map<std::string, int> ids_;
    std::size_t max_unit_chars_ = 1;
};

// Splits a UTF-8 string into code-point substrings. Invalid bytes become
// one-byte units.
std::vector<std::string> split_chars(std::string_view word);

// Byte-pair merges over character sequences of the corpus words, most frequent
// adjacent pair first, ties broken by the lexicographically smallest
// (left, right) pair. Stops at target_size or when no pair remains.
Vocab train_vocab(const std::vector<std::vector<std::string>>& corpus, int target_size);
Vocab train_vocab(const std::vector<DependencyTree>& trees, int target_size);

// word_spans[w] = [start, start+length) over subword positions, w 0-based.
struct Alignment {
    std::vector<std::pair<int, int>> word_spans;  // (start, length)

    std::size_t word_count() const noexcept { return word_spans.size(); }
    int first_subword(std::size_t word) const { return word_spans.at(word).first; }
    int span_length(std::size_t word) const { return word_spans.at(word).second; }
};

struct Encoding {
    std::vector<int> ids;
    Alignment alignment;
};

// Greedy longest-match segmentation of each word; unmatched code points map to UNK.
std::vector<int> segment_word(std::string_view word, const Vocab& vocab);
Encoding encode(const DependencyTree& tree, const Vocab& vocab);

// Directed edge from -> to over 0-based subword positions.
struct SubwordEdge {
    int from;
    int to;
    bool operator==(const SubwordEdge&) const = default;
};
using SubwordEdgeSet = std::vector<SubwordEdge>;

// For each head relation v -> u: first_subword(v) -> every subword of u.
// With intra_word_edges, also first_subword(w) -> each trailing subword of w.
SubwordEdgeSet subword_graph(const DependencyTree& tree, const Alignment& alignment, bool intra_word_edges = true);

}  // namespace syntaxlm
