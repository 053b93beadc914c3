#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace syntaxlm {

struct WordNode {
    int index = 0;        // 1-based position
    std::string form;
    int head = 0;         // 0 = root
    std::string deprel;

    bool operator==(const WordNode&) const = default;
};

struct DependencyTree {
    std::string sentence_id;
    std::vector<WordNode> words;

    std::size_t size() const noexcept { return words.size(); }
    // Head of the word at 1-based `index`.
    int head_of(int index) const { return words.at(static_cast<std::size_t>(index - 1)).head; }
    int root() const;

    bool operator==(const DependencyTree&) const = default;
};

struct CorpusStats {
    std::size_t sentence_count = 0;
    double mean_token_length = 0.0;
    double mean_tree_depth = 0.0;
};

// Parses a CoNLL-U document. Multiword ranges ("3-4") and empty nodes ("5.1") are
// skipped; only ID, FORM, HEAD and DEPREL are read. Sentence ids come from
// "# sent_id = ..." comments, otherwise "s<k>" with k the 1-based block number.
// Throws ParseError for malformed lines and ValidationError for non-trees.
std::vector<DependencyTree> parse_conllu(std::string_view text);
std::vector<DependencyTree> read_conllu_file(const std::string& path);

// Writes the 10-column form with unused columns set to "_".
std::string write_conllu(const std::vector<DependencyTree>& trees);

// Returns the tree unchanged iff it has exactly one root, every head is in range,
// and every word reaches the root.
const DependencyTree& validate_tree(const DependencyTree& tree);

// Node count on the longest root-to-leaf path; a lone root has depth 1.
int tree_depth(const DependencyTree& tree);

CorpusStats corpus_stats(const std::vector<DependencyTree>& trees);
std::string format_stats(const CorpusStats& stats);

}  // namespace syntaxlm
