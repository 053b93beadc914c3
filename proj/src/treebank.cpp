#include "syntaxlm/treebank.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            cols.push_back(line.substr(start));
            break;
        }
        cols.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return cols;
}

bool parse_int(std::string_view s, int& out) {
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

int DependencyTree::root() const {
    for (const auto& w : words)
        if (w.head == 0) return w.index;
    return 0;
}

std::vector<DependencyTree> parse_conllu(std::string_view text) {
    std::vector<DependencyTree> trees;
    DependencyTree current;
    bool in_block = false;
    std::size_t block_count = 0;

    auto finish = [&] {
        if (!in_block) return;
        in_block = false;
        if (current.words.empty()) {  // comment-only block, e.g. "# newdoc"
            current = DependencyTree{};
            return;
        }
        ++block_count;
        if (current.sentence_id.empty()) current.sentence_id = "s" + std::to_string(block_count);
        validate_tree(current);
        trees.push_back(std::move(current));
        current = DependencyTree{};
        in_block = false;
    };

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        if (trim(line).empty()) {
            finish();
            continue;
        }
        in_block = true;
        if (line.front() == '#') {
            auto body = trim(line.substr(1));
            if (body.starts_with("sent_id")) {
                auto rest = trim(body.substr(7));
                if (!rest.empty() && rest.front() == '=') current.sentence_id = std::string(trim(rest.substr(1)));
            }
            continue;
        }

        const auto cols = split_tabs(line);
        if (cols.size() != 10)
            throw ParseError(line_no, "expected 10 tab-separated columns, found " + std::to_string(cols.size()));
        const auto id = cols[0];
        if (id.find('-') != std::string_view::npos || id.find('.') != std::string_view::npos) continue;
        WordNode w;
        if (!parse_int(id, w.index)) throw ParseError(line_no, "non-integer word id '" + std::string(id) + "'");
        if (w.index != static_cast<int>(current.words.size()) + 1)
            throw ParseError(line_no, "word id " + std::to_string(w.index) + " out of sequence");
        if (!parse_int(cols[6], w.head) || w.head < 0)
            throw ParseError(line_no, "non-integer head '" + std::string(cols[6]) + "'");
        w.form = std::string(cols[1]);
        w.deprel = std::string(cols[7]);
        current.words.push_back(std::move(w));
    }
    finish();
    return trees;
}

std::vector<DependencyTree> read_conllu_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open CoNLL-U file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_conllu(buf.str());
}

std::string write_conllu(const std::vector<DependencyTree>& trees) {
    std::ostringstream out;
    for (const auto& t : trees) {
        out << "# sent_id = " << t.sentence_id << '\n';
        for (const auto& w : t.words) {
            out << w.index << '\t' << w.form << "\t_\t_\t_\t_\t" << w.head << '\t'
                << (w.deprel.empty() ? "_" : w.deprel) << "\t_\t_\n";
        }
        out << '\n';
    }
    return out.str();
}

const DependencyTree& validate_tree(const DependencyTree& tree) {
    const int n = static_cast<int>(tree.words.size());
    int roots = 0;
    for (const auto& w : tree.words) {
        if (w.head < 0 || w.head > n)
            throw ValidationError(tree.sentence_id, "head index " + std::to_string(w.head) + " of word " +
                                                        std::to_string(w.index) + " out of range");
        if (w.head == w.index)
            throw ValidationError(tree.sentence_id, "cycle detected: word " + std::to_string(w.index) + " heads itself");
        if (w.head == 0) ++roots;
    }
    if (roots > 1) throw ValidationError(tree.sentence_id, "multiple roots");

    // 0 = unvisited, 1 = on current walk, 2 = reaches root
    std::vector<int> state(static_cast<std::size_t>(n) + 1, 0);
    state[0] = 2;
    for (int start = 1; start <= n; ++start) {
        std::vector<int> walk;
        int v = start;
        while (state[static_cast<std::size_t>(v)] == 0) {
            state[static_cast<std::size_t>(v)] = 1;
            walk.push_back(v);
            v = tree.words[static_cast<std::size_t>(v - 1)].head;
        }
        if (state[static_cast<std::size_t>(v)] == 1)
            throw ValidationError(tree.sentence_id, "cycle detected through word " + std::to_string(v));
        for (int u : walk) state[static_cast<std::size_t>(u)] = 2;
    }
    if (roots == 0) throw ValidationError(tree.sentence_id, "no root");
    return tree;
}

int tree_depth(const DependencyTree& tree) {
    const std::size_t n = tree.words.size();
    std::vector<int> depth(n + 1, 0);
    int best = 0;
    for (std::size_t start = 1; start <= n; ++start) {
        std::vector<std::size_t> walk;
        std::size_t v = start;
        while (v != 0 && depth[v] == 0) {
            walk.push_back(v);
            v = static_cast<std::size_t>(tree.words[v - 1].head);
        }
        int d = (v == 0) ? 0 : depth[v];
        for (auto it = walk.rbegin(); it != walk.rend(); ++it) depth[*it] = ++d;
        best = std::max(best, depth[start]);
    }
    return best;
}

CorpusStats corpus_stats(const std::vector<DependencyTree>& trees) {
    if (trees.empty()) throw DataError("corpus statistics need at least one sentence");
    CorpusStats s;
    s.sentence_count = trees.size();
    double tokens = 0.0, depth = 0.0;
    for (const auto& t : trees) {
        tokens += static_cast<double>(t.size());
        depth += tree_depth(t);
    }
    s.mean_token_length = tokens / static_cast<double>(trees.size());
    s.mean_tree_depth = depth / static_cast<double>(trees.size());
    return s;
}

std::string format_stats(const CorpusStats& stats) {
    std::ostringstream out;
    out << std::setprecision(6) << std::fixed;
    out << "sentence_count = " << stats.sentence_count << '\n'
        << "mean_token_length = " << stats.mean_token_length << '\n'
        << "mean_tree_depth = " << stats.mean_tree_depth << '\n';
    return out.str();
}

}  // namespace syntaxlm
