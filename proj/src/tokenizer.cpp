#include "syntaxlm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

namespace {

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> units) {
    for (int i = 0; i < kNumSpecials; ++i) {
        if (i < static_cast<int>(units.size()) && units[static_cast<std::size_t>(i)] != kSpecialStrings[i])
            throw DataError("vocabulary must start with the special units; line " + std::to_string(i + 1) + " is '" +
                            units[static_cast<std::size_t>(i)] + "'");
    }
    if (units.size() < static_cast<std::size_t>(kNumSpecials)) {
        units.assign(std::begin(kSpecialStrings), std::end(kSpecialStrings));
    }
    units_ = std::move(units);
    for (std::size_t i = 0; i < units_.size(); ++i) {
        if (!ids_.emplace(units_[i], static_cast<int>(i)).second)
            throw DataError("duplicate vocabulary unit '" + units_[i] + "'");
        if (i >= static_cast<std::size_t>(kNumSpecials))
            max_unit_chars_ = std::max(max_unit_chars_, split_chars(units_[i]).size());
    }
}

int Vocab::id_of(std::string_view unit) const {
    auto it = ids_.find(std::string(unit));
    return it == ids_.end() ? -1 : it->second;
}

std::string Vocab::serialize() const {
    std::string out;
    for (const auto& u : units_) {
        out += u;
        out += '\n';
    }
    return out;
}

Vocab Vocab::parse(std::string_view text) {
    std::vector<std::string> units;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        units.emplace_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (units.size() < static_cast<std::size_t>(kNumSpecials)) throw DataError("vocabulary file is truncated");
    return Vocab(std::move(units));
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary '" + path + "'");
    out << serialize();
    if (!out) throw DataError("failed writing vocabulary '" + path + "'");
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::vector<std::string> split_chars(std::string_view word) {
    std::vector<std::string> chars;
    std::size_t i = 0;
    while (i < word.size()) {
        std::size_t len = utf8_length(static_cast<unsigned char>(word[i]));
        if (i + len > word.size()) len = 1;
        chars.emplace_back(word.substr(i, len));
        i += len;
    }
    return chars;
}

Vocab train_vocab(const std::vector<std::vector<std::string>>& corpus, int target_size) {
    std::map<std::string, long> word_counts;
    for (const auto& sentence : corpus)
        for (const auto& w : sentence)
            if (!w.empty()) ++word_counts[w];
    if (word_counts.empty()) throw DataError("cannot train a vocabulary on an empty corpus");

    std::set<std::string> alphabet;
    std::vector<std::pair<std::vector<std::string>, long>> words;
    for (const auto& [w, c] : word_counts) {
        auto chars = split_chars(w);
        alphabet.insert(chars.begin(), chars.end());
        words.emplace_back(std::move(chars), c);
    }
    for (auto s : kSpecialStrings) alphabet.erase(std::string(s));

    const auto floor = static_cast<std::size_t>(kNumSpecials) + alphabet.size();
    if (target_size <= 0 || static_cast<std::size_t>(target_size) <= floor)
        throw ConfigError("vocab_size " + std::to_string(target_size) + " must exceed " + std::to_string(floor) +
                          " (specials plus distinct characters)");

    std::vector<std::string> units(std::begin(kSpecialStrings), std::end(kSpecialStrings));
    std::set<std::string> known(units.begin(), units.end());
    for (const auto& c : alphabet) {
        units.push_back(c);
        known.insert(c);
    }

    while (units.size() < static_cast<std::size_t>(target_size)) {
        std::map<std::pair<std::string, std::string>, long> pairs;
        for (const auto& [seq, c] : words)
            for (std::size_t i = 0; i + 1 < seq.size(); ++i) pairs[{seq[i], seq[i + 1]}] += c;
        if (pairs.empty()) break;
        auto best = pairs.begin();
        for (auto it = pairs.begin(); it != pairs.end(); ++it)
            if (it->second > best->second) best = it;  // strict: earliest (smallest) pair wins ties
        const auto [left, right] = best->first;
        const std::string merged = left + right;
        for (auto& [seq, c] : words) {
            std::vector<std::string> next;
            next.reserve(seq.size());
            for (std::size_t i = 0; i < seq.size(); ++i) {
                if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(seq[i]);
                }
            }
            seq = std::move(next);
        }
        if (known.insert(merged).second) units.push_back(merged);
    }
    return Vocab(std::move(units));
}

Vocab train_vocab(const std::vector<DependencyTree>& trees, int target_size) {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(trees.size());
    for (const auto& t : trees) {
        std::vector<std::string> forms;
        for (const auto& w : t.words) forms.push_back(w.form);
        corpus.push_back(std::move(forms));
    }
    return train_vocab(corpus, target_size);
}

std::vector<int> segment_word(std::string_view word, const Vocab& vocab) {
    const auto chars = split_chars(word);
    std::vector<int> ids;
    std::size_t i = 0;
    while (i < chars.size()) {
        const std::size_t longest = std::min(vocab.max_unit_chars(), chars.size() - i);
        int found = -1;
        std::size_t used = 1;
        for (std::size_t len = longest; len >= 1; --len) {
            std::string piece;
            for (std::size_t k = 0; k < len; ++k) piece += chars[i + k];
            const int id = vocab.id_of(piece);
            if (id >= kNumSpecials) {
                found = id;
                used = len;
                break;
            }
        }
        ids.push_back(found >= 0 ? found : kUnk);
        i += used;
    }
    if (ids.empty()) ids.push_back(kUnk);
    return ids;
}

Encoding encode(const DependencyTree& tree, const Vocab& vocab) {
    Encoding enc;
    enc.alignment.word_spans.reserve(tree.size());
    for (const auto& w : tree.words) {
        const auto pieces = segment_word(w.form, vocab);
        enc.alignment.word_spans.emplace_back(static_cast<int>(enc.ids.size()), static_cast<int>(pieces.size()));
        enc.ids.insert(enc.ids.end(), pieces.begin(), pieces.end());
    }
    return enc;
}

SubwordEdgeSet subword_graph(const DependencyTree& tree, const Alignment& alignment, bool intra_word_edges) {
    if (alignment.word_count() != tree.size())
        throw std::invalid_argument("alignment covers " + std::to_string(alignment.word_count()) +
                                    " words but the tree has " + std::to_string(tree.size()));
    SubwordEdgeSet edges;
    for (const auto& w : tree.words) {
        if (w.head == 0) continue;
        const int from = alignment.first_subword(static_cast<std::size_t>(w.head - 1));
        const auto [start, len] = alignment.word_spans[static_cast<std::size_t>(w.index - 1)];
        for (int s = start; s < start + len; ++s) edges.push_back({from, s});
    }
    if (intra_word_edges) {
        for (const auto& [start, len] : alignment.word_spans)
            for (int s = start + 1; s < start + len; ++s) edges.push_back({start, s});
    }
    return edges;
}

}  // namespace syntaxlm
