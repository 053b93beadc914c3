#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "syntaxlm/errors.hpp"
#include "syntaxlm/tokenizer.hpp"

using namespace syntaxlm;

namespace {

Vocab vocab_with(std::vector<std::string> extra) {
    std::vector<std::string> units(std::begin(kSpecialStrings), std::end(kSpecialStrings));
    units.insert(units.end(), extra.begin(), extra.end());
    return Vocab(units);
}

DependencyTree sentence(const std::vector<std::string>& forms, const std::vector<int>& heads) {
    auto t = oracle::tree_from_heads(heads);
    for (std::size_t i = 0; i < forms.size(); ++i) t.words[i].form = forms[i];
    return t;
}

bool has_edge(const SubwordEdgeSet& edges, int from, int to) {
    return std::find(edges.begin(), edges.end(), SubwordEdge{from, to}) != edges.end();
}

void check_tiling(const Encoding& enc) {
    int next = 0;
    for (const auto& [start, len] : enc.alignment.word_spans) {
        CHECK(start == next);
        CHECK(len >= 1);
        next = start + len;
    }
    CHECK(next == static_cast<int>(enc.ids.size()));
}

}  // namespace

TEST_CASE("specials occupy the lowest ids") {
    const Vocab v;
    CHECK(v.size() == kNumSpecials);
    CHECK(v.id_of("<mask>") == kMask);
    CHECK(v.id_of("@") == kEntAt);
    CHECK(v.id_of("#") == kEntHash);
    CHECK(v.id_of("zzz") == -1);
}

TEST_CASE("most frequent pair is merged first") {
    // a a a b occurs twice: (a,a) has count 4, (a,b) count 2.
    const Vocab v = train_vocab(std::vector<std::vector<std::string>>{{"aaab", "aaab"}}, 12);
    CHECK(v.id_of("aa") >= kNumSpecials);
    CHECK(v.id_of("a") >= kNumSpecials);
    CHECK(v.id_of("b") >= kNumSpecials);
    CHECK(v.size() <= 12);
}

TEST_CASE("target size at or below the specials is rejected") {
    CHECK_THROWS_AS(train_vocab(std::vector<std::vector<std::string>>{{"ab"}}, kNumSpecials), ConfigError);
}

TEST_CASE("training is deterministic byte for byte") {
    Rng rng(1);
    std::vector<std::vector<std::string>> corpus;
    for (int s = 0; s < 50; ++s) {
        std::vector<std::string> words;
        for (int w = 0; w < 6; ++w) {
            std::string word;
            for (int c = 0, len = static_cast<int>(rng.uniform_int(1, 7)); c < len; ++c)
                word += static_cast<char>('a' + rng.uniform_int(0, 5));
            words.push_back(word);
        }
        corpus.push_back(words);
    }
    CHECK(train_vocab(corpus, 60).serialize() == train_vocab(corpus, 60).serialize());
}

TEST_CASE("vocabulary file round trip") {
    const Vocab v = vocab_with({"play", "ing", "é"});
    CHECK(Vocab::parse(v.serialize()) == v);
    CHECK_THROWS_AS(Vocab::parse("a\nb\n"), DataError);
}

TEST_CASE("segmentation") {
    const Vocab v = vocab_with({"p", "l", "a", "y", "play", "ing", "dog"});
    const auto enc = encode(sentence({"dog", "playing", "☃"}, {2, 0, 2}), v);
    REQUIRE(enc.alignment.word_count() == 3);
    CHECK(enc.alignment.span_length(0) == 1);
    CHECK(enc.alignment.first_subword(0) == 0);
    CHECK(enc.alignment.span_length(1) == 2);
    CHECK(enc.ids[static_cast<std::size_t>(enc.alignment.first_subword(1))] == v.id_of("play"));
    CHECK(enc.ids[2] == v.id_of("ing"));
    CHECK(enc.alignment.span_length(2) == 1);
    CHECK(enc.ids[3] == kUnk);
}

TEST_CASE("split_chars keeps multi-byte code points whole") {
    CHECK(split_chars("aé☃") == std::vector<std::string>{"a", "é", "☃"});
    CHECK(split_chars(std::string("\xff" "a")) == std::vector<std::string>{"\xff", "a"});
}

TEST_CASE("subword graph") {
    SUBCASE("single-subword words, heads [2,0,2]") {
        const Vocab v = vocab_with({"a", "b", "c"});
        const auto t = sentence({"a", "b", "c"}, {2, 0, 2});
        const auto edges = subword_graph(t, encode(t, v).alignment);
        CHECK(edges.size() == 2);
        CHECK(has_edge(edges, 1, 0));
        CHECK(has_edge(edges, 1, 2));
    }
    SUBCASE("split dependent receives an edge to each of its subwords") {
        const Vocab v = vocab_with({"playing", "fris", "bee"});
        const auto t = sentence({"playing", "frisbee"}, {0, 1});
        const auto enc = encode(t, v);
        const auto edges = subword_graph(t, enc.alignment, false);
        CHECK(edges.size() == 2);
        CHECK(has_edge(edges, 0, 1));
        CHECK(has_edge(edges, 0, 2));
        CHECK(subword_graph(t, enc.alignment, true).size() == 3);
    }
    SUBCASE("single word: only within-word edges") {
        const Vocab v = vocab_with({"fris", "bee", "dog"});
        CHECK(subword_graph(sentence({"dog"}, {0}), encode(sentence({"dog"}, {0}), v).alignment).empty());
        const auto t = sentence({"frisbee"}, {0});
        const auto edges = subword_graph(t, encode(t, v).alignment);
        REQUIRE(edges.size() == 1);
        CHECK(edges[0] == SubwordEdge{0, 1});
    }
}

TEST_CASE("edge count, edge sources and tiling on random corpora") {
    Rng rng(8);
    const Vocab v = vocab_with({"a", "b", "c", "ab", "bc", "abc"});
    for (int trial = 0; trial < 300; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 10));
        std::vector<std::string> forms;
        for (int w = 0; w < n; ++w) {
            std::string f;
            for (int c = 0, len = static_cast<int>(rng.uniform_int(1, 5)); c < len; ++c)
                f += static_cast<char>('a' + rng.uniform_int(0, 3));  // 'd' is out of vocabulary
            forms.push_back(f);
        }
        const auto t = sentence(forms, oracle::random_tree_heads(n, rng));
        const auto enc = encode(t, v);
        CHECK(encode(t, v).ids == enc.ids);
        check_tiling(enc);
        const auto edges = subword_graph(t, enc.alignment);
        std::size_t expected = 0;
        std::vector<char> first(enc.ids.size(), 0);
        for (int w = 0; w < n; ++w) {
            const int len = enc.alignment.span_length(static_cast<std::size_t>(w));
            if (t.words[static_cast<std::size_t>(w)].head != 0) expected += static_cast<std::size_t>(len);
            expected += static_cast<std::size_t>(len - 1);
            first[static_cast<std::size_t>(enc.alignment.first_subword(static_cast<std::size_t>(w)))] = 1;
        }
        CHECK(edges.size() == expected);
        for (const auto& e : edges) CHECK(first[static_cast<std::size_t>(e.from)]);
    }
}
