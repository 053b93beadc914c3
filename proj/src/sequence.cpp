#include "syntaxlm/sequence.hpp"

#include <algorithm>
#include <stdexcept>

namespace syntaxlm {

BuiltSequence insert_specials(const std::vector<int>& ids, const Alignment& alignment, const DistanceMatrix& distances,
                              const std::vector<SpecialInsert>& inserts) {
    const int n = static_cast<int>(ids.size());
    if (distances.size() != n) throw std::invalid_argument("distance matrix does not match the sequence");
    std::vector<SpecialInsert> sorted = inserts;
    for (const auto& ins : sorted)
        if (ins.before < 0 || ins.before > n) throw std::out_of_range("special insert position out of range");
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const SpecialInsert& a, const SpecialInsert& b) { return a.before < b.before; });

    BuiltSequence out;
    out.position_of.resize(static_cast<std::size_t>(n));
    std::size_t next = 0;
    for (int p = 0; p <= n; ++p) {
        while (next < sorted.size() && sorted[next].before == p) {
            out.ids.push_back(sorted[next++].token);
            out.is_special.push_back(1);
        }
        if (p == n) break;
        out.position_of[static_cast<std::size_t>(p)] = static_cast<int>(out.ids.size());
        out.ids.push_back(ids[static_cast<std::size_t>(p)]);
        out.is_special.push_back(0);
    }

    const int m = static_cast<int>(out.ids.size());
    out.distances = DistanceMatrix(m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out.distances(out.position_of[static_cast<std::size_t>(i)], out.position_of[static_cast<std::size_t>(j)]) =
                distances(i, j);

    for (const auto& [start, len] : alignment.word_spans) {
        if (start < 0 || start + len > n) throw std::out_of_range("alignment span outside the sequence");
        const int first = out.position_of[static_cast<std::size_t>(start)];
        const int last = out.position_of[static_cast<std::size_t>(start + len - 1)];
        if (last - first + 1 != len) throw std::invalid_argument("special token inserted inside a word");
        out.alignment.word_spans.emplace_back(first, len);
    }
    return out;
}

BuiltSequence wrap_sentence(const std::vector<int>& ids, const Alignment& alignment, const DistanceMatrix& distances) {
    return insert_specials(ids, alignment, distances,
                           {{0, kSepOpen}, {static_cast<int>(ids.size()), kSepClose}});
}

}  // namespace syntaxlm
