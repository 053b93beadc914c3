#pragma once

#include <utility>
#include <vector>

#include "syntaxlm/syntax_distance.hpp"
#include "syntaxlm/tokenizer.hpp"

namespace syntaxlm {

// A subword sequence with special tokens spliced in. Special positions have
// all-zero distance rows and columns; entries among original tokens are
// carried over unchanged.
struct BuiltSequence {
    std::vector<int> ids;
    Alignment alignment;               // word spans re-indexed into `ids`
    DistanceMatrix distances;
    std::vector<char> is_special;      // per position
    std::vector<int> position_of;      // original position -> new position
};

struct SpecialInsert {
    int before;  // original position in [0, n]; n appends
    int token;
};

// Inserts are applied in order; several inserts at the same `before` keep their relative order.
BuiltSequence insert_specials(const std::vector<int>& ids, const Alignment& alignment, const DistanceMatrix& distances,
                              const std::vector<SpecialInsert>& inserts);

// <s> ids </s>
BuiltSequence wrap_sentence(const std::vector<int>& ids, const Alignment& alignment, const DistanceMatrix& distances);

}  // namespace syntaxlm
