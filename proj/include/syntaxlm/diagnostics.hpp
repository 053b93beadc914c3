#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "syntaxlm/gradcheck.hpp"
#include "syntaxlm/model.hpp"
#include "syntaxlm/pretrain.hpp"
#include "syntaxlm/treebank.hpp"

namespace syntaxlm {

// A random single-rooted tree over `words` positions whose shape is unrelated
// to word order: nodes are visited in a shuffled order and each one attaches
// to a uniformly chosen node visited before it.
std::vector<int> random_heads(int words, Rng& rng);

// Sentences over random_heads() trees. With successors = 0 every word is drawn
// uniformly from the lexicon; otherwise each lexicon word has `successors`
// fixed followers and a sentence is a walk through them, so word order carries
// local regularities while the tree stays independent of it.
std::vector<DependencyTree> random_treebank(std::size_t count, int min_words, int max_words, int lexicon_size,
                                            Rng& rng, const std::string& id_prefix = "r", int successors = 0);

// Two layers, width 8, two heads, no dropout; weights large enough that
// gradients sit well above finite-difference noise.
ModelConfig gradcheck_config();

struct ModelGradcheckOptions {
    ModelConfig model = gradcheck_config();
    int sequences = 3;
    int max_words = 6;
    std::size_t sample = 600;
    double epsilon = 1e-5;
    std::uint64_t seed = 42;
};

struct ModelGradcheck {
    GradCheckResult result;
    double loss = 0.0;
    std::size_t tensors = 0;  // tensors in the store
};

// Full pre-training objective (MLM + HP + DP) on a fixed random batch,
// analytic gradients against central differences.
ModelGradcheck run_model_gradcheck(const ModelGradcheckOptions& options);

}  // namespace syntaxlm
