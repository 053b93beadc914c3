#include "syntaxlm/diagnostics.hpp"

#include <numeric>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

std::vector<int> random_heads(int words, Rng& rng) {
    if (words < 1) throw std::invalid_argument("a tree needs at least one word");
    std::vector<int> order(static_cast<std::size_t>(words));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<int> heads(static_cast<std::size_t>(words), 0);
    for (std::size_t k = 1; k < order.size(); ++k)
        heads[static_cast<std::size_t>(order[k])] = order[rng.index(k)] + 1;
    return heads;
}

std::vector<DependencyTree> random_treebank(std::size_t count, int min_words, int max_words, int lexicon_size,
                                            Rng& rng, const std::string& id_prefix, int successors) {
    if (min_words < 1 || max_words < min_words) throw std::invalid_argument("bad sentence length range");
    if (lexicon_size < 1) throw std::invalid_argument("lexicon must be non-empty");
    static constexpr const char* kSyllables[] = {"ba", "ko", "ri", "ne", "tu", "sa", "mi", "lo", "de", "fa",
                                                 "gu", "pe", "zo", "hi", "ju", "wa", "ye", "xo", "qui", "vy"};
    constexpr int kSyl = static_cast<int>(std::size(kSyllables));
    std::vector<std::string> lexicon;
    for (int i = 0; i < lexicon_size; ++i) {
        std::string w;
        int v = i;
        do {
            w += kSyllables[v % kSyl];
            v /= kSyl;
        } while (v > 0);
        lexicon.push_back(w);
    }
    std::vector<std::vector<std::size_t>> follow(lexicon.size());
    for (auto& f : follow)
        for (int k = 0; k < successors; ++k) f.push_back(rng.index(lexicon.size()));

    std::vector<DependencyTree> out;
    for (std::size_t s = 0; s < count; ++s) {
        const int n = static_cast<int>(rng.uniform_int(min_words, max_words));
        const auto heads = random_heads(n, rng);
        DependencyTree t;
        t.sentence_id = id_prefix + std::to_string(s + 1);
        std::size_t word = rng.index(lexicon.size());
        for (int i = 0; i < n; ++i) {
            if (i > 0) word = successors > 0 ? follow[word][rng.index(follow[word].size())] : rng.index(lexicon.size());
            const int h = heads[static_cast<std::size_t>(i)];
            t.words.push_back({i + 1, lexicon[word], h, h == 0 ? "root" : "dep"});
        }
        out.push_back(std::move(t));
    }
    return out;
}

ModelConfig gradcheck_config() {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 8;
    c.heads = 2;
    c.ff = 16;
    c.vocab_size = 16;
    c.max_len = 16;
    c.distance_classes = 16;
    c.alpha_init = 0.4;
    c.dropout = 0.0;
    c.init_std = 0.4;
    return c;
}

ModelGradcheck run_model_gradcheck(const ModelGradcheckOptions& o) {
    o.model.validate();
    if (o.sequences < 1 || o.max_words < 2 || o.max_words + 2 > o.model.max_len)
        throw ConfigError("gradcheck sequences must fit the model's max_len");
    Rng rng(derive_seed(o.seed, 21));
    auto params = init_params(o.model, rng);
    const auto heads = PretrainHeads::attach(params, rng);
    // Biases, gains and alpha start at constants; move them off so every family is exercised generically.
    for (const auto& s : params.store.slots())
        if (s.kind != ParamKind::weight) {
            auto t = params.store.tensor(params.store.require(s.name));
            for (Eigen::Index r = 0; r < t.rows(); ++r)
                for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) += rng.normal(0.0, 0.1);
        }

    std::vector<PretrainExample> corpus;
    for (int s = 0; s < o.sequences; ++s) {
        const int n = static_cast<int>(rng.uniform_int(2, o.max_words));
        DependencyTree t;
        t.sentence_id = "g" + std::to_string(s);
        const auto h = random_heads(n, rng);
        PretrainExample ex;
        ex.sentence_id = t.sentence_id;
        SubwordEdgeSet edges;
        for (int i = 0; i < n; ++i) {
            ex.ids.push_back(static_cast<int>(rng.uniform_int(kNumSpecials, o.model.vocab_size - 1)));
            ex.alignment.word_spans.emplace_back(i, 1);
            ex.head_of.push_back(h[static_cast<std::size_t>(i)]);
            if (h[static_cast<std::size_t>(i)] > 0) edges.push_back({h[static_cast<std::size_t>(i)] - 1, i});
        }
        ex.distances = compute_distances(edges, n);
        corpus.push_back(std::move(ex));
    }
    std::vector<std::size_t> idx(corpus.size());
    std::iota(idx.begin(), idx.end(), 0);
    CorruptionOptions corr;
    corr.vocab_size = o.model.vocab_size;
    corr.distance_classes = o.model.distance_classes;
    // High rates so every small sequence carries MLM and DP targets.
    corr.mlm_rate = 0.5;
    corr.dp_rate = 0.5;
    const TaskToggles tasks;
    const auto batch = make_batch(corpus, idx, corr, tasks, rng);

    auto loss_at = [&](const ParamStore& store) {
        ModelParams p{params.config, store, params.slots};
        const auto trace = forward(p, batch.inputs, nullptr);
        return compute_losses(p, heads, trace, batch, tasks, nullptr, nullptr).total;
    };

    auto grads = params.store.zeros_like();
    const auto trace = forward(params, batch.inputs, nullptr);
    Mat dh = Mat::Zero(trace.output.rows(), trace.output.cols());
    ModelGradcheck out;
    out.loss = compute_losses(params, heads, trace, batch, tasks, &dh, &grads).total;
    backward(params, trace, dh, grads);
    out.tensors = params.store.slot_count();
    Rng probe(derive_seed(o.seed, 22));
    out.result = finite_diff_check(params.store, grads, loss_at, o.epsilon, o.sample, probe);
    return out;
}

}  // namespace syntaxlm
