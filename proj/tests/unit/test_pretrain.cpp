#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"
#include "syntaxlm/checkpoint.hpp"
#include "syntaxlm/corpus_io.hpp"
#include "syntaxlm/diagnostics.hpp"
#include "syntaxlm/errors.hpp"
#include "syntaxlm/gradcheck.hpp"
#include "syntaxlm/pretrain.hpp"

using namespace syntaxlm;

namespace {

Vocab letters() {
    std::vector<std::string> units(std::begin(kSpecialStrings), std::end(kSpecialStrings));
    for (char c = 'a'; c <= 'z'; ++c) units.emplace_back(1, c);
    for (const char* u : {"play", "ing", "fris", "bee", "dog"}) units.emplace_back(u);
    return Vocab(units);
}

DependencyTree sentence(const std::vector<std::string>& forms, const std::vector<int>& heads) {
    auto t = oracle::tree_from_heads(heads);
    for (std::size_t i = 0; i < forms.size(); ++i) t.words[i].form = forms[i];
    return t;
}

ModelConfig small_model(int vocab) {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 16;
    c.heads = 2;
    c.ff = 32;
    c.vocab_size = vocab;
    c.max_len = 24;
    c.dropout = 0.1;
    return c;
}

struct SmallCorpus {
    Vocab vocab;
    std::vector<PretrainExample> examples;
};

SmallCorpus small_corpus(std::size_t sentences, std::uint64_t seed) {
    Rng rng(seed);
    const auto trees = random_treebank(sentences, 3, 8, 12, rng, "p", 2);
    SmallCorpus c{train_vocab(trees, 40), {}};
    c.examples = preprocess(trees, c.vocab, {});
    return c;
}

PretrainOptions options_for(const SmallCorpus& c, int steps) {
    PretrainOptions o;
    o.model = small_model(c.vocab.size());
    o.schedule.total_steps = steps;
    o.schedule.warmup_steps = steps / 10;
    o.schedule.peak_lr = 1e-3;
    o.schedule.batch_size = 4;
    o.schedule.seed = 5;
    return o;
}

}  // namespace

TEST_CASE("MLM corruption statistics") {
    Rng rng(31);
    std::vector<int> ids(1000);
    for (auto& id : ids) id = static_cast<int>(rng.uniform_int(kNumSpecials, 99));
    const std::vector<char> maskable(ids.size(), 1);
    std::size_t selected = 0, masked = 0, randomized = 0, kept = 0;
    for (int round = 0; round < 100; ++round) {
        const auto m = make_mlm_targets(ids, maskable, 100, 0.15, rng);
        selected += m.targets.size();
        masked += m.masked;
        randomized += m.randomized;
        kept += m.kept;
        for (const auto& t : m.targets) {
            CHECK(t.label == ids[static_cast<std::size_t>(t.position)]);
            const int v = m.ids[static_cast<std::size_t>(t.position)];
            CHECK((v == kMask || (v >= kNumSpecials && v < 100)));
        }
    }
    const double s = static_cast<double>(selected);
    CHECK(std::abs(s / 1e5 - 0.15) <= 0.01);
    CHECK(std::abs(masked / s - 0.8) <= 0.02);
    CHECK(std::abs(randomized / s - 0.1) <= 0.02);
    CHECK(std::abs(kept / s - 0.1) <= 0.02);
}

TEST_CASE("special tokens are never MLM targets") {
    Rng rng(1);
    const std::vector<int> specials{kSepOpen, kMask, kEntAt, kEntHash, kSepClose};
    CHECK(make_mlm_targets(specials, std::vector<char>(5, 1), 50, 0.99, rng).targets.empty());
}

TEST_CASE("batch corruption leaves special positions alone") {
    const auto c = small_corpus(20, 2);
    Rng rng(3);
    CorruptionOptions opt;
    opt.vocab_size = c.vocab.size();
    std::vector<std::size_t> idx(c.examples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int round = 0; round < 500; ++round) {
        const auto b = make_batch(c.examples, idx, opt, {}, rng);
        std::vector<char> special;
        std::vector<int> ids;
        for (std::size_t s = 0; s < b.inputs.size(); ++s) {
            special.insert(special.end(), b.special[s].begin(), b.special[s].end());
            ids.insert(ids.end(), b.inputs[s].ids.begin(), b.inputs[s].ids.end());
            const auto& st = b.inputs[s].strength;
            for (std::size_t i = 0; i < b.special[s].size(); ++i)
                if (b.special[s][i]) {
                    CHECK(st.row(static_cast<Eigen::Index>(i)).cwiseAbs().sum() == 0.0);
                    CHECK(st.col(static_cast<Eigen::Index>(i)).cwiseAbs().sum() == 0.0);
                }
        }
        for (const auto& t : b.mlm) CHECK_FALSE(special[static_cast<std::size_t>(t.position)]);
        for (const auto& t : b.dp) {
            CHECK_FALSE(special[static_cast<std::size_t>(t.row)]);
            CHECK_FALSE(special[static_cast<std::size_t>(t.col)]);
        }
        for (std::size_t i = 0; i < special.size(); ++i)
            if (special[i]) CHECK((ids[i] == kSepOpen || ids[i] == kSepClose));
        for (const auto& g : b.hp)
            for (const auto& [pos, gold] : g.queries) {
                REQUIRE(gold < static_cast<int>(g.candidates.size()));
                CHECK_FALSE(special[static_cast<std::size_t>(g.candidates[static_cast<std::size_t>(gold)])]);
                (void)pos;
            }
    }
}

TEST_CASE("HP targets") {
    const auto v = letters();
    SUBCASE("heads [2,0,2]: every word points at position 2, the root at itself") {
        const auto ex = make_pretrain_example(sentence({"a", "b", "c"}, {2, 0, 2}), v, DistanceMode::directed, true);
        const auto t = make_hp_targets(ex);
        REQUIRE(t.size() == 3);
        for (const auto& x : t) CHECK(x.target == 1);  // 0-based
        CHECK(t[1].position == 1);
    }
    SUBCASE("multi-subword words point at the head's first subword") {
        const auto ex =
            make_pretrain_example(sentence({"frisbee", "playing"}, {2, 0}), v, DistanceMode::directed, true);
        REQUIRE(ex.ids.size() == 4);
        const auto t = make_hp_targets(ex);
        CHECK(t[0].position == 0);
        CHECK(t[0].target == 2);
        CHECK(t[1].target == 2);
    }
    SUBCASE("single word targets itself") {
        const auto t = make_hp_targets(make_pretrain_example(sentence({"dog"}, {0}), v, DistanceMode::directed, true));
        REQUIRE(t.size() == 1);
        CHECK(t[0].target == t[0].position);
    }
}

TEST_CASE("uniform logits give log-cardinality losses") {
    Rng rng(4);
    ModelConfig c = small_model(1024);
    auto p = init_params(c, rng);
    const auto heads = PretrainHeads::attach(p, rng);
    const Mat zero = Mat::Zero(6, c.hidden);

    const std::vector<PositionLabel> mlm{{0, 10}, {3, 500}};
    CHECK(std::abs(mlm_loss(p, heads, zero, mlm, nullptr, nullptr).loss - std::log(1024.0)) < 1e-6);
    CHECK(mlm_loss(p, heads, zero, {}, nullptr, nullptr).loss == 0.0);

    const std::vector<PairLabel> dp{{0, 1, 0}, {2, 4, 7}, {5, 1, 15}};
    CHECK(std::abs(dp_loss(p, heads, zero, dp, nullptr, nullptr).loss - std::log(16.0)) < 1e-6);
    CHECK(std::abs(std::log(16.0) - 2.7726) < 1e-4);

    const std::vector<HpGroup> four{{{0, 1, 2, 3}, {{0, 1}, {2, 2}}}};
    CHECK(std::abs(hp_loss(p, heads, zero, four, nullptr, nullptr).loss - std::log(4.0)) < 1e-6);
    Rng r2(5);
    Mat h(6, c.hidden);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = r2.normal(0, 1);
    const std::vector<HpGroup> one{{{2}, {{2, 0}, {4, 0}}}};
    CHECK(hp_loss(p, heads, h, one, nullptr, nullptr).loss == 0.0);
}

TEST_CASE("confident correct logits drive the loss to zero") {
    Rng rng(6);
    auto p = init_params(small_model(64), rng);
    const auto heads = PretrainHeads::attach(p, rng);
    p.store.tensor(heads.dp_b)(0, 3) = 60.0;
    const std::vector<PairLabel> dp{{0, 1, 3}};
    const auto r = dp_loss(p, heads, Mat::Zero(2, 16), dp, nullptr, nullptr);
    CHECK(r.loss < 1e-20);
    CHECK(r.correct == 1);
}

TEST_CASE("loss combination") {
    LossResult a{1.0, 1, 0}, b{2.0, 1, 0}, d{3.0, 1, 0};
    CHECK(combine_losses(a, b, d, {}).total == 6.0);
    CHECK(combine_losses(a, b, d, {true, false, false}).total == 1.0);
    const auto no_dp = combine_losses(a, b, d, {true, true, false});
    CHECK(no_dp.total == 3.0);
    CHECK(no_dp.dp == 0.0);
}

TEST_CASE("head gradients match finite differences at fixed hidden states") {
    Rng rng(7);
    ModelConfig c = small_model(30);
    c.hidden = 6;
    c.heads = 1;
    c.init_std = 0.5;
    auto p = init_params(c, rng);
    const auto heads = PretrainHeads::attach(p, rng);
    Mat h(7, c.hidden);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.normal(0, 1);
    const std::vector<PairLabel> dp{{0, 1, 2}, {3, 6, 0}, {5, 5, 9}};
    const std::vector<HpGroup> hp{{{0, 2, 4}, {{0, 1}, {2, 1}, {4, 0}}}, {{5, 6}, {{5, 1}, {6, 1}}}};
    const std::vector<PositionLabel> mlm{{1, 8}, {4, 29}};

    auto total = [&](const ModelParams& m, Mat* dh, ParamStore* g) {
        return dp_loss(m, heads, h, dp, dh, g).loss + hp_loss(m, heads, h, hp, dh, g).loss +
               mlm_loss(m, heads, h, mlm, dh, g).loss;
    };
    auto grads = p.store.zeros_like();
    Mat dh = Mat::Zero(h.rows(), h.cols());
    total(p, &dh, &grads);
    const auto r = finite_diff_check(p.store, grads, [&](const ParamStore& s) {
        ModelParams m{p.config, s, p.slots};
        return total(m, nullptr, nullptr);
    }, 1e-5, 400, rng);
    CHECK(r.max_rel_error < 1e-4);

    // dLoss/dH against central differences on the hidden states themselves.
    double worst = 0.0;
    for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (Eigen::Index j = 0; j < h.cols(); ++j) {
            const double keep = h(i, j);
            h(i, j) = keep + 1e-5;
            const double up = total(p, nullptr, nullptr);
            h(i, j) = keep - 1e-5;
            const double down = total(p, nullptr, nullptr);
            h(i, j) = keep;
            worst = std::max(worst, relative_error(dh(i, j), (up - down) / 2e-5));
        }
    CHECK(worst < 1e-4);
}

TEST_CASE("tied embeddings: full-model MLM gradient matches finite differences") {
    ModelConfig c = small_model(24);
    c.hidden = 8;
    c.dropout = 0.0;
    c.init_std = 0.4;
    c.max_len = 8;
    Rng rng(8);
    auto p = init_params(c, rng);
    const auto heads = PretrainHeads::attach(p, rng);
    SequenceInput seq{{3, 9, 2, 14, 4}, StrengthMatrix::Zero(5, 5)};
    seq.strength(1, 3) = 1.0;
    const std::vector<PositionLabel> mlm{{2, 9}, {1, 20}};
    auto loss = [&](const ModelParams& m) { return mlm_loss(m, heads, forward(m, seq).output, mlm, nullptr, nullptr).loss; };
    const auto trace = forward(p, seq);
    auto grads = p.store.zeros_like();
    Mat dh = Mat::Zero(5, c.hidden);
    mlm_loss(p, heads, trace.output, mlm, &dh, &grads);
    backward(p, trace, dh, grads);
    // Every coordinate of the shared embedding rows that appear on both sides.
    double worst = 0.0;
    for (int row : {9, 20, 3})
        for (int col = 0; col < c.hidden; ++col) {
            ModelParams up = p, down = p;
            up.store.tensor(p.slots.tok_emb)(row, col) += 1e-5;
            down.store.tensor(p.slots.tok_emb)(row, col) -= 1e-5;
            worst = std::max(worst, relative_error(std::as_const(grads).tensor(p.slots.tok_emb)(row, col),
                                                   (loss(up) - loss(down)) / 2e-5));
        }
    CHECK(worst < 1e-4);
}

TEST_CASE("learning-rate schedule") {
    TrainSchedule s;
    s.total_steps = 1000;
    s.warmup_steps = 100;
    s.peak_lr = 1e-3;
    CHECK(s.learning_rate(0) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(s.learning_rate(100) == 1e-3);
    CHECK(s.learning_rate(99) == 1e-3);
    CHECK(s.learning_rate(550) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(s.learning_rate(999) > 0.0);
    s.warmup_steps = 1000;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("preprocessing: worker count does not change output; long sentences are skipped") {
    Rng rng(9);
    auto trees = random_treebank(60, 2, 10, 15, rng);
    const auto v = train_vocab(trees, 30);
    PreprocessOptions o;
    o.max_len = 14;
    std::vector<std::string> skip1, skip4;
    const auto one = preprocess(trees, v, o, &skip1);
    o.workers = 4;
    const auto four = preprocess(trees, v, o, &skip4);
    CHECK(one == four);
    CHECK(skip1 == skip4);
    CHECK_FALSE(skip1.empty());
    CHECK(one.size() + skip1.size() == trees.size());
    for (const auto& ex : one) CHECK(ex.ids.size() + 2 <= 14);
}

TEST_CASE("preprocessed corpus file round trip") {
    const auto c = small_corpus(10, 10);
    PreparedCorpus pc{c.vocab.size(), DistanceMode::undirected, false, c.examples};
    const auto back = decode_corpus(encode_corpus(pc));
    CHECK(back.vocab_size == pc.vocab_size);
    CHECK(back.mode == DistanceMode::undirected);
    CHECK_FALSE(back.intra_word_edges);
    CHECK(back.examples == pc.examples);
    const auto bytes = encode_corpus(pc);
    CHECK_THROWS_AS(decode_corpus(bytes.substr(0, bytes.size() - 1)), DataError);
}

TEST_CASE("metrics line format") {
    StepMetrics m;
    m.step = 3;
    m.lr = 0.5;
    m.losses.mlm = 1;
    m.losses.total = 1;
    CHECK(format_metrics(m) == "step=3 lr=0.5 mlm=1 hp=0 dp=0 total=1 alpha=absent");
    m.alpha = 0.25;
    CHECK(format_metrics(m) == "step=3 lr=0.5 mlm=1 hp=0 dp=0 total=1 alpha=0.25");
}

TEST_CASE("short overfit run lowers the loss; training is deterministic") {
    const auto c = small_corpus(8, 11);
    const auto o = options_for(c, 200);
    const auto a = pretrain_loop(c.examples, o);
    const auto b = pretrain_loop(c.examples, o);
    REQUIRE(a.log.size() == 200);
    double tail = 0.0;
    for (std::size_t i = 190; i < 200; ++i) tail += a.log[i].losses.total / 10.0;
    CHECK(tail < a.log[0].losses.total);
    CHECK(encode_checkpoint(a.params) == encode_checkpoint(b.params));
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(format_metrics(a.log[i]) == format_metrics(b.log[i]));
    CHECK(a.log.back().alpha.has_value());
}

TEST_CASE("syntax-free run logs alpha as absent") {
    const auto c = small_corpus(8, 12);
    auto o = options_for(c, 5);
    o.model.syntax_layer_enabled = false;
    const auto r = pretrain_loop(c.examples, o);
    for (const auto& m : r.log) CHECK_FALSE(m.alpha.has_value());
}

TEST_CASE("ablated tasks log zero sub-losses") {
    const auto c = small_corpus(8, 13);
    auto o = options_for(c, 5);
    o.tasks.dp = false;
    for (const auto& m : pretrain_loop(c.examples, o).log) {
        CHECK(m.losses.dp == 0.0);
        CHECK(m.losses.total == m.losses.mlm + m.losses.hp);
    }
    o.tasks = {true, false, true};
    for (const auto& m : pretrain_loop(c.examples, o).log) {
        CHECK(m.losses.hp == 0.0);
        CHECK(m.losses.total == m.losses.mlm + m.losses.dp);
    }
}

TEST_CASE("no DP, no syntax layer, frozen alpha: same trajectory as the inert syntax layer") {
    const auto c = small_corpus(12, 14);
    auto base = options_for(c, 60);
    base.tasks.dp = false;
    base.freeze_alpha = true;
    base.model.syntax_layer_enabled = false;
    auto inert = base;
    inert.model.syntax_layer_enabled = true;
    inert.model.alpha_init = 0.0;
    const auto a = pretrain_loop(c.examples, base);
    const auto b = pretrain_loop(c.examples, inert);
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(std::abs(a.log[i].losses.total - b.log[i].losses.total) < 1e-6);
    CHECK(b.params.alpha(0) == 0.0);
}

TEST_CASE("non-finite loss is a numeric error naming the step") {
    const auto c = small_corpus(4, 15);
    auto o = options_for(c, 3);
    Rng rng(1);
    auto params = init_params(o.model, rng);
    const auto heads = PretrainHeads::attach(params, rng);
    params.store.tensor(heads.mlm_bias)(0, 8) = std::nan("");
    auto grads = params.store.zeros_like();
    Adam adam(params.store);
    TrainState state{std::move(params), heads, std::move(grads), std::move(adam), Rng(2)};
    CorruptionOptions corr;
    corr.vocab_size = c.vocab.size();
    std::vector<std::size_t> idx{0, 1, 2, 3};
    Rng data(3);
    const auto batch = make_batch(c.examples, idx, corr, {}, data);
    try {
        train_step(state, batch, o.schedule, 0, {});
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("bad corruption vocabulary is a configuration error") {
    const auto c = small_corpus(4, 16);
    auto o = options_for(c, 2);
    o.corruption.vocab_size = o.model.vocab_size + 1;
    CHECK_THROWS_AS(pretrain_loop(c.examples, o), ConfigError);
}
