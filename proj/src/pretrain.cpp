#include "syntaxlm/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "syntaxlm/checkpoint.hpp"
#include "syntaxlm/errors.hpp"
#include "syntaxlm/sequence.hpp"

namespace syntaxlm {

PretrainExample make_pretrain_example(const DependencyTree& tree, const Vocab& vocab, DistanceMode mode,
                                      bool intra_word_edges) {
    PretrainExample ex;
    ex.sentence_id = tree.sentence_id;
    auto enc = encode(tree, vocab);
    const auto edges = subword_graph(tree, enc.alignment, intra_word_edges);
    ex.distances = compute_distances(edges, static_cast<int>(enc.ids.size()), mode);
    ex.ids = std::move(enc.ids);
    ex.alignment = std::move(enc.alignment);
    for (const auto& w : tree.words) ex.head_of.push_back(w.head);
    return ex;
}

std::vector<PretrainExample> preprocess(const std::vector<DependencyTree>& trees, const Vocab& vocab,
                                        const PreprocessOptions& options, std::vector<std::string>* skipped) {
    std::vector<std::optional<PretrainExample>> slots(trees.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto ex = make_pretrain_example(trees[i], vocab, options.mode, options.intra_word_edges);
            if (static_cast<int>(ex.ids.size()) + 2 <= options.max_len) slots[i] = std::move(ex);
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(options.workers, 1)), 1,
                                                        std::max<std::size_t>(trees.size(), 1));
    if (workers == 1) {
        work(0, trees.size());
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        const std::size_t chunk = (trees.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t b = std::min(trees.size(), w * chunk), e = std::min(trees.size(), b + chunk);
            pool.emplace_back([&, w, b, e] {
                try {
                    work(b, e);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    std::vector<PretrainExample> out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i])
            out.push_back(std::move(*slots[i]));
        else if (skipped)
            skipped->push_back(trees[i].sentence_id);
    }
    return out;
}

std::vector<HpTarget> make_hp_targets(const PretrainExample& example) {
    if (example.head_of.size() != example.alignment.word_count())
        throw std::invalid_argument("example " + example.sentence_id + ": head list and alignment disagree");
    std::vector<HpTarget> targets;
    for (std::size_t w = 0; w < example.head_of.size(); ++w) {
        const int head = example.head_of[w];
        if (head < 0 || head > static_cast<int>(example.head_of.size()))
            throw std::out_of_range("example " + example.sentence_id + ": head index out of range");
        const int pos = example.alignment.first_subword(w);
        targets.push_back({pos, head == 0 ? pos : example.alignment.first_subword(static_cast<std::size_t>(head - 1))});
    }
    return targets;
}

MlmCorruption make_mlm_targets(const std::vector<int>& ids, const std::vector<char>& maskable, int vocab_size,
                               double rate, Rng& rng) {
    if (maskable.size() != ids.size()) throw std::invalid_argument("maskable flags do not match the sequence");
    if (vocab_size <= kNumSpecials) throw std::invalid_argument("vocabulary has no ordinary units");
    MlmCorruption out;
    out.ids = ids;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!maskable[i] || Vocab::is_special(ids[i])) continue;
        if (!rng.bernoulli(rate)) continue;
        out.targets.push_back({static_cast<int>(i), ids[i]});
        const double r = rng.uniform();
        if (r < 0.8) {
            out.ids[i] = kMask;
            ++out.masked;
        } else if (r < 0.9) {
            out.ids[i] = static_cast<int>(rng.uniform_int(kNumSpecials, vocab_size - 1));
            ++out.randomized;
        } else {
            ++out.kept;
        }
    }
    return out;
}

namespace {

void fill_normal(MatMap m, double stddev, Rng& rng) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal(0.0, stddev);
}

// Row-wise softmax cross-entropy. `logits` is overwritten with (softmax - onehot) / total.
double softmax_xent(Mat& logits, const std::vector<int>& labels, double total, std::size_t& correct) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        Eigen::Index arg;
        const double mx = logits.row(i).maxCoeff(&arg);
        if (arg == y) ++correct;
        logits.row(i) = (logits.row(i).array() - mx).exp();
        const double z = logits.row(i).sum();
        loss += std::log(z) - std::log(logits(i, y));
        logits.row(i) /= z;
        logits(i, y) -= 1.0;
    }
    logits /= total;
    return loss / total;
}

}  // namespace

PretrainHeads PretrainHeads::attach(ModelParams& params, Rng& rng) {
    const auto& c = params.config;
    auto& st = params.store;
    PretrainHeads h{};
    h.mlm_bias = st.add("mlm.bias", 1, c.vocab_size, ParamKind::bias);
    h.dp_w = st.add("dp.w", 2 * c.hidden, c.distance_classes, ParamKind::weight);
    h.dp_b = st.add("dp.b", 1, c.distance_classes, ParamKind::bias);
    h.hp_u = st.add("hp.u", c.hidden, c.hidden, ParamKind::weight);
    h.hp_v = st.add("hp.v", c.hidden, c.hidden, ParamKind::weight);
    fill_normal(st.tensor(h.dp_w), c.init_std, rng);
    fill_normal(st.tensor(h.hp_u), c.init_std, rng);
    fill_normal(st.tensor(h.hp_v), c.init_std, rng);
    return h;
}

PretrainHeads PretrainHeads::bind(const ParamStore& st) {
    return {st.require("mlm.bias"), st.require("dp.w"), st.require("dp.b"), st.require("hp.u"), st.require("hp.v")};
}

LossResult mlm_loss(const ModelParams& params, const PretrainHeads& heads, const Mat& hidden,
                    std::span<const PositionLabel> targets, Mat* dh, ParamStore* grads) {
    LossResult r;
    r.count = targets.size();
    if (targets.empty()) return r;
    const auto& st = params.store;
    const auto emb = st.tensor(params.slots.tok_emb);
    Mat x(static_cast<Eigen::Index>(targets.size()), hidden.cols());
    std::vector<int> labels;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = hidden.row(targets[i].position);
        labels.push_back(targets[i].label);
    }
    Mat logits = x * emb.transpose();
    logits.rowwise() += st.tensor(heads.mlm_bias).row(0);
    r.loss = softmax_xent(logits, labels, static_cast<double>(targets.size()), r.correct);
    if (grads) {
        grads->tensor(params.slots.tok_emb).noalias() += logits.transpose() * x;
        grads->tensor(heads.mlm_bias).row(0) += logits.colwise().sum();
    }
    if (dh) {
        const Mat dx = logits * emb;
        for (std::size_t i = 0; i < targets.size(); ++i) dh->row(targets[i].position) += dx.row(static_cast<Eigen::Index>(i));
    }
    return r;
}

LossResult dp_loss(const ModelParams& params, const PretrainHeads& heads, const Mat& hidden,
                   std::span<const PairLabel> targets, Mat* dh, ParamStore* grads) {
    LossResult r;
    r.count = targets.size();
    if (targets.empty()) return r;
    const auto& st = params.store;
    const Eigen::Index d = hidden.cols();
    Mat x(static_cast<Eigen::Index>(targets.size()), 2 * d);
    std::vector<int> labels;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        x.row(k).head(d) = hidden.row(targets[i].row);
        x.row(k).tail(d) = hidden.row(targets[i].col);
        labels.push_back(targets[i].label);
    }
    Mat logits = x * st.tensor(heads.dp_w);
    logits.rowwise() += st.tensor(heads.dp_b).row(0);
    r.loss = softmax_xent(logits, labels, static_cast<double>(targets.size()), r.correct);
    if (grads) {
        grads->tensor(heads.dp_w).noalias() += x.transpose() * logits;
        grads->tensor(heads.dp_b).row(0) += logits.colwise().sum();
    }
    if (dh) {
        const Mat dx = logits * st.tensor(heads.dp_w).transpose();
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            dh->row(targets[i].row) += dx.row(k).head(d);
            dh->row(targets[i].col) += dx.row(k).tail(d);
        }
    }
    return r;
}

LossResult hp_loss(const ModelParams& params, const PretrainHeads& heads, const Mat& hidden,
                   std::span<const HpGroup> groups, Mat* dh, ParamStore* grads) {
    LossResult r;
    for (const auto& g : groups) r.count += g.queries.size();
    if (r.count == 0) return r;
    const auto& st = params.store;
    const auto U = st.tensor(heads.hp_u);
    const auto V = st.tensor(heads.hp_v);
    const double total = static_cast<double>(r.count);
    for (const auto& g : groups) {
        if (g.queries.empty()) continue;
        const auto nc = static_cast<Eigen::Index>(g.candidates.size());
        const auto nq = static_cast<Eigen::Index>(g.queries.size());
        Mat hc(nc, hidden.cols()), hq(nq, hidden.cols());
        for (Eigen::Index i = 0; i < nc; ++i) hc.row(i) = hidden.row(g.candidates[static_cast<std::size_t>(i)]);
        std::vector<int> labels;
        for (Eigen::Index i = 0; i < nq; ++i) {
            const auto& [pos, gold] = g.queries[static_cast<std::size_t>(i)];
            if (gold < 0 || gold >= nc) throw std::out_of_range("head-prediction gold index outside the candidate set");
            hq.row(i) = hidden.row(pos);
            labels.push_back(gold);
        }
        const Mat a = hq * U;
        const Mat b = hc * V;
        Mat scores = a * b.transpose();
        r.loss += softmax_xent(scores, labels, total, r.correct);
        if (grads || dh) {
            const Mat da = scores * b;
            const Mat db = scores.transpose() * a;
            if (grads) {
                grads->tensor(heads.hp_u).noalias() += hq.transpose() * da;
                grads->tensor(heads.hp_v).noalias() += hc.transpose() * db;
            }
            if (dh) {
                const Mat dhq = da * U.transpose();
                const Mat dhc = db * V.transpose();
                for (Eigen::Index i = 0; i < nq; ++i) dh->row(g.queries[static_cast<std::size_t>(i)].first) += dhq.row(i);
                for (Eigen::Index i = 0; i < nc; ++i) dh->row(g.candidates[static_cast<std::size_t>(i)]) += dhc.row(i);
            }
        }
    }
    return r;
}

LossBreakdown combine_losses(const LossResult& mlm, const LossResult& hp, const LossResult& dp, const TaskToggles& tasks) {
    LossBreakdown b;
    if (tasks.mlm) b.mlm = mlm.loss, b.mlm_detail = mlm;
    if (tasks.hp) b.hp = hp.loss, b.hp_detail = hp;
    if (tasks.dp) b.dp = dp.loss, b.dp_detail = dp;
    b.total = b.mlm + b.hp + b.dp;
    return b;
}

PretrainBatch make_batch(std::span<const PretrainExample> corpus, std::span<const std::size_t> indices,
                         const CorruptionOptions& options, const TaskToggles& tasks, Rng& rng) {
    PretrainBatch batch;
    int offset = 0;
    for (std::size_t idx : indices) {
        const auto& ex = corpus[idx];
        const auto built = wrap_sentence(ex.ids, ex.alignment, ex.distances);
        SequenceInput in;
        std::vector<char> maskable(built.ids.size());
        for (std::size_t i = 0; i < maskable.size(); ++i) maskable[i] = !built.is_special[i];

        if (tasks.mlm) {
            auto mlm = make_mlm_targets(built.ids, maskable, options.vocab_size, options.mlm_rate, rng);
            in.ids = std::move(mlm.ids);
            for (const auto& t : mlm.targets) batch.mlm.push_back({offset + t.position, t.label});
        } else {
            in.ids = built.ids;
        }

        if (tasks.dp) {
            const auto dp = corrupt_for_dp(built.distances, options.dp_rate, options.distance_classes, rng);
            in.strength = normalize_corrupted(dp.corrupted, options.mask_policy);
            for (const auto& t : dp.targets) batch.dp.push_back({offset + t.row, offset + t.col, t.label});
        } else {
            in.strength = normalize(built.distances);
        }

        if (tasks.hp) {
            HpGroup g;
            const auto& spans = built.alignment.word_spans;
            for (const auto& [start, len] : spans) g.candidates.push_back(offset + start);
            for (std::size_t w = 0; w < ex.head_of.size(); ++w) {
                const int head = ex.head_of[w];
                g.queries.emplace_back(offset + spans[w].first, head == 0 ? static_cast<int>(w) : head - 1);
            }
            batch.hp.push_back(std::move(g));
        }

        offset += static_cast<int>(built.ids.size());
        batch.special.push_back(built.is_special);
        batch.inputs.push_back(std::move(in));
        batch.example_index.push_back(idx);
    }
    return batch;
}

LossBreakdown compute_losses(const ModelParams& params, const PretrainHeads& heads, const ForwardTrace& trace,
                             const PretrainBatch& batch, const TaskToggles& tasks, Mat* dh, ParamStore* grads) {
    const Mat& h = trace.output;
    LossResult mlm, hp, dp;
    if (tasks.mlm) mlm = mlm_loss(params, heads, h, batch.mlm, dh, grads);
    if (tasks.hp) hp = hp_loss(params, heads, h, batch.hp, dh, grads);
    if (tasks.dp) dp = dp_loss(params, heads, h, batch.dp, dh, grads);
    return combine_losses(mlm, hp, dp, tasks);
}

std::string format_metrics(const StepMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "step=%d lr=%.8g mlm=%.8g hp=%.8g dp=%.8g total=%.8g", m.step, m.lr, m.losses.mlm,
                  m.losses.hp, m.losses.dp, m.losses.total);
    std::string line = buf;
    if (m.alpha) {
        std::snprintf(buf, sizeof buf, " alpha=%.8g", *m.alpha);
        line += buf;
    } else {
        line += " alpha=absent";
    }
    return line;
}

StepMetrics train_step(TrainState& state, const PretrainBatch& batch, const TrainSchedule& schedule, int step,
                       const TaskToggles& tasks, double grad_clip) {
    auto& params = state.params;
    StepMetrics m;
    m.step = step;
    m.lr = schedule.learning_rate(step);

    state.grads.set_zero();
    const auto trace = forward(params, batch.inputs, &state.dropout_rng);
    Mat dh = Mat::Zero(trace.output.rows(), trace.output.cols());
    m.losses = compute_losses(params, state.heads, trace, batch, tasks, &dh, &state.grads);
    if (!std::isfinite(m.losses.total)) {
        std::string ids;
        for (auto i : batch.example_index) ids += " " + std::to_string(i);
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (batch " +
                           std::to_string(batch.batch_id) + ", examples" + ids + "): " + format_metrics(m));
    }
    backward(params, trace, dh, state.grads);
    if (grad_clip > 0.0) {
        auto g = state.grads.values();
        double sq = 0.0;
        for (double v : g) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > grad_clip)
            for (double& v : g) v *= grad_clip / norm;
    }
    state.optimizer.step(params.store, state.grads, m.lr);
    if (params.config.syntax_layer_enabled) m.alpha = params.alpha(0);
    return m;
}

PretrainResult pretrain_loop(const std::vector<PretrainExample>& corpus, const PretrainOptions& options,
                             const std::function<void(const StepMetrics&)>& on_step) {
    options.model.validate();
    options.schedule.validate();
    if (corpus.empty()) throw DataError("pre-training corpus is empty");
    for (const auto& ex : corpus)
        if (static_cast<int>(ex.ids.size()) + 2 > options.model.max_len)
            throw DataError("example " + ex.sentence_id + " exceeds max_len");

    const auto seed = options.schedule.seed;
    Rng init_rng(derive_seed(seed, 1));
    auto params = init_params(options.model, init_rng);
    const auto heads = PretrainHeads::attach(params, init_rng);
    auto grads = params.store.zeros_like();
    Adam adam(params.store, options.adam);
    if (options.freeze_alpha) adam.freeze(params.slots.alpha);
    TrainState state{std::move(params), heads, std::move(grads), std::move(adam), Rng(derive_seed(seed, 2))};
    Rng data_rng(derive_seed(seed, 3));

    CorruptionOptions corruption = options.corruption;
    if (corruption.vocab_size == 0) corruption.vocab_size = options.model.vocab_size;
    if (corruption.vocab_size <= kNumSpecials || corruption.vocab_size > options.model.vocab_size)
        throw ConfigError("corruption vocabulary (" + std::to_string(corruption.vocab_size) +
                          ") must exceed the specials and fit the model's vocab_size");
    corruption.distance_classes = options.model.distance_classes;

    std::ofstream log_file;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        log_file.open(options.out_dir + "/metrics.log", std::ios::trunc);
        if (!log_file) throw DataError("cannot write metrics log in '" + options.out_dir + "'");
    }
    auto write_checkpoint = [&](const std::string& name) {
        if (options.out_dir.empty()) return;
        save_checkpoint(options.out_dir + "/" + name, state.params, options.precision);
    };

    PretrainResult result;
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(options.schedule.batch_size);
    int step = 0;
    while (step < options.schedule.total_steps) {
        data_rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size() && step < options.schedule.total_steps; start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            auto batch = make_batch(corpus, std::span(order).subspan(start, end - start), corruption, options.tasks,
                                    data_rng);
            batch.batch_id = static_cast<std::size_t>(step);
            auto m = train_step(state, batch, options.schedule, step, options.tasks, options.grad_clip);
            if (log_file) log_file << format_metrics(m) << '\n';
            if (on_step) on_step(m);
            result.log.push_back(std::move(m));
            ++step;
            if (options.checkpoint_every > 0 && step % options.checkpoint_every == 0 &&
                step < options.schedule.total_steps)
                write_checkpoint("step-" + std::to_string(step) + ".ckpt");
        }
    }
    write_checkpoint("final.ckpt");
    if (log_file) {
        log_file.flush();
        if (!log_file) throw DataError("failed writing metrics log");
    }
    result.params = std::move(state.params);
    result.heads = heads;
    return result;
}

PretrainEval evaluate_pretrain(const ModelParams& params, const PretrainHeads& heads,
                               const std::vector<PretrainExample>& corpus, const CorruptionOptions& corruption,
                               const TaskToggles& tasks, std::uint64_t seed, int batch_size) {
    CorruptionOptions options = corruption;
    if (options.vocab_size == 0) options.vocab_size = params.config.vocab_size;
    Rng rng(seed);
    LossResult mlm, hp, dp;
    auto add = [](LossResult& acc, const LossResult& r) {
        acc.loss += r.loss * static_cast<double>(r.count);
        acc.count += r.count;
        acc.correct += r.correct;
    };
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(std::max(batch_size, 1));
    for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t end = std::min(order.size(), start + bs);
        const auto batch = make_batch(corpus, std::span(order).subspan(start, end - start), options, tasks, rng);
        const auto trace = forward(params, batch.inputs, nullptr);
        const auto b = compute_losses(params, heads, trace, batch, tasks, nullptr, nullptr);
        add(mlm, b.mlm_detail);
        add(hp, b.hp_detail);
        add(dp, b.dp_detail);
    }
    auto finish = [](LossResult& r, double& acc) {
        if (r.count == 0) return;
        r.loss /= static_cast<double>(r.count);
        acc = static_cast<double>(r.correct) / static_cast<double>(r.count);
    };
    PretrainEval e;
    finish(mlm, e.mlm_accuracy);
    finish(hp, e.hp_accuracy);
    finish(dp, e.dp_accuracy);
    e.losses = combine_losses(mlm, hp, dp, tasks);
    return e;
}

}  // namespace syntaxlm
