#include "syntaxlm/finetune.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

namespace {

void check_span(const WordSpan& s, int words, const char* name) {
    if (s.first < 0 || s.last < s.first || s.last >= words)
        throw std::out_of_range(std::string(name) + " [" + std::to_string(s.first) + ", " + std::to_string(s.last) +
                                "] outside a " + std::to_string(words) + "-word sentence");
}

bool overlaps(const WordSpan& a, const WordSpan& b) { return a.first <= b.last && b.first <= a.last; }

int span_end(const Alignment& a, int last_word) {
    const auto& [start, len] = a.word_spans.at(static_cast<std::size_t>(last_word));
    return start + len;
}

// Word-level distances; equal to distances between first subwords in the subword graph.
DistanceMatrix word_distances(const DependencyTree& tree, DistanceMode mode) {
    SubwordEdgeSet edges;
    for (const auto& w : tree.words)
        if (w.head > 0) edges.push_back({w.head - 1, w.index - 1});
    return compute_distances(edges, static_cast<int>(tree.size()), mode);
}

double softmax_xent_row(Eigen::Ref<RowVec> logits, int label, bool& correct) {
    Eigen::Index arg;
    const double mx = logits.maxCoeff(&arg);
    correct = arg == label;
    logits = (logits.array() - mx).exp();
    const double z = logits.sum();
    const double loss = std::log(z) - std::log(logits(label));
    logits /= z;
    logits(label) -= 1.0;
    return loss;
}

std::string format_alpha(const std::optional<double>& alpha) {
    if (!alpha) return "absent";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *alpha);
    return buf;
}

std::optional<double> report_alpha(const ModelParams& p) {
    if (!p.config.syntax_layer_enabled) return std::nullopt;
    return p.alpha(0);
}

}  // namespace

MarkedExample mark_entities(const TaskExample& example, const Vocab& vocab, DistanceMode mode, bool intra_word_edges) {
    const int words = static_cast<int>(example.tree.size());
    check_span(example.span1, words, "span1");
    if (example.span2) {
        check_span(*example.span2, words, "span2");
        if (overlaps(example.span1, *example.span2)) throw std::invalid_argument("span1 and span2 overlap");
    }
    const auto enc = encode(example.tree, vocab);
    const auto edges = subword_graph(example.tree, enc.alignment, intra_word_edges);
    const auto dist = compute_distances(edges, static_cast<int>(enc.ids.size()), mode);
    const int n = static_cast<int>(enc.ids.size());
    const auto& al = enc.alignment;

    // Closers precede openers at a shared position so adjacent spans stay well nested.
    std::vector<SpecialInsert> inserts{{0, kSepOpen}};
    inserts.push_back({span_end(al, example.span1.last), kEntAt});
    if (example.span2) inserts.push_back({span_end(al, example.span2->last), kEntHash});
    inserts.push_back({al.first_subword(static_cast<std::size_t>(example.span1.first)), kEntAt});
    if (example.span2) inserts.push_back({al.first_subword(static_cast<std::size_t>(example.span2->first)), kEntHash});
    inserts.push_back({n, kSepClose});

    MarkedExample m;
    m.built = insert_specials(enc.ids, al, dist, inserts);
    m.input.ids = m.built.ids;
    m.input.strength = normalize(m.built.distances);
    m.at_position = m.built.position_of[static_cast<std::size_t>(al.first_subword(example.span1.first))] - 1;
    if (example.span2)
        m.hash_position = m.built.position_of[static_cast<std::size_t>(al.first_subword(example.span2->first))] - 1;
    m.label = example.label;
    return m;
}

SyntheticKind parse_synthetic_kind(std::string_view s) {
    if (s == "distance-label" || s == "distance_label") return SyntheticKind::distance_label;
    if (s == "head-pair" || s == "head_pair") return SyntheticKind::head_pair;
    throw ConfigError("unknown synthetic task kind '" + std::string(s) + "' (expected distance-label or head-pair)");
}

std::vector<TaskExample> make_synthetic_task(const std::vector<DependencyTree>& trees, SyntheticKind kind,
                                             std::size_t count, Rng& rng, DistanceMode mode) {
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < trees.size(); ++i)
        if (trees[i].size() >= 2) usable.push_back(i);
    if (usable.empty()) throw DataError("no sentence has two or more words");

    const int classes = kind == SyntheticKind::distance_label ? kDistanceLabelClasses : 2;
    std::vector<DistanceMatrix> dist_cache(trees.size());
    std::vector<char> cached(trees.size(), 0);
    auto distances = [&](std::size_t t) -> const DistanceMatrix& {
        if (!cached[t]) {
            dist_cache[t] = word_distances(trees[t], mode);
            cached[t] = 1;
        }
        return dist_cache[t];
    };

    std::vector<TaskExample> out;
    const std::size_t max_attempts = 1000 * std::max<std::size_t>(usable.size(), 1);
    for (std::size_t k = 0; k < count; ++k) {
        const int want = static_cast<int>(k % static_cast<std::size_t>(classes));
        bool found = false;
        for (std::size_t attempt = 0; attempt < max_attempts && !found; ++attempt) {
            const std::size_t t = usable[rng.index(usable.size())];
            const auto& tree = trees[t];
            const int n = static_cast<int>(tree.size());
            std::vector<std::pair<int, int>> pairs;
            if (kind == SyntheticKind::distance_label) {
                const auto& d = distances(t);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j)
                        if (i != j && d(i, j) > 0 && bucketize(d(i, j), classes) == want) pairs.emplace_back(i, j);
            } else {
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j)
                        if (i != j && (tree.words[static_cast<std::size_t>(j)].head == i + 1) == (want == 1))
                            pairs.emplace_back(i, j);
            }
            if (pairs.empty()) continue;
            const auto [a, b] = pairs[rng.index(pairs.size())];
            out.push_back({tree, {a, a}, WordSpan{b, b}, want});
            found = true;
        }
        if (!found)
            throw DataError("corpus cannot supply synthetic examples of class " + std::to_string(want));
    }
    return out;
}

std::string format_task_record(const TaskExample& e) {
    std::string s = "sent_id=" + e.tree.sentence_id + "\tspan1=" + std::to_string(e.span1.first + 1) + "-" +
                    std::to_string(e.span1.last + 1);
    if (e.span2) s += "\tspan2=" + std::to_string(e.span2->first + 1) + "-" + std::to_string(e.span2->last + 1);
    s += "\tlabel=" + std::to_string(e.label);
    return s;
}

std::vector<TaskExample> parse_task_records(std::string_view text, const std::vector<DependencyTree>& trees) {
    std::unordered_map<std::string, const DependencyTree*> by_id;
    for (const auto& t : trees) by_id.emplace(t.sentence_id, &t);

    auto parse_int = [](std::string_view s, std::size_t line) {
        int v = 0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size()) throw ParseError(line, "expected an integer, got '" + std::string(s) + "'");
        return v;
    };
    auto parse_span = [&](std::string_view s, std::size_t line) {
        const auto dash = s.find('-');
        if (dash == std::string_view::npos) throw ParseError(line, "span must look like a-b");
        return WordSpan{parse_int(s.substr(0, dash), line) - 1, parse_int(s.substr(dash + 1), line) - 1};
    };

    std::vector<TaskExample> out;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;

        std::optional<std::string> sid;
        std::optional<WordSpan> s1, s2;
        std::optional<int> label;
        std::size_t fpos = 0;
        while (fpos <= line.size()) {
            const auto tab = line.find('\t', fpos);
            const auto field = line.substr(fpos, tab == std::string_view::npos ? std::string_view::npos : tab - fpos);
            fpos = tab == std::string_view::npos ? line.size() + 1 : tab + 1;
            const auto eq = field.find('=');
            if (eq == std::string_view::npos) throw ParseError(line_no, "field without '=': '" + std::string(field) + "'");
            const auto key = field.substr(0, eq), value = field.substr(eq + 1);
            if (key == "sent_id")
                sid = std::string(value);
            else if (key == "span1")
                s1 = parse_span(value, line_no);
            else if (key == "span2")
                s2 = parse_span(value, line_no);
            else if (key == "label")
                label = parse_int(value, line_no);
            else
                throw ParseError(line_no, "unknown field '" + std::string(key) + "'");
        }
        if (!sid || !s1 || !label) throw ParseError(line_no, "record needs sent_id, span1 and label");
        const auto it = by_id.find(*sid);
        if (it == by_id.end()) throw DataError("task record on line " + std::to_string(line_no) + " names unknown sentence " + *sid);
        TaskExample e{*it->second, *s1, s2, *label};
        const int words = static_cast<int>(e.tree.size());
        try {
            check_span(e.span1, words, "span1");
            if (e.span2) {
                check_span(*e.span2, words, "span2");
                if (overlaps(e.span1, *e.span2)) throw std::invalid_argument("span1 and span2 overlap");
            }
        } catch (const std::logic_error& err) {
            throw ParseError(line_no, err.what());
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_task_file(const std::string& path, const std::vector<TaskExample>& examples) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write task file '" + path + "'");
    for (const auto& e : examples) out << format_task_record(e) << '\n';
    if (!out) throw DataError("failed writing task file '" + path + "'");
}

std::vector<TaskExample> read_task_file(const std::string& path, const std::vector<DependencyTree>& trees) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open task file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_task_records(buf.str(), trees);
}

ClassifierHead ClassifierHead::attach(ModelParams& params, int arity, int classes, Rng& rng) {
    if (arity < 1 || arity > 2) throw std::invalid_argument("classifier arity must be 1 or 2");
    if (classes < 2) throw ConfigError("a classification task needs at least 2 classes");
    const int d = params.config.hidden;
    ClassifierHead h;
    h.arity = arity;
    h.classes = classes;
    h.w = params.store.add("cls.w", arity * d, classes, ParamKind::weight);
    h.b = params.store.add("cls.b", 1, classes, ParamKind::bias);
    auto w = params.store.tensor(h.w);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal(0.0, params.config.init_std);
    return h;
}

ClassifierHead ClassifierHead::bind(const ParamStore& store, int hidden) {
    ClassifierHead h;
    h.w = store.require("cls.w");
    h.b = store.require("cls.b");
    const auto& s = store.slot(h.w);
    if (s.rows % hidden != 0 || s.rows / hidden < 1 || s.rows / hidden > 2)
        throw DataError("classifier head shape does not match the model width");
    h.arity = static_cast<int>(s.rows / hidden);
    h.classes = static_cast<int>(s.cols);
    return h;
}

namespace {

Mat gather_markers(const Mat& hidden, int row0, const MarkedExample& ex, int arity) {
    const Eigen::Index d = hidden.cols();
    Mat x(1, arity * d);
    x.block(0, 0, 1, d) = hidden.row(row0 + ex.at_position);
    if (arity == 2) {
        if (ex.hash_position < 0) throw std::invalid_argument("relation classifier needs a second entity");
        x.block(0, d, 1, d) = hidden.row(row0 + ex.hash_position);
    }
    return x;
}

Mat logits_for(const ModelParams& params, const ClassifierHead& head, const Mat& x) {
    Mat l = x * params.store.tensor(head.w);
    l += params.store.tensor(head.b);
    return l;
}

}  // namespace

Mat classifier_logits(const ModelParams& params, const ClassifierHead& head, const MarkedExample& example) {
    const auto trace = forward(params, example.input, nullptr);
    return logits_for(params, head, gather_markers(trace.output, 0, example, head.arity));
}

EvalReport evaluate(const std::vector<int>& predictions, const std::vector<int>& golds) {
    if (predictions.size() != golds.size()) throw std::invalid_argument("predictions and golds differ in length");
    if (golds.empty()) throw DataError("evaluation set is empty");
    EvalReport r;
    r.count = golds.size();
    std::size_t hit = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) hit += predictions[i] == golds[i];
    r.accuracy = static_cast<double>(hit) / static_cast<double>(r.count);
    r.precision = r.recall = r.f1 = r.accuracy;
    return r;
}

EvalReport evaluate(const std::vector<std::vector<int>>& predictions, const std::vector<std::vector<int>>& golds) {
    if (predictions.size() != golds.size()) throw std::invalid_argument("predictions and golds differ in length");
    if (golds.empty()) throw DataError("evaluation set is empty");
    EvalReport r;
    r.count = golds.size();
    std::size_t tp = 0, fp = 0, fn = 0, exact = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const std::set<int> p(predictions[i].begin(), predictions[i].end());
        const std::set<int> g(golds[i].begin(), golds[i].end());
        std::size_t inter = 0;
        for (int v : p) inter += g.count(v);
        tp += inter;
        fp += p.size() - inter;
        fn += g.size() - inter;
        exact += p == g;
    }
    r.accuracy = static_cast<double>(exact) / static_cast<double>(r.count);
    r.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

std::string format_report(const EvalReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "count = %zu\naccuracy = %.6f\nprecision = %.6f\nrecall = %.6f\nf1 = %.6f\n", r.count,
                  r.accuracy, r.precision, r.recall, r.f1);
    return std::string(buf) + "alpha = " + format_alpha(r.alpha) + "\n";
}

std::vector<int> predict(const ModelParams& params, const ClassifierHead& head,
                         const std::vector<MarkedExample>& examples) {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        Eigen::Index arg;
        classifier_logits(params, head, ex).row(0).maxCoeff(&arg);
        out.push_back(static_cast<int>(arg));
    }
    return out;
}

EvalReport evaluate_model(const ModelParams& params, const ClassifierHead& head,
                          const std::vector<MarkedExample>& examples) {
    std::vector<int> golds;
    for (const auto& ex : examples) golds.push_back(ex.label);
    auto r = evaluate(predict(params, head, examples), golds);
    r.alpha = report_alpha(params);
    return r;
}

FinetuneResult finetune_loop(ModelParams params, const std::vector<MarkedExample>& train,
                             const std::vector<MarkedExample>& dev, const FinetuneOptions& options) {
    if (train.empty()) throw DataError("fine-tuning set is empty");
    if (dev.empty()) throw DataError("dev set is empty");
    if (options.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (options.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(options.lr > 0.0)) throw ConfigError("finetune lr must be positive");
    const int arity = train.front().hash_position >= 0 ? 2 : 1;
    for (const auto* set : {&train, &dev})
        for (const auto& ex : *set) {
            if (ex.label < 0 || ex.label >= options.classes)
                throw DataError("label " + std::to_string(ex.label) + " outside [0, " + std::to_string(options.classes) + ")");
            if ((ex.hash_position >= 0 ? 2 : 1) != arity) throw DataError("task mixes one- and two-entity examples");
            if (static_cast<int>(ex.input.ids.size()) > params.config.max_len)
                throw DataError("a task example exceeds max_len");
        }

    Rng rng(derive_seed(options.seed, 11));
    const auto head = ClassifierHead::attach(params, arity, options.classes, rng);
    auto grads = params.store.zeros_like();
    Adam adam(params.store, options.adam);
    for (std::size_t s = 0; s < params.store.slot_count(); ++s) {
        const auto& name = params.store.slot(s).name;
        if (name.starts_with("mlm.") || name.starts_with("dp.") || name.starts_with("hp.")) adam.freeze(s);
    }
    if (options.freeze_alpha) adam.freeze(params.slots.alpha);
    Rng dropout_rng(derive_seed(options.seed, 12));
    Rng order_rng(derive_seed(options.seed, 13));

    std::ofstream log_file;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        log_file.open(options.out_dir + "/finetune.log", std::ios::trunc);
        if (!log_file) throw DataError("cannot write fine-tuning log in '" + options.out_dir + "'");
    }

    FinetuneResult result{params, head, {}, 0, {}};
    double best = -1.0;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const int d = params.config.hidden;
    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            std::vector<SequenceInput> inputs;
            for (std::size_t i = start; i < end; ++i) inputs.push_back(train[order[i]].input);
            grads.set_zero();
            const auto trace = forward(params, inputs, &dropout_rng);
            Mat dh = Mat::Zero(trace.output.rows(), trace.output.cols());
            const double scale = 1.0 / static_cast<double>(end - start);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& ex = train[order[i]];
                const int row0 = trace.offsets[i - start];
                const Mat x = gather_markers(trace.output, row0, ex, arity);
                Mat logits = logits_for(params, head, x);
                bool ok = false;
                batch_loss += softmax_xent_row(logits.row(0), ex.label, ok);
                correct += ok;
                logits *= scale;
                grads.tensor(head.w).noalias() += x.transpose() * logits;
                grads.tensor(head.b) += logits;
                const Mat dx = logits * std::as_const(params).store.tensor(head.w).transpose();
                dh.row(row0 + ex.at_position) += dx.block(0, 0, 1, d);
                if (arity == 2) dh.row(row0 + ex.hash_position) += dx.block(0, d, 1, d);
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite fine-tuning loss in epoch " + std::to_string(epoch));
            loss_sum += batch_loss;
            backward(params, trace, dh, grads);
            adam.step(params.store, grads, options.lr);
        }
        const auto dev_report = evaluate_model(params, head, dev);
        char buf[200];
        std::snprintf(buf, sizeof buf, "epoch=%d train_loss=%.8g train_accuracy=%.6f dev_accuracy=%.6f", epoch,
                      loss_sum / static_cast<double>(train.size()),
                      static_cast<double>(correct) / static_cast<double>(train.size()), dev_report.accuracy);
        std::string line = std::string(buf) + " alpha=" + format_alpha(report_alpha(params));
        if (log_file) log_file << line << '\n';
        result.log.push_back(std::move(line));
        if (dev_report.accuracy > best) {
            best = dev_report.accuracy;
            result.params = params;
            result.best_epoch = epoch;
        }
    }

    // The reported model is exactly the one a checkpoint round trip yields.
    const auto bytes = encode_checkpoint(result.params, options.precision);
    result.params = decode_checkpoint(bytes);
    result.head = ClassifierHead::bind(result.params.store, d);
    result.dev = evaluate_model(result.params, result.head, dev);
    if (!options.out_dir.empty()) {
        std::ofstream ck(options.out_dir + "/finetuned.ckpt", std::ios::binary | std::ios::trunc);
        ck.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!ck) throw DataError("cannot write fine-tuned checkpoint in '" + options.out_dir + "'");
        std::ofstream rep(options.out_dir + "/report.txt", std::ios::trunc);
        rep << format_report(result.dev);
        log_file.flush();
        if (!rep || !log_file) throw DataError("failed writing fine-tuning outputs in '" + options.out_dir + "'");
    }
    return result;
}

}  // namespace syntaxlm
