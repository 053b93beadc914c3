#include "syntaxlm/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "syntaxlm/config.hpp"
#include "syntaxlm/corpus_io.hpp"
#include "syntaxlm/diagnostics.hpp"
#include "syntaxlm/errors.hpp"
#include "syntaxlm/finetune.hpp"
#include "syntaxlm/pretrain.hpp"
#include "syntaxlm/treebank.hpp"

namespace syntaxlm {

namespace {

namespace fs = std::filesystem;

struct Context {
    RunConfig config;
    std::ostream& out;
    std::ostream& err;
    std::optional<std::string> run_dir;

    const std::string& ensure_run_dir() {
        if (run_dir) return *run_dir;
        std::string dir = config.run_dir;
        if (dir.empty()) {
            const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
            std::tm tm{};
            gmtime_r(&now, &tm);
            char stamp[32];
            std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
            dir = (fs::path(config.out_dir) / (config_hash(config) + "-" + stamp)).string();
        }
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw DataError("cannot create run directory '" + dir + "': " + ec.message());
        std::ofstream cfg(fs::path(dir) / "config.txt", std::ios::trunc);
        cfg << echo_config(config);
        if (!cfg) throw DataError("cannot write the config echo into '" + dir + "'");
        err << "run_dir = " << dir << '\n';
        run_dir = dir;
        return *run_dir;
    }

    std::string in_run_dir(const std::string& name) { return (fs::path(ensure_run_dir()) / name).string(); }
};

const std::string& require_path(const std::string& value, const char* key) {
    if (value.empty()) throw ConfigError(std::string(key) + " is not set (pass --" + key + " <path>)");
    return value;
}

std::vector<DependencyTree> load_treebank(const std::string& path, const char* key) {
    require_path(path, key);
    try {
        auto trees = read_conllu_file(path);
        if (trees.empty()) throw DataError("'" + path + "' contains no sentences");
        return trees;
    } catch (const ParseError& e) {
        throw DataError(path + ": " + e.what());
    } catch (const ValidationError& e) {
        throw DataError(path + ": " + e.what());
    }
}

Vocab load_vocab(const std::string& path) {
    require_path(path, "vocab");
    return Vocab::load(path);
}

// --- stats -------------------------------------------------------------------

int cmd_stats(Context& ctx) {
    ctx.out << format_stats(corpus_stats(load_treebank(ctx.config.treebank, "treebank")));
    return kExitOk;
}

// --- build-vocab -------------------------------------------------------------

int cmd_build_vocab(Context& ctx) {
    const auto trees = load_treebank(ctx.config.treebank, "treebank");
    const auto vocab = train_vocab(trees, ctx.config.model.vocab_size);
    const auto path = ctx.config.vocab.empty() ? ctx.in_run_dir("vocab.txt") : ctx.config.vocab;
    vocab.save(path);
    ctx.out << "vocab_size = " << vocab.size() << "\nvocab = " << path << '\n';
    return kExitOk;
}

// --- preprocess ----------------------------------------------------------------

PreparedCorpus prepare(Context& ctx, const std::vector<DependencyTree>& trees, const Vocab& vocab) {
    PreparedCorpus c;
    c.vocab_size = vocab.size();
    c.mode = ctx.config.distance_mode;
    c.intra_word_edges = ctx.config.intra_word_edges;
    std::vector<std::string> skipped;
    c.examples = preprocess(trees, vocab, make_preprocess_options(ctx.config), &skipped);
    for (const auto& id : skipped) ctx.err << "skipped sentence " << id << " (longer than max_len)\n";
    if (c.examples.empty()) throw DataError("every sentence exceeds max_len; nothing to train on");
    return c;
}

int cmd_preprocess(Context& ctx) {
    const auto trees = load_treebank(ctx.config.treebank, "treebank");
    const auto corpus = prepare(ctx, trees, load_vocab(ctx.config.vocab));
    const auto path = ctx.config.corpus.empty() ? ctx.in_run_dir("corpus.bin") : ctx.config.corpus;
    save_corpus(path, corpus);
    ctx.out << "examples = " << corpus.examples.size() << "\nskipped = " << trees.size() - corpus.examples.size()
            << "\ncorpus = " << path << '\n';
    return kExitOk;
}

// --- pretrain ------------------------------------------------------------------

int cmd_pretrain(Context& ctx) {
    auto& c = ctx.config;
    PreparedCorpus corpus;
    if (!c.corpus.empty()) {
        corpus = load_corpus(c.corpus);
        if (corpus.mode != c.distance_mode || corpus.intra_word_edges != c.intra_word_edges)
            throw ConfigError("corpus '" + c.corpus + "' was preprocessed with distance_mode = " +
                              std::string(to_string(corpus.mode)) + ", intra_word_edges = " +
                              (corpus.intra_word_edges ? "true" : "false"));
    } else {
        const auto trees = load_treebank(c.treebank, "treebank");
        Vocab vocab;
        if (c.vocab.empty()) {
            vocab = train_vocab(trees, c.model.vocab_size);
            vocab.save(ctx.in_run_dir("vocab.txt"));
        } else {
            vocab = load_vocab(c.vocab);
        }
        corpus = prepare(ctx, trees, vocab);
    }
    if (corpus.vocab_size > c.model.vocab_size)
        throw ConfigError("the corpus uses " + std::to_string(corpus.vocab_size) + " vocabulary units but vocab_size = " +
                          std::to_string(c.model.vocab_size));

    auto opts = make_pretrain_options(c);
    opts.corruption.vocab_size = corpus.vocab_size;
    opts.out_dir = ctx.ensure_run_dir();
    const int every = std::max(1, c.schedule.total_steps / 20);
    const auto result = pretrain_loop(corpus.examples, opts, [&](const StepMetrics& m) {
        if (m.step % every == 0 || m.step + 1 == c.schedule.total_steps) ctx.out << format_metrics(m) << '\n';
    });
    const auto eval = evaluate_pretrain(result.params, result.heads, corpus.examples, opts.corruption, opts.tasks,
                                        derive_seed(c.schedule.seed, 7), c.schedule.batch_size);
    char buf[256];
    std::snprintf(buf, sizeof buf, "train_mlm_accuracy = %.6f\ntrain_hp_accuracy = %.6f\ntrain_dp_accuracy = %.6f\n",
                  eval.mlm_accuracy, eval.hp_accuracy, eval.dp_accuracy);
    ctx.out << buf << "checkpoint = " << ctx.in_run_dir("final.ckpt") << '\n';
    return kExitOk;
}

// --- finetune / eval -------------------------------------------------------------

std::vector<TaskExample> load_tasks(const std::string& tasks_path, const std::vector<DependencyTree>& trees,
                                    const RunConfig& c, int count, std::uint64_t stream) {
    if (!tasks_path.empty()) {
        try {
            return read_task_file(tasks_path, trees);
        } catch (const ParseError& e) {
            throw DataError(tasks_path + ": " + e.what());
        }
    }
    Rng rng(derive_seed(c.schedule.seed, stream));
    return make_synthetic_task(trees, parse_synthetic_kind(c.task_kind), static_cast<std::size_t>(count), rng,
                               c.distance_mode);
}

std::vector<MarkedExample> mark_all(const std::vector<TaskExample>& tasks, const Vocab& vocab, const RunConfig& c) {
    std::vector<MarkedExample> out;
    for (const auto& t : tasks) {
        try {
            out.push_back(mark_entities(t, vocab, c.distance_mode, c.intra_word_edges));
        } catch (const std::logic_error& e) {
            throw DataError("task example on sentence " + t.tree.sentence_id + ": " + e.what());
        }
    }
    return out;
}

ModelParams load_compatible(const RunConfig& c) {
    auto p = load_checkpoint(require_path(c.checkpoint, "checkpoint"));
    if (!p.config.same_architecture(c.model))
        throw DataError("checkpoint '" + c.checkpoint +
                        "' does not match the configured model (check layers, hidden, vocab_size and the ablation flags)");
    return p;
}

int cmd_finetune(Context& ctx) {
    const auto& c = ctx.config;
    auto params = load_compatible(c);
    const auto vocab = load_vocab(c.vocab);
    const auto train_trees = load_treebank(c.treebank, "treebank");
    const auto dev_trees = load_treebank(c.dev_treebank, "dev_treebank");
    const auto train_tasks = load_tasks(c.train_tasks, train_trees, c, c.task_train_count, 31);
    const auto dev_tasks = load_tasks(c.dev_tasks, dev_trees, c, c.task_eval_count, 32);
    write_task_file(ctx.in_run_dir("train.tasks"), train_tasks);
    write_task_file(ctx.in_run_dir("dev.tasks"), dev_tasks);

    auto opts = make_finetune_options(c);
    opts.out_dir = ctx.ensure_run_dir();
    const auto result = finetune_loop(std::move(params), mark_all(train_tasks, vocab, c), mark_all(dev_tasks, vocab, c), opts);
    for (const auto& line : result.log) ctx.out << line << '\n';
    ctx.out << "best_epoch = " << result.best_epoch << '\n' << format_report(result.dev);
    ctx.out << "checkpoint = " << ctx.in_run_dir("finetuned.ckpt") << '\n';
    return kExitOk;
}

int cmd_eval(Context& ctx) {
    const auto& c = ctx.config;
    const auto params = load_compatible(c);
    const auto head = ClassifierHead::bind(params.store, params.config.hidden);
    const auto vocab = load_vocab(c.vocab);
    const auto trees = load_treebank(c.test_treebank, "test_treebank");
    const auto tasks = load_tasks(c.test_tasks, trees, c, c.task_eval_count, 33);
    const auto report = evaluate_model(params, head, mark_all(tasks, vocab, c));
    ctx.out << format_report(report);
    std::ofstream rep(ctx.in_run_dir("eval_report.txt"), std::ios::trunc);
    rep << format_report(report);
    return kExitOk;
}

// --- distances -------------------------------------------------------------------

const DependencyTree& pick_sentence(const std::vector<DependencyTree>& trees, const std::string& sel) {
    if (sel.empty()) return trees.front();
    for (const auto& t : trees)
        if (t.sentence_id == sel) return t;
    std::size_t k = 0;
    const auto [p, ec] = std::from_chars(sel.data(), sel.data() + sel.size(), k);
    if (ec == std::errc{} && p == sel.data() + sel.size() && k >= 1 && k <= trees.size()) return trees[k - 1];
    throw DataError("no sentence '" + sel + "' (give a sent_id or a 1-based index)");
}

int find_word(const DependencyTree& t, const std::string& key) {
    for (const auto& w : t.words)
        if (w.form == key) return w.index - 1;
    int k = 0;
    const auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), k);
    if (ec == std::errc{} && p == key.data() + key.size() && k >= 1 && k <= static_cast<int>(t.size())) return k - 1;
    throw DataError("sentence " + t.sentence_id + " has no word '" + key + "'");
}

int cmd_distances(Context& ctx) {
    const auto& c = ctx.config;
    const auto trees = load_treebank(c.treebank, "treebank");
    const auto& tree = pick_sentence(trees, c.sentence);

    std::vector<std::string> units;
    Alignment align;
    if (c.vocab.empty()) {
        for (std::size_t i = 0; i < tree.size(); ++i) {
            units.push_back(tree.words[i].form);
            align.word_spans.emplace_back(static_cast<int>(i), 1);
        }
    } else {
        const auto vocab = load_vocab(c.vocab);
        const auto enc = encode(tree, vocab);
        for (int id : enc.ids) units.push_back(vocab.unit(id));
        align = enc.alignment;
    }
    const auto d = compute_distances(subword_graph(tree, align, c.intra_word_edges), static_cast<int>(units.size()),
                                     c.distance_mode);
    const auto s = normalize(d);
    const int n = d.size();

    auto& out = ctx.out;
    out << "sentence = " << tree.sentence_id << "\nmode = " << to_string(c.distance_mode) << "\ntokens =";
    for (const auto& u : units) out << ' ' << u;
    out << "\nD\n";
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) out << (j ? " " : "") << d(i, j);
        out << '\n';
    }
    out << "D_normalized\n";
    char buf[32];
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof buf, "%s%.6f", j ? " " : "", s(i, j));
            out << buf;
        }
        out << '\n';
    }
    if (!c.pair.empty()) {
        const auto comma = c.pair.find(',');
        if (comma == std::string::npos) throw ConfigError("pair must look like word,word");
        const auto a = c.pair.substr(0, comma), b = c.pair.substr(comma + 1);
        const int wa = find_word(tree, a), wb = find_word(tree, b);
        out << "d(" << tree.words[static_cast<std::size_t>(wa)].form << ", "
            << tree.words[static_cast<std::size_t>(wb)].form
            << ") = " << d(align.first_subword(static_cast<std::size_t>(wa)), align.first_subword(static_cast<std::size_t>(wb)))
            << '\n';
    }
    return kExitOk;
}

// --- gradcheck -------------------------------------------------------------------

int cmd_gradcheck(Context& ctx) {
    const auto& c = ctx.config;
    ModelGradcheckOptions o;
    o.sample = static_cast<std::size_t>(c.gradcheck_sample);
    o.epsilon = c.gradcheck_epsilon;
    o.seed = c.schedule.seed;
    const auto r = run_model_gradcheck(o);
    std::map<std::string, double> worst;
    for (const auto& e : r.result.entries) worst[e.tensor] = std::max(worst[e.tensor], e.rel_error);
    char buf[160];
    for (const auto& [name, err] : worst) {
        std::snprintf(buf, sizeof buf, "tensor %-24s max_rel_error = %.3e\n", name.c_str(), err);
        ctx.out << buf;
    }
    std::snprintf(buf, sizeof buf, "coordinates = %zu\ntensors = %zu\nmax_rel_error = %.6e\n", r.result.entries.size(),
                  worst.size(), r.result.max_rel_error);
    ctx.out << buf;
    if (!(r.result.max_rel_error < c.gradcheck_threshold)) {
        std::snprintf(buf, sizeof buf, "gradient check failed: max relative error %.3e >= %.3e", r.result.max_rel_error,
                      c.gradcheck_threshold);
        throw NumericError(buf);
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Syntax-aware transformer pre-training toolkit", "syntaxlm"};
    app.require_subcommand(1, 1);
    app.fallthrough();
    std::string config_path;
    app.add_option("--config", config_path, "config file of key = value lines");
    std::map<std::string, std::string> raw;
    for (const auto& k : config_keys()) {
        const std::string name(k.name);
        app.add_option("--" + name, raw[name], std::string(k.help))->group(std::string(k.section));
    }

    using Handler = int (*)(Context&);
    const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
        {"stats", "sentence count, mean token length and mean tree depth of a treebank", cmd_stats},
        {"build-vocab", "train a subword vocabulary on a treebank", cmd_build_vocab},
        {"preprocess", "encode a treebank and compute distance matrices", cmd_preprocess},
        {"pretrain", "pre-train with MLM, HP and DP", cmd_pretrain},
        {"finetune", "fine-tune a checkpoint on a marked-entity classification task", cmd_finetune},
        {"eval", "evaluate a fine-tuned checkpoint", cmd_eval},
        {"distances", "print D and its normalized form for one sentence", cmd_distances},
        {"gradcheck", "compare analytic and finite-difference gradients on a tiny model", cmd_gradcheck},
    };
    for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n(run with --help for the list of commands and keys)\n";
        return kExitUsage;
    }

    try {
        RunConfig config = config_path.empty() ? RunConfig{} : load_config_file(config_path);
        for (const auto& k : config_keys()) {
            const std::string name(k.name);
            if (app.count("--" + name) > 0) set_config_value(config, name, raw[name]);
        }
        config.validate();
        for (const auto& w : config.model.warnings()) err << "warning: " << w << '\n';
        // The echo is a complete config file; the seed is part of it.
        err << "# resolved configuration (hash " << config_hash(config) << ")\n" << echo_config(config);

        Context ctx{std::move(config), out, err, std::nullopt};
        for (const auto& [name, help, fn] : commands)
            if (app.got_subcommand(name)) return fn(ctx);
        err << "usage error: no command given\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    }
}

}  // namespace syntaxlm
