#include "syntaxlm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                      std::string(expected) + ")");
}

template <typename T>
T to_integer(std::string_view key, std::string_view v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

double to_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "a number");
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "true or false");
}

std::string from_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

struct Entry {
    ConfigKey key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

#define SXLM_INT(sec, name, field, help)                                                                  \
    Entry{{sec, #name, help}, [](const RunConfig& c) { return std::to_string(c.field); },                 \
          [](RunConfig& c, std::string_view v) { c.field = to_integer<decltype(c.field)>(#name, v); }}
#define SXLM_DBL(sec, name, field, help)                                                                  \
    Entry{{sec, #name, help}, [](const RunConfig& c) { return from_double(c.field); },                    \
          [](RunConfig& c, std::string_view v) { c.field = to_double(#name, v); }}
#define SXLM_BOOL(sec, name, field, help)                                                                 \
    Entry{{sec, #name, help}, [](const RunConfig& c) { return from_bool(c.field); },                      \
          [](RunConfig& c, std::string_view v) { c.field = to_bool(#name, v); }}
#define SXLM_STR(sec, name, field, help)                                                                  \
    Entry{{sec, #name, help}, [](const RunConfig& c) { return c.field; },                                 \
          [](RunConfig& c, std::string_view v) { c.field = std::string(v); }}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = {
        SXLM_INT("run", seed, schedule.seed, "global seed"),
        SXLM_STR("run", out_dir, out_dir, "parent of generated run directories"),
        SXLM_STR("run", run_dir, run_dir, "explicit run directory (overrides out_dir naming)"),
        SXLM_STR("run", checkpoint_precision, checkpoint_precision, "f32 or f64"),
        SXLM_BOOL("run", freeze_alpha, freeze_alpha, "keep alpha at its initial value"),

        SXLM_INT("model", layers, model.layers, "transformer layers"),
        SXLM_INT("model", hidden, model.hidden, "hidden width"),
        SXLM_INT("model", heads, model.heads, "attention heads"),
        SXLM_INT("model", ff, model.ff, "feed-forward width"),
        SXLM_INT("model", vocab_size, model.vocab_size, "vocabulary size (build-vocab target)"),
        SXLM_INT("model", max_len, model.max_len, "maximum sequence length including specials"),
        SXLM_INT("model", distance_classes, model.distance_classes, "DP classes K"),
        SXLM_DBL("model", alpha_init, model.alpha_init, "initial importance score"),
        SXLM_BOOL("model", enable_alpha, model.alpha_enabled, "mix with alpha (false: H + syntax repr)"),
        SXLM_BOOL("model", alpha_per_layer, model.alpha_per_layer, "one alpha per layer"),
        SXLM_BOOL("model", enable_syntax_layer, model.syntax_layer_enabled, "syntax-aware representation"),
        SXLM_BOOL("model", syntax_bias, model.syntax_bias, "bias inside the syntax-aware map"),
        Entry{{"model", "activation", "FFN activation: identity, relu, gelu, tanh"},
              [](const RunConfig& c) { return std::string(to_string(c.model.activation)); },
              [](RunConfig& c, std::string_view v) { c.model.activation = parse_activation(v); }},
        Entry{{"model", "syntax_activation", "activation of the syntax-aware representation"},
              [](const RunConfig& c) { return std::string(to_string(c.model.syntax_activation)); },
              [](RunConfig& c, std::string_view v) { c.model.syntax_activation = parse_activation(v); }},
        SXLM_DBL("model", dropout, model.dropout, "dropout rate"),
        SXLM_DBL("model", init_std, model.init_std, "weight init standard deviation"),
        SXLM_DBL("model", ln_eps, model.ln_eps, "layer-norm epsilon"),

        SXLM_INT("pretrain", total_steps, schedule.total_steps, "optimizer steps"),
        SXLM_INT("pretrain", warmup_steps, schedule.warmup_steps, "linear warm-up steps"),
        SXLM_DBL("pretrain", peak_lr, schedule.peak_lr, "peak learning rate"),
        SXLM_INT("pretrain", batch_size, schedule.batch_size, "sentences per batch"),
        SXLM_BOOL("pretrain", enable_mlm, tasks.mlm, "masked language modeling"),
        SXLM_BOOL("pretrain", enable_hp, tasks.hp, "head prediction"),
        SXLM_BOOL("pretrain", enable_dp, tasks.dp, "distance prediction"),
        SXLM_DBL("pretrain", mlm_rate, corruption.mlm_rate, "MLM selection rate"),
        SXLM_DBL("pretrain", dp_rate, corruption.dp_rate, "DP selection rate"),
        Entry{{"pretrain", "dp_mask_policy", "masked distance in the strength matrix: as_distance_one or drop"},
              [](const RunConfig& c) { return std::string(to_string(c.corruption.mask_policy)); },
              [](RunConfig& c, std::string_view v) { c.corruption.mask_policy = parse_dp_mask_policy(v); }},
        SXLM_DBL("pretrain", weight_decay, adam.weight_decay, "decoupled weight decay"),
        SXLM_DBL("pretrain", grad_clip, grad_clip, "global gradient-norm clip (0: off)"),
        SXLM_INT("pretrain", checkpoint_every, checkpoint_every, "steps between checkpoints (0: final only)"),

        SXLM_STR("data", treebank, treebank, "training / input CoNLL-U"),
        SXLM_STR("data", dev_treebank, dev_treebank, "dev CoNLL-U"),
        SXLM_STR("data", test_treebank, test_treebank, "test CoNLL-U"),
        SXLM_STR("data", vocab, vocab, "vocabulary file"),
        SXLM_STR("data", corpus, corpus, "preprocessed corpus"),
        Entry{{"data", "distance_mode", "directed or undirected"},
              [](const RunConfig& c) { return std::string(to_string(c.distance_mode)); },
              [](RunConfig& c, std::string_view v) { c.distance_mode = parse_distance_mode(v); }},
        SXLM_BOOL("data", intra_word_edges, intra_word_edges, "edges inside multi-subword words"),
        SXLM_INT("data", workers, workers, "preprocessing threads"),

        SXLM_STR("finetune", checkpoint, checkpoint, "input checkpoint"),
        SXLM_STR("finetune", train_tasks, train_tasks, "task records for the treebank"),
        SXLM_STR("finetune", dev_tasks, dev_tasks, "task records for dev_treebank"),
        SXLM_STR("finetune", test_tasks, test_tasks, "task records for test_treebank"),
        SXLM_STR("finetune", task_kind, task_kind, "synthetic task when no records are given"),
        SXLM_INT("finetune", task_train_count, task_train_count, "synthetic training examples"),
        SXLM_INT("finetune", task_eval_count, task_eval_count, "synthetic dev / test examples"),
        SXLM_INT("finetune", classes, classes, "label classes"),
        SXLM_INT("finetune", epochs, epochs, "fine-tuning epochs"),
        SXLM_DBL("finetune", finetune_lr, finetune_lr, "fine-tuning learning rate"),
        SXLM_INT("finetune", finetune_batch_size, finetune_batch_size, "fine-tuning batch size"),

        SXLM_STR("diagnostics", sentence, sentence, "distances: sent_id or 1-based index"),
        SXLM_STR("diagnostics", pair, pair, "distances: two words as form,form or i,j"),
        SXLM_INT("diagnostics", gradcheck_sample, gradcheck_sample, "coordinates probed"),
        SXLM_DBL("diagnostics", gradcheck_epsilon, gradcheck_epsilon, "finite-difference step"),
        SXLM_DBL("diagnostics", gradcheck_threshold, gradcheck_threshold, "maximum relative error"),
    };
    return table;
}

#undef SXLM_INT
#undef SXLM_DBL
#undef SXLM_BOOL
#undef SXLM_STR

const Entry& find_entry(std::string_view key) {
    for (const auto& e : entries())
        if (e.key.name == key) return e;
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    schedule.validate();
    if (model.alpha_enabled && !model.syntax_layer_enabled)
        throw ConfigError("enable_alpha requires enable_syntax_layer (set enable_alpha = false to disable the syntax layer)");
    if (!tasks.mlm && !tasks.hp && !tasks.dp) throw ConfigError("at least one pre-training task must be enabled");
    for (double r : {corruption.mlm_rate, corruption.dp_rate})
        if (!(r > 0.0 && r < 1.0)) throw ConfigError("corruption rates must lie in (0, 1)");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (epochs < 1 || finetune_batch_size < 1) throw ConfigError("epochs and finetune_batch_size must be >= 1");
    if (!(finetune_lr > 0.0)) throw ConfigError("finetune_lr must be positive");
    if (task_train_count < 1 || task_eval_count < 1) throw ConfigError("synthetic task counts must be >= 1");
    if (gradcheck_sample < 1) throw ConfigError("gradcheck_sample must be >= 1");
    if (!(gradcheck_epsilon >= 1e-7 && gradcheck_epsilon <= 1e-3))
        throw ConfigError("gradcheck_epsilon must lie in [1e-7, 1e-3]");
    (void)precision();
}

CheckpointPrecision RunConfig::precision() const {
    if (checkpoint_precision == "f32") return CheckpointPrecision::f32;
    if (checkpoint_precision == "f64") return CheckpointPrecision::f64;
    throw ConfigError("checkpoint_precision must be f32 or f64");
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& e : entries()) k.push_back(e.key);
        return k;
    }();
    return keys;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
    find_entry(key).set(config, trim(value));
}

std::string get_config_value(const RunConfig& config, std::string_view key) { return find_entry(key).get(config); }

void apply_config_text(RunConfig& config, std::string_view text) {
    std::string section;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto where = "config line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            bool known = false;
            for (const auto& k : config_keys()) known = known || k.section == section;
            if (!known) throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        try {
            const auto& e = find_entry(key);
            if (!section.empty() && e.key.section != section)
                throw ConfigError("key '" + std::string(key) + "' belongs in [" + std::string(e.key.section) + "]");
            e.set(config, trim(line.substr(eq + 1)));
        } catch (const ConfigError& err) {
            throw ConfigError(where + err.what());
        }
    }
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    RunConfig c;
    apply_config_text(c, buf.str());
    return c;
}

std::string echo_config(const RunConfig& config) {
    std::string out;
    std::string_view section;
    for (const auto& e : entries()) {
        if (e.key.section != section) {
            if (!section.empty()) out += '\n';
            section = e.key.section;
            out += "[" + std::string(section) + "]\n";
        }
        out += std::string(e.key.name) + " = " + e.get(config) + "\n";
    }
    return out;
}

PretrainOptions make_pretrain_options(const RunConfig& c) {
    PretrainOptions o;
    o.model = c.model;
    o.schedule = c.schedule;
    o.tasks = c.tasks;
    o.corruption = c.corruption;
    o.corruption.distance_classes = c.model.distance_classes;
    o.adam = c.adam;
    o.freeze_alpha = c.freeze_alpha;
    o.grad_clip = c.grad_clip;
    o.checkpoint_every = c.checkpoint_every;
    o.precision = c.precision();
    return o;
}

FinetuneOptions make_finetune_options(const RunConfig& c) {
    FinetuneOptions o;
    o.classes = c.classes;
    o.epochs = c.epochs;
    o.batch_size = c.finetune_batch_size;
    o.lr = c.finetune_lr;
    o.adam = c.adam;
    o.freeze_alpha = c.freeze_alpha;
    o.seed = c.schedule.seed;
    o.precision = c.precision();
    return o;
}

PreprocessOptions make_preprocess_options(const RunConfig& c) {
    PreprocessOptions o;
    o.mode = c.distance_mode;
    o.intra_word_edges = c.intra_word_edges;
    o.max_len = c.model.max_len;
    o.workers = c.workers;
    return o;
}

std::string config_hash(const RunConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : echo_config(config)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace syntaxlm
