// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "syntaxlm/checkpoint.hpp"
#include "syntaxlm/cli.hpp"
#include "syntaxlm/config.hpp"
#include "syntaxlm/diagnostics.hpp"
#include "syntaxlm/finetune.hpp"
#include "syntaxlm/pretrain.hpp"
#include "syntaxlm/syntax_distance.hpp"

using namespace syntaxlm;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

SubwordEdgeSet word_edges(const std::vector<int>& heads) {
    SubwordEdgeSet edges;
    for (std::size_t i = 0; i < heads.size(); ++i)
        if (heads[i] != 0) edges.push_back({heads[i] - 1, static_cast<int>(i)});
    return edges;
}

// --- 1 ---------------------------------------------------------------------

Outcome distances_vs_floyd_warshall() {
    const auto t0 = Clock::now();
    Rng rng(1001);
    std::size_t mismatches = 0, entries = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 12));
        const auto edges = word_edges(oracle::random_tree_heads(n, rng));
        for (bool undirected : {false, true}) {
            const auto got = compute_distances(edges, n, undirected ? DistanceMode::undirected : DistanceMode::directed);
            const auto want = oracle::floyd_warshall(edges, n, undirected);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j, ++entries) mismatches += got(i, j) != want[i][j];
        }
    }
    const double t = seconds_since(t0);
    return {mismatches == 0 && t < 5.0, fmt("%zu/%zu entries differ, %.3f s (limit 5 s)", mismatches, entries, t)};
}

// --- 2 ---------------------------------------------------------------------

Outcome normalization_invariants() {
    Rng rng(1002);
    std::size_t bad_sum = 0, bad_order = 0, bad_value = 0, rows = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 10));
        DistanceMatrix d(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j && rng.uniform() < 0.7) d(i, j) = static_cast<int>(rng.uniform_int(1, 9));
        const auto s = normalize(d);
        std::vector<std::vector<int>> dv(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n)));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) dv[i][j] = d(i, j);
        const auto want = oracle::inverse_distance_rows(dv);
        for (int i = 0; i < n; ++i, ++rows) {
            const double sum = s.row(i).sum();
            const bool zero = (s.row(i).array() == 0.0).all();
            if (!zero && std::abs(sum - 1.0) > 1e-9) ++bad_sum;
            for (int j = 0; j < n; ++j) {
                if (std::abs(s(i, j) - want[i][j]) > 1e-12) ++bad_value;
                for (int k = 0; k < n; ++k)
                    if (d(i, j) != 0 && d(i, k) != 0 && d(i, j) < d(i, k) && !(s(i, j) > s(i, k))) ++bad_order;
            }
        }
    }
    DistanceMatrix hand(3);
    hand(0, 0) = 1;
    hand(0, 2) = 1;
    hand(1, 0) = 1;
    hand(1, 1) = 2;
    const auto h = normalize(hand);
    const bool exact = h(0, 0) == 0.5 && h(0, 1) == 0.0 && h(0, 2) == 0.5 && h(1, 0) == 2.0 / 3.0 &&
                       h(1, 1) == 1.0 / 3.0 && h(1, 2) == 0.0;
    return {bad_sum == 0 && bad_order == 0 && bad_value == 0 && exact,
            fmt("%zu rows: %zu bad sums, %zu order violations, %zu oracle mismatches; hand rows %s", rows, bad_sum,
                bad_order, bad_value, exact ? "exact" : "WRONG")};
}

// --- 3 ---------------------------------------------------------------------

Outcome frisbee_distance() {
    std::ostringstream out, err;
    const int code = run_cli({"distances", "--treebank", SYNTAXLM_TEST_DATA "/fig1.conllu", "--pair", "playing,frisbee"},
                             out, err);
    const std::string text = out.str();
    const std::string want = "d(playing, frisbee) = 1";
    const bool found = text.find(want + "\n") != std::string::npos;
    return {code == 0 && found, fmt("exit %d, output %s \"%s\"", code, found ? "contains" : "lacks", want.c_str())};
}

// --- 4 ---------------------------------------------------------------------

Outcome vanilla_equivalence() {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 8;
    c.heads = 2;
    c.ff = 12;
    c.vocab_size = 20;
    c.max_len = 12;
    c.dropout = 0.0;
    c.init_std = 0.5;
    Rng rng(1004);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        auto p = init_params(c, rng);
        for (const auto& s : p.store.slots())
            if (s.kind == ParamKind::bias || s.kind == ParamKind::gain) {
                auto t = p.store.tensor(p.store.require(s.name));
                for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += rng.normal(0.0, 0.3);
            }
        p.alpha(0) = 0.0;
        const int n = static_cast<int>(rng.uniform_int(1, c.max_len));
        SequenceInput seq;
        for (int i = 0; i < n; ++i) seq.ids.push_back(static_cast<int>(rng.uniform_int(0, c.vocab_size - 1)));
        seq.strength = normalize(compute_distances(word_edges(oracle::random_tree_heads(n, rng)), n));
        const Mat got = forward(std::as_const(p), seq).output;
        const Mat want = oracle::forward(p, seq.ids, seq.strength, false);
        worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-6, fmt("50 instances, max |diff| = %.3e (limit 1e-6)", worst)};
}

// --- 5 ---------------------------------------------------------------------

Outcome gradient_check() {
    const auto t0 = Clock::now();
    ModelGradcheckOptions o;
    o.sample = 600;
    const auto g = run_model_gradcheck(o);
    const double t = seconds_since(t0);
    const std::vector<std::string> families{"embed.tokens", "embed.positions", ".attn.", ".ffn.", ".ln",
                                            "syntax.w1",    "syntax.w2",       "alpha", "mlm.",  "dp.", "hp."};
    std::string missing;
    for (const auto& f : families)
        if (std::none_of(g.result.entries.begin(), g.result.entries.end(),
                         [&](const GradCheckEntry& e) { return e.tensor.find(f) != std::string::npos; }))
            missing += " " + f;
    std::set<std::string> visited;
    for (const auto& e : g.result.entries) visited.insert(e.tensor);
    const bool ok = g.result.entries.size() >= 500 && missing.empty() && visited.size() == g.tensors &&
                    g.result.max_rel_error < 1e-4 && t < 120.0;
    return {ok, fmt("%zu coordinates over %zu/%zu tensors, max rel err %.3e (limit 1e-4), %.1f s (limit 120 s)%s%s",
                    g.result.entries.size(), visited.size(), g.tensors, g.result.max_rel_error, t,
                    missing.empty() ? "" : ", missing:", missing.c_str())};
}

// --- 6 ---------------------------------------------------------------------

struct Split {
    double selected, masked, randomized, kept;
};

bool split_ok(const Split& s) {
    return std::abs(s.selected - 0.15) <= 0.01 && std::abs(s.masked - 0.8) <= 0.02 &&
           std::abs(s.randomized - 0.1) <= 0.02 && std::abs(s.kept - 0.1) <= 0.02;
}

Outcome corruption_statistics() {
    Rng rng(1006);
    const int vocab = 500;
    std::vector<int> ids(1000);
    for (auto& id : ids) id = static_cast<int>(rng.uniform_int(kNumSpecials, vocab - 1));
    const std::vector<char> maskable(ids.size(), 1);
    double sel = 0, mask = 0, rnd = 0, keep = 0;
    for (int round = 0; round < 100; ++round) {
        const auto m = make_mlm_targets(ids, maskable, vocab, 0.15, rng);
        sel += static_cast<double>(m.targets.size());
        mask += static_cast<double>(m.masked);
        rnd += static_cast<double>(m.randomized);
        keep += static_cast<double>(m.kept);
    }
    const Split mlm{sel / 1e5, mask / sel, rnd / sel, keep / sel};

    double trials = 0;
    sel = mask = rnd = keep = 0;
    while (trials < 1e5) {
        const int n = static_cast<int>(rng.uniform_int(2, 12));
        const auto d = compute_distances(word_edges(oracle::random_tree_heads(n, rng)), n, DistanceMode::undirected);
        const auto c = corrupt_for_dp(d, 0.15, 16, rng);
        trials += static_cast<double>(d.count_nonzero());
        sel += static_cast<double>(c.targets.size());
        mask += static_cast<double>(c.masked);
        rnd += static_cast<double>(c.randomized);
        keep += static_cast<double>(c.kept);
    }
    const Split dp{sel / trials, mask / sel, rnd / sel, keep / sel};
    return {split_ok(mlm) && split_ok(dp),
            fmt("MLM %.4f selected, %.3f/%.3f/%.3f; DP %.4f selected over %.0f entries, %.3f/%.3f/%.3f", mlm.selected,
                mlm.masked, mlm.randomized, mlm.kept, dp.selected, trials, dp.masked, dp.randomized, dp.kept)};
}

// --- 7 ---------------------------------------------------------------------

Outcome loss_sanity() {
    Rng rng(1007);
    ModelConfig c;
    c.layers = 1;
    c.hidden = 16;
    c.heads = 2;
    c.ff = 32;
    c.vocab_size = 1024;
    auto p = init_params(c, rng);
    const auto heads = PretrainHeads::attach(p, rng);
    const Mat zero = Mat::Zero(7, c.hidden);
    const std::vector<PositionLabel> mlm{{0, 10}, {3, 500}, {6, 1023}};
    const std::vector<PairLabel> dp{{0, 1, 0}, {2, 4, 7}, {5, 1, 15}};
    const std::vector<HpGroup> hp{{{0, 1, 2, 3, 4}, {{0, 1}, {2, 4}, {3, 0}}}};
    const double e_mlm = std::abs(mlm_loss(p, heads, zero, mlm, nullptr, nullptr).loss - std::log(1024.0));
    const double e_dp = std::abs(dp_loss(p, heads, zero, dp, nullptr, nullptr).loss - std::log(16.0));
    const double e_hp = std::abs(hp_loss(p, heads, zero, hp, nullptr, nullptr).loss - std::log(5.0));
    const bool dp_value = std::abs(std::log(16.0) - 2.7726) < 5e-5;

    // Sum over every toggle combination on a real batch.
    const auto trees = random_treebank(6, 3, 7, 30, rng, "s", 2);
    const auto vocab = train_vocab(trees, 60);
    const auto corpus = preprocess(trees, vocab, {});
    ModelConfig mc = c;
    mc.vocab_size = vocab.size();
    mc.init_std = 0.3;
    auto q = init_params(mc, rng);
    const auto qh = PretrainHeads::attach(q, rng);
    const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
    CorruptionOptions co;
    co.vocab_size = vocab.size();
    std::size_t sum_mismatch = 0;
    for (int mask = 0; mask < 8; ++mask) {
        const TaskToggles t{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
        const auto batch = make_batch(corpus, idx, co, {}, rng);
        const auto trace = forward(std::as_const(q), batch.inputs);
        const auto l = compute_losses(q, qh, trace, batch, t, nullptr, nullptr);
        double want = 0.0;
        if (t.mlm) want += l.mlm_detail.loss;
        if (t.hp) want += l.hp_detail.loss;
        if (t.dp) want += l.dp_detail.loss;
        if (l.total != want) ++sum_mismatch;
    }
    const bool ok = e_mlm < 1e-6 && e_dp < 1e-6 && e_hp < 1e-6 && dp_value && sum_mismatch == 0;
    return {ok, fmt("|MLM - ln 1024| = %.1e, |DP - ln 16| = %.1e, |HP - ln 5| = %.1e, total != sum in %zu/8 "
                    "toggle sets",
                    e_mlm, e_dp, e_hp, sum_mismatch)};
}

// --- 8 ---------------------------------------------------------------------

struct OverfitRun {
    double step0 = 0.0;
    PretrainEval eval;
    double seconds = 0.0;
    std::string metrics;
};

OverfitRun overfit_run() {
    const auto t0 = Clock::now();
    const auto trees = read_conllu_file(SYNTAXLM_TEST_DATA "/toy64.conllu");
    const auto vocab = train_vocab(trees, 400);
    RunConfig c;
    c.model.vocab_size = vocab.size();
    c.schedule.peak_lr = 1e-3;
    const auto po = make_pretrain_options(c);
    const auto corpus = preprocess(trees, vocab, make_preprocess_options(c));
    OverfitRun run;
    const auto res = pretrain_loop(corpus, po, [&](const StepMetrics& m) { run.metrics += format_metrics(m) + "\n"; });
    run.step0 = res.log.front().losses.total;
    run.eval = evaluate_pretrain(res.params, res.heads, corpus, po.corruption, po.tasks, derive_seed(c.schedule.seed, 7));
    run.seconds = seconds_since(t0);
    return run;
}

std::optional<OverfitRun> overfit_cache;

Outcome overfit() {
    if (!overfit_cache) overfit_cache = overfit_run();
    const auto& r = *overfit_cache;
    const double drop = 1.0 - r.eval.losses.total / r.step0;
    const bool ok = drop >= 0.90 && r.eval.dp_accuracy >= 0.95 && r.eval.hp_accuracy >= 0.95 && r.seconds < 900.0;
    return {ok, fmt("loss %.4f -> %.4f [mlm %.3f hp %.3f dp %.3f] (drop %.1f%%, need 90%%), DP acc %.4f, HP acc %.4f (need 0.95), %.0f s "
                    "(limit 900 s)",
                    r.step0, r.eval.losses.total, r.eval.losses.mlm, r.eval.losses.hp, r.eval.losses.dp, 100.0 * drop, r.eval.dp_accuracy, r.eval.hp_accuracy, r.seconds)};
}

// --- 9 to 12: fine-tuning arms ---------------------------------------------

struct TaskData {
    Vocab vocab;
    std::vector<PretrainExample> corpus;
    std::vector<MarkedExample> train, dev, test;
};

const TaskData& task_data() {
    static const TaskData data = [] {
        TaskData d;
        Rng rng(2024);
        const auto trees = random_treebank(4000, 4, 8, 40, rng, "r", 3);
        const std::vector<DependencyTree> tr(trees.begin(), trees.begin() + 3000);
        const std::vector<DependencyTree> dv(trees.begin() + 3000, trees.begin() + 3500);
        const std::vector<DependencyTree> te(trees.begin() + 3500, trees.end());
        d.vocab = train_vocab(tr, 200);
        d.corpus = preprocess(tr, d.vocab, {});
        Rng task_rng(derive_seed(42, 31));
        const auto mark = [&](const std::vector<DependencyTree>& src, std::size_t count) {
            std::vector<MarkedExample> out;
            for (const auto& t : make_synthetic_task(src, SyntheticKind::distance_label, count, task_rng))
                out.push_back(mark_entities(t, d.vocab));
            return out;
        };
        d.train = mark(tr, 2000);
        d.dev = mark(dv, 500);
        d.test = mark(te, 500);
        return d;
    }();
    return data;
}

enum class Arm { full, no_syntax, no_dp, no_hp };

const char* arm_name(Arm a) {
    switch (a) {
        case Arm::full: return "full";
        case Arm::no_syntax: return "no syntax layer, alpha frozen at 0";
        case Arm::no_dp: return "-DP";
        case Arm::no_hp: return "-HP";
    }
    return "?";
}

struct ArmRun {
    std::vector<StepMetrics> pretrain_log;
    std::string metrics;  // pre-training metrics then fine-tuning epochs, one line each
    FinetuneResult tuned;
    EvalReport test;
    std::string out_dir;
    double seconds = 0.0;
};

RunConfig arm_config(Arm arm) {
    RunConfig c;
    c.model.vocab_size = task_data().vocab.size();
    c.model.layers = 2;
    c.model.hidden = 64;
    c.model.heads = 4;
    c.model.ff = 256;
    c.model.alpha_init = 0.3;
    c.schedule.total_steps = 3000;
    c.schedule.warmup_steps = 180;
    c.schedule.peak_lr = 1e-3;
    c.epochs = 40;
    c.finetune_lr = 5e-4;
    if (arm == Arm::no_syntax) {
        c.model.syntax_layer_enabled = false;
        c.model.alpha_enabled = false;
        c.freeze_alpha = true;
    }
    if (arm == Arm::no_dp) c.tasks.dp = false;
    if (arm == Arm::no_hp) c.tasks.hp = false;
    c.validate();
    return c;
}

ArmRun run_arm(Arm arm, const std::string& tag) {
    const auto t0 = Clock::now();
    const auto& data = task_data();
    const RunConfig c = arm_config(arm);
    ArmRun run;
    auto pre = pretrain_loop(data.corpus, make_pretrain_options(c),
                             [&](const StepMetrics& m) { run.metrics += format_metrics(m) + "\n"; });
    run.pretrain_log = std::move(pre.log);
    auto fo = make_finetune_options(c);
    run.out_dir = (std::filesystem::temp_directory_path() / ("syntaxlm_acceptance_" + tag)).string();
    std::filesystem::remove_all(run.out_dir);
    fo.out_dir = run.out_dir;
    run.tuned = finetune_loop(std::move(pre.params), data.train, data.dev, fo);
    for (const auto& line : run.tuned.log) run.metrics += line + "\n";
    run.test = evaluate_model(run.tuned.params, run.tuned.head, data.test);
    run.seconds = seconds_since(t0);
    std::printf("  [%s] test accuracy %.4f, best epoch %d, %.0f s\n", arm_name(arm), run.test.accuracy,
                run.tuned.best_epoch, run.seconds);
    std::fflush(stdout);
    return run;
}

std::map<Arm, ArmRun> arm_cache;

const ArmRun& arm(Arm a) {
    auto it = arm_cache.find(a);
    if (it == arm_cache.end()) it = arm_cache.emplace(a, run_arm(a, std::to_string(static_cast<int>(a)))).first;
    return it->second;
}

Outcome syntax_benefit() {
    const auto& full = arm(Arm::full);
    const auto& base = arm(Arm::no_syntax);
    const double gap = full.test.accuracy - base.test.accuracy;
    const bool ok = full.test.accuracy >= 0.90 && gap >= 0.10;
    return {ok, fmt("full %.4f (need 0.90), without syntax layer %.4f, gap %.1f points (need 10) on %zu test examples",
                    full.test.accuracy, base.test.accuracy, 100.0 * gap, full.test.count)};
}

Outcome ablation_arms() {
    const auto& full = arm(Arm::full);
    const auto& no_dp = arm(Arm::no_dp);
    const auto& no_hp = arm(Arm::no_hp);
    const auto zeroed = [](const ArmRun& r, double LossBreakdown::*field, LossResult LossBreakdown::*detail) {
        return !r.pretrain_log.empty() && std::all_of(r.pretrain_log.begin(), r.pretrain_log.end(), [&](const StepMetrics& m) {
            return m.losses.*field == 0.0 && (m.losses.*detail).count == 0;
        });
    };
    const bool dp_zero = zeroed(no_dp, &LossBreakdown::dp, &LossBreakdown::dp_detail);
    const bool hp_zero = zeroed(no_hp, &LossBreakdown::hp, &LossBreakdown::hp_detail);
    const bool finished = no_dp.pretrain_log.size() == 3000 && no_hp.pretrain_log.size() == 3000;
    return {dp_zero && hp_zero && finished,
            fmt("-DP logs zero DP loss: %s, -HP logs zero HP loss: %s; test accuracy full %.4f, -DP %.4f (%s full, "
                "not gated), -HP %.4f",
                dp_zero ? "yes" : "no", hp_zero ? "yes" : "no", full.test.accuracy, no_dp.test.accuracy,
                no_dp.test.accuracy < full.test.accuracy ? "below" : "not below", no_hp.test.accuracy)};
}

Outcome alpha_reporting() {
    const auto& full = arm(Arm::full);
    const auto ckpt = load_checkpoint(full.out_dir + "/finetuned.ckpt");
    const double stored = ckpt.alpha(0);
    std::ifstream in(full.out_dir + "/report.txt");
    std::stringstream report;
    report << in.rdbuf();
    const bool text_matches = report.str() == format_report(full.tuned.dev);
    const bool ok = full.tuned.dev.alpha && *full.tuned.dev.alpha == stored && full.test.alpha &&
                    *full.test.alpha == stored && text_matches;
    return {ok, fmt("checkpoint alpha %.17g, dev report %.17g, test report %.17g, report.txt %s (0.13-0.14 is "
                    "context only)",
                    stored, full.tuned.dev.alpha.value_or(NAN), full.test.alpha.value_or(NAN),
                    text_matches ? "matches" : "differs")};
}

Outcome determinism() {
    if (!overfit_cache) overfit_cache = overfit_run();
    const auto overfit_again = overfit_run();
    const auto& full = arm(Arm::full);
    const auto& base = arm(Arm::no_syntax);
    const auto full_again = run_arm(Arm::full, "rerun_full");
    const auto base_again = run_arm(Arm::no_syntax, "rerun_base");
    const bool o = overfit_again.metrics == overfit_cache->metrics;
    const bool f = full_again.metrics == full.metrics;
    const bool b = base_again.metrics == base.metrics;
    return {o && f && b, fmt("overfit log %s (%zu bytes), full arm log %s (%zu bytes), baseline log %s (%zu bytes)",
                             o ? "identical" : "DIFFERS", overfit_cache->metrics.size(), f ? "identical" : "DIFFERS",
                             full.metrics.size(), b ? "identical" : "DIFFERS", base.metrics.size())};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, distances_vs_floyd_warshall}, {2, normalization_invariants}, {3, frisbee_distance},
        {4, vanilla_equivalence},         {5, gradient_check},           {6, corruption_statistics},
        {7, loss_sanity},                 {8, overfit},                  {9, syntax_benefit},
        {10, ablation_arms},              {11, alpha_reporting},         {12, determinism},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& [id, check] : criteria) {
        if (!wanted.empty() && !wanted.count(id)) continue;
        Outcome r;
        try {
            r = check();
        } catch (const std::exception& e) {
            r = {false, std::string("threw: ") + e.what()};
        }
        failed += !r.pass;
        std::printf("criterion %2d: %s  %s\n", id, r.pass ? "PASS" : "FAIL", r.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
