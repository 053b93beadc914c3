#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "syntaxlm/checkpoint.hpp"
#include "syntaxlm/model.hpp"
#include "syntaxlm/optimizer.hpp"
#include "syntaxlm/sequence.hpp"
#include "syntaxlm/tokenizer.hpp"
#include "syntaxlm/treebank.hpp"

namespace syntaxlm {

// Inclusive range of 0-based word indices.
struct WordSpan {
    int first = 0;
    int last = 0;
    bool operator==(const WordSpan&) const = default;
};

struct TaskExample {
    DependencyTree tree;
    WordSpan span1;
    std::optional<WordSpan> span2;  // relation tasks only
    int label = 0;
};

struct MarkedExample {
    SequenceInput input;  // ids with <s>, markers and </s>; clean strength matrix
    BuiltSequence built;
    int at_position = -1;    // opening "@"
    int hash_position = -1;  // opening "#", -1 without span2
    int label = 0;
};

// "@" around span1 and "#" around span2 at the subword level, the whole
// sentence wrapped in <s> ... </s>. Throws std::out_of_range / std::invalid_argument
// on bad or overlapping spans.
MarkedExample mark_entities(const TaskExample& example, const Vocab& vocab, DistanceMode mode = DistanceMode::directed,
                            bool intra_word_edges = true);

// --- synthetic tasks ---------------------------------------------------------

enum class SyntheticKind { distance_label, head_pair };
SyntheticKind parse_synthetic_kind(std::string_view s);

inline constexpr int kDistanceLabelClasses = 4;

// distance_label: two distinct words with a defined distance between their
// first subwords under `mode`; label = bucketize(d, 4). head_pair: label 1 iff
// span1's word heads span2's word. Both draw labels round-robin so classes are
// balanced; sentences that cannot supply the requested class are passed over.
std::vector<TaskExample> make_synthetic_task(const std::vector<DependencyTree>& trees, SyntheticKind kind,
                                             std::size_t count, Rng& rng, DistanceMode mode = DistanceMode::directed);

// One record per line: sent_id=<id>\tspan1=<a>-<b>[\tspan2=<a>-<b>]\tlabel=<k>,
// word indices 1-based inclusive as in CoNLL-U.
std::string format_task_record(const TaskExample& example);
std::vector<TaskExample> parse_task_records(std::string_view text, const std::vector<DependencyTree>& trees);
void write_task_file(const std::string& path, const std::vector<TaskExample>& examples);
std::vector<TaskExample> read_task_file(const std::string& path, const std::vector<DependencyTree>& trees);

// --- head, training, evaluation ----------------------------------------------

struct ClassifierHead {
    std::size_t w;  // (arity * hidden) x classes
    std::size_t b;
    int arity = 1;
    int classes = 2;

    static ClassifierHead attach(ModelParams& params, int arity, int classes, Rng& rng);
    static ClassifierHead bind(const ParamStore& store, int hidden);
};

Mat classifier_logits(const ModelParams& params, const ClassifierHead& head, const MarkedExample& example);

struct EvalReport {
    std::size_t count = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::optional<double> alpha;  // absent when the syntax layer is off
};

// Single-label: each prediction is one class. P/R/F1 are micro-averaged over
// all classes, which for single-label data coincide with accuracy.
EvalReport evaluate(const std::vector<int>& predictions, const std::vector<int>& golds);
// Multi-label micro P/R/F1; accuracy is the exact-set-match rate.
EvalReport evaluate(const std::vector<std::vector<int>>& predictions, const std::vector<std::vector<int>>& golds);

std::string format_report(const EvalReport& report);

std::vector<int> predict(const ModelParams& params, const ClassifierHead& head,
                         const std::vector<MarkedExample>& examples);
EvalReport evaluate_model(const ModelParams& params, const ClassifierHead& head,
                          const std::vector<MarkedExample>& examples);

struct FinetuneOptions {
    int classes = kDistanceLabelClasses;
    int epochs = 10;
    int batch_size = 16;
    double lr = 1e-4;
    AdamConfig adam;
    bool freeze_alpha = false;
    std::uint64_t seed = 42;
    CheckpointPrecision precision = CheckpointPrecision::f32;
    std::string out_dir;  // empty: nothing written
};

struct FinetuneResult {
    ModelParams params;  // best-dev parameters, rounded through the checkpoint encoding
    ClassifierHead head;
    EvalReport dev;
    int best_epoch = 0;
    std::vector<std::string> log;
};

// Pre-training heads in `pretrained` are kept but frozen.
FinetuneResult finetune_loop(ModelParams pretrained, const std::vector<MarkedExample>& train,
                             const std::vector<MarkedExample>& dev, const FinetuneOptions& options);

}  // namespace syntaxlm
