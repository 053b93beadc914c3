#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "syntaxlm/checkpoint.hpp"
#include "syntaxlm/model.hpp"
#include "syntaxlm/optimizer.hpp"
#include "syntaxlm/syntax_distance.hpp"
#include "syntaxlm/tokenizer.hpp"
#include "syntaxlm/treebank.hpp"

namespace syntaxlm {

struct PretrainExample {
    std::string sentence_id;
    std::vector<int> ids;       // subwords, no special tokens
    Alignment alignment;
    DistanceMatrix distances;   // over `ids`
    std::vector<int> head_of;   // per word: 1-based head word, 0 for the root

    bool operator==(const PretrainExample& o) const {
        return sentence_id == o.sentence_id && ids == o.ids && alignment.word_spans == o.alignment.word_spans &&
               distances == o.distances && head_of == o.head_of;
    }
};

struct PreprocessOptions {
    DistanceMode mode = DistanceMode::directed;
    bool intra_word_edges = true;
    int max_len = 128;  // including the two sentence delimiters
    int workers = 1;
};

PretrainExample make_pretrain_example(const DependencyTree& tree, const Vocab& vocab, DistanceMode mode,
                                      bool intra_word_edges);

// Sentences longer than max_len (after delimiters) are skipped; `skipped`
// receives their ids. Output order follows the input regardless of workers.
std::vector<PretrainExample> preprocess(const std::vector<DependencyTree>& trees, const Vocab& vocab,
                                        const PreprocessOptions& options, std::vector<std::string>* skipped = nullptr);

// --- targets -----------------------------------------------------------------

struct HpTarget {
    int position;  // word-initial subword
    int target;    // first subword of its head; the root points at itself
};
std::vector<HpTarget> make_hp_targets(const PretrainExample& example);

struct PositionLabel {
    int position;
    int label;
};

struct MlmCorruption {
    std::vector<int> ids;
    std::vector<PositionLabel> targets;
    std::size_t masked = 0;
    std::size_t randomized = 0;
    std::size_t kept = 0;
};

// Selects each maskable position with probability `rate`; selected tokens become
// MASK (80%), a uniform non-special id (10%), or stay (10%).
MlmCorruption make_mlm_targets(const std::vector<int>& ids, const std::vector<char>& maskable, int vocab_size,
                               double rate, Rng& rng);

// --- heads and losses --------------------------------------------------------

struct PretrainHeads {
    std::size_t mlm_bias;  // output projection is the tied token embedding
    std::size_t dp_w, dp_b;
    std::size_t hp_u, hp_v;

    static PretrainHeads attach(ModelParams& params, Rng& rng);
    static PretrainHeads bind(const ParamStore& store);
};

struct PairLabel {
    int row;  // packed-batch positions
    int col;
    int label;
};

// One pointer problem per sequence: every query chooses among `candidates`.
struct HpGroup {
    std::vector<int> candidates;                 // packed-batch positions
    std::vector<std::pair<int, int>> queries;    // (position, index of the gold candidate)
};

struct LossResult {
    double loss = 0.0;      // mean cross-entropy
    std::size_t count = 0;  // targets
    std::size_t correct = 0;
};

// Each loss reads H^N and, when `dh`/`grads` are non-null, accumulates
// dLoss/dH^N and head-parameter gradients. Empty target sets give loss 0.
LossResult mlm_loss(const ModelParams& params, const PretrainHeads& heads, const Mat& hidden,
                    std::span<const PositionLabel> targets, Mat* dh, ParamStore* grads);
LossResult dp_loss(const ModelParams& params, const PretrainHeads& heads, const Mat& hidden,
                   std::span<const PairLabel> targets, Mat* dh, ParamStore* grads);
LossResult hp_loss(const ModelParams& params, const PretrainHeads& heads, const Mat& hidden,
                   std::span<const HpGroup> groups, Mat* dh, ParamStore* grads);

struct TaskToggles {
    bool mlm = true;
    bool hp = true;
    bool dp = true;
};

struct LossBreakdown {
    double mlm = 0.0, hp = 0.0, dp = 0.0;
    double total = 0.0;
    LossResult mlm_detail, hp_detail, dp_detail;
};

LossBreakdown combine_losses(const LossResult& mlm, const LossResult& hp, const LossResult& dp, const TaskToggles& tasks);

// --- batches -----------------------------------------------------------------

struct CorruptionOptions {
    double mlm_rate = 0.15;
    double dp_rate = 0.15;
    DpMaskPolicy mask_policy = DpMaskPolicy::as_distance_one;
    int distance_classes = 16;
    int vocab_size = 0;  // ids drawn for random replacement are below this; 0: the model's (pretrain_loop, evaluate_pretrain)
};

struct PretrainBatch {
    std::vector<SequenceInput> inputs;  // corrupted ids and strength matrix, with <s> </s>
    std::vector<PositionLabel> mlm;
    std::vector<PairLabel> dp;
    std::vector<HpGroup> hp;
    std::vector<std::vector<char>> special;  // per sequence, per position
    std::vector<std::size_t> example_index;
    std::size_t batch_id = 0;
};

// Fresh MLM and DP corruption drawn from `rng`.
PretrainBatch make_batch(std::span<const PretrainExample> corpus, std::span<const std::size_t> indices,
                         const CorruptionOptions& options, const TaskToggles& tasks, Rng& rng);

LossBreakdown compute_losses(const ModelParams& params, const PretrainHeads& heads, const ForwardTrace& trace,
                             const PretrainBatch& batch, const TaskToggles& tasks, Mat* dh, ParamStore* grads);

// --- training ----------------------------------------------------------------

struct StepMetrics {
    int step = 0;
    double lr = 0.0;
    LossBreakdown losses;
    std::optional<double> alpha;  // absent when the syntax layer is off
};

std::string format_metrics(const StepMetrics& m);

struct TrainState {
    ModelParams params;
    PretrainHeads heads;
    ParamStore grads;
    Adam optimizer;
    Rng dropout_rng;
};

// One Adam step on `batch`. Throws NumericError on a non-finite loss.
StepMetrics train_step(TrainState& state, const PretrainBatch& batch, const TrainSchedule& schedule, int step,
                       const TaskToggles& tasks, double grad_clip = 0.0);

struct PretrainOptions {
    ModelConfig model;
    TrainSchedule schedule;
    TaskToggles tasks;
    CorruptionOptions corruption;
    AdamConfig adam;
    bool freeze_alpha = false;
    double grad_clip = 0.0;
    int checkpoint_every = 0;  // 0: final checkpoint only
    CheckpointPrecision precision = CheckpointPrecision::f32;
    std::string out_dir;       // empty: no files written
};

struct PretrainResult {
    ModelParams params;
    PretrainHeads heads;
    std::vector<StepMetrics> log;
};

PretrainResult pretrain_loop(const std::vector<PretrainExample>& corpus, const PretrainOptions& options,
                             const std::function<void(const StepMetrics&)>& on_step = {});

struct PretrainEval {
    LossBreakdown losses;
    double mlm_accuracy = 0.0;
    double hp_accuracy = 0.0;
    double dp_accuracy = 0.0;
};

// Losses and accuracies over the whole corpus, no dropout, corruption drawn from `seed`.
PretrainEval evaluate_pretrain(const ModelParams& params, const PretrainHeads& heads,
                               const std::vector<PretrainExample>& corpus, const CorruptionOptions& corruption,
                               const TaskToggles& tasks, std::uint64_t seed, int batch_size = 16);

}  // namespace syntaxlm
