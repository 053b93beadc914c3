#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "syntaxlm/checkpoint.hpp"
#include "syntaxlm/finetune.hpp"
#include "syntaxlm/model.hpp"
#include "syntaxlm/optimizer.hpp"
#include "syntaxlm/pretrain.hpp"

namespace syntaxlm {

// Everything a command can be configured with. Keys, sections and defaults
// are listed by config_keys(); enable_alpha / enable_syntax_layer map onto
// ModelConfig::alpha_enabled / syntax_layer_enabled.
struct RunConfig {
    ModelConfig model;
    TrainSchedule schedule;  // seed lives here
    TaskToggles tasks;
    CorruptionOptions corruption;
    AdamConfig adam;
    bool freeze_alpha = false;
    double grad_clip = 1.0;
    int checkpoint_every = 0;
    std::string checkpoint_precision = "f32";

    DistanceMode distance_mode = DistanceMode::directed;
    bool intra_word_edges = true;
    int workers = 1;

    std::string treebank;
    std::string dev_treebank;
    std::string test_treebank;
    std::string vocab;
    std::string corpus;
    std::string checkpoint;
    std::string train_tasks;
    std::string dev_tasks;
    std::string test_tasks;
    std::string out_dir = "runs";
    std::string run_dir;

    std::string task_kind = "distance-label";
    int task_train_count = 2000;
    int task_eval_count = 500;
    int classes = 4;
    int epochs = 10;
    double finetune_lr = 1e-4;
    int finetune_batch_size = 16;

    std::string sentence;  // sent_id or 1-based index; empty = first
    std::string pair;      // "form,form" or "i,j" (1-based words)
    int gradcheck_sample = 600;
    double gradcheck_epsilon = 1e-5;
    double gradcheck_threshold = 1e-4;

    // Cross-field consistency; throws ConfigError.
    void validate() const;
    CheckpointPrecision precision() const;
};

struct ConfigKey {
    std::string_view section;
    std::string_view name;
    std::string_view help;
};
const std::vector<ConfigKey>& config_keys();

// Sets one key from its textual value. Throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view key);

// `key = value` lines, '#' comments, optional [section] headers. A key given
// under the wrong section is rejected. Throws ConfigError with the line number.
void apply_config_text(RunConfig& config, std::string_view text);
RunConfig load_config_file(const std::string& path);

// Complete config in the accepted format; parsing it back reproduces `config`.
std::string echo_config(const RunConfig& config);

PretrainOptions make_pretrain_options(const RunConfig& config);
FinetuneOptions make_finetune_options(const RunConfig& config);
PreprocessOptions make_preprocess_options(const RunConfig& config);

// 16 hex digits of FNV-1a over the echo.
std::string config_hash(const RunConfig& config);

}  // namespace syntaxlm
