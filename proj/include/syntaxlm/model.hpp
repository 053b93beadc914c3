#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "syntaxlm/rng.hpp"
#include "syntaxlm/syntax_distance.hpp"
#include "syntaxlm/tensor.hpp"

namespace syntaxlm {

enum class Activation : std::uint8_t { identity, relu, gelu, tanh };
Activation parse_activation(std::string_view s);
std::string_view to_string(Activation a);

struct ModelConfig {
    int layers = 4;
    int hidden = 128;
    int heads = 4;
    int ff = 512;
    int vocab_size = 1024;
    int max_len = 128;
    int distance_classes = 16;

    double alpha_init = 0.1;
    bool alpha_enabled = true;         // false: H' = H + H^ (no importance score)
    bool alpha_per_layer = false;
    bool syntax_layer_enabled = true;  // false: H' = H
    bool syntax_bias = true;           // bias inside the syntax-aware affine maps
    Activation activation = Activation::gelu;         // FFN
    Activation syntax_activation = Activation::gelu;  // sigma of the syntax-aware representation

    double dropout = 0.1;
    double init_std = 0.02;
    double ln_eps = 1e-5;

    void validate() const;
    std::vector<std::string> warnings() const;
    // Fields that determine parameter shapes and forward semantics.
    bool same_architecture(const ModelConfig& other) const;
};

struct LayerSlots {
    std::size_t wq, bq, wk, wv, bv, wo, bo;  // keys carry no bias
    std::size_t ln1_gain, ln1_bias;
    std::size_t ff1_w, ff1_b, ff2_w, ff2_b;
    std::size_t ln2_gain, ln2_bias;
    std::size_t syn_w1, syn_w2, syn_b;
};

struct ModelSlots {
    std::size_t tok_emb;
    std::size_t pos_emb;
    std::size_t alpha;
    std::vector<LayerSlots> layers;

    static ModelSlots bind(const ParamStore& store, const ModelConfig& config);
};

struct ModelParams {
    ModelConfig config;
    ParamStore store;
    ModelSlots slots;

    double alpha(int layer) const;
    double& alpha(int layer);
};

// Weights ~ N(0, init_std), layer-norm gains 1, biases 0, alpha = alpha_init.
ModelParams init_params(const ModelConfig& config, Rng& rng);

// H^ = sigma(H W1 + (S H) W2 + b) for one sequence.
Mat syntax_repr(const Mat& hidden, const StrengthMatrix& strength, const ModelParams& params, int layer);

// (1 - alpha) H + alpha H^
Mat mix(const Mat& hidden, const Mat& syntax, double alpha);

// G = LN(MultiAttn(H') + H'); H = LN(FFN(G) + G), one sequence, no dropout.
// `attention_probs`, when given, receives one n x n matrix per head.
Mat transformer_layer(const Mat& mixed, const ModelParams& params, int layer,
                      std::vector<Mat>* attention_probs = nullptr);

struct SequenceInput {
    std::vector<int> ids;
    StrengthMatrix strength;  // n x n; all-zero for syntax-free sequences
};

struct LayerTrace {
    Mat input;     // H^{n-1}
    Mat syn_agg;   // S H
    Mat syn_pre;   // pre-activation of H^
    Mat syn_out;   // H^
    Mat mixed;     // H'
    Mat q, k, v;
    std::vector<Mat> probs;       // [sequence * heads + head], post-softmax
    std::vector<Mat> probs_mask;  // dropout scale per prob entry; empty without dropout
    Mat context;
    Mat attn_mask;
    Mat ln1_xhat;
    ColVec ln1_rstd;
    Mat attn_block;  // G'
    Mat ff_pre;
    Mat ff_act;
    Mat ff_mask;
    Mat ln2_xhat;
    ColVec ln2_rstd;
};

// Sequences are packed row-wise: sequence b occupies rows [offsets[b], offsets[b+1]).
struct ForwardTrace {
    std::vector<int> ids;
    std::vector<int> offsets;
    std::vector<StrengthMatrix> strengths;
    Mat embeddings;  // H^0
    std::vector<LayerTrace> layers;
    Mat output;      // H^N
    const ParamStore* store = nullptr;
    std::uint64_t param_version = 0;

    int total_tokens() const noexcept { return offsets.empty() ? 0 : offsets.back(); }
    int sequence_count() const noexcept { return offsets.empty() ? 0 : static_cast<int>(offsets.size()) - 1; }
    int sequence_length(int b) const { return offsets.at(static_cast<std::size_t>(b) + 1) - offsets.at(static_cast<std::size_t>(b)); }
};

// `dropout_rng` null means evaluation mode.
ForwardTrace forward(const ModelParams& params, std::span<const SequenceInput> batch, Rng* dropout_rng = nullptr);
ForwardTrace forward(const ModelParams& params, const SequenceInput& sequence, Rng* dropout_rng = nullptr);

// Accumulates dLoss/dtheta into `grads` (same layout as params.store) given dLoss/dH^N.
void backward(const ModelParams& params, const ForwardTrace& trace, const Mat& output_grad, ParamStore& grads);

}  // namespace syntaxlm
