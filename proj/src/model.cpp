#include "syntaxlm/model.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

Activation parse_activation(std::string_view s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + std::string(s) + "' (identity, relu, gelu, tanh)");
}

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
        case Activation::tanh: return "tanh";
    }
    return "gelu";
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (layers < 1) fail("layers must be >= 1");
    if (hidden < 1 || heads < 1) fail("hidden and heads must be >= 1");
    if (hidden % heads != 0) fail("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" + std::to_string(heads) + ")");
    if (ff < 1) fail("ff must be >= 1");
    if (vocab_size <= 7) fail("vocab_size must exceed the special-token count");
    if (max_len < 1) fail("max_len must be >= 1");
    if (distance_classes < 2) fail("distance_classes must be >= 2");
    if (!(alpha_init >= 0.0 && alpha_init < 1.0)) fail("alpha_init must lie in [0, 1)");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(init_std > 0.0)) fail("init_std must be positive");
    if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

std::vector<std::string> ModelConfig::warnings() const {
    std::vector<std::string> w;
    if (syntax_layer_enabled && alpha_enabled && alpha_init == 0.0)
        w.emplace_back("alpha_init = 0: the syntax-aware path contributes nothing until alpha moves");
    return w;
}

bool ModelConfig::same_architecture(const ModelConfig& o) const {
    return layers == o.layers && hidden == o.hidden && heads == o.heads && ff == o.ff && vocab_size == o.vocab_size &&
           max_len == o.max_len && distance_classes == o.distance_classes && alpha_enabled == o.alpha_enabled &&
           alpha_per_layer == o.alpha_per_layer && syntax_layer_enabled == o.syntax_layer_enabled &&
           syntax_bias == o.syntax_bias && activation == o.activation && syntax_activation == o.syntax_activation &&
           ln_eps == o.ln_eps;
}

ModelSlots ModelSlots::bind(const ParamStore& store, const ModelConfig& config) {
    ModelSlots s;
    s.tok_emb = store.require("embed.tokens");
    s.pos_emb = store.require("embed.positions");
    s.alpha = store.require("alpha");
    for (int n = 0; n < config.layers; ++n) {
        const std::string p = "layer" + std::to_string(n) + ".";
        LayerSlots l{};
        l.wq = store.require(p + "attn.q.w");
        l.bq = store.require(p + "attn.q.b");
        l.wk = store.require(p + "attn.k.w");
        l.wv = store.require(p + "attn.v.w");
        l.bv = store.require(p + "attn.v.b");
        l.wo = store.require(p + "attn.out.w");
        l.bo = store.require(p + "attn.out.b");
        l.ln1_gain = store.require(p + "ln1.gain");
        l.ln1_bias = store.require(p + "ln1.bias");
        l.ff1_w = store.require(p + "ffn.in.w");
        l.ff1_b = store.require(p + "ffn.in.b");
        l.ff2_w = store.require(p + "ffn.out.w");
        l.ff2_b = store.require(p + "ffn.out.b");
        l.ln2_gain = store.require(p + "ln2.gain");
        l.ln2_bias = store.require(p + "ln2.bias");
        l.syn_w1 = store.require(p + "syntax.w1");
        l.syn_w2 = store.require(p + "syntax.w2");
        l.syn_b = store.require(p + "syntax.b");
        s.layers.push_back(l);
    }
    const auto& a = store.slot(s.alpha);
    if (a.cols != (config.alpha_per_layer ? config.layers : 1))
        throw DataError("alpha tensor shape does not match alpha_per_layer");
    return s;
}

double ModelParams::alpha(int layer) const {
    return store.tensor(slots.alpha)(0, config.alpha_per_layer ? layer : 0);
}

double& ModelParams::alpha(int layer) { return store.tensor(slots.alpha)(0, config.alpha_per_layer ? layer : 0); }

ModelParams init_params(const ModelConfig& config, Rng& rng) {
    config.validate();
    for (const auto& w : config.warnings()) std::clog << "warning: " << w << '\n';

    ModelParams p;
    p.config = config;
    auto& st = p.store;
    const int d = config.hidden;
    st.add("embed.tokens", config.vocab_size, d, ParamKind::weight);
    st.add("embed.positions", config.max_len, d, ParamKind::weight);
    st.add("alpha", 1, config.alpha_per_layer ? config.layers : 1, ParamKind::scalar);
    for (int n = 0; n < config.layers; ++n) {
        const std::string pre = "layer" + std::to_string(n) + ".";
        for (const char* proj : {"q", "k", "v", "out"}) {
            st.add(pre + "attn." + proj + ".w", d, d, ParamKind::weight);
            // A key bias shifts a whole score row and cancels in the softmax, so keys have none.
            if (std::string_view(proj) != "k") st.add(pre + "attn." + proj + ".b", 1, d, ParamKind::bias);
        }
        st.add(pre + "ln1.gain", 1, d, ParamKind::gain);
        st.add(pre + "ln1.bias", 1, d, ParamKind::bias);
        st.add(pre + "ffn.in.w", d, config.ff, ParamKind::weight);
        st.add(pre + "ffn.in.b", 1, config.ff, ParamKind::bias);
        st.add(pre + "ffn.out.w", config.ff, d, ParamKind::weight);
        st.add(pre + "ffn.out.b", 1, d, ParamKind::bias);
        st.add(pre + "ln2.gain", 1, d, ParamKind::gain);
        st.add(pre + "ln2.bias", 1, d, ParamKind::bias);
        st.add(pre + "syntax.w1", d, d, ParamKind::weight);
        st.add(pre + "syntax.w2", d, d, ParamKind::weight);
        st.add(pre + "syntax.b", 1, d, ParamKind::bias);
    }
    for (std::size_t i = 0; i < st.slot_count(); ++i) {
        auto t = st.tensor(i);
        switch (st.slot(i).kind) {
            case ParamKind::weight:
                for (Eigen::Index r = 0; r < t.rows(); ++r)
                    for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = rng.normal(0.0, config.init_std);
                break;
            case ParamKind::gain: t.setOnes(); break;
            case ParamKind::bias: t.setZero(); break;
            case ParamKind::scalar: t.setConstant(config.alpha_init); break;
        }
    }
    p.slots = ModelSlots::bind(st, config);
    return p;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double act(double x, Activation a) {
    switch (a) {
        case Activation::identity: return x;
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
        case Activation::tanh: return std::tanh(x);
    }
    return x;
}

double act_grad(double x, Activation a) {
    switch (a) {
        case Activation::identity: return 1.0;
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::gelu: return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        case Activation::tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

Mat apply(const Mat& pre, Activation a) {
    if (a == Activation::identity) return pre;
    return pre.unaryExpr([a](double x) { return act(x, a); });
}

// upstream * sigma'(pre)
Mat apply_grad(const Mat& pre, const Mat& upstream, Activation a) {
    if (a == Activation::identity) return upstream;
    return upstream.cwiseProduct(pre.unaryExpr([a](double x) { return act_grad(x, a); }));
}

Mat affine(const Mat& x, const ParamStore& st, std::size_t w, std::size_t b) {
    Mat y = x * st.tensor(w);
    y.rowwise() += st.tensor(b).row(0);
    return y;
}

void accumulate_affine(const Mat& x, const Mat& dy, ParamStore& grads, std::size_t w, std::size_t b) {
    grads.tensor(w).noalias() += x.transpose() * dy;
    grads.tensor(b).row(0) += dy.colwise().sum();
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    Mat m(rows, cols);
    const double keep = 1.0 / (1.0 - p);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.bernoulli(p) ? 0.0 : keep;
    return m;
}

Mat layer_norm(const Mat& x, const ParamStore& st, std::size_t gain, std::size_t bias, double eps, Mat& xhat,
               ColVec& rstd) {
    const Eigen::Index n = x.rows();
    xhat.resize(n, x.cols());
    rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const RowVec centered = x.row(i).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(x.cols());
        rstd(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = centered * rstd(i);
    }
    Mat y = xhat.array().rowwise() * st.tensor(gain).row(0).array();
    y.rowwise() += st.tensor(bias).row(0);
    return y;
}

Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const ColVec& rstd, const ParamStore& st, std::size_t gain,
                        ParamStore& grads, std::size_t dgain, std::size_t dbias) {
    grads.tensor(dgain).row(0) += dy.cwiseProduct(xhat).colwise().sum();
    grads.tensor(dbias).row(0) += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * st.tensor(gain).row(0).array();
    Mat dx(dy.rows(), dy.cols());
    const double inv_d = 1.0 / static_cast<double>(dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double m1 = dxhat.row(i).sum() * inv_d;
        const double m2 = dxhat.row(i).dot(xhat.row(i)) * inv_d;
        dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
    }
    return dx;
}

void check_sequence(const ModelConfig& cfg, const SequenceInput& s) {
    const auto n = static_cast<Eigen::Index>(s.ids.size());
    if (n == 0) throw std::invalid_argument("empty sequence");
    if (n > cfg.max_len)
        throw std::length_error("sequence of " + std::to_string(n) + " tokens exceeds max_len " + std::to_string(cfg.max_len));
    for (int id : s.ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
    if (s.strength.rows() != n || s.strength.cols() != n)
        throw std::invalid_argument("strength matrix is " + std::to_string(s.strength.rows()) + "x" +
                                    std::to_string(s.strength.cols()) + " for a sequence of " + std::to_string(n));
}

// Fills syn_agg/syn_pre/syn_out from lt.input.
void compute_syntax(const ModelParams& p, int layer, const std::vector<int>& offsets,
                    const std::vector<StrengthMatrix>& strengths, LayerTrace& lt) {
    const auto& cfg = p.config;
    const auto& st = p.store;
    const auto& sl = p.slots.layers[static_cast<std::size_t>(layer)];
    lt.syn_agg.resize(lt.input.rows(), cfg.hidden);
    for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
        const int o = offsets[b], n = offsets[b + 1] - offsets[b];
        lt.syn_agg.middleRows(o, n).noalias() = strengths[b] * lt.input.middleRows(o, n);
    }
    lt.syn_pre.noalias() = lt.input * st.tensor(sl.syn_w1);
    lt.syn_pre.noalias() += lt.syn_agg * st.tensor(sl.syn_w2);
    if (cfg.syntax_bias) lt.syn_pre.rowwise() += st.tensor(sl.syn_b).row(0);
    lt.syn_out = apply(lt.syn_pre, cfg.syntax_activation);
}

// H' from lt.input (and the syntax-aware representation when enabled).
void run_syntax(const ModelParams& p, int layer, const std::vector<int>& offsets,
                const std::vector<StrengthMatrix>& strengths, LayerTrace& lt) {
    const auto& cfg = p.config;
    if (!cfg.syntax_layer_enabled) {
        lt.mixed = lt.input;
        return;
    }
    compute_syntax(p, layer, offsets, strengths, lt);
    if (cfg.alpha_enabled) {
        const double a = p.alpha(layer);
        lt.mixed = (1.0 - a) * lt.input + a * lt.syn_out;
    } else {
        lt.mixed = lt.input + lt.syn_out;
    }
}

// Transformer block on lt.mixed; returns H^n.
Mat run_block(const ModelParams& p, int layer, const std::vector<int>& offsets, Rng* rng, LayerTrace& lt) {
    const auto& cfg = p.config;
    const auto& st = p.store;
    const auto& sl = p.slots.layers[static_cast<std::size_t>(layer)];
    const bool drop = rng != nullptr && cfg.dropout > 0.0;
    const int heads = cfg.heads;
    const Eigen::Index dk = cfg.hidden / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const Eigen::Index T = lt.mixed.rows();

    lt.q = affine(lt.mixed, st, sl.wq, sl.bq);
    lt.k = lt.mixed * st.tensor(sl.wk);
    lt.v = affine(lt.mixed, st, sl.wv, sl.bv);
    lt.context.setZero(T, cfg.hidden);
    lt.probs.clear();
    lt.probs_mask.clear();
    for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
        const int o = offsets[b], n = offsets[b + 1] - offsets[b];
        for (int h = 0; h < heads; ++h) {
            Mat scores = lt.q.block(o, h * dk, n, dk) * lt.k.block(o, h * dk, n, dk).transpose() * scale;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double mx = scores.row(i).maxCoeff();
                scores.row(i) = (scores.row(i).array() - mx).exp();
                scores.row(i) /= scores.row(i).sum();
            }
            if (drop) {
                Mat mask = dropout_mask(n, n, cfg.dropout, *rng);
                lt.context.block(o, h * dk, n, dk).noalias() = scores.cwiseProduct(mask) * lt.v.block(o, h * dk, n, dk);
                lt.probs_mask.push_back(std::move(mask));
            } else {
                lt.context.block(o, h * dk, n, dk).noalias() = scores * lt.v.block(o, h * dk, n, dk);
            }
            lt.probs.push_back(std::move(scores));
        }
    }
    Mat attn_out = affine(lt.context, st, sl.wo, sl.bo);
    if (drop) {
        lt.attn_mask = dropout_mask(T, cfg.hidden, cfg.dropout, *rng);
        attn_out = attn_out.cwiseProduct(lt.attn_mask);
    } else {
        lt.attn_mask.resize(0, 0);
    }
    lt.attn_block = layer_norm(attn_out + lt.mixed, st, sl.ln1_gain, sl.ln1_bias, cfg.ln_eps, lt.ln1_xhat, lt.ln1_rstd);

    lt.ff_pre = affine(lt.attn_block, st, sl.ff1_w, sl.ff1_b);
    lt.ff_act = apply(lt.ff_pre, cfg.activation);
    Mat ff_out = affine(lt.ff_act, st, sl.ff2_w, sl.ff2_b);
    if (drop) {
        lt.ff_mask = dropout_mask(T, cfg.hidden, cfg.dropout, *rng);
        ff_out = ff_out.cwiseProduct(lt.ff_mask);
    } else {
        lt.ff_mask.resize(0, 0);
    }
    return layer_norm(ff_out + lt.attn_block, st, sl.ln2_gain, sl.ln2_bias, cfg.ln_eps, lt.ln2_xhat, lt.ln2_rstd);
}

}  // namespace

Mat syntax_repr(const Mat& hidden, const StrengthMatrix& strength, const ModelParams& params, int layer) {
    if (layer < 0 || layer >= params.config.layers) throw std::out_of_range("layer index out of range");
    if (hidden.cols() != params.config.hidden) throw std::invalid_argument("hidden width mismatch");
    if (strength.rows() != hidden.rows() || strength.cols() != hidden.rows())
        throw std::invalid_argument("strength matrix does not match the sequence length");
    LayerTrace lt;
    lt.input = hidden;
    const std::vector<int> offsets{0, static_cast<int>(hidden.rows())};
    const std::vector<StrengthMatrix> strengths{strength};
    compute_syntax(params, layer, offsets, strengths, lt);
    return lt.syn_out;
}

Mat mix(const Mat& hidden, const Mat& syntax, double alpha) {
    if (hidden.rows() != syntax.rows() || hidden.cols() != syntax.cols())
        throw std::invalid_argument("mix() operands differ in shape");
    return (1.0 - alpha) * hidden + alpha * syntax;
}

Mat transformer_layer(const Mat& mixed, const ModelParams& params, int layer, std::vector<Mat>* attention_probs) {
    if (layer < 0 || layer >= params.config.layers) throw std::out_of_range("layer index out of range");
    if (mixed.cols() != params.config.hidden || mixed.rows() == 0) throw std::invalid_argument("transformer_layer() input shape mismatch");
    LayerTrace lt;
    lt.mixed = mixed;
    const std::vector<int> offsets{0, static_cast<int>(mixed.rows())};
    Mat out = run_block(params, layer, offsets, nullptr, lt);
    if (attention_probs) *attention_probs = std::move(lt.probs);
    return out;
}

ForwardTrace forward(const ModelParams& params, std::span<const SequenceInput> batch, Rng* dropout_rng) {
    const auto& cfg = params.config;
    const auto& st = params.store;
    if (batch.empty()) throw std::invalid_argument("forward() on an empty batch");
    ForwardTrace tr;
    tr.offsets.push_back(0);
    for (const auto& s : batch) {
        check_sequence(cfg, s);
        tr.ids.insert(tr.ids.end(), s.ids.begin(), s.ids.end());
        tr.offsets.push_back(tr.offsets.back() + static_cast<int>(s.ids.size()));
        tr.strengths.push_back(s.strength);
    }
    const Eigen::Index T = tr.total_tokens();
    const auto tok = st.tensor(params.slots.tok_emb);
    const auto pos = st.tensor(params.slots.pos_emb);
    tr.embeddings.resize(T, cfg.hidden);
    for (std::size_t b = 0; b + 1 < tr.offsets.size(); ++b)
        for (int t = tr.offsets[b]; t < tr.offsets[b + 1]; ++t)
            tr.embeddings.row(t) = tok.row(tr.ids[static_cast<std::size_t>(t)]) + pos.row(t - tr.offsets[b]);

    tr.layers.resize(static_cast<std::size_t>(cfg.layers));
    const Mat* h = &tr.embeddings;
    for (int n = 0; n < cfg.layers; ++n) {
        auto& lt = tr.layers[static_cast<std::size_t>(n)];
        lt.input = *h;
        run_syntax(params, n, tr.offsets, tr.strengths, lt);
        Mat out = run_block(params, n, tr.offsets, dropout_rng, lt);
        if (n + 1 < cfg.layers) {
            tr.layers[static_cast<std::size_t>(n) + 1].input = std::move(out);
            h = &tr.layers[static_cast<std::size_t>(n) + 1].input;
        } else {
            tr.output = std::move(out);
        }
    }
    tr.store = &st;
    tr.param_version = st.version();
    return tr;
}

ForwardTrace forward(const ModelParams& params, const SequenceInput& sequence, Rng* dropout_rng) {
    return forward(params, std::span<const SequenceInput>(&sequence, 1), dropout_rng);
}

void backward(const ModelParams& params, const ForwardTrace& trace, const Mat& output_grad, ParamStore& grads) {
    const auto& cfg = params.config;
    const auto& st = params.store;
    if (trace.store != &st || trace.param_version != st.version())
        throw std::logic_error("forward trace is stale: parameters changed after forward()");
    if (static_cast<int>(trace.layers.size()) != cfg.layers || output_grad.rows() != trace.output.rows() ||
        output_grad.cols() != trace.output.cols())
        throw std::invalid_argument("output gradient does not match the forward trace");
    if (!grads.same_layout(st)) throw std::invalid_argument("gradient buffer layout differs from the parameters");

    const int heads = cfg.heads;
    const Eigen::Index dk = cfg.hidden / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const auto& offsets = trace.offsets;

    Mat dh = output_grad;
    for (int n = cfg.layers - 1; n >= 0; --n) {
        const auto& lt = trace.layers[static_cast<std::size_t>(n)];
        const auto& sl = params.slots.layers[static_cast<std::size_t>(n)];

        Mat du2 = layer_norm_backward(dh, lt.ln2_xhat, lt.ln2_rstd, st, sl.ln2_gain, grads, sl.ln2_gain, sl.ln2_bias);
        Mat dg = du2;
        const Mat dff_out = lt.ff_mask.size() ? Mat(du2.cwiseProduct(lt.ff_mask)) : du2;
        accumulate_affine(lt.ff_act, dff_out, grads, sl.ff2_w, sl.ff2_b);
        const Mat dff_pre = apply_grad(lt.ff_pre, dff_out * st.tensor(sl.ff2_w).transpose(), cfg.activation);
        accumulate_affine(lt.attn_block, dff_pre, grads, sl.ff1_w, sl.ff1_b);
        dg.noalias() += dff_pre * st.tensor(sl.ff1_w).transpose();

        const Mat du1 = layer_norm_backward(dg, lt.ln1_xhat, lt.ln1_rstd, st, sl.ln1_gain, grads, sl.ln1_gain, sl.ln1_bias);
        Mat dmixed = du1;
        const Mat dattn_out = lt.attn_mask.size() ? Mat(du1.cwiseProduct(lt.attn_mask)) : du1;
        accumulate_affine(lt.context, dattn_out, grads, sl.wo, sl.bo);
        const Mat dcontext = dattn_out * st.tensor(sl.wo).transpose();

        Mat dq = Mat::Zero(dcontext.rows(), cfg.hidden);
        Mat dk_all = Mat::Zero(dcontext.rows(), cfg.hidden);
        Mat dv = Mat::Zero(dcontext.rows(), cfg.hidden);
        std::size_t idx = 0;
        for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
            const int o = offsets[b], len = offsets[b + 1] - offsets[b];
            for (int h = 0; h < heads; ++h, ++idx) {
                const Mat& P = lt.probs[idx];
                const bool masked = !lt.probs_mask.empty();
                const Mat Pd = masked ? Mat(P.cwiseProduct(lt.probs_mask[idx])) : P;
                const auto dctx = dcontext.block(o, h * dk, len, dk);
                Mat dP = dctx * lt.v.block(o, h * dk, len, dk).transpose();
                dv.block(o, h * dk, len, dk).noalias() = Pd.transpose() * dctx;
                if (masked) dP = dP.cwiseProduct(lt.probs_mask[idx]);
                const ColVec row_dot = dP.cwiseProduct(P).rowwise().sum();
                const Mat dS = P.cwiseProduct(dP.colwise() - row_dot) * scale;
                dq.block(o, h * dk, len, dk).noalias() = dS * lt.k.block(o, h * dk, len, dk);
                dk_all.block(o, h * dk, len, dk).noalias() = dS.transpose() * lt.q.block(o, h * dk, len, dk);
            }
        }
        accumulate_affine(lt.mixed, dq, grads, sl.wq, sl.bq);
        grads.tensor(sl.wk).noalias() += lt.mixed.transpose() * dk_all;
        accumulate_affine(lt.mixed, dv, grads, sl.wv, sl.bv);
        dmixed.noalias() += dq * st.tensor(sl.wq).transpose();
        dmixed.noalias() += dk_all * st.tensor(sl.wk).transpose();
        dmixed.noalias() += dv * st.tensor(sl.wv).transpose();

        if (!cfg.syntax_layer_enabled) {
            dh = std::move(dmixed);
            continue;
        }
        Mat dinput, dsyn_out;
        if (cfg.alpha_enabled) {
            const double a = params.alpha(n);
            grads.tensor(params.slots.alpha)(0, cfg.alpha_per_layer ? n : 0) +=
                (lt.syn_out - lt.input).cwiseProduct(dmixed).sum();
            dinput = (1.0 - a) * dmixed;
            dsyn_out = a * dmixed;
        } else {
            dinput = dmixed;
            dsyn_out = std::move(dmixed);
        }
        const Mat dsyn_pre = apply_grad(lt.syn_pre, dsyn_out, cfg.syntax_activation);
        grads.tensor(sl.syn_w1).noalias() += lt.input.transpose() * dsyn_pre;
        grads.tensor(sl.syn_w2).noalias() += lt.syn_agg.transpose() * dsyn_pre;
        if (cfg.syntax_bias) grads.tensor(sl.syn_b).row(0) += dsyn_pre.colwise().sum();
        dinput.noalias() += dsyn_pre * st.tensor(sl.syn_w1).transpose();
        const Mat dagg = dsyn_pre * st.tensor(sl.syn_w2).transpose();
        for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
            const int o = offsets[b], len = offsets[b + 1] - offsets[b];
            dinput.middleRows(o, len).noalias() += trace.strengths[b].transpose() * dagg.middleRows(o, len);
        }
        dh = std::move(dinput);
    }

    auto dtok = grads.tensor(params.slots.tok_emb);
    auto dpos = grads.tensor(params.slots.pos_emb);
    for (std::size_t b = 0; b + 1 < offsets.size(); ++b)
        for (int t = offsets[b]; t < offsets[b + 1]; ++t) {
            dtok.row(trace.ids[static_cast<std::size_t>(t)]) += dh.row(t);
            dpos.row(t - offsets[b]) += dh.row(t);
        }
}

}  // namespace syntaxlm
