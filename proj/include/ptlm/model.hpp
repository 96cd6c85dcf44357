#pragma once

#include <cstdio>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ptlm/ops.hpp"

// Decoder-only causal transformer (GPT-2 style, pre-norm) with an optional
// learned prefix injected as raw input embeddings at positions 0..P-1. The
// output head is weight-tied to the token embedding table.

namespace ptlm {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMaskValue = -1e9;  // additive causal mask, pre-softmax

// Name under which the prompt prefix is selected for training, next to the
// ParameterSet tensor names.
inline const std::string kPrefixSelector = "prefix";

struct ModelConfig {
    int n_layers = 2;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 256;
    int vocab_size = 512;
    int max_positions = 64;

    void validate() const {
        std::vector<std::string> problems;
        auto positive = [&](int v, const char* name) {
            if (v < 1) problems.push_back(std::string(name) + " must be >= 1, got " + std::to_string(v));
        };
        // a zero-layer model (embeddings, final norm, tied head) is degenerate
        // but well defined, so only negative layer counts are rejected
        if (n_layers < 0) problems.push_back("n_layers must be >= 0, got " + std::to_string(n_layers));
        positive(d_model, "d_model");
        positive(n_heads, "n_heads");
        positive(d_ff, "d_ff");
        positive(vocab_size, "vocab_size");
        positive(max_positions, "max_positions");
        if (n_heads >= 1 && d_model % n_heads != 0)
            problems.push_back("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                               std::to_string(n_heads));
        if (!problems.empty()) {
            std::string msg = "model config:";
            for (const auto& p : problems) msg += " " + p + ";";
            msg.pop_back();
            throw ValidationError(msg);
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

inline std::string layer_prefix(int layer) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "layers.%02d.", layer);
    return std::string(buf);
}

// Single source of truth for tensor names and shapes, in construction order.
// Both allocation and count_params derive from this table; lexicographic
// reordering happens only at checkpoint-write time.
inline std::vector<std::pair<std::string, std::vector<int>>> tensor_layout(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, std::vector<int>>> layout;
    layout.emplace_back("token_embedding", std::vector<int>{cfg.vocab_size, cfg.d_model});
    layout.emplace_back("position_embedding", std::vector<int>{cfg.max_positions, cfg.d_model});
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = layer_prefix(l);
        layout.emplace_back(p + "attn_norm.gain", std::vector<int>{cfg.d_model});
        layout.emplace_back(p + "attn_norm.bias", std::vector<int>{cfg.d_model});
        layout.emplace_back(p + "attn.qkv_weight", std::vector<int>{3 * cfg.d_model, cfg.d_model});
        layout.emplace_back(p + "attn.qkv_bias", std::vector<int>{3 * cfg.d_model});
        layout.emplace_back(p + "attn.proj_weight", std::vector<int>{cfg.d_model, cfg.d_model});
        layout.emplace_back(p + "attn.proj_bias", std::vector<int>{cfg.d_model});
        layout.emplace_back(p + "mlp_norm.gain", std::vector<int>{cfg.d_model});
        layout.emplace_back(p + "mlp_norm.bias", std::vector<int>{cfg.d_model});
        layout.emplace_back(p + "mlp.fc_weight", std::vector<int>{cfg.d_model, cfg.d_ff});
        layout.emplace_back(p + "mlp.fc_bias", std::vector<int>{cfg.d_ff});
        layout.emplace_back(p + "mlp.proj_weight", std::vector<int>{cfg.d_ff, cfg.d_model});
        layout.emplace_back(p + "mlp.proj_bias", std::vector<int>{cfg.d_model});
    }
    layout.emplace_back("final_norm.gain", std::vector<int>{cfg.d_model});
    layout.emplace_back("final_norm.bias", std::vector<int>{cfg.d_model});
    return layout;
}

template <typename Real>
struct ParameterSetT {
    ModelConfig config;
    // parallel to tensor_layout(config); TensorT is a shared handle, so the
    // named() views below alias these entries
    std::vector<std::pair<std::string, TensorT<Real>>> tensors;

    std::vector<std::pair<std::string, TensorT<Real>>>& named() { return tensors; }
    const std::vector<std::pair<std::string, TensorT<Real>>>& named() const { return tensors; }

    TensorT<Real> find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw IndexError("parameter set: no tensor named " + name);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [n, t] : tensors) out.push_back(n);
        return out;
    }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : tensors) n += t.numel();
        return n;
    }

    void set_requires_grad(bool on) {
        for (auto& [name, t] : tensors) t.set_requires_grad(on);
    }

    void zero_grads() {
        for (auto& [name, t] : tensors) t.zero_grad();
    }
};

using ParameterSet = ParameterSetT<float>;

template <typename Real>
ParameterSetT<Real> make_param_set(const ModelConfig& cfg) {
    cfg.validate();
    ParameterSetT<Real> p;
    p.config = cfg;
    for (auto& [name, shape] : tensor_layout(cfg)) p.tensors.emplace_back(name, TensorT<Real>::zeros(shape));
    return p;
}

template <typename Other, typename Real>
ParameterSetT<Other> cast_params(const ParameterSetT<Real>& src) {
    ParameterSetT<Other> out;
    out.config = src.config;
    for (const auto& [name, t] : src.tensors) out.tensors.emplace_back(name, t.template cast<Other>());
    return out;
}

// Weight matrices and both embedding tables draw Normal(0, 0.02); biases are
// zero and layer-norm gains one. RNG is consumed strictly in layout order, so
// one seed fixes every value.
template <typename Real>
ParameterSetT<Real> init_params(const ModelConfig& cfg, RngState& rng) {
    ParameterSetT<Real> p = make_param_set<Real>(cfg);
    for (auto& [name, t] : p.tensors) {
        const bool is_gain = name.ends_with("norm.gain");
        const bool is_bias = name.ends_with("bias");
        if (is_gain) {
            for (auto& v : t.values()) v = Real(1);
        } else if (is_bias) {
            // already zero
        } else {
            for (auto& v : t.values()) v = static_cast<Real>(rng.normal(0.0, 0.02));
        }
    }
    return p;
}

struct ParamCount {
    std::size_t total = 0;
    std::vector<std::pair<std::string, std::size_t>> breakdown;
};

// Exact count of base-model parameters. The weight-tied output head shares
// the token embedding and contributes nothing of its own.
inline ParamCount count_params(const ModelConfig& cfg) {
    cfg.validate();
    ParamCount out;
    for (auto& [name, shape] : tensor_layout(cfg)) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        out.breakdown.emplace_back(name, n);
        out.total += n;
    }
    return out;
}

template <typename Real>
struct ForwardOutputT {
    TensorT<Real> logits;                 // (prefix_len + seq_len) x V
    std::vector<int> targets;             // next-token targets per row, -1 where masked
    std::vector<std::uint8_t> loss_mask;  // 1 where the row predicts a real token
    int prefix_len = 0;
};

using ForwardOutput = ForwardOutputT<float>;

namespace detail {

template <typename Real>
TensorT<Real> attention_block(TapeT<Real>* tape, const ParameterSetT<Real>& params, int layer,
                              const TensorT<Real>& x, const TensorT<Real>& mask) {
    const ModelConfig& cfg = params.config;
    const std::string lp = layer_prefix(layer);
    const int d = cfg.d_model;
    const int dh = d / cfg.n_heads;
    const Real att_scale = Real(1) / std::sqrt(Real(dh));

    TensorT<Real> h = layer_norm(tape, x, params.find(lp + "attn_norm.gain"), params.find(lp + "attn_norm.bias"),
                                 Real(kLayerNormEps));
    // qkv_weight is stored [3d x d]; applied as h * W^T
    TensorT<Real> qkv = add_bias(tape, matmul(tape, h, transpose(tape, params.find(lp + "attn.qkv_weight"))),
                                 params.find(lp + "attn.qkv_bias"));
    TensorT<Real> q = slice_cols(tape, qkv, 0, d);
    TensorT<Real> k = slice_cols(tape, qkv, d, d);
    TensorT<Real> v = slice_cols(tape, qkv, 2 * d, d);

    std::vector<TensorT<Real>> heads;
    heads.reserve(cfg.n_heads);
    for (int hi = 0; hi < cfg.n_heads; ++hi) {
        TensorT<Real> qh = slice_cols(tape, q, hi * dh, dh);
        TensorT<Real> kh = slice_cols(tape, k, hi * dh, dh);
        TensorT<Real> vh = slice_cols(tape, v, hi * dh, dh);
        TensorT<Real> scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), att_scale);
        TensorT<Real> probs = softmax_rows(tape, add(tape, scores, mask));
        heads.push_back(matmul(tape, probs, vh));
    }
    TensorT<Real> ctx = concat_cols(tape, heads);
    return add_bias(tape, matmul(tape, ctx, transpose(tape, params.find(lp + "attn.proj_weight"))),
                    params.find(lp + "attn.proj_bias"));
}

template <typename Real>
TensorT<Real> mlp_block(TapeT<Real>* tape, const ParameterSetT<Real>& params, int layer, const TensorT<Real>& x) {
    const std::string lp = layer_prefix(layer);
    TensorT<Real> h = layer_norm(tape, x, params.find(lp + "mlp_norm.gain"), params.find(lp + "mlp_norm.bias"),
                                 Real(kLayerNormEps));
    // fc_weight [d x d_ff] and proj_weight [d_ff x d] are stored input-major
    TensorT<Real> act = gelu(tape, add_bias(tape, matmul(tape, h, params.find(lp + "mlp.fc_weight")),
                                            params.find(lp + "mlp.fc_bias")));
    return add_bias(tape, matmul(tape, act, params.find(lp + "mlp.proj_weight")),
                    params.find(lp + "mlp.proj_bias"));
}

}  // namespace detail

// Full forward pass over [prefix rows; token embeddings] with position
// embeddings added to every position and a causal mask (position t attends to
// positions <= t, prompt rows included). Returns logits for every position
// plus the next-token target/mask layout: rows that predict w_1..w_T and EOS
// are unmasked, prompt rows and the final EOS row are not, and BOS is never a
// target.
template <typename Real>
ForwardOutputT<Real> forward(std::type_identity_t<TapeT<Real>*> tape, const ParameterSetT<Real>& params,
                             const std::vector<int>& token_ids, const TensorT<Real>* prefix = nullptr) {
    const ModelConfig& cfg = params.config;
    if (token_ids.empty()) throw InputError("forward: empty token sequence");
    int p = 0;
    if (prefix != nullptr) {
        if (prefix->shape().size() != 2 || prefix->cols() != cfg.d_model)
            throw ShapeError("forward: prefix shaped " + TensorT<Real>::shape_string(prefix->shape()) +
                             ", want [P x " + std::to_string(cfg.d_model) + "]");
        p = prefix->rows();
    }
    const int s = static_cast<int>(token_ids.size());
    const int total = p + s;
    if (total > cfg.max_positions)
        throw CapacityError("forward: " + std::to_string(p) + " prefix + " + std::to_string(s) +
                            " token positions exceed max_positions " + std::to_string(cfg.max_positions));

    TensorT<Real> tok = embedding_lookup(tape, params.find("token_embedding"), token_ids);
    TensorT<Real> x = (prefix != nullptr && p > 0) ? concat_rows(tape, *prefix, tok) : tok;

    std::vector<int> pos_ids(total);
    std::iota(pos_ids.begin(), pos_ids.end(), 0);
    x = add(tape, x, embedding_lookup(tape, params.find("position_embedding"), pos_ids));

    TensorT<Real> mask = TensorT<Real>::zeros({total, total});
    for (int i = 0; i < total; ++i)
        for (int j = i + 1; j < total; ++j) mask.at(i, j) = Real(kMaskValue);

    for (int l = 0; l < cfg.n_layers; ++l) {
        x = add(tape, x, detail::attention_block(tape, params, l, x, mask));
        x = add(tape, x, detail::mlp_block(tape, params, l, x));
    }
    x = layer_norm(tape, x, params.find("final_norm.gain"), params.find("final_norm.bias"), Real(kLayerNormEps));

    ForwardOutputT<Real> out;
    out.logits = matmul(tape, x, transpose(tape, params.find("token_embedding")));
    out.prefix_len = p;
    out.targets.assign(total, -1);
    out.loss_mask.assign(total, 0);
    for (int g = p; g < total - 1; ++g) {
        out.targets[g] = token_ids[g - p + 1];
        out.loss_mask[g] = 1;
    }
    return out;
}

// Marks exactly the selected tensors trainable. Selector entries are
// ParameterSet tensor names plus the pseudo-name "prefix" for the prompt.
template <typename Real>
void select_trainable(ParameterSetT<Real>& params, TensorT<Real>* prefix,
                      const std::set<std::string>& selector) {
    for (const auto& name : selector)
        if (name != kPrefixSelector) params.find(name);  // throws on unknown names
    for (auto& [name, t] : params.tensors) t.set_requires_grad(selector.count(name) > 0);
    if (prefix != nullptr) prefix->set_requires_grad(selector.count(kPrefixSelector) > 0);
}

template <typename Real>
struct LossInfo {
    Real loss = 0;             // mean NLL per predicted token
    int predicted_tokens = 0;  // count of unmasked positions
};

// One sentence's next-token loss with gradients for the selected tensors.
// token_ids must be a full encoded sentence [BOS, w_1..w_T, EOS]; a sentence
// with nothing to predict raises the empty-loss error from the criterion.
template <typename Real>
LossInfo<Real> loss_and_grads(ParameterSetT<Real>& params, const std::vector<int>& token_ids,
                              TensorT<Real>* prefix, const std::set<std::string>& selector) {
    select_trainable(params, prefix, selector);
    TapeT<Real> tape;
    ForwardOutputT<Real> out = forward<Real>(&tape, params, token_ids, prefix);
    TensorT<Real> loss = cross_entropy_mean(&tape, out.logits, out.targets, out.loss_mask);
    backward(tape, loss);
    int n = 0;
    for (auto m : out.loss_mask) n += m;
    return {loss.values()[0], n};
}

// Batch objective: per-token mean over the whole batch, i.e. sum of sentence
// NLLs divided by the total number of predicted tokens. One tape spans the
// batch so a single backward populates all selected gradients.
template <typename Real>
LossInfo<Real> batch_loss_and_grads(ParameterSetT<Real>& params,
                                    const std::vector<std::vector<int>>& batch, TensorT<Real>* prefix,
                                    const std::set<std::string>& selector) {
    if (batch.empty()) throw InputError("batch_loss_and_grads: empty batch");
    select_trainable(params, prefix, selector);
    TapeT<Real> tape;
    std::vector<TensorT<Real>> sentence_losses;
    std::vector<int> counts;
    int total = 0;
    for (const auto& ids : batch) {
        ForwardOutputT<Real> out = forward<Real>(&tape, params, ids, prefix);
        sentence_losses.push_back(cross_entropy_mean(&tape, out.logits, out.targets, out.loss_mask));
        int n = 0;
        for (auto m : out.loss_mask) n += m;
        counts.push_back(n);
        total += n;
    }
    TensorT<Real> weighted = scale(&tape, sentence_losses[0], Real(counts[0]));
    for (std::size_t i = 1; i < sentence_losses.size(); ++i)
        weighted = add(&tape, weighted, scale(&tape, sentence_losses[i], Real(counts[i])));
    TensorT<Real> loss = scale(&tape, weighted, Real(1) / Real(total));
    backward(tape, loss);
    return {loss.values()[0], total};
}

}  // namespace ptlm
