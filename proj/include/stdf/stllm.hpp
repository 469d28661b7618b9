#pragma once

// The transformer stack: multi-head attention over flattened space-time
// tokens, RMSNorm residual sub-layers exactly as printed
// (X~ = RMSNorm(MultiHead(X)) + X, then X- = FFN(RMSNorm(X~)) + X~),
// the position-wise FFN, freeze control, and the regression head.

#include <cstdint>
#include <string>
#include <vector>

#include "stdf/error.hpp"
#include "stdf/rng.hpp"
#include "stdf/tape.hpp"

namespace stdf {

enum class AttentionLayout { joint, factorized };

inline AttentionLayout parse_attention_layout(const std::string& name) {
    if (name == "joint") return AttentionLayout::joint;
    if (name == "factorized") return AttentionLayout::factorized;
    throw ConfigError("unknown attention layout '" + name + "'");
}

struct StllmConfig {
    int64_t layers = 4;
    int64_t heads = 8;
    int64_t d_ff_ratio = 4;
    AttentionLayout layout = AttentionLayout::joint;
    double norm_eps = 1e-6;
};

template <typename S>
struct AttentionParams {
    int64_t heads = 0, d_h = 0, d_k = 0;
    std::vector<TensorData<S>> wq, wk, wv;  // per head, [d_h, d_k]
    TensorData<S> wo;                       // [heads*d_k, d_h]

    static AttentionParams init(int64_t d_h, int64_t heads, Rng& rng) {
        if (heads < 1 || d_h % heads != 0) {
            throw ConfigError("head count " + std::to_string(heads) + " must divide d_h " +
                              std::to_string(d_h));
        }
        AttentionParams p;
        p.heads = heads;
        p.d_h = d_h;
        p.d_k = d_h / heads;
        for (int64_t i = 0; i < heads; ++i) {
            p.wq.push_back(TensorData<S>::randn(Shape{d_h, p.d_k}, rng, 0.02));
            p.wk.push_back(TensorData<S>::randn(Shape{d_h, p.d_k}, rng, 0.02));
            p.wv.push_back(TensorData<S>::randn(Shape{d_h, p.d_k}, rng, 0.02));
        }
        p.wo = TensorData<S>::randn(Shape{heads * p.d_k, d_h}, rng, 0.02);
        return p;
    }
};

template <typename S>
struct BlockParams {
    AttentionParams<S> attn;
    TensorData<S> w1, b1, w2, b2;          // FFN
    TensorData<S> gamma_attn, gamma_ffn;   // RMSNorm gains
    bool frozen = false;

    static BlockParams init(int64_t d_h, int64_t d_ff, int64_t heads, Rng& rng) {
        BlockParams b;
        b.attn = AttentionParams<S>::init(d_h, heads, rng);
        b.w1 = TensorData<S>::randn(Shape{d_h, d_ff}, rng, 0.02);
        b.b1 = TensorData<S>(Shape{d_ff});
        b.w2 = TensorData<S>::randn(Shape{d_ff, d_h}, rng, 0.02);
        b.b2 = TensorData<S>(Shape{d_h});
        b.gamma_attn = TensorData<S>(Shape{d_h}, S(1));
        b.gamma_ffn = TensorData<S>(Shape{d_h}, S(1));
        return b;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& cb) {
        for (int64_t i = 0; i < attn.heads; ++i) {
            std::string h = std::to_string(i);
            cb(prefix + ".attn.wq." + h, attn.wq[static_cast<size_t>(i)], frozen);
            cb(prefix + ".attn.wk." + h, attn.wk[static_cast<size_t>(i)], frozen);
            cb(prefix + ".attn.wv." + h, attn.wv[static_cast<size_t>(i)], frozen);
        }
        cb(prefix + ".attn.wo", attn.wo, frozen);
        cb(prefix + ".w1", w1, frozen);
        cb(prefix + ".b1", b1, frozen);
        cb(prefix + ".w2", w2, frozen);
        cb(prefix + ".b2", b2, frozen);
        cb(prefix + ".gamma_attn", gamma_attn, frozen);
        cb(prefix + ".gamma_ffn", gamma_ffn, frozen);
    }
};

template <typename S>
struct HeadParams {
    TensorData<S> w;  // [m*d_h, z*d]
    TensorData<S> b;  // [z*d]
    bool frozen = false;

    static HeadParams init(int64_t m, int64_t d_h, int64_t z, int64_t d, Rng& rng) {
        HeadParams h;
        h.w = TensorData<S>::randn(Shape{m * d_h, z * d}, rng, 0.02);
        h.b = TensorData<S>(Shape{z * d});
        return h;
    }

    template <typename F>
    void visit(F&& cb) {
        cb("head.w", w, frozen);
        cb("head.b", b, frozen);
    }
};

template <typename S>
struct AttentionBound {
    using Id = typename Tape<S>::Id;
    std::vector<Id> wq, wk, wv;
    Id wo;
};

template <typename S>
struct BlockBound {
    using Id = typename Tape<S>::Id;
    AttentionBound<S> attn;
    Id w1, b1, w2, b2, gamma_attn, gamma_ffn;
};

template <typename S>
struct HeadBound {
    using Id = typename Tape<S>::Id;
    Id w, b;
};

template <typename S>
AttentionBound<S> bind_attention(Tape<S>& t, const AttentionParams<S>& p, bool frozen,
                                 const std::string& prefix = "attn", BindLog<S>* log = nullptr) {
    auto put = [&](const std::string& name, const TensorData<S>& v) {
        auto id = t.leaf(v, !frozen);
        if (log) log->emplace_back(prefix + "." + name, id);
        return id;
    };
    AttentionBound<S> b;
    for (int64_t i = 0; i < p.heads; ++i) {
        std::string h = std::to_string(i);
        b.wq.push_back(put("wq." + h, p.wq[static_cast<size_t>(i)]));
        b.wk.push_back(put("wk." + h, p.wk[static_cast<size_t>(i)]));
        b.wv.push_back(put("wv." + h, p.wv[static_cast<size_t>(i)]));
    }
    b.wo = put("wo", p.wo);
    return b;
}

template <typename S>
BlockBound<S> bind_block(Tape<S>& t, const BlockParams<S>& p,
                         const std::string& prefix = "block", BindLog<S>* log = nullptr) {
    auto put = [&](const char* name, const TensorData<S>& v) {
        auto id = t.leaf(v, !p.frozen);
        if (log) log->emplace_back(prefix + "." + name, id);
        return id;
    };
    BlockBound<S> b;
    b.attn = bind_attention(t, p.attn, p.frozen, prefix + ".attn", log);
    b.w1 = put("w1", p.w1);
    b.b1 = put("b1", p.b1);
    b.w2 = put("w2", p.w2);
    b.b2 = put("b2", p.b2);
    b.gamma_attn = put("gamma_attn", p.gamma_attn);
    b.gamma_ffn = put("gamma_ffn", p.gamma_ffn);
    return b;
}

template <typename S>
HeadBound<S> bind_head(Tape<S>& t, const HeadParams<S>& p, BindLog<S>* log = nullptr) {
    HeadBound<S> b;
    b.w = t.leaf(p.w, !p.frozen);
    b.b = t.leaf(p.b, !p.frozen);
    if (log) {
        log->emplace_back("head.w", b.w);
        log->emplace_back("head.b", b.b);
    }
    return b;
}

// x: [L, d_h] or [B, L, d_h]. Full (unmasked) attention; per head
// softmax(Q K^T / sqrt(d_k)) V, heads concatenated then mapped by W^O.
template <typename S>
typename Tape<S>::Id multi_head_attention(Tape<S>& t, typename Tape<S>::Id x,
                                          const AttentionBound<S>& b) {
    int64_t d_h = t.value(x).shape.back();
    int64_t heads = static_cast<int64_t>(b.wq.size());
    int64_t d_k = t.value(b.wq[0]).shape.back();
    if (heads * d_k != d_h) {
        throw ConfigError("attention: heads*d_k = " + std::to_string(heads * d_k) +
                          " does not match d_h = " + std::to_string(d_h));
    }
    S inv_sqrt_dk = S(1) / static_cast<S>(std::sqrt(double(d_k)));
    std::vector<typename Tape<S>::Id> head_outs;
    for (int64_t i = 0; i < heads; ++i) {
        auto q = t.matmul(x, b.wq[static_cast<size_t>(i)]);
        auto k = t.matmul(x, b.wk[static_cast<size_t>(i)]);
        auto v = t.matmul(x, b.wv[static_cast<size_t>(i)]);
        auto scores = t.scale(t.matmul(q, t.transpose_last2(k)), inv_sqrt_dk);
        head_outs.push_back(t.matmul(t.softmax_last(scores), v));
    }
    return t.matmul(t.concat_last(head_outs), b.wo);
}

// max(0, x W1 + b1) W2 + b2
template <typename S>
typename Tape<S>::Id ffn(Tape<S>& t, typename Tape<S>::Id x, typename Tape<S>::Id w1,
                         typename Tape<S>::Id b1, typename Tape<S>::Id w2,
                         typename Tape<S>::Id b2) {
    return t.add(t.matmul(t.relu(t.add(t.matmul(x, w1), b1)), w2), b2);
}

// One residual block on an [..., d_h] token tensor (attention input given
// separately so factorized layouts can re-arrange tokens).
template <typename S>
typename Tape<S>::Id block_residuals(Tape<S>& t, typename Tape<S>::Id x,
                                     typename Tape<S>::Id attn_out, const BlockBound<S>& b,
                                     double eps) {
    auto x1 = t.add(t.rmsnorm(attn_out, b.gamma_attn, static_cast<S>(eps)), x);
    auto f = ffn(t, t.rmsnorm(x1, b.gamma_ffn, static_cast<S>(eps)), b.w1, b.b1, b.w2, b.b2);
    return t.add(f, x1);
}

// z_hidden: [m, N, d_h] -> [m, N, d_h].
// joint: every (timestep, node) pair is one token, full attention over m*N.
// factorized: blocks alternate temporal attention (within each node) and
// spatial attention (within each timestep).
template <typename S>
typename Tape<S>::Id stllm_forward(Tape<S>& t, typename Tape<S>::Id z_hidden,
                                   const std::vector<BlockBound<S>>& blocks,
                                   const StllmConfig& cfg) {
    if (blocks.empty()) throw ConfigError("stllm_forward: need at least one block");
    const Shape in_shape = t.value(z_hidden).shape;
    if (in_shape.size() != 3) {
        throw ShapeError("stllm_forward: expected [m,N,d_h], got " + shape_str(in_shape));
    }
    const int64_t m = in_shape[0], n = in_shape[1], d_h = in_shape[2];

    if (cfg.layout == AttentionLayout::joint) {
        auto x = t.reshape(z_hidden, Shape{m * n, d_h});
        for (const auto& b : blocks) {
            auto attn = multi_head_attention(t, x, b.attn);
            x = block_residuals(t, x, attn, b, cfg.norm_eps);
        }
        return t.reshape(x, Shape{m, n, d_h});
    }

    auto x = z_hidden;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        typename Tape<S>::Id attn;
        if (i % 2 == 0) {
            // temporal: attend along the window within each node
            auto xt = t.permute3(x, {1, 0, 2});  // [N, m, d_h]
            attn = t.permute3(multi_head_attention(t, xt, b.attn), {1, 0, 2});
        } else {
            // spatial: attend across nodes within each timestep
            attn = multi_head_attention(t, x, b.attn);
        }
        x = block_residuals(t, x, attn, b, cfg.norm_eps);
    }
    return x;
}

// Per node, the m x d_h block is flattened and affinely mapped to z x d.
template <typename S>
typename Tape<S>::Id predict_head(Tape<S>& t, typename Tape<S>::Id xbar, const HeadBound<S>& b,
                                  int64_t z, int64_t d) {
    const Shape& s = t.value(xbar).shape;
    if (s.size() != 3) throw ShapeError("predict_head: expected [m,N,d_h], got " + shape_str(s));
    const int64_t m = s[0], n = s[1], d_h = s[2];
    if (t.value(b.w).shape != Shape{m * d_h, z * d}) {
        throw ShapeError("predict_head: weight shape " + shape_str(t.value(b.w).shape) +
                         " does not match [" + std::to_string(m * d_h) + "," +
                         std::to_string(z * d) + "]");
    }
    auto per_node = t.reshape(t.permute3(xbar, {1, 0, 2}), Shape{n, m * d_h});
    auto mapped = t.add(t.matmul(per_node, b.w), b.b);  // [N, z*d]
    return t.permute3(t.reshape(mapped, Shape{n, z, d}), {1, 0, 2});
}

}  // namespace stdf
