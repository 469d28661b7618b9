#pragma once

// Hidden-representation assembly: feature embedding, day-of-week and
// time-of-day periodicity lookups, and the learnable spatio-temporal
// adaptive embedding, concatenated as feature || periodicity || adaptive
// with d_h = 3*d_f + d_a.

#include <cstdint>
#include <string>
#include <vector>

#include "stdf/dataset.hpp"
#include "stdf/error.hpp"
#include "stdf/rng.hpp"
#include "stdf/tape.hpp"

namespace stdf {

struct EmbeddingConfig {
    int64_t d = 1;        // raw feature count
    int64_t d_f = 24;     // feature-embedding width
    int64_t d_a = 80;     // adaptive-embedding width
    int64_t n_w = 7;      // day-of-week vocabulary
    int64_t n_d = 288;    // time-of-day vocabulary (slots per day)
    int64_t m = 12;       // input window length
    int64_t n_nodes = 1;

    int64_t d_h() const { return 3 * d_f + d_a; }

    void validate() const {
        if (d < 1 || d_f < 1 || d_a < 1 || m < 1 || n_nodes < 1) {
            throw ConfigError("embedding config extents must be positive");
        }
        if (n_w != 7) throw ConfigError("day-of-week vocabulary must be 7");
        if (n_d < 1) throw ConfigError("time-of-day vocabulary must be positive");
    }

    static int64_t slots_for_granularity(int64_t granularity_min) {
        if (granularity_min <= 0 || 1440 % granularity_min != 0) {
            throw ConfigError("granularity must divide 1440 minutes");
        }
        return 1440 / granularity_min;
    }
};

template <typename S>
struct EmbeddingBound {
    using Id = typename Tape<S>::Id;
    Id w_feat, b_feat, t_w, t_d, x_a;
};

template <typename S>
struct EmbeddingTables {
    TensorData<S> w_feat;  // [d, d_f]
    TensorData<S> b_feat;  // [d_f]
    TensorData<S> t_w;     // [7, d_f]
    TensorData<S> t_d;     // [n_d, d_f]
    TensorData<S> x_a;     // [m, N, d_a], indexed by within-window position and node
    bool frozen = false;

    static EmbeddingTables init(const EmbeddingConfig& cfg, uint64_t seed) {
        cfg.validate();
        EmbeddingTables e;
        Rng rng(derive_seed(seed, 0xE4B));
        e.w_feat = TensorData<S>::randn(Shape{cfg.d, cfg.d_f}, rng, 0.02);
        e.b_feat = TensorData<S>(Shape{cfg.d_f});
        e.t_w = TensorData<S>::randn(Shape{cfg.n_w, cfg.d_f}, rng, 0.02);
        e.t_d = TensorData<S>::randn(Shape{cfg.n_d, cfg.d_f}, rng, 0.02);
        double bound = 0.5 / std::sqrt(double(cfg.d_a));
        e.x_a = TensorData<S>::uniform(Shape{cfg.m, cfg.n_nodes, cfg.d_a}, rng, -bound, bound);
        return e;
    }

    template <typename F>
    void visit(F&& cb) {
        cb("emb.w_feat", w_feat, frozen);
        cb("emb.b_feat", b_feat, frozen);
        cb("emb.t_w", t_w, frozen);
        cb("emb.t_d", t_d, frozen);
        cb("emb.x_a", x_a, frozen);
    }

    EmbeddingBound<S> bind(Tape<S>& t, BindLog<S>* log = nullptr) const {
        auto put = [&](const char* name, const TensorData<S>& v) {
            auto id = t.leaf(v, !frozen);
            if (log) log->emplace_back(std::string("emb.") + name, id);
            return id;
        };
        EmbeddingBound<S> b;
        b.w_feat = put("w_feat", w_feat);
        b.b_feat = put("b_feat", b_feat);
        b.t_w = put("t_w", t_w);
        b.t_d = put("t_d", t_d);
        b.x_a = put("x_a", x_a);
        return b;
    }
};

// Affine map on the feature axis only: [m,N,d] -> [m,N,d_f]
template <typename S>
typename Tape<S>::Id embed_features(Tape<S>& t, typename Tape<S>::Id x,
                                    typename Tape<S>::Id w_feat, typename Tape<S>::Id b_feat) {
    return t.add(t.matmul(x, w_feat), b_feat);
}

// Per timestep: T_w[dow] || T_d[slot], broadcast identically to all nodes.
template <typename S>
typename Tape<S>::Id embed_periodicity(Tape<S>& t, const CalendarIndex& cal,
                                       typename Tape<S>::Id t_w, typename Tape<S>::Id t_d,
                                       int64_t n_nodes) {
    auto rows_w = t.lookup_rows(t_w, cal.dow);
    auto rows_d = t.lookup_rows(t_d, cal.slot);
    return t.broadcast_nodes(t.concat_last({rows_w, rows_d}), n_nodes);
}

// Fixed order: feature || periodicity || adaptive.
template <typename S>
typename Tape<S>::Id assemble_hidden(Tape<S>& t, typename Tape<S>::Id x_f,
                                     typename Tape<S>::Id x_p, typename Tape<S>::Id x_a) {
    int64_t wf = t.value(x_f).shape.back();
    int64_t wp = t.value(x_p).shape.back();
    if (wp != 2 * wf) {
        throw ShapeError("assemble_hidden: periodicity width " + std::to_string(wp) +
                         " is not twice the feature width " + std::to_string(wf));
    }
    return t.concat_last({x_f, x_p, x_a});
}

template <typename S>
typename Tape<S>::Id build_hidden(Tape<S>& t, const EmbeddingBound<S>& b,
                                  const EmbeddingConfig& cfg, typename Tape<S>::Id x,
                                  const CalendarIndex& cal) {
    if (static_cast<int64_t>(cal.dow.size()) != cfg.m ||
        static_cast<int64_t>(cal.slot.size()) != cfg.m) {
        throw ShapeError("build_hidden: calendar indices must cover all " + std::to_string(cfg.m) +
                         " input steps");
    }
    auto x_f = embed_features(t, x, b.w_feat, b.b_feat);
    auto x_p = embed_periodicity(t, cal, b.t_w, b.t_d, cfg.n_nodes);
    return assemble_hidden(t, x_f, x_p, b.x_a);
}

}  // namespace stdf
