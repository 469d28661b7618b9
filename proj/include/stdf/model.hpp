#pragma once

// Full forecaster assembly: embedding tables + transformer blocks + head,
// with freeze control and bundle (de)serialization.

#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stdf/config.hpp"
#include "stdf/diffusion.hpp"
#include "stdf/embedding.hpp"
#include "stdf/stdf_io.hpp"
#include "stdf/stllm.hpp"

namespace stdf {

struct ForecasterConfig {
    EmbeddingConfig emb;
    StllmConfig stllm;
    int64_t z = 12;
    bool enable_llm_block = true;

    void validate() const {
        emb.validate();
        if (z < 1) throw ConfigError("output window length must be >= 1");
        if (enable_llm_block) {
            if (stllm.layers < 1) throw ConfigError("stllm layers must be >= 1");
            if (stllm.heads < 1 || emb.d_h() % stllm.heads != 0) {
                throw ConfigError("head count " + std::to_string(stllm.heads) +
                                  " must divide d_h = " + std::to_string(emb.d_h()));
            }
        }
    }

    std::string to_meta() const {
        std::ostringstream os;
        os << "d=" << emb.d << "\nd_f=" << emb.d_f << "\nd_a=" << emb.d_a << "\nn_w=" << emb.n_w
           << "\nn_d=" << emb.n_d << "\nm=" << emb.m << "\nnodes=" << emb.n_nodes << "\nz=" << z
           << "\nlayers=" << stllm.layers << "\nheads=" << stllm.heads
           << "\nd_ff_ratio=" << stllm.d_ff_ratio << "\nattention_layout="
           << (stllm.layout == AttentionLayout::joint ? "joint" : "factorized")
           << "\nnorm_eps=" << stllm.norm_eps
           << "\nenable_llm_block=" << (enable_llm_block ? "true" : "false") << "\n";
        return os.str();
    }

    static ForecasterConfig from_meta(const std::string& text) {
        RunConfig kv = RunConfig::parse_text(text);
        ForecasterConfig c;
        c.emb.d = kv.get_int("d", 1);
        c.emb.d_f = kv.get_int("d_f", 24);
        c.emb.d_a = kv.get_int("d_a", 80);
        c.emb.n_w = kv.get_int("n_w", 7);
        c.emb.n_d = kv.get_int("n_d", 288);
        c.emb.m = kv.get_int("m", 12);
        c.emb.n_nodes = kv.get_int("nodes", 1);
        c.z = kv.get_int("z", 12);
        c.stllm.layers = kv.get_int("layers", 4);
        c.stllm.heads = kv.get_int("heads", 8);
        c.stllm.d_ff_ratio = kv.get_int("d_ff_ratio", 4);
        c.stllm.layout = parse_attention_layout(kv.get("attention_layout", "joint"));
        c.stllm.norm_eps = kv.get_num("norm_eps", 1e-6);
        c.enable_llm_block = kv.get_bool("enable_llm_block", true);
        return c;
    }
};

template <typename S>
struct ForecasterBound {
    EmbeddingBound<S> emb;
    std::vector<BlockBound<S>> blocks;
    HeadBound<S> head;
};

template <typename S>
struct Forecaster {
    ForecasterConfig cfg;
    EmbeddingTables<S> emb;
    std::vector<BlockParams<S>> blocks;
    HeadParams<S> head;

    static Forecaster init(const ForecasterConfig& cfg, uint64_t seed) {
        cfg.validate();
        Forecaster f;
        f.cfg = cfg;
        f.emb = EmbeddingTables<S>::init(cfg.emb, seed);
        Rng rng(derive_seed(seed, 0xB10C));
        if (cfg.enable_llm_block) {
            int64_t d_h = cfg.emb.d_h();
            for (int64_t i = 0; i < cfg.stllm.layers; ++i) {
                f.blocks.push_back(
                    BlockParams<S>::init(d_h, cfg.stllm.d_ff_ratio * d_h, cfg.stllm.heads, rng));
            }
        }
        f.head = HeadParams<S>::init(cfg.emb.m, cfg.emb.d_h(), cfg.z, cfg.emb.d, rng);
        return f;
    }

    void set_blocks_frozen(bool flag) {
        for (auto& b : blocks) b.frozen = flag;
    }
    void set_all_frozen(bool flag) {
        emb.frozen = flag;
        set_blocks_frozen(flag);
        head.frozen = flag;
    }

    template <typename F>
    void visit(F&& cb) {
        emb.visit(cb);
        for (size_t i = 0; i < blocks.size(); ++i) {
            blocks[i].visit("blocks." + std::to_string(i), cb);
        }
        head.visit(cb);
    }

    ForecasterBound<S> bind(Tape<S>& t, BindLog<S>* log = nullptr) const {
        ForecasterBound<S> b;
        b.emb = emb.bind(t, log);
        for (size_t i = 0; i < blocks.size(); ++i) {
            b.blocks.push_back(bind_block(t, blocks[i], "blocks." + std::to_string(i), log));
        }
        b.head = bind_head(t, head, log);
        return b;
    }
};

template <typename S>
typename Tape<S>::Id forecaster_forward(Tape<S>& t, const ForecasterBound<S>& b,
                                        const ForecasterConfig& cfg, typename Tape<S>::Id x,
                                        const CalendarIndex& cal) {
    auto hidden = build_hidden(t, b.emb, cfg.emb, x, cal);
    if (cfg.enable_llm_block) hidden = stllm_forward(t, hidden, b.blocks, cfg.stllm);
    return predict_head(t, hidden, b.head, cfg.z, cfg.emb.d);
}

// value-only convenience for inference paths
template <typename S>
TensorData<S> forecaster_predict(const Forecaster<S>& model, const TensorData<S>& x,
                                 const CalendarIndex& cal) {
    Tape<S> t;
    Forecaster<S> frozen = model;
    frozen.set_all_frozen(true);
    auto bound = frozen.bind(t);
    return t.value(forecaster_forward(t, bound, model.cfg, t.constant(x), cal));
}

// -- bundle io -----------------------------------------------------------------

template <typename S>
Bundle forecaster_to_bundle(const Forecaster<S>& model,
                            const std::map<std::string, std::string>& extra_meta) {
    Bundle b;
    std::string meta = model.cfg.to_meta();
    for (const auto& [k, v] : extra_meta) meta += k + "=" + v + "\n";
    b.put_text("meta", meta);
    const_cast<Forecaster<S>&>(model).visit(
        [&](const std::string& name, TensorData<S>& t, bool) { b.put_tensor(name, t); });
    return b;
}

template <typename S>
Forecaster<S> forecaster_from_bundle(const Bundle& b) {
    auto cfg = ForecasterConfig::from_meta(b.text("meta"));
    auto model = Forecaster<S>::init(cfg, 0);
    model.visit([&](const std::string& name, TensorData<S>& t, bool) {
        auto stored = b.tensor<S>(name);
        if (stored.shape != t.shape) {
            throw IntegrityError("bundle tensor '" + name + "' has shape " +
                                 shape_str(stored.shape) + ", expected " + shape_str(t.shape));
        }
        t = std::move(stored);
    });
    return model;
}

template <typename S>
Bundle denoiser_to_bundle(const NoisePredictor<S>& pred, const DiffusionSchedule& sched,
                          const std::map<std::string, std::string>& extra_meta) {
    Bundle b;
    std::ostringstream meta;
    meta << "d=" << pred.cfg.d << "\nhidden=" << pred.cfg.hidden << "\nkernel=" << pred.cfg.kernel
         << "\ntemb_dim=" << pred.cfg.temb.dim << "\ntemb_max_period=" << pred.cfg.temb.max_period
         << "\nsteps=" << sched.steps << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", sched.beta.front());
    meta << "beta_min=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", sched.beta.back());
    meta << "beta_max=" << buf << "\n";
    std::string text = meta.str();
    for (const auto& [k, v] : extra_meta) text += k + "=" + v + "\n";
    b.put_text("meta", text);
    const_cast<NoisePredictor<S>&>(pred).visit(
        [&](const std::string& name, TensorData<S>& t, bool) { b.put_tensor(name, t); });
    return b;
}

template <typename S>
std::pair<NoisePredictor<S>, DiffusionSchedule> denoiser_from_bundle(const Bundle& b) {
    RunConfig kv = RunConfig::parse_text(b.text("meta"));
    NoisePredictorConfig cfg;
    cfg.d = kv.get_int("d", 1);
    cfg.hidden = kv.get_int("hidden", 32);
    cfg.kernel = kv.get_int("kernel", 3);
    cfg.temb.dim = kv.get_int("temb_dim", 64);
    cfg.temb.max_period = kv.get_num("temb_max_period", 10000.0);
    auto sched = DiffusionSchedule::linear(kv.get_int("steps", 1000),
                                           kv.get_num("beta_min", 1e-4),
                                           kv.get_num("beta_max", 0.02));
    auto pred = NoisePredictor<S>::init(cfg, 0);
    pred.visit([&](const std::string& name, TensorData<S>& t, bool) {
        auto stored = b.tensor<S>(name);
        if (stored.shape != t.shape) {
            throw IntegrityError("bundle tensor '" + name + "' has shape " +
                                 shape_str(stored.shape) + ", expected " + shape_str(t.shape));
        }
        t = std::move(stored);
    });
    return {std::move(pred), std::move(sched)};
}

}  // namespace stdf
