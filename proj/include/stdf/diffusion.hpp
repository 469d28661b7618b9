#pragma once

// Denoising block: noise schedule, sinusoidal timestep embedding, the
// convolutional noise predictor, the noise-prediction training loss, and
// reverse sampling (standard DDPM posterior, the update exactly as printed
// in the source equations, and DDIM) with mask-conditioned recovery.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stdf/error.hpp"
#include "stdf/rng.hpp"
#include "stdf/tape.hpp"
#include "stdf/tensor.hpp"

namespace stdf {

// -- schedule ------------------------------------------------------------------

struct DiffusionSchedule {
    int64_t steps = 1000;
    std::vector<double> beta;       // beta[s-1] for step s in 1..S
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // cumulative product up to step s

    static DiffusionSchedule linear(int64_t steps, double beta_min, double beta_max) {
        if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
        if (!(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0)) {
            throw ConfigError("beta range must satisfy 0 < beta_min <= beta_max < 1");
        }
        DiffusionSchedule s;
        s.steps = steps;
        s.beta.resize(static_cast<size_t>(steps));
        s.alpha.resize(static_cast<size_t>(steps));
        s.alpha_bar.resize(static_cast<size_t>(steps));
        double prod = 1.0;
        for (int64_t i = 0; i < steps; ++i) {
            double b = steps == 1 ? beta_min
                                  : beta_min + (beta_max - beta_min) * i / double(steps - 1);
            s.beta[static_cast<size_t>(i)] = b;
            s.alpha[static_cast<size_t>(i)] = 1.0 - b;
            prod *= 1.0 - b;
            s.alpha_bar[static_cast<size_t>(i)] = prod;
        }
        return s;
    }

    // abar(0) = 1 by convention
    double abar(int64_t s) const {
        check_step(s, true);
        return s == 0 ? 1.0 : alpha_bar[static_cast<size_t>(s - 1)];
    }
    double beta_at(int64_t s) const {
        check_step(s, false);
        return beta[static_cast<size_t>(s - 1)];
    }
    double alpha_at(int64_t s) const {
        check_step(s, false);
        return alpha[static_cast<size_t>(s - 1)];
    }

    void check_step(int64_t s, bool allow_zero) const {
        if (s < (allow_zero ? 0 : 1) || s > steps) {
            throw IndexError("diffusion step " + std::to_string(s) + " outside 1.." +
                             std::to_string(steps));
        }
    }
};

// -- timestep embedding ----------------------------------------------------------

struct TimestepEmbeddingConfig {
    int64_t dim = 64;
    double max_period = 10000.0;
};

// First dim/2 entries cos(s*f_k), last dim/2 sin(s*f_k),
// f_k = exp(-k ln(max_period) / (dim/2)).
inline std::vector<double> timestep_embed(double s, const TimestepEmbeddingConfig& cfg) {
    if (cfg.dim <= 0 || cfg.dim % 2 != 0) {
        throw ConfigError("timestep embedding dim must be even and positive, got " +
                          std::to_string(cfg.dim));
    }
    if (cfg.max_period <= 1.0) throw ConfigError("timestep embedding max_period must exceed 1");
    const int64_t half = cfg.dim / 2;
    std::vector<double> emb(static_cast<size_t>(cfg.dim));
    for (int64_t k = 0; k < half; ++k) {
        double freq = std::exp(-double(k) * std::log(cfg.max_period) / double(half));
        emb[static_cast<size_t>(k)] = std::cos(s * freq);
        emb[static_cast<size_t>(half + k)] = std::sin(s * freq);
    }
    return emb;
}

// -- noise predictor ---------------------------------------------------------------

struct NoisePredictorConfig {
    int64_t d = 1;        // data channels
    int64_t hidden = 32;
    int64_t kernel = 3;
    TimestepEmbeddingConfig temb;
};

template <typename S>
struct NoisePredictorBound {
    using Id = typename Tape<S>::Id;
    Id conv1_w, conv1_b, temb_w, temb_b, conv2_w, conv2_b;
};

// Conv(silu(Conv(x) + proj(emb(s)))): two time-axis convolutions with the
// projected timestep embedding added between them.
template <typename S>
struct NoisePredictor {
    NoisePredictorConfig cfg;
    TensorData<S> conv1_w, conv1_b;  // [w, d, hidden], [hidden]
    TensorData<S> temb_w, temb_b;    // [temb_dim, hidden], [hidden]
    TensorData<S> conv2_w, conv2_b;  // [w, hidden, d], [d]
    bool frozen = false;

    static NoisePredictor init(const NoisePredictorConfig& cfg, uint64_t seed) {
        if (cfg.kernel % 2 == 0) {
            throw ConfigError("noise predictor kernel width must be odd, got " +
                              std::to_string(cfg.kernel));
        }
        NoisePredictor p;
        p.cfg = cfg;
        Rng rng(derive_seed(seed, 0xD1FF));
        p.conv1_w = TensorData<S>::randn(Shape{cfg.kernel, cfg.d, cfg.hidden}, rng,
                                         std::sqrt(2.0 / double(cfg.kernel * cfg.d)));
        p.conv1_b = TensorData<S>(Shape{cfg.hidden});
        p.temb_w = TensorData<S>::randn(Shape{cfg.temb.dim, cfg.hidden}, rng,
                                        1.0 / std::sqrt(double(cfg.temb.dim)));
        p.temb_b = TensorData<S>(Shape{cfg.hidden});
        p.conv2_w = TensorData<S>::randn(Shape{cfg.kernel, cfg.hidden, cfg.d}, rng,
                                         std::sqrt(2.0 / double(cfg.kernel * cfg.hidden)));
        p.conv2_b = TensorData<S>(Shape{cfg.d});
        return p;
    }

    template <typename F>
    void visit(F&& cb) {
        cb("denoiser.conv1_w", conv1_w, frozen);
        cb("denoiser.conv1_b", conv1_b, frozen);
        cb("denoiser.temb_w", temb_w, frozen);
        cb("denoiser.temb_b", temb_b, frozen);
        cb("denoiser.conv2_w", conv2_w, frozen);
        cb("denoiser.conv2_b", conv2_b, frozen);
    }

    NoisePredictorBound<S> bind(Tape<S>& t, BindLog<S>* log = nullptr) const {
        auto put = [&](const char* name, const TensorData<S>& v) {
            auto id = t.leaf(v, !frozen);
            if (log) log->emplace_back(std::string("denoiser.") + name, id);
            return id;
        };
        NoisePredictorBound<S> b;
        b.conv1_w = put("conv1_w", conv1_w);
        b.conv1_b = put("conv1_b", conv1_b);
        b.temb_w = put("temb_w", temb_w);
        b.temb_b = put("temb_b", temb_b);
        b.conv2_w = put("conv2_w", conv2_w);
        b.conv2_b = put("conv2_b", conv2_b);
        return b;
    }

    typename Tape<S>::Id forward(Tape<S>& t, const NoisePredictorBound<S>& b,
                                 typename Tape<S>::Id x, int64_t step) const {
        auto emb = timestep_embed(double(step), cfg.temb);
        TensorData<S> emb_row(Shape{1, cfg.temb.dim});
        for (int64_t i = 0; i < cfg.temb.dim; ++i) emb_row[i] = static_cast<S>(emb[i]);
        auto proj = t.add(t.matmul(t.constant(emb_row), b.temb_w), b.temb_b);  // [1, hidden]
        auto proj_vec = t.reshape(proj, Shape{cfg.hidden});
        auto h = t.add(t.conv_time(x, b.conv1_w), b.conv1_b);
        h = t.silu(t.add(h, proj_vec));
        return t.add(t.conv_time(h, b.conv2_w), b.conv2_b);
    }

    // value-only path for sampling chains
    TensorData<S> predict(const TensorData<S>& x, int64_t step) const {
        Tape<S> t;
        auto self = *this;
        self.frozen = true;
        auto b = self.bind(t);
        return t.value(self.forward(t, b, t.constant(x), step));
    }
};

// -- forward noising -----------------------------------------------------------------

// Closed-form marginal: x_s = sqrt(abar_s) x0 + sqrt(1-abar_s) eps
template <typename S>
TensorData<S> forward_noise(const TensorData<S>& x0, int64_t s, const DiffusionSchedule& sched,
                            const TensorData<S>& eps) {
    sched.check_step(s, false);
    if (eps.shape != x0.shape) {
        throw ShapeError("forward_noise: noise shape " + shape_str(eps.shape) +
                         " does not match data " + shape_str(x0.shape));
    }
    double a = std::sqrt(sched.abar(s));
    double b = std::sqrt(1.0 - sched.abar(s));
    TensorData<S> out(x0.shape);
    for (int64_t i = 0; i < x0.size(); ++i) {
        out[i] = static_cast<S>(a * x0[i] + b * eps[i]);
    }
    return out;
}

// Per-step Markov iteration of the forward process with independent noises.
template <typename S>
TensorData<S> forward_noise_stepwise(const TensorData<S>& x0, int64_t s,
                                     const DiffusionSchedule& sched, Rng& rng) {
    sched.check_step(s, false);
    TensorData<S> x = x0;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int64_t u = 1; u <= s; ++u) {
        double a = std::sqrt(sched.alpha_at(u));
        double b = std::sqrt(1.0 - sched.alpha_at(u));
        for (int64_t i = 0; i < x.size(); ++i) {
            x[i] = static_cast<S>(a * x[i] + b * normal(rng));
        }
    }
    return x;
}

// Deterministic per-sample draw used by the training loss: step index and
// elementwise noise derived from (seed, sample id).
template <typename S>
struct NoiseDraw {
    int64_t s = 0;
    TensorData<S> eps;
    TensorData<S> x_s;
};

template <typename S>
NoiseDraw<S> draw_noising(const TensorData<S>& x0, const DiffusionSchedule& sched,
                          uint64_t sample_seed) {
    Rng rng(sample_seed);
    std::uniform_int_distribution<int64_t> step(1, sched.steps);
    NoiseDraw<S> d;
    d.s = step(rng);
    d.eps = TensorData<S>::randn(x0.shape, rng);
    d.x_s = forward_noise(x0, d.s, sched, d.eps);
    return d;
}

// -- training loss ---------------------------------------------------------------------

// Mean over every coordinate in the batch of (eps - eps_theta(x_s, s))^2.
// Per-sample randomness is a pure function of (seed, id), so duplicating a
// batch entry (same id) cannot move the loss.
template <typename S>
typename Tape<S>::Id ddpm_loss(Tape<S>& t, const NoisePredictor<S>& pred,
                               const NoisePredictorBound<S>& bound,
                               const std::vector<const TensorData<S>*>& batch,
                               const std::vector<uint64_t>& ids, const DiffusionSchedule& sched,
                               uint64_t seed) {
    if (batch.empty() || batch.size() != ids.size()) {
        throw UsageError("ddpm_loss: batch and id list must align and be non-empty");
    }
    typename Tape<S>::Id total = t.scalar_constant(S(0));
    for (size_t i = 0; i < batch.size(); ++i) {
        auto draw = draw_noising(*batch[i], sched, derive_seed(seed, ids[i]));
        auto eps_hat = pred.forward(t, bound, t.constant(draw.x_s), draw.s);
        auto diff = t.sub(t.constant(draw.eps), eps_hat);
        total = t.add(total, t.mean_all(t.mul(diff, diff)));
    }
    return t.scale(total, S(1) / static_cast<S>(batch.size()));
}

// Value-only variant against an arbitrary predictor, for oracle tests.
template <typename S>
double ddpm_loss_value(
    const std::vector<TensorData<S>>& batch, const std::vector<uint64_t>& ids,
    const DiffusionSchedule& sched, uint64_t seed,
    const std::function<TensorData<S>(const TensorData<S>&, int64_t)>& predictor) {
    if (batch.empty() || batch.size() != ids.size()) {
        throw UsageError("ddpm_loss: batch and id list must align and be non-empty");
    }
    double total = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        auto draw = draw_noising(batch[i], sched, derive_seed(seed, ids[i]));
        auto eps_hat = predictor(draw.x_s, draw.s);
        double acc = 0;
        for (int64_t j = 0; j < draw.eps.size(); ++j) {
            double e = double(draw.eps[j]) - double(eps_hat[j]);
            acc += e * e;
        }
        total += acc / draw.eps.size();
    }
    return total / batch.size();
}

// -- reverse sampling ---------------------------------------------------------------------

enum class SamplerMode { standard_ddpm, paper_literal, ddim };

inline SamplerMode parse_sampler_mode(const std::string& name) {
    if (name == "ddpm" || name == "standard_ddpm") return SamplerMode::standard_ddpm;
    if (name == "paper_literal") return SamplerMode::paper_literal;
    if (name == "ddim") return SamplerMode::ddim;
    throw ConfigError("unknown sampler mode '" + name + "'");
}

struct ReverseSamplerConfig {
    SamplerMode mode = SamplerMode::standard_ddpm;
    double eta = 0.0;         // ddim stochasticity in [0,1]
    double delta = -1.0;      // paper-literal residual scale; <0 uses the posterior std
    int64_t ddim_steps = 50;  // chain length when sub-sampling
    uint64_t seed = 0;

    void validate() const {
        if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0,1]");
        if (ddim_steps < 1) throw ConfigError("ddim_steps must be >= 1");
    }
};

inline double posterior_std(const DiffusionSchedule& sched, int64_t s) {
    double var =
        sched.beta_at(s) * (1.0 - sched.abar(s - 1)) / (1.0 - sched.abar(s));
    return var > 0 ? std::sqrt(var) : 0.0;
}

// One reverse transition s -> s_prev. Standard and paper-literal modes
// require s_prev == s-1; DDIM accepts any 0 <= s_prev < s.
template <typename S>
TensorData<S> reverse_step(const TensorData<S>& x_s, int64_t s, int64_t s_prev,
                           const TensorData<S>& eps_hat, const DiffusionSchedule& sched,
                           const ReverseSamplerConfig& cfg, Rng& rng) {
    sched.check_step(s, false);
    cfg.validate();
    if (s_prev < 0 || s_prev >= s) {
        throw IndexError("reverse_step: s_prev=" + std::to_string(s_prev) +
                         " must lie in [0, s)");
    }
    if (eps_hat.shape != x_s.shape) {
        throw ShapeError("reverse_step: predicted noise shape mismatch");
    }
    TensorData<S> out(x_s.shape);
    std::normal_distribution<double> normal(0.0, 1.0);

    switch (cfg.mode) {
        case SamplerMode::standard_ddpm: {
            if (s_prev != s - 1) {
                throw ConfigError("standard_ddpm steps one unit at a time");
            }
            double coeff = sched.beta_at(s) / std::sqrt(1.0 - sched.abar(s));
            double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(s));
            double sigma = posterior_std(sched, s);
            for (int64_t i = 0; i < x_s.size(); ++i) {
                double v = inv_sqrt_alpha * (double(x_s[i]) - coeff * double(eps_hat[i]));
                if (sigma > 0) v += sigma * normal(rng);
                out[i] = static_cast<S>(v);
            }
            return out;
        }
        case SamplerMode::paper_literal: {
            if (s_prev != s - 1) {
                throw ConfigError("paper_literal steps one unit at a time");
            }
            // printed update: denominator sqrt(1 - alpha^2), residual delta*z
            double alpha = sched.alpha_at(s);
            double coeff = (1.0 - alpha) / std::sqrt(1.0 - alpha * alpha);
            double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
            double delta = cfg.delta >= 0 ? cfg.delta : posterior_std(sched, s);
            for (int64_t i = 0; i < x_s.size(); ++i) {
                double v = inv_sqrt_alpha * (double(x_s[i]) - coeff * double(eps_hat[i]));
                if (delta > 0) v += delta * normal(rng);
                out[i] = static_cast<S>(v);
            }
            return out;
        }
        case SamplerMode::ddim: {
            double ab_s = sched.abar(s);
            double ab_p = sched.abar(s_prev);
            double sigma = cfg.eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_s)) *
                           std::sqrt(1.0 - ab_s / ab_p);
            double dir = 1.0 - ab_p - sigma * sigma;
            dir = dir > 0 ? std::sqrt(dir) : 0.0;
            double inv_sqrt_ab = 1.0 / std::sqrt(ab_s);
            double noise_scale = std::sqrt(1.0 - ab_s);
            for (int64_t i = 0; i < x_s.size(); ++i) {
                double x0_pred = inv_sqrt_ab * (double(x_s[i]) - noise_scale * double(eps_hat[i]));
                double v = std::sqrt(ab_p) * x0_pred + dir * double(eps_hat[i]);
                if (sigma > 0) v += sigma * normal(rng);
                out[i] = static_cast<S>(v);
            }
            return out;
        }
    }
    throw ConfigError("unknown sampler mode");
}

// Descending step ladder for a chain; DDIM sub-samples evenly.
inline std::vector<int64_t> chain_steps(const DiffusionSchedule& sched,
                                        const ReverseSamplerConfig& cfg) {
    std::vector<int64_t> steps;
    if (cfg.mode == SamplerMode::ddim && cfg.ddim_steps < sched.steps) {
        int64_t k = cfg.ddim_steps;
        for (int64_t i = k; i >= 1; --i) {
            int64_t s = (i * sched.steps) / k;
            if (steps.empty() || steps.back() != s) steps.push_back(s);
        }
    } else {
        for (int64_t s = sched.steps; s >= 1; --s) steps.push_back(s);
    }
    return steps;
}

template <typename S>
using PredictorFn = std::function<TensorData<S>(const TensorData<S>&, int64_t)>;

// Full reverse chain from pure noise.
template <typename S>
TensorData<S> sample_chain(const Shape& shape, const PredictorFn<S>& predictor,
                           const DiffusionSchedule& sched, const ReverseSamplerConfig& cfg,
                           uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x0C4A11));
    TensorData<S> x = TensorData<S>::randn(shape, rng);
    auto steps = chain_steps(sched, cfg);
    for (size_t i = 0; i < steps.size(); ++i) {
        int64_t s = steps[i];
        int64_t s_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
        auto eps_hat = predictor(x, s);
        x = reverse_step(x, s, s_prev, eps_hat, sched, cfg, rng);
    }
    return x;
}

// -- recovery --------------------------------------------------------------------------------

template <typename S>
struct RecoveryResult {
    TensorData<S> x;
    bool unconditional = false;  // warning flag: mask was all zeros
};

// Replacement conditioning: after every reverse transition the observed
// coordinates are overwritten with forward-noised ground truth at the
// matching step; the final state carries the observations verbatim.
template <typename S>
RecoveryResult<S> recover_missing(const TensorData<S>& x_obs, const TensorData<S>& mask,
                                  const PredictorFn<S>& predictor,
                                  const DiffusionSchedule& sched,
                                  const ReverseSamplerConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (mask.shape != x_obs.shape) {
        throw ShapeError("recover_missing: mask shape " + shape_str(mask.shape) +
                         " does not match data " + shape_str(x_obs.shape));
    }
    int64_t observed = 0;
    for (int64_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != S(0) && mask[i] != S(1)) {
            throw ConfigError("recover_missing: mask entries must be 0 or 1");
        }
        observed += mask[i] == S(1) ? 1 : 0;
    }
    RecoveryResult<S> result;
    if (observed == mask.size()) {
        result.x = x_obs;  // fully observed: bit-exact passthrough
        return result;
    }
    result.unconditional = observed == 0;

    Rng rng(derive_seed(seed, 0x6EC0));
    std::normal_distribution<double> normal(0.0, 1.0);
    TensorData<S> x = TensorData<S>::randn(x_obs.shape, rng);
    auto steps = chain_steps(sched, cfg);
    for (size_t i = 0; i < steps.size(); ++i) {
        int64_t s = steps[i];
        int64_t s_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
        auto eps_hat = predictor(x, s);
        x = reverse_step(x, s, s_prev, eps_hat, sched, cfg, rng);
        if (!result.unconditional) {
            if (s_prev == 0) {
                for (int64_t j = 0; j < x.size(); ++j) {
                    if (mask[j] == S(1)) x[j] = x_obs[j];
                }
            } else {
                double a = std::sqrt(sched.abar(s_prev));
                double b = std::sqrt(1.0 - sched.abar(s_prev));
                for (int64_t j = 0; j < x.size(); ++j) {
                    if (mask[j] == S(1)) {
                        x[j] = static_cast<S>(a * double(x_obs[j]) + b * normal(rng));
                    }
                }
            }
        }
    }
    result.x = std::move(x);
    return result;
}

}  // namespace stdf
