#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "stdf/diffusion.hpp"
#include "stdf/train.hpp"

using namespace stdf;

namespace {

DiffusionSchedule paper_schedule() { return DiffusionSchedule::linear(1000, 1e-4, 0.02); }

// 1-D values drawn from a mixture of N(+1, 0.05^2) and N(-1, 0.05^2),
// constant mode within each short window
std::vector<TensorData<double>> bimodal_windows(int64_t count, int64_t len, uint64_t seed) {
    std::vector<TensorData<double>> out;
    Rng rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> jitter(0.0, 0.05);
    for (int64_t i = 0; i < count; ++i) {
        double mode = coin(rng) ? 1.0 : -1.0;
        TensorData<double> w(Shape{len, 1, 1});
        for (auto& v : w.data) v = mode + jitter(rng);
        out.push_back(std::move(w));
    }
    return out;
}

NoisePredictor<double> train_toy_denoiser(const std::vector<TensorData<double>>& windows,
                                          const DiffusionSchedule& sched, int64_t steps,
                                          uint64_t seed, int64_t hidden = 32) {
    NoisePredictorConfig cfg;
    cfg.d = 1;
    cfg.hidden = hidden;
    cfg.kernel = 3;
    cfg.temb.dim = 32;
    auto pred = NoisePredictor<double>::init(cfg, seed);
    std::vector<uint64_t> ids(windows.size());
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    DenoiserTrainConfig tc;
    tc.steps = steps;
    tc.batch = 16;
    tc.optim.lr = 2e-3;
    tc.seed = seed;
    auto result = train_denoiser(pred, sched, windows, ids, tc);
    REQUIRE_FALSE(result.diverged);
    return pred;
}

}  // namespace

TEST_CASE("schedule invariants") {
    auto s = paper_schedule();
    CHECK(s.beta.front() == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.beta.back() == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(s.abar(0) == 1.0);
    for (int64_t i = 1; i <= s.steps; ++i) {
        CHECK(s.abar(i) < s.abar(i - 1));  // strictly decreasing
        if (i >= 2) CHECK(s.beta_at(i) >= s.beta_at(i - 1));
    }
    // independent recomputation of the cumulative product (reverse order)
    for (int64_t i : {1L, 7L, 500L, 1000L}) {
        double prod = 1.0;
        for (int64_t u = i; u >= 1; --u) prod *= s.alpha_at(u);
        CHECK(std::abs(prod - s.abar(i)) < 1e-12);
    }
    CHECK_THROWS_AS(DiffusionSchedule::linear(0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(DiffusionSchedule::linear(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(DiffusionSchedule::linear(10, 0.5, 0.2), ConfigError);
    CHECK_THROWS_AS(s.abar(1001), IndexError);
    CHECK_THROWS_AS(s.beta_at(0), IndexError);
}

TEST_CASE("timestep embedding") {
    SUBCASE("s=0, dim=4 -> [1,1,0,0]") {
        auto e = timestep_embed(0, {4, 10000.0});
        CHECK(e == std::vector<double>{1, 1, 0, 0});
    }
    SUBCASE("s=0 and s=1 differ in every sin coordinate") {
        auto e0 = timestep_embed(0, {4, 10000.0});
        auto e1 = timestep_embed(1, {4, 10000.0});
        CHECK(e1[2] != e0[2]);
        CHECK(e1[3] != e0[3]);
    }
    SUBCASE("dim=2 reduces to (cos s, sin s)") {
        for (double s : {0.5, 1.0, 3.14159, 42.0}) {
            auto e = timestep_embed(s, {2, 10000.0});
            CHECK(e[0] == doctest::Approx(std::cos(s)).epsilon(1e-15));
            CHECK(e[1] == doctest::Approx(std::sin(s)).epsilon(1e-15));
        }
    }
    SUBCASE("distinct steps map to distinct vectors") {
        std::set<std::vector<double>> seen;
        for (int64_t s = 0; s < 1000; ++s) seen.insert(timestep_embed(double(s), {8, 10000.0}));
        CHECK(seen.size() == 1000);
    }
    SUBCASE("odd dim rejected") {
        CHECK_THROWS_AS(timestep_embed(0, {5, 10000.0}), ConfigError);
    }
}

TEST_CASE("forward noise degenerate schedules") {
    Rng rng(3);
    auto x0 = TensorData<double>::randn(Shape{4, 2, 1}, rng);
    auto eps = TensorData<double>::randn(Shape{4, 2, 1}, rng);

    SUBCASE("alpha == 1 everywhere returns x0 for any noise") {
        DiffusionSchedule s;
        s.steps = 5;
        s.beta.assign(5, 0.0);
        s.alpha.assign(5, 1.0);
        s.alpha_bar.assign(5, 1.0);
        auto out = forward_noise(x0, 5, s, eps);
        for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == x0[i]);
    }
    SUBCASE("abar == 0 returns the noise") {
        DiffusionSchedule s;
        s.steps = 2;
        s.beta.assign(2, 0.5);
        s.alpha.assign(2, 0.5);
        s.alpha_bar = {0.5, 0.0};
        auto out = forward_noise(x0, 2, s, eps);
        for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == eps[i]);
    }
    SUBCASE("step out of range") {
        auto s = paper_schedule();
        CHECK_THROWS_AS(forward_noise(x0, 0, s, eps), IndexError);
        CHECK_THROWS_AS(forward_noise(x0, 1001, s, eps), IndexError);
    }
}

TEST_CASE("closed-form marginal matches (sqrt(abar), 1-abar) over 1e5 draws") {
    // Mean error is normalized by the marginal scale max(sigma, mean), since
    // the raw mean (~0.0065 at S=1000) sits far below the sampling noise floor.
    auto sched = paper_schedule();
    const int64_t n = 100000;
    TensorData<double> x0(Shape{1}, {1.0});
    Rng rng(20240601);
    double sum = 0, sumsq = 0;
    for (int64_t i = 0; i < n; ++i) {
        auto eps = TensorData<double>::randn(Shape{1}, rng);
        double v = forward_noise(x0, sched.steps, sched, eps)[0];
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    double want_mean = std::sqrt(sched.abar(sched.steps));
    double want_var = 1.0 - sched.abar(sched.steps);
    CHECK(std::abs(mean - want_mean) / std::max(std::sqrt(want_var), want_mean) < 0.01);
    CHECK(std::abs(var - want_var) / want_var < 0.01);
}

TEST_CASE("per-step iteration matches the closed-form marginal (1e5 samples, 1%)") {
    auto sched = DiffusionSchedule::linear(40, 1e-3, 0.05);  // short chain, same law
    const int64_t n = 100000;
    TensorData<double> x0(Shape{1}, {1.0});
    Rng rng(77);
    double sum = 0, sumsq = 0;
    for (int64_t i = 0; i < n; ++i) {
        double v = forward_noise_stepwise(x0, sched.steps, sched, rng)[0];
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    double want_mean = std::sqrt(sched.abar(sched.steps));
    double want_var = 1.0 - sched.abar(sched.steps);
    CHECK(std::abs(mean - want_mean) / std::max(std::sqrt(want_var), want_mean) < 0.01);
    CHECK(std::abs(var - want_var) / want_var < 0.01);
}

TEST_CASE("ddpm loss") {
    auto sched = paper_schedule();
    Rng rng(9);
    std::vector<TensorData<double>> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(TensorData<double>::randn(Shape{8, 2, 1}, rng));
    std::vector<uint64_t> ids{10, 11, 12, 13};

    SUBCASE("predictor reproducing the injected noise gives zero loss") {
        // oracle predictor: recompute eps from (x_s, s) and the known x0
        size_t which = 0;
        auto oracle = [&](const TensorData<double>& x_s, int64_t s) {
            const auto& x0 = batch[which];
            double a = std::sqrt(sched.abar(s)), b = std::sqrt(1.0 - sched.abar(s));
            TensorData<double> eps(x_s.shape);
            for (int64_t i = 0; i < eps.size(); ++i) eps[i] = (x_s[i] - a * x0[i]) / b;
            ++which;
            return eps;
        };
        double loss = ddpm_loss_value<double>(batch, ids, sched, 123, oracle);
        CHECK(loss < 1e-18);
    }
    SUBCASE("zero predictor averages to ~1 per coordinate") {
        auto zero = [](const TensorData<double>& x, int64_t) { return TensorData<double>(x.shape); };
        double acc = 0;
        for (uint64_t seed = 0; seed < 200; ++seed) {
            acc += ddpm_loss_value<double>(batch, ids, sched, seed, zero);
        }
        CHECK(acc / 200 == doctest::Approx(1.0).epsilon(0.05));
    }
    SUBCASE("duplicating the batch with the same ids leaves the loss unchanged") {
        auto zero = [](const TensorData<double>& x, int64_t) { return TensorData<double>(x.shape); };
        std::vector<TensorData<double>> doubled = batch;
        doubled.insert(doubled.end(), batch.begin(), batch.end());
        std::vector<uint64_t> dup_ids = ids;
        dup_ids.insert(dup_ids.end(), ids.begin(), ids.end());
        CHECK(ddpm_loss_value<double>(batch, ids, sched, 5, zero) ==
              ddpm_loss_value<double>(doubled, dup_ids, sched, 5, zero));
    }
    SUBCASE("loss is non-negative") {
        Rng r2(4);
        auto noisefn = [&](const TensorData<double>& x, int64_t) {
            return TensorData<double>::randn(x.shape, r2);
        };
        CHECK(ddpm_loss_value<double>(batch, ids, sched, 6, noisefn) >= 0.0);
    }
}

TEST_CASE("reverse step") {
    auto sched = paper_schedule();
    Rng rng(15);

    SUBCASE("single-step DDIM with oracle noise inverts exactly") {
        auto one = DiffusionSchedule::linear(1, 0.02, 0.02);
        auto x0 = TensorData<double>::randn(Shape{3, 2, 1}, rng);
        auto eps = TensorData<double>::randn(Shape{3, 2, 1}, rng);
        auto x1 = forward_noise(x0, 1, one, eps);
        ReverseSamplerConfig cfg;
        cfg.mode = SamplerMode::ddim;
        cfg.eta = 0.0;
        Rng step_rng(0);
        auto back = reverse_step(x1, 1, 0, eps, one, cfg, step_rng);
        for (int64_t i = 0; i < x0.size(); ++i) CHECK(std::abs(back[i] - x0[i]) < 1e-10);
    }
    SUBCASE("sigma=0 and zero predicted noise collapse to x/sqrt(alpha)") {
        auto x1 = TensorData<double>::randn(Shape{4}, rng);
        TensorData<double> zero(Shape{4});
        ReverseSamplerConfig cfg;  // standard ddpm; s=1 has sigma 0
        Rng step_rng(0);
        auto out = reverse_step(x1, 1, 0, zero, sched, cfg, step_rng);
        for (int64_t i = 0; i < 4; ++i) {
            CHECK(out[i] == doctest::Approx(x1[i] / std::sqrt(sched.alpha_at(1))).epsilon(1e-14));
        }
    }
    SUBCASE("paper-literal update uses the printed denominator") {
        // hand oracle at s=2: (x - (1-a)/sqrt(1-a^2) e)/sqrt(a), delta=0
        TensorData<double> x(Shape{1}, {0.7});
        TensorData<double> e(Shape{1}, {0.3});
        ReverseSamplerConfig cfg;
        cfg.mode = SamplerMode::paper_literal;
        cfg.delta = 0.0;
        Rng step_rng(0);
        double a = sched.alpha_at(2);
        double want = (0.7 - (1 - a) / std::sqrt(1 - a * a) * 0.3) / std::sqrt(a);
        auto out = reverse_step(x, 2, 1, e, sched, cfg, step_rng);
        CHECK(out[0] == doctest::Approx(want).epsilon(1e-14));
    }
    SUBCASE("unknown sampler name rejected") {
        CHECK_THROWS_AS(parse_sampler_mode("euler"), ConfigError);
    }
    SUBCASE("invalid eta rejected") {
        ReverseSamplerConfig cfg;
        cfg.eta = 1.5;
        TensorData<double> x(Shape{1}, {0.0});
        Rng step_rng(0);
        CHECK_THROWS_AS(reverse_step(x, 2, 1, x, sched, cfg, step_rng), ConfigError);
    }
}

TEST_CASE("ddim chain with eta=0 is bit-deterministic") {
    auto sched = DiffusionSchedule::linear(100, 1e-4, 0.05);
    NoisePredictorConfig pcfg;
    pcfg.temb.dim = 16;
    auto pred = NoisePredictor<double>::init(pcfg, 99);
    PredictorFn<double> fn = [&](const TensorData<double>& x, int64_t s) {
        return pred.predict(x, s);
    };
    ReverseSamplerConfig cfg;
    cfg.mode = SamplerMode::ddim;
    cfg.eta = 0.0;
    cfg.ddim_steps = 20;
    auto a = sample_chain(Shape{6, 1, 1}, fn, sched, cfg, 424242);
    auto b = sample_chain(Shape{6, 1, 1}, fn, sched, cfg, 424242);
    CHECK(a.data == b.data);
}

TEST_CASE("recover_missing short circuits") {
    auto sched = paper_schedule();
    PredictorFn<double> never = [](const TensorData<double>&, int64_t) -> TensorData<double> {
        throw std::logic_error("predictor must not run when fully observed");
    };
    Rng rng(33);
    auto x = TensorData<double>::randn(Shape{5, 2, 1}, rng);
    ReverseSamplerConfig cfg;
    cfg.mode = SamplerMode::ddim;
    cfg.ddim_steps = 10;

    SUBCASE("mask all ones returns input bit-exactly") {
        TensorData<double> mask(x.shape, 1.0);
        auto out = recover_missing(x, mask, never, sched, cfg, 7);
        CHECK_FALSE(out.unconditional);
        CHECK(out.x.data == x.data);
    }
    SUBCASE("mask all zeros flags unconditional sampling") {
        TensorData<double> mask(x.shape, 0.0);
        PredictorFn<double> zero = [](const TensorData<double>& v, int64_t) {
            return TensorData<double>(v.shape);
        };
        auto out = recover_missing(x, mask, zero, sched, cfg, 7);
        CHECK(out.unconditional);
        CHECK(out.x.all_finite());
    }
    SUBCASE("fractional mask entries rejected") {
        TensorData<double> mask(x.shape, 0.5);
        CHECK_THROWS_AS(recover_missing(x, mask, never, sched, cfg, 7), ConfigError);
    }
    SUBCASE("observed entries are restored exactly, missing entries move") {
        TensorData<double> mask(x.shape, 1.0);
        mask[3] = 0.0;
        PredictorFn<double> zero = [](const TensorData<double>& v, int64_t) {
            return TensorData<double>(v.shape);
        };
        auto out = recover_missing(x, mask, zero, sched, cfg, 7);
        for (int64_t i = 0; i < x.size(); ++i) {
            if (i == 3) continue;
            CHECK(out.x[i] == x[i]);
        }
    }
}

TEST_CASE("trained denoiser beats the zero predictor and recovers bimodal modes") {
    auto sched = paper_schedule();
    auto windows = bimodal_windows(256, 3, 1234);
    auto pred = train_toy_denoiser(windows, sched, 12000, 555, 64);

    std::vector<uint64_t> ids(windows.size());
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    PredictorFn<double> fn = [&](const TensorData<double>& x, int64_t s) {
        return pred.predict(x, s);
    };
    auto zero = [](const TensorData<double>& x, int64_t) { return TensorData<double>(x.shape); };

    SUBCASE("final loss is at most half the zero-predictor loss") {
        double trained = ddpm_loss_value<double>(windows, ids, sched, 2001, fn);
        double baseline = ddpm_loss_value<double>(windows, ids, sched, 2001, zero);
        CHECK(trained < 0.5 * baseline);
    }
    SUBCASE("full-length DDIM chain recovers the two modes within 0.1") {
        // histogram comparison: cluster sampled values by sign and compare
        // cluster means against the generating mixture's component means
        ReverseSamplerConfig cfg;
        cfg.mode = SamplerMode::ddim;
        cfg.eta = 1.0;
        cfg.ddim_steps = sched.steps;  // full S-step chain
        double pos_sum = 0, neg_sum = 0;
        int64_t pos_n = 0, neg_n = 0;
        for (uint64_t seed = 0; seed < 96; ++seed) {
            auto sample = sample_chain(Shape{3, 1, 1}, fn, sched, cfg, seed);
            for (double v : sample.data) {
                if (v >= 0) {
                    pos_sum += v;
                    ++pos_n;
                } else {
                    neg_sum += v;
                    ++neg_n;
                }
            }
        }
        REQUIRE(pos_n > 20);
        REQUIRE(neg_n > 20);
        CHECK(std::abs(pos_sum / pos_n - 1.0) < 0.1);
        CHECK(std::abs(neg_sum / neg_n + 1.0) < 0.1);
    }
}

TEST_CASE("recovery beats mean imputation on a sinusoidal toy series") {
    // windows from sin(2*pi*t/64); ~0.5% of entries masked out
    const int64_t m = 16, n_windows = 300;
    std::vector<TensorData<double>> windows;
    for (int64_t w = 0; w < n_windows; ++w) {
        TensorData<double> win(Shape{m, 1, 1});
        for (int64_t t = 0; t < m; ++t) win[t] = std::sin(2 * M_PI * (w * 3 + t) / 64.0);
        windows.push_back(std::move(win));
    }
    auto sched = paper_schedule();
    auto pred = train_toy_denoiser(windows, sched, 1500, 777);
    PredictorFn<double> fn = [&](const TensorData<double>& x, int64_t s) {
        return pred.predict(x, s);
    };

    double series_mean = 0;  // the mean-imputation oracle fills with this
    int64_t count = 0;
    for (const auto& w : windows) {
        for (double v : w.data) series_mean += v;
        count += w.size();
    }
    series_mean /= count;

    ReverseSamplerConfig cfg;
    cfg.mode = SamplerMode::ddim;
    cfg.eta = 0.0;
    cfg.ddim_steps = 50;

    Rng mask_rng(31337);
    std::uniform_real_distribution<double> u(0, 1);
    double rec_err = 0, mean_err = 0;
    int64_t missing = 0;
    for (size_t w = 0; w < windows.size(); ++w) {
        TensorData<double> mask(windows[w].shape, 1.0);
        bool any = false;
        for (int64_t i = 0; i < mask.size(); ++i) {
            if (u(mask_rng) < 0.005) {
                mask[i] = 0.0;
                any = true;
            }
        }
        if (!any) continue;
        TensorData<double> corrupted = windows[w];
        for (int64_t i = 0; i < mask.size(); ++i) {
            if (mask[i] == 0.0) corrupted[i] = 0.0;
        }
        auto out = recover_missing(corrupted, mask, fn, sched, cfg, 1000 + w);
        for (int64_t i = 0; i < mask.size(); ++i) {
            if (mask[i] == 0.0) {
                rec_err += std::abs(out.x[i] - windows[w][i]);
                mean_err += std::abs(series_mean - windows[w][i]);
                ++missing;
            }
        }
    }
    REQUIRE(missing >= 10);
    CHECK(rec_err / missing < mean_err / missing);
}
