#pragma once

// Adaptive-moment gradient descent and the two training loops: the noise
// predictor trains first on its own objective; the forecaster then trains
// on L1 loss in normalized space with early stopping on validation MAE.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stdf/dataset.hpp"
#include "stdf/diffusion.hpp"
#include "stdf/model.hpp"
#include "stdf/tape.hpp"

namespace stdf {

struct OptimConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename S>
class Adam {
public:
    explicit Adam(const OptimConfig& cfg) : cfg_(cfg) {}

    void step(const std::vector<std::pair<std::string, TensorData<S>*>>& params,
              const std::map<std::string, TensorData<S>>& grads) {
        ++t_;
        const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
        const S corr1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, double(t_)));
        const S corr2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, double(t_)));
        const S lr = static_cast<S>(cfg_.lr), eps = static_cast<S>(cfg_.eps);
        for (const auto& [name, tensor] : params) {
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const TensorData<S>& g = git->second;
            auto [mit, fresh] = state_.try_emplace(
                name, std::make_pair(TensorData<S>(tensor->shape), TensorData<S>(tensor->shape)));
            auto& [m, v] = mit->second;
            for (int64_t i = 0; i < tensor->size(); ++i) {
                m[i] = b1 * m[i] + (S(1) - b1) * g[i];
                v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
                S mhat = m[i] / corr1;
                S vhat = v[i] / corr2;
                (*tensor)[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

private:
    OptimConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, std::pair<TensorData<S>, TensorData<S>>> state_;
};

template <typename S, typename Model>
std::vector<std::pair<std::string, TensorData<S>*>> trainable_params(Model& model) {
    std::vector<std::pair<std::string, TensorData<S>*>> out;
    model.visit([&](const std::string& name, TensorData<S>& t, bool frozen) {
        if (!frozen) out.emplace_back(name, &t);
    });
    return out;
}

template <typename S>
std::map<std::string, TensorData<S>> collect_grads(const Tape<S>& t, const BindLog<S>& log) {
    std::map<std::string, TensorData<S>> grads;
    for (const auto& [name, id] : log) {
        if (const TensorData<S>* g = t.grad(id)) grads[name] = *g;
    }
    return grads;
}

// -- denoiser training ---------------------------------------------------------

struct DenoiserTrainConfig {
    int64_t steps = 2000;
    int64_t batch = 16;
    OptimConfig optim;
    uint64_t seed = 0;
};

struct TrainCurvePoint {
    int64_t step = 0;
    double loss = 0;
};

struct DenoiserTrainResult {
    std::vector<TrainCurvePoint> curve;
    bool diverged = false;
    int64_t steps_done = 0;
};

template <typename S>
DenoiserTrainResult train_denoiser(NoisePredictor<S>& pred, const DiffusionSchedule& sched,
                                   const std::vector<TensorData<S>>& windows,
                                   const std::vector<uint64_t>& window_ids,
                                   const DenoiserTrainConfig& cfg) {
    if (windows.empty()) throw UsageError("train_denoiser: no training windows");
    DenoiserTrainResult result;
    Adam<S> optim(cfg.optim);
    auto params = trainable_params<S>(pred);
    NoisePredictor<S> last_good = pred;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        Rng pick_rng(derive_seed(cfg.seed, 0xBA7C4, static_cast<uint64_t>(step)));
        std::uniform_int_distribution<size_t> pick(0, windows.size() - 1);
        std::vector<const TensorData<S>*> batch;
        std::vector<uint64_t> ids;
        for (int64_t i = 0; i < cfg.batch; ++i) {
            size_t j = pick(pick_rng);
            batch.push_back(&windows[j]);
            ids.push_back(window_ids[j]);
        }

        Tape<S> tape;
        BindLog<S> log;
        auto bound = pred.bind(tape, &log);
        auto loss = ddpm_loss(tape, pred, bound, batch, ids, sched,
                              derive_seed(cfg.seed, 0x7055, static_cast<uint64_t>(step)));
        double loss_v = static_cast<double>(tape.value(loss)[0]);
        if (!std::isfinite(loss_v)) {
            pred = last_good;  // divergence: abort with the last good checkpoint
            result.diverged = true;
            break;
        }
        last_good = pred;
        tape.backward(loss);
        optim.step(params, collect_grads(tape, log));
        result.curve.push_back({step, loss_v});
        result.steps_done = step + 1;
    }
    return result;
}

// -- forecaster training --------------------------------------------------------

struct ForecastTrainConfig {
    int64_t epochs = 50;
    int64_t batch = 16;
    int64_t patience = 10;
    OptimConfig optim;
    uint64_t seed = 0;
};

struct EpochStats {
    int64_t epoch = 0;
    double train_mae = 0;  // normalized units
    double val_mae = 0;
};

struct ForecastTrainResult {
    std::vector<EpochStats> curve;
    int64_t best_epoch = -1;
    double best_val_mae = 0;
    bool diverged = false;
};

template <typename S>
struct SampleT {
    TensorData<S> input;
    TensorData<S> target;
    CalendarIndex cal;
};

template <typename S>
std::vector<SampleT<S>> to_profile(const WindowedDataset& ds) {
    std::vector<SampleT<S>> out;
    out.reserve(ds.samples.size());
    for (const Sample& s : ds.samples) {
        out.push_back({cast_tensor<S>(s.input), cast_tensor<S>(s.target), s.cal});
    }
    return out;
}

template <typename S>
double dataset_mae(const Forecaster<S>& model, const std::vector<SampleT<S>>& samples) {
    double acc = 0;
    int64_t n = 0;
    for (const auto& s : samples) {
        auto pred = forecaster_predict(model, s.input, s.cal);
        for (int64_t i = 0; i < pred.size(); ++i) {
            acc += std::abs(double(pred[i]) - double(s.target[i]));
        }
        n += pred.size();
    }
    return n ? acc / n : 0.0;
}

template <typename S>
ForecastTrainResult train_forecaster(Forecaster<S>& model, const std::vector<SampleT<S>>& train,
                                     const std::vector<SampleT<S>>& val,
                                     const ForecastTrainConfig& cfg) {
    if (train.empty()) throw UsageError("train_forecaster: no training samples");
    ForecastTrainResult result;
    Adam<S> optim(cfg.optim);
    auto params = trainable_params<S>(model);
    Forecaster<S> best = model;
    double best_val = std::numeric_limits<double>::infinity();
    int64_t best_epoch = -1, since_best = 0;

    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5F1E, static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0;
        int64_t batches = 0;
        for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch)) {
            size_t end = std::min(order.size(), pos + static_cast<size_t>(cfg.batch));
            Tape<S> tape;
            BindLog<S> log;
            auto bound = model.bind(tape, &log);
            typename Tape<S>::Id total = tape.scalar_constant(S(0));
            for (size_t bi = pos; bi < end; ++bi) {
                const SampleT<S>& s = train[order[bi]];
                auto pred = forecaster_forward(tape, bound, model.cfg, tape.constant(s.input),
                                               s.cal);
                auto diff = tape.sub(pred, tape.constant(s.target));
                total = tape.add(total, tape.mean_all(tape.abs_val(diff)));
            }
            auto loss = tape.scale(total, S(1) / static_cast<S>(end - pos));
            double loss_v = static_cast<double>(tape.value(loss)[0]);
            if (!std::isfinite(loss_v)) {
                result.diverged = true;
                break;
            }
            tape.backward(loss);
            optim.step(params, collect_grads(tape, log));
            epoch_loss += loss_v;
            ++batches;
        }
        if (result.diverged) break;

        double val_mae = val.empty() ? 0.0 : dataset_mae(model, val);
        result.curve.push_back({epoch, batches ? epoch_loss / batches : 0.0, val_mae});

        if (val_mae < best_val) {
            best_val = val_mae;
            best = model;
            best_epoch = epoch;
            since_best = 0;
        } else if (++since_best > cfg.patience) {
            break;
        }
    }
    if (best_epoch >= 0) {
        model = best;
        result.best_epoch = best_epoch;
        result.best_val_mae = best_val;
    }
    return result;
}

}  // namespace stdf
