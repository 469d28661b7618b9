#include "stdf/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "nlohmann/json.hpp"
#include "stdf/error.hpp"

namespace stdf {

using ordered_json = nlohmann::ordered_json;

static void check_shapes(const TensorData<double>& y, const TensorData<double>& yhat,
                         const char* op) {
    if (y.shape != yhat.shape) {
        throw ShapeError(std::string(op) + ": shape mismatch: " + shape_str(y.shape) + " vs " +
                         shape_str(yhat.shape));
    }
}

double mae(const TensorData<double>& y, const TensorData<double>& yhat) {
    check_shapes(y, yhat, "mae");
    double acc = 0;
    for (int64_t i = 0; i < y.size(); ++i) acc += std::abs(yhat[i] - y[i]);
    return acc / y.size();
}

double rmse(const TensorData<double>& y, const TensorData<double>& yhat) {
    check_shapes(y, yhat, "rmse");
    double acc = 0;
    for (int64_t i = 0; i < y.size(); ++i) {
        double e = yhat[i] - y[i];
        acc += e * e;
    }
    return std::sqrt(acc / y.size());
}

double mape_pct(const TensorData<double>& y, const TensorData<double>& yhat, double floor) {
    check_shapes(y, yhat, "mape");
    if (floor < 0) throw ConfigError("mape floor must be >= 0");
    double acc = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < y.size(); ++i) {
        if (std::abs(y[i]) > floor) {
            acc += std::abs(yhat[i] - y[i]) / std::abs(y[i]);
            ++n;
        }
    }
    if (n == 0) throw MetricError("mape undefined: no targets pass the |y| > " +
                                  std::to_string(floor) + " filter");
    return acc / n * 100.0;
}

HiResult hi_baseline(const TensorData<double>& input, int64_t z, HiMode mode,
                     int64_t slots_per_day) {
    if (input.rank() != 3) {
        throw ShapeError("hi_baseline: input must be [m,N,d], got " + shape_str(input.shape));
    }
    if (z < 1) throw ConfigError("hi_baseline: z must be >= 1");
    const int64_t m = input.shape[0], N = input.shape[1], d = input.shape[2];
    const int64_t frame = N * d;
    HiResult out;
    out.forecast = TensorData<double>(Shape{z, N, d});

    bool daily = mode == HiMode::daily;
    if (daily && m < slots_per_day) {
        daily = false;
        out.fell_back = true;
    }
    for (int64_t h = 0; h < z; ++h) {
        int64_t src = daily ? m - slots_per_day + (h % slots_per_day) : m - 1;
        std::copy_n(input.data.data() + src * frame, frame, out.forecast.data.data() + h * frame);
    }
    return out;
}

MetricsReport MetricsReport::make(double mae, double rmse, double mape_pct, int64_t n,
                                  std::vector<HorizonMetrics> per_horizon, bool original_units,
                                  std::string config_hash, uint64_t seed) {
    if (mae > rmse + 1e-12 * std::max(1.0, rmse)) {
        throw MetricError("report violates MAE <= RMSE: mae=" + std::to_string(mae) +
                          " rmse=" + std::to_string(rmse));
    }
    MetricsReport r;
    r.mae = mae;
    r.rmse = rmse;
    r.mape_pct = mape_pct;
    r.n = n;
    r.per_horizon = std::move(per_horizon);
    r.original_units = original_units;
    r.config_hash = std::move(config_hash);
    r.seed = seed;
    return r;
}

std::string MetricsReport::to_json() const {
    ordered_json j;
    j["mae"] = mae;
    j["rmse"] = rmse;
    j["mape_pct"] = mape_pct;
    j["n"] = n;
    ordered_json ph = ordered_json::array();
    for (const HorizonMetrics& h : per_horizon) {
        ordered_json e;
        e["horizon"] = h.horizon;
        e["label_min"] = h.label_min;
        e["mae"] = h.mae;
        e["rmse"] = h.rmse;
        e["mape_pct"] = h.mape_pct;
        e["n"] = h.n;
        ph.push_back(e);
    }
    j["per_horizon"] = ph;
    j["units"] = original_units ? "original" : "normalized";
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "# config_hash=" << config_hash << " seed=" << seed << "\n";
    os << "horizon,label_min,mae,rmse,mape_pct,n\n";
    char buf[128];
    for (const HorizonMetrics& h : per_horizon) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.10g,%.10g,%.10g,%lld\n",
                      static_cast<long long>(h.horizon), static_cast<long long>(h.label_min),
                      h.mae, h.rmse, h.mape_pct, static_cast<long long>(h.n));
        os << buf;
    }
    return os.str();
}

MetricsReport horizon_report(const std::vector<TensorData<double>>& predictions,
                             const std::vector<TensorData<double>>& targets,
                             const std::vector<int64_t>& horizons, int64_t granularity_min,
                             double mape_floor, bool original_units,
                             const std::string& config_hash, uint64_t seed) {
    if (predictions.size() != targets.size() || predictions.empty()) {
        throw UsageError("horizon_report: prediction/target lists must align and be non-empty");
    }
    const Shape& shape = predictions[0].shape;
    const int64_t z = shape[0];
    const int64_t frame = numel(shape) / z;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].shape != shape || targets[i].shape != shape) {
            throw ShapeError("horizon_report: sample " + std::to_string(i) +
                             " has mismatched shape");
        }
    }
    for (int64_t h : horizons) {
        if (h < 0 || h >= z) {
            throw IndexError("horizon_report: horizon " + std::to_string(h) +
                             " outside output window of length " + std::to_string(z));
        }
    }

    const int64_t n_samples = static_cast<int64_t>(predictions.size());
    auto slice_metrics = [&](int64_t h) {
        TensorData<double> yh(Shape{n_samples, frame}), yt(Shape{n_samples, frame});
        for (int64_t i = 0; i < n_samples; ++i) {
            std::copy_n(predictions[static_cast<size_t>(i)].data.data() + h * frame, frame,
                        yh.data.data() + i * frame);
            std::copy_n(targets[static_cast<size_t>(i)].data.data() + h * frame, frame,
                        yt.data.data() + i * frame);
        }
        HorizonMetrics hm;
        hm.horizon = h;
        hm.label_min = (h + 1) * granularity_min;
        hm.mae = mae(yt, yh);
        hm.rmse = rmse(yt, yh);
        hm.mape_pct = mape_pct(yt, yh, mape_floor);
        hm.n = n_samples * frame;
        return hm;
    };

    std::vector<HorizonMetrics> per_h;
    for (int64_t h : horizons) per_h.push_back(slice_metrics(h));

    // aggregate pools every entry across all horizons (not a mean of means)
    TensorData<double> all_pred(Shape{n_samples, z * frame});
    TensorData<double> all_tgt(Shape{n_samples, z * frame});
    for (int64_t i = 0; i < n_samples; ++i) {
        std::copy_n(predictions[static_cast<size_t>(i)].data.data(), z * frame,
                    all_pred.data.data() + i * z * frame);
        std::copy_n(targets[static_cast<size_t>(i)].data.data(), z * frame,
                    all_tgt.data.data() + i * z * frame);
    }
    return MetricsReport::make(mae(all_tgt, all_pred), rmse(all_tgt, all_pred),
                               mape_pct(all_tgt, all_pred, mape_floor), n_samples * z * frame,
                               std::move(per_h), original_units, config_hash, seed);
}

}  // namespace stdf
