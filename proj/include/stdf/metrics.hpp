#pragma once

// MAE / RMSE / MAPE, the Historical Index baseline, and horizon-resolved
// reporting (15/30/60-minute rows at 5-minute granularity).

#include <cstdint>
#include <string>
#include <vector>

#include "stdf/tensor.hpp"

namespace stdf {

double mae(const TensorData<double>& y, const TensorData<double>& yhat);
double rmse(const TensorData<double>& y, const TensorData<double>& yhat);

// mean of |yhat-y|/|y| * 100 over entries with |y| > floor;
// MetricError when no entry passes the filter
double mape_pct(const TensorData<double>& y, const TensorData<double>& yhat, double floor);

enum class HiMode { last, daily };

struct HiResult {
    TensorData<double> forecast;  // [z, N, d]
    bool fell_back = false;       // daily mode without a full day of history
};

// `last` repeats the final observed frame; `daily` copies the same
// time-of-day one day earlier when the window spans at least one day.
HiResult hi_baseline(const TensorData<double>& input, int64_t z, HiMode mode,
                     int64_t slots_per_day);

struct HorizonMetrics {
    int64_t horizon = 0;      // 0-based index into the output window
    int64_t label_min = 0;    // (horizon+1) * granularity
    double mae = 0, rmse = 0, mape_pct = 0;
    int64_t n = 0;
};

struct MetricsReport {
    double mae = 0, rmse = 0, mape_pct = 0;
    int64_t n = 0;
    std::vector<HorizonMetrics> per_horizon;
    bool original_units = true;
    std::string config_hash;
    uint64_t seed = 0;

    // enforces MAE <= RMSE at construction time
    static MetricsReport make(double mae, double rmse, double mape_pct, int64_t n,
                              std::vector<HorizonMetrics> per_horizon, bool original_units,
                              std::string config_hash, uint64_t seed);

    std::string to_json() const;
    std::string to_csv() const;
};

// predictions/targets: aligned lists of [z, N, d] tensors; metrics are
// computed at each requested horizon and pooled over all horizons.
MetricsReport horizon_report(const std::vector<TensorData<double>>& predictions,
                             const std::vector<TensorData<double>>& targets,
                             const std::vector<int64_t>& horizons, int64_t granularity_min,
                             double mape_floor, bool original_units,
                             const std::string& config_hash, uint64_t seed);

}  // namespace stdf
