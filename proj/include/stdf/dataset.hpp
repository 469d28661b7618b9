#pragma once

// Ingestion, sliding-window construction, chronological splitting,
// z-score normalization, corruption injection, and binary caching.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stdf/tensor.hpp"

namespace stdf {

struct SeriesSource {
    TensorData<double> values;  // [T, N, d]
    int64_t start_minutes = 0;
    int64_t granularity_min = 5;
    std::optional<TensorData<double>> native_mask;  // [T, N, d], 1 = observed

    int64_t steps() const { return values.shape[0]; }
    int64_t nodes() const { return values.shape[1]; }
    int64_t features() const { return values.shape[2]; }
    void validate() const;
};

struct WindowSpec {
    int64_t input_len = 12;   // m
    int64_t output_len = 12;  // z
    int64_t stride = 1;
    void validate() const;
};

struct SplitSpec {
    double train = 0.7, val = 0.1, test = 0.2;
    void validate() const;
};

struct CorruptionSpec {
    double missing_ratio = 0.0;
    uint64_t seed = 0;
};

struct CalendarIndex {
    std::vector<int64_t> dow;   // 0..6 per input timestep
    std::vector<int64_t> slot;  // 0..slots_per_day-1 per input timestep
};

struct Sample {
    TensorData<double> input;   // [m, N, d]
    TensorData<double> target;  // [z, N, d]
    CalendarIndex cal;
    TensorData<double> mask;    // [m, N, d], 1 = observed
    uint64_t id = 0;            // absolute start offset in the raw series
};

struct WindowedDataset {
    int64_t m = 0, z = 0, n_nodes = 0, d = 0;
    int64_t slots_per_day = 0;
    int64_t granularity_min = 0;
    std::vector<Sample> samples;

    int64_t count() const { return static_cast<int64_t>(samples.size()); }
};

struct Normalizer {
    std::vector<double> mean;    // per feature
    std::vector<double> stddev;  // per feature, clamped to 1 when degenerate
    std::vector<int64_t> degenerate_features;

    void transform_inplace(TensorData<double>& t) const;  // feature-last layout
    void inverse_inplace(TensorData<double>& t) const;
};

struct SplitBundle {
    WindowedDataset train, val, test;
};

struct PreparedData {
    WindowedDataset train, val, test;
    Normalizer norm;
};

// -- operations --------------------------------------------------------------

WindowedDataset build_windows(const SeriesSource& src, const WindowSpec& spec);
WindowedDataset build_windows_range(const SeriesSource& src, const WindowSpec& spec,
                                    int64_t t_begin, int64_t t_end);

SplitBundle split_chronological(const SeriesSource& src, const WindowSpec& wspec,
                                const SplitSpec& sspec);

// z-score per feature fitted on the training split only
Normalizer fit_apply_normalizer(WindowedDataset& train,
                                const std::vector<WindowedDataset*>& others);

WindowedDataset inject_missing(const WindowedDataset& ds, const CorruptionSpec& spec);

// -- sources -----------------------------------------------------------------

struct SynthSpec {
    int64_t steps = 2000;
    int64_t nodes = 4;
    int64_t features = 1;
    int64_t granularity_min = 5;
    std::string start = "2024-01-01 00:00";
    double daily_amp = 2.0;
    double weekly_amp = 0.5;
    double offset = 10.0;
    double noise_std = 0.05;
    uint64_t seed = 0;
};

// Per node: daily + weekly sinusoids with node-specific amplitude and phase,
// plus Gaussian observation noise. The controlled substrate for acceptance runs.
SeriesSource make_synthetic(const SynthSpec& spec);

// CSV contract: header row required; first column is the timestamp, followed
// by N*d value columns (node-major, feature-minor). Empty cells and "nan"
// become native missing entries.
SeriesSource load_csv(const std::filesystem::path& path, int64_t features);

SeriesSource load_series_stdf(const std::filesystem::path& path, int64_t start_minutes,
                              int64_t granularity_min);

uint64_t source_hash(const SeriesSource& src);

// -- cache -------------------------------------------------------------------

void save_cache(const std::filesystem::path& dir, const PreparedData& data,
                const std::string& spec_hash, const std::string& src_hash);

// nullopt on miss (absent or stale manifest); IntegrityError on corrupt files
std::optional<PreparedData> load_cache(const std::filesystem::path& dir,
                                       const std::string& spec_hash,
                                       const std::string& src_hash);

}  // namespace stdf
