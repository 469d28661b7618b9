#include "stdf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "stdf/calendar.hpp"
#include "stdf/config.hpp"
#include "stdf/error.hpp"
#include "stdf/rng.hpp"
#include "stdf/stdf_io.hpp"

namespace stdf {

void SeriesSource::validate() const {
    if (values.rank() != 3) {
        throw DataError("series values must be rank 3 [T,N,d], got " + shape_str(values.shape));
    }
    if (granularity_min <= 0 || 1440 % granularity_min != 0) {
        throw ConfigError("granularity must divide 1440 minutes, got " +
                          std::to_string(granularity_min));
    }
    if (native_mask && native_mask->shape != values.shape) {
        throw ShapeError("native mask shape " + shape_str(native_mask->shape) +
                         " does not match values " + shape_str(values.shape));
    }
}

void WindowSpec::validate() const {
    if (input_len < 1 || output_len < 1) throw ConfigError("window lengths must be >= 1");
    if (stride < 1) throw ConfigError("window stride must be >= 1");
}

void SplitSpec::validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must be non-negative and sum to 1");
    }
}

WindowedDataset build_windows_range(const SeriesSource& src, const WindowSpec& spec,
                                    int64_t t_begin, int64_t t_end) {
    src.validate();
    spec.validate();
    const int64_t m = spec.input_len, z = spec.output_len;
    const int64_t len = t_end - t_begin;
    if (len < m + z) {
        throw DataError("insufficient data: segment has " + std::to_string(len) +
                        " steps but a window needs " + std::to_string(m + z));
    }
    const int64_t N = src.nodes(), d = src.features();

    WindowedDataset ds;
    ds.m = m;
    ds.z = z;
    ds.n_nodes = N;
    ds.d = d;
    ds.granularity_min = src.granularity_min;
    ds.slots_per_day = 1440 / src.granularity_min;

    for (int64_t off = 0; off <= len - m - z; off += spec.stride) {
        const int64_t t0 = t_begin + off;
        Sample s;
        s.id = static_cast<uint64_t>(t0);
        s.input = TensorData<double>(Shape{m, N, d});
        s.target = TensorData<double>(Shape{z, N, d});
        s.mask = TensorData<double>(Shape{m, N, d}, 1.0);
        const int64_t row = N * d;
        for (int64_t t = 0; t < m; ++t) {
            std::copy_n(src.values.data.data() + (t0 + t) * row, row,
                        s.input.data.data() + t * row);
            int64_t minutes = src.start_minutes + (t0 + t) * src.granularity_min;
            s.cal.dow.push_back(day_of_week(minutes));
            s.cal.slot.push_back(slot_of_day(minutes, src.granularity_min));
        }
        for (int64_t t = 0; t < z; ++t) {
            std::copy_n(src.values.data.data() + (t0 + m + t) * row, row,
                        s.target.data.data() + t * row);
        }
        if (src.native_mask) {
            for (int64_t t = 0; t < m; ++t) {
                for (int64_t j = 0; j < row; ++j) {
                    if ((*src.native_mask)[(t0 + t) * row + j] == 0.0) {
                        s.mask[t * row + j] = 0.0;
                        s.input[t * row + j] = 0.0;
                    }
                }
            }
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

WindowedDataset build_windows(const SeriesSource& src, const WindowSpec& spec) {
    return build_windows_range(src, spec, 0, src.steps());
}

SplitBundle split_chronological(const SeriesSource& src, const WindowSpec& wspec,
                                const SplitSpec& sspec) {
    src.validate();
    sspec.validate();
    const int64_t T = src.steps();
    const int64_t cut1 = static_cast<int64_t>(std::llround(T * sspec.train));
    const int64_t cut2 = static_cast<int64_t>(std::llround(T * (sspec.train + sspec.val)));
    auto segment = [&](int64_t a, int64_t b, const char* which) {
        if (b - a < wspec.input_len + wspec.output_len) {
            throw ConfigError(std::string("split '") + which + "' yields no samples: " +
                              std::to_string(b - a) + " raw steps for windows of " +
                              std::to_string(wspec.input_len + wspec.output_len));
        }
        return build_windows_range(src, wspec, a, b);
    };
    SplitBundle out;
    out.train = segment(0, cut1, "train");
    out.val = segment(cut1, cut2, "val");
    out.test = segment(cut2, T, "test");
    return out;
}

void Normalizer::transform_inplace(TensorData<double>& t) const {
    const int64_t d = static_cast<int64_t>(mean.size());
    if (t.shape.back() != d) {
        throw ShapeError("normalizer fitted on " + std::to_string(d) +
                         " features, tensor has last extent " + std::to_string(t.shape.back()));
    }
    for (int64_t i = 0; i < t.size(); ++i) {
        int64_t f = i % d;
        t[i] = (t[i] - mean[f]) / stddev[f];
    }
}

void Normalizer::inverse_inplace(TensorData<double>& t) const {
    const int64_t d = static_cast<int64_t>(mean.size());
    if (t.shape.back() != d) {
        throw ShapeError("normalizer fitted on " + std::to_string(d) +
                         " features, tensor has last extent " + std::to_string(t.shape.back()));
    }
    for (int64_t i = 0; i < t.size(); ++i) {
        int64_t f = i % d;
        t[i] = t[i] * stddev[f] + mean[f];
    }
}

Normalizer fit_apply_normalizer(WindowedDataset& train,
                                const std::vector<WindowedDataset*>& others) {
    if (train.samples.empty()) throw ConfigError("cannot fit normalizer: training split is empty");
    const int64_t d = train.d;
    Normalizer norm;
    norm.mean.assign(d, 0.0);
    norm.stddev.assign(d, 0.0);

    std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
    int64_t count = 0;
    auto accumulate = [&](const TensorData<double>& t) {
        for (int64_t i = 0; i < t.size(); ++i) {
            int64_t f = i % d;
            sum[f] += t[i];
            sumsq[f] += t[i] * t[i];
        }
        count += t.size() / d;
    };
    for (const Sample& s : train.samples) {
        accumulate(s.input);
        accumulate(s.target);
    }
    for (int64_t f = 0; f < d; ++f) {
        norm.mean[f] = sum[f] / count;
        double var = sumsq[f] / count - norm.mean[f] * norm.mean[f];
        double sd = var > 0 ? std::sqrt(var) : 0.0;
        if (sd <= 1e-12) {
            norm.degenerate_features.push_back(f);
            sd = 1.0;
        }
        norm.stddev[f] = sd;
    }

    auto apply = [&](WindowedDataset& ds) {
        for (Sample& s : ds.samples) {
            norm.transform_inplace(s.input);
            norm.transform_inplace(s.target);
        }
    };
    apply(train);
    for (WindowedDataset* ds : others) apply(*ds);
    return norm;
}

WindowedDataset inject_missing(const WindowedDataset& ds, const CorruptionSpec& spec) {
    if (spec.missing_ratio < 0.0 || spec.missing_ratio > 1.0) {
        throw ConfigError("missing ratio must lie in [0,1], got " +
                          std::to_string(spec.missing_ratio));
    }
    WindowedDataset out = ds;
    if (spec.missing_ratio == 0.0) return out;
    for (Sample& s : out.samples) {
        // per-sample stream so corruption is independent of iteration order
        Rng rng(derive_seed(spec.seed, s.id));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int64_t i = 0; i < s.input.size(); ++i) {
            if (u(rng) < spec.missing_ratio) {
                s.input[i] = 0.0;
                s.mask[i] = 0.0;
            }
        }
    }
    return out;
}

SeriesSource make_synthetic(const SynthSpec& spec) {
    if (spec.steps < 1 || spec.nodes < 1 || spec.features < 1) {
        throw ConfigError("synthetic source needs positive steps/nodes/features");
    }
    SeriesSource src;
    src.start_minutes = parse_timestamp_minutes(spec.start);
    src.granularity_min = spec.granularity_min;
    src.values = TensorData<double>(Shape{spec.steps, spec.nodes, spec.features});

    const double day_steps = 1440.0 / spec.granularity_min;
    const double week_steps = 7.0 * day_steps;
    const double two_pi = 2.0 * M_PI;

    Rng param_rng(derive_seed(spec.seed, 0xA11CE));
    std::uniform_real_distribution<double> uphase(0.0, two_pi);
    std::uniform_real_distribution<double> uamp(0.8, 1.2);
    struct NodeParams {
        double amp_d, amp_w, phase_d, phase_w;
    };
    std::vector<NodeParams> params;
    for (int64_t n = 0; n < spec.nodes * spec.features; ++n) {
        params.push_back({spec.daily_amp * uamp(param_rng), spec.weekly_amp * uamp(param_rng),
                          uphase(param_rng), uphase(param_rng)});
    }

    Rng noise_rng(derive_seed(spec.seed, 0x5EED));
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (int64_t t = 0; t < spec.steps; ++t) {
        for (int64_t n = 0; n < spec.nodes; ++n) {
            for (int64_t f = 0; f < spec.features; ++f) {
                const NodeParams& p = params[static_cast<size_t>(n * spec.features + f)];
                double v = spec.offset + p.amp_d * std::sin(two_pi * t / day_steps + p.phase_d) +
                           p.amp_w * std::sin(two_pi * t / week_steps + p.phase_w);
                if (spec.noise_std > 0) v += noise(noise_rng);
                src.values.at3(t, n, f) = v;
            }
        }
    }
    src.validate();
    return src;
}

static std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

SeriesSource load_csv(const std::filesystem::path& path, int64_t features) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open CSV: " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw DataError("CSV is empty: " + path.string());
    const size_t n_cols = split_csv_line(line).size();
    if (n_cols < 2) throw DataError("CSV header needs a timestamp column plus value columns");
    const int64_t value_cols = static_cast<int64_t>(n_cols) - 1;
    if (features < 1 || value_cols % features != 0) {
        throw DataError("CSV has " + std::to_string(value_cols) +
                        " value columns, not divisible by " + std::to_string(features) +
                        " features");
    }
    const int64_t nodes = value_cols / features;

    std::vector<int64_t> stamps;
    std::vector<double> values;
    std::vector<double> mask;
    bool any_missing = false;
    int64_t rowno = 1;
    while (std::getline(is, line)) {
        ++rowno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (static_cast<int64_t>(fields.size()) != value_cols + 1) {
            throw DataError("CSV row " + std::to_string(rowno) + ": expected " +
                            std::to_string(value_cols + 1) + " columns, got " +
                            std::to_string(fields.size()));
        }
        stamps.push_back(parse_timestamp_minutes(fields[0]));
        for (int64_t c = 1; c <= value_cols; ++c) {
            std::string f = fields[static_cast<size_t>(c)];
            if (f.empty() || f == "nan" || f == "NaN") {
                values.push_back(0.0);
                mask.push_back(0.0);
                any_missing = true;
                continue;
            }
            try {
                values.push_back(std::stod(f));
                mask.push_back(1.0);
            } catch (const std::exception&) {
                throw DataError("CSV row " + std::to_string(rowno) + ", column " +
                                std::to_string(c + 1) + ": cannot parse value '" + f + "'");
            }
        }
    }
    if (stamps.size() < 2) throw DataError("CSV needs at least two data rows");
    const int64_t granularity = stamps[1] - stamps[0];
    if (granularity <= 0 || 1440 % granularity != 0) {
        throw DataError("CSV timestamps imply granularity of " + std::to_string(granularity) +
                        " minutes, which does not divide a day");
    }
    for (size_t i = 1; i < stamps.size(); ++i) {
        if (stamps[i] - stamps[i - 1] != granularity) {
            throw DataError("CSV row " + std::to_string(i + 2) + ": non-uniform timestamp spacing");
        }
    }

    SeriesSource src;
    src.start_minutes = stamps[0];
    src.granularity_min = granularity;
    const int64_t T = static_cast<int64_t>(stamps.size());
    src.values = TensorData<double>(Shape{T, nodes, features}, std::move(values));
    if (any_missing) src.native_mask = TensorData<double>(Shape{T, nodes, features}, std::move(mask));
    src.validate();
    return src;
}

SeriesSource load_series_stdf(const std::filesystem::path& path, int64_t start_minutes,
                              int64_t granularity_min) {
    SeriesSource src;
    src.values = load_stdf(path);
    src.start_minutes = start_minutes;
    src.granularity_min = granularity_min;
    src.validate();
    return src;
}

uint64_t source_hash(const SeriesSource& src) {
    std::string blob = encode_stdf(src.values);
    uint64_t h = fnv1a(blob.data(), blob.size());
    h = fnv1a(&src.start_minutes, sizeof(src.start_minutes), h);
    h = fnv1a(&src.granularity_min, sizeof(src.granularity_min), h);
    if (src.native_mask) {
        std::string mb = encode_stdf(*src.native_mask);
        h = fnv1a(mb.data(), mb.size(), h);
    }
    return h;
}

// -- cache --------------------------------------------------------------------

static constexpr const char* kCacheFormatVersion = "1";

static Bundle pack_split(const WindowedDataset& ds, const Normalizer& norm) {
    const int64_t n = ds.count();
    TensorData<double> inputs(Shape{n, ds.m, ds.n_nodes, ds.d});
    TensorData<double> targets(Shape{n, ds.z, ds.n_nodes, ds.d});
    TensorData<double> mask(Shape{n, ds.m, ds.n_nodes, ds.d});
    TensorData<double> dow(Shape{n, ds.m});
    TensorData<double> slot(Shape{n, ds.m});
    TensorData<double> ids(Shape{n});
    const int64_t in_sz = ds.m * ds.n_nodes * ds.d;
    const int64_t tg_sz = ds.z * ds.n_nodes * ds.d;
    for (int64_t i = 0; i < n; ++i) {
        const Sample& s = ds.samples[static_cast<size_t>(i)];
        std::copy_n(s.input.data.data(), in_sz, inputs.data.data() + i * in_sz);
        std::copy_n(s.target.data.data(), tg_sz, targets.data.data() + i * tg_sz);
        std::copy_n(s.mask.data.data(), in_sz, mask.data.data() + i * in_sz);
        for (int64_t t = 0; t < ds.m; ++t) {
            dow[i * ds.m + t] = static_cast<double>(s.cal.dow[static_cast<size_t>(t)]);
            slot[i * ds.m + t] = static_cast<double>(s.cal.slot[static_cast<size_t>(t)]);
        }
        ids[i] = static_cast<double>(s.id);
    }
    Bundle b;
    std::ostringstream meta;
    meta << "m=" << ds.m << "\nz=" << ds.z << "\nnodes=" << ds.n_nodes << "\nd=" << ds.d
         << "\nslots_per_day=" << ds.slots_per_day << "\ngranularity_min=" << ds.granularity_min
         << "\n";
    meta << "norm_mean=";
    for (size_t f = 0; f < norm.mean.size(); ++f) {
        if (f) meta << ",";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", norm.mean[f]);
        meta << buf;
    }
    meta << "\nnorm_std=";
    for (size_t f = 0; f < norm.stddev.size(); ++f) {
        if (f) meta << ",";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", norm.stddev[f]);
        meta << buf;
    }
    meta << "\n";
    b.put_text("meta", meta.str());
    b.put_tensor("inputs", inputs);
    b.put_tensor("targets", targets);
    b.put_tensor("mask", mask);
    b.put_tensor("dow", dow);
    b.put_tensor("slot", slot);
    b.put_tensor("ids", ids);
    return b;
}

static WindowedDataset unpack_split(const Bundle& b, Normalizer& norm_out) {
    RunConfig meta = RunConfig::parse_text(b.text("meta"));
    WindowedDataset ds;
    ds.m = meta.get_int("m", 0);
    ds.z = meta.get_int("z", 0);
    ds.n_nodes = meta.get_int("nodes", 0);
    ds.d = meta.get_int("d", 0);
    ds.slots_per_day = meta.get_int("slots_per_day", 0);
    ds.granularity_min = meta.get_int("granularity_min", 0);
    norm_out.mean = meta.get_list("norm_mean", {});
    norm_out.stddev = meta.get_list("norm_std", {});

    auto inputs = b.tensor<double>("inputs");
    auto targets = b.tensor<double>("targets");
    auto mask = b.tensor<double>("mask");
    auto dow = b.tensor<double>("dow");
    auto slot = b.tensor<double>("slot");
    auto ids = b.tensor<double>("ids");
    const int64_t n = inputs.shape[0];
    if (targets.shape[0] != n || mask.shape[0] != n || dow.shape[0] != n || ids.shape[0] != n) {
        throw IntegrityError("cache: split tensors disagree on sample count");
    }
    const int64_t in_sz = ds.m * ds.n_nodes * ds.d;
    const int64_t tg_sz = ds.z * ds.n_nodes * ds.d;
    for (int64_t i = 0; i < n; ++i) {
        Sample s;
        s.input = TensorData<double>(Shape{ds.m, ds.n_nodes, ds.d});
        s.target = TensorData<double>(Shape{ds.z, ds.n_nodes, ds.d});
        s.mask = TensorData<double>(Shape{ds.m, ds.n_nodes, ds.d});
        std::copy_n(inputs.data.data() + i * in_sz, in_sz, s.input.data.data());
        std::copy_n(targets.data.data() + i * tg_sz, tg_sz, s.target.data.data());
        std::copy_n(mask.data.data() + i * in_sz, in_sz, s.mask.data.data());
        for (int64_t t = 0; t < ds.m; ++t) {
            s.cal.dow.push_back(static_cast<int64_t>(dow[i * ds.m + t]));
            s.cal.slot.push_back(static_cast<int64_t>(slot[i * ds.m + t]));
        }
        s.id = static_cast<uint64_t>(ids[i]);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_cache(const std::filesystem::path& dir, const PreparedData& data,
                const std::string& spec_hash, const std::string& src_hash) {
    std::filesystem::create_directories(dir);
    pack_split(data.train, data.norm).save(dir / "train.stdfb");
    pack_split(data.val, data.norm).save(dir / "val.stdfb");
    pack_split(data.test, data.norm).save(dir / "test.stdfb");
    std::ofstream os(dir / "manifest.txt", std::ios::trunc);
    os << "format_version=" << kCacheFormatVersion << "\n";
    os << "spec_hash=" << spec_hash << "\n";
    os << "source_hash=" << src_hash << "\n";
}

std::optional<PreparedData> load_cache(const std::filesystem::path& dir,
                                       const std::string& spec_hash,
                                       const std::string& src_hash) {
    const auto manifest_path = dir / "manifest.txt";
    if (!std::filesystem::exists(manifest_path)) return std::nullopt;
    RunConfig manifest = RunConfig::parse_file(manifest_path.string());
    if (manifest.get("format_version", "") != kCacheFormatVersion ||
        manifest.get("spec_hash", "") != spec_hash || manifest.get("source_hash", "") != src_hash) {
        return std::nullopt;  // stale: rebuild
    }
    for (const char* f : {"train.stdfb", "val.stdfb", "test.stdfb"}) {
        if (!std::filesystem::exists(dir / f)) return std::nullopt;
    }
    PreparedData out;
    Normalizer n1, n2, n3;
    out.train = unpack_split(Bundle::load(dir / "train.stdfb"), n1);
    out.val = unpack_split(Bundle::load(dir / "val.stdfb"), n2);
    out.test = unpack_split(Bundle::load(dir / "test.stdfb"), n3);
    out.norm = n1;
    return out;
}

}  // namespace stdf
