#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "stdf/calendar.hpp"
#include "stdf/dataset.hpp"
#include "stdf/stdf_io.hpp"

using namespace stdf;

namespace {

SeriesSource ramp_source(int64_t T, int64_t N = 1, int64_t d = 1, int64_t granularity = 5) {
    SeriesSource src;
    src.values = TensorData<double>(Shape{T, N, d});
    for (int64_t i = 0; i < src.values.size(); ++i) src.values[i] = static_cast<double>(i);
    src.start_minutes = parse_timestamp_minutes("2024-01-01 00:00");
    src.granularity_min = granularity;
    return src;
}

std::filesystem::path temp_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / ("stdf_test_" + leaf);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

bool same_samples(const WindowedDataset& a, const WindowedDataset& b) {
    if (a.count() != b.count()) return false;
    for (int64_t i = 0; i < a.count(); ++i) {
        const Sample& sa = a.samples[static_cast<size_t>(i)];
        const Sample& sb = b.samples[static_cast<size_t>(i)];
        if (sa.id != sb.id || sa.input.data != sb.input.data || sa.target.data != sb.target.data ||
            sa.mask.data != sb.mask.data || sa.cal.dow != sb.cal.dow || sa.cal.slot != sb.cal.slot)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("calendar arithmetic") {
    // 2024-01-01 was a Monday
    int64_t t0 = parse_timestamp_minutes("2024-01-01 00:00");
    CHECK(day_of_week(t0) == 0);
    CHECK(day_of_week(t0 + 6 * 1440) == 6);
    CHECK(slot_of_day(t0 + 65, 5) == 13);
    CHECK(slot_of_day(t0 + 60, 60) == 1);
    CHECK(format_timestamp_minutes(t0) == "2024-01-01 00:00");
    CHECK(parse_timestamp_minutes("1970-01-01 00:00") == 0);
    CHECK(day_of_week(0) == 3);  // Thursday
    CHECK_THROWS_AS(parse_timestamp_minutes("not a time"), DataError);
}

TEST_CASE("window counts") {
    WindowSpec spec;
    CHECK(build_windows(ramp_source(36), spec).count() == 13);
    CHECK(build_windows(ramp_source(24), spec).count() == 1);
    CHECK_THROWS_AS(build_windows(ramp_source(23), spec), DataError);
}

TEST_CASE("window count formula against enumeration oracle") {
    Rng rng(17);
    std::uniform_int_distribution<int64_t> mlen(1, 8), zlen(1, 8), stride(1, 4), extra(0, 40);
    for (int rep = 0; rep < 100; ++rep) {
        WindowSpec spec{mlen(rng), zlen(rng), stride(rng)};
        int64_t T = spec.input_len + spec.output_len + extra(rng);
        auto ds = build_windows(ramp_source(T), spec);
        // enumeration oracle: count valid offsets directly
        int64_t expect = 0;
        for (int64_t off = 0; off + spec.input_len + spec.output_len <= T; off += spec.stride)
            ++expect;
        CHECK(ds.count() == expect);
        CHECK(expect == (T - spec.input_len - spec.output_len) / spec.stride + 1);
    }
}

TEST_CASE("window contents and calendar indices") {
    auto src = ramp_source(30, 2, 1);
    WindowSpec spec{4, 2, 1};
    auto ds = build_windows(src, spec);
    const Sample& s = ds.samples[3];
    CHECK(s.id == 3);
    CHECK(s.input.at3(0, 0, 0) == 6.0);    // t=3, node 0
    CHECK(s.input.at3(0, 1, 0) == 7.0);    // t=3, node 1
    CHECK(s.target.at3(0, 0, 0) == 14.0);  // t=7
    CHECK(s.cal.dow[0] == 0);
    CHECK(s.cal.slot[0] == 3);  // 15 minutes in, 5-min slots
}

TEST_CASE("chronological split") {
    auto src = ramp_source(100, 1, 1);
    WindowSpec spec{4, 4, 1};
    SUBCASE("7:1:2 gives 70/10/20 raw segments") {
        auto splits = split_chronological(src, spec, SplitSpec{0.7, 0.1, 0.2});
        // segment bounds are recoverable from sample ids
        CHECK(splits.train.samples.front().id == 0);
        CHECK(splits.train.samples.back().id == 70 - 8);
        CHECK(splits.val.samples.front().id == 70);
        CHECK(splits.val.samples.back().id == 80 - 8);
        CHECK(splits.test.samples.front().id == 80);
        CHECK(splits.test.samples.back().id == 100 - 8);
        CHECK(splits.train.count() == 63);
        CHECK(splits.val.count() == 3);
        CHECK(splits.test.count() == 13);
    }
    SUBCASE("empty splits rejected") {
        CHECK_THROWS_AS(split_chronological(src, spec, SplitSpec{1.0, 0.0, 0.0}), ConfigError);
    }
    SUBCASE("deterministic") {
        auto a = split_chronological(src, spec, SplitSpec{});
        auto b = split_chronological(src, spec, SplitSpec{});
        CHECK(same_samples(a.train, b.train));
        CHECK(same_samples(a.val, b.val));
        CHECK(same_samples(a.test, b.test));
    }
}

TEST_CASE("no raw-timestep leakage between splits") {
    Rng rng(19);
    std::uniform_int_distribution<int64_t> randT(60, 300);
    for (int rep = 0; rep < 10; ++rep) {
        auto src = ramp_source(randT(rng));
        WindowSpec spec{3, 2, 1};
        auto splits = split_chronological(src, spec, SplitSpec{});
        auto max_step = [&](const WindowedDataset& ds) {
            int64_t mx = -1;
            for (const Sample& s : ds.samples)
                mx = std::max(mx, static_cast<int64_t>(s.id) + spec.input_len + spec.output_len - 1);
            return mx;
        };
        auto min_step = [&](const WindowedDataset& ds) {
            int64_t mn = INT64_MAX;
            for (const Sample& s : ds.samples) mn = std::min(mn, static_cast<int64_t>(s.id));
            return mn;
        };
        CHECK(max_step(splits.train) < min_step(splits.val));
        CHECK(max_step(splits.val) < min_step(splits.test));
    }
}

TEST_CASE("normalizer") {
    SUBCASE("hand example: mean 10, std 2, value 14 -> 2") {
        Normalizer n;
        n.mean = {10.0};
        n.stddev = {2.0};
        TensorData<double> t(Shape{1, 1, 1}, {14.0});
        n.transform_inplace(t);
        CHECK(t[0] == doctest::Approx(2.0).epsilon(1e-15));
        n.inverse_inplace(t);
        CHECK(t[0] == doctest::Approx(14.0).epsilon(1e-15));
    }
    SUBCASE("constant feature maps to zeros and inverse restores it") {
        SeriesSource src = ramp_source(60);
        for (auto& v : src.values.data) v = 5.0;
        auto splits = split_chronological(src, WindowSpec{4, 2, 1}, SplitSpec{});
        auto norm = fit_apply_normalizer(splits.train, {&splits.val, &splits.test});
        CHECK(norm.degenerate_features.size() == 1);
        CHECK(norm.stddev[0] == 1.0);
        for (double v : splits.train.samples[0].input.data) CHECK(v == 0.0);
        TensorData<double> back = splits.test.samples[0].target;
        norm.inverse_inplace(back);
        for (double v : back.data) CHECK(v == doctest::Approx(5.0).epsilon(1e-15));
    }
    SUBCASE("round trip within 1e-10") {
        Rng rng(23);
        auto src = ramp_source(60, 2, 2);
        for (auto& v : src.values.data) v += std::normal_distribution<double>(0, 3)(rng);
        auto splits = split_chronological(src, WindowSpec{4, 2, 1}, SplitSpec{});
        auto originals = splits.test.samples;
        auto norm = fit_apply_normalizer(splits.train, {&splits.val, &splits.test});
        for (size_t i = 0; i < splits.test.samples.size(); ++i) {
            TensorData<double> inv = splits.test.samples[i].input;
            norm.inverse_inplace(inv);
            for (int64_t j = 0; j < inv.size(); ++j)
                CHECK(std::abs(inv[j] - originals[i].input[j]) < 1e-10);
        }
    }
    SUBCASE("statistics are a pure function of the training split") {
        auto src = ramp_source(80, 2, 1);
        auto a = split_chronological(src, WindowSpec{4, 2, 1}, SplitSpec{});
        auto b = split_chronological(src, WindowSpec{4, 2, 1}, SplitSpec{});
        // corrupt b's test split before fitting; stats must not move
        for (Sample& s : b.test.samples)
            for (auto& v : s.input.data) v *= 100.0;
        auto na = fit_apply_normalizer(a.train, {});
        auto nb = fit_apply_normalizer(b.train, {});
        CHECK(na.mean == nb.mean);
        CHECK(na.stddev == nb.stddev);
    }
}

TEST_CASE("inject_missing") {
    auto src = ramp_source(40, 4, 1);
    auto ds = build_windows(src, WindowSpec{6, 2, 1});

    SUBCASE("p=0 leaves data untouched") {
        auto out = inject_missing(ds, CorruptionSpec{0.0, 7});
        CHECK(same_samples(out, ds));
        for (double v : out.samples[0].mask.data) CHECK(v == 1.0);
    }
    SUBCASE("p=1 clears everything") {
        auto out = inject_missing(ds, CorruptionSpec{1.0, 7});
        for (const Sample& s : out.samples) {
            for (double v : s.input.data) CHECK(v == 0.0);
            for (double v : s.mask.data) CHECK(v == 0.0);
            for (double v : s.target.data) CHECK(v != 0.0);  // targets never corrupted
        }
    }
    SUBCASE("p outside [0,1] rejected") {
        CHECK_THROWS_AS(inject_missing(ds, CorruptionSpec{1.5, 7}), ConfigError);
        CHECK_THROWS_AS(inject_missing(ds, CorruptionSpec{-0.1, 7}), ConfigError);
    }
    SUBCASE("reproducible under the same seed") {
        auto a = inject_missing(ds, CorruptionSpec{0.05, 99});
        auto b = inject_missing(ds, CorruptionSpec{0.05, 99});
        CHECK(same_samples(a, b));
        auto c = inject_missing(ds, CorruptionSpec{0.05, 100});
        CHECK_FALSE(same_samples(a, c));
    }
}

TEST_CASE("realized missing count is binomial-consistent") {
    // ~1e6 entries at p=0.005: expect 5000 +- 3*sigma, sigma = sqrt(n p (1-p))
    auto src = ramp_source(1036, 24, 1);
    for (auto& v : src.values.data) v += 1.0;  // keep zero out of the value range
    auto ds = build_windows(src, WindowSpec{42, 2, 1});
    int64_t total = 0;
    for (const Sample& s : ds.samples) total += s.input.size();
    REQUIRE(total >= 1000000);

    double p = 0.005;
    auto out = inject_missing(ds, CorruptionSpec{p, 1234});
    int64_t cleared = 0;
    for (const Sample& s : out.samples)
        for (double v : s.mask.data) cleared += v == 0.0 ? 1 : 0;
    double sigma = std::sqrt(total * p * (1 - p));
    CHECK(std::abs(cleared - total * p) <= 3 * sigma);
}

TEST_CASE("cache roundtrip") {
    auto dir = temp_dir("cache");
    auto src = ramp_source(60, 2, 1);
    Rng rng(29);
    for (auto& v : src.values.data) v += std::normal_distribution<double>(0, 1)(rng);

    PreparedData data;
    auto splits = split_chronological(src, WindowSpec{4, 2, 1}, SplitSpec{});
    data.train = splits.train;
    data.val = splits.val;
    data.test = splits.test;
    data.norm = fit_apply_normalizer(data.train, {&data.val, &data.test});

    save_cache(dir, data, "spec_abc", "src_def");

    SUBCASE("hit reproduces every sample bit-exactly") {
        auto loaded = load_cache(dir, "spec_abc", "src_def");
        REQUIRE(loaded.has_value());
        CHECK(same_samples(loaded->train, data.train));
        CHECK(same_samples(loaded->val, data.val));
        CHECK(same_samples(loaded->test, data.test));
        CHECK(loaded->norm.mean == data.norm.mean);
        CHECK(loaded->norm.stddev == data.norm.stddev);
    }
    SUBCASE("spec hash mismatch is a miss") {
        CHECK_FALSE(load_cache(dir, "spec_other", "src_def").has_value());
        CHECK_FALSE(load_cache(dir, "spec_abc", "src_other").has_value());
    }
    SUBCASE("truncated payload is an integrity error") {
        auto path = dir / "train.stdfb";
        auto blob = read_file(path);
        write_file(path, blob.substr(0, blob.size() / 2));
        CHECK_THROWS_AS(load_cache(dir, "spec_abc", "src_def"), IntegrityError);
    }
}

TEST_CASE("csv ingestion") {
    auto dir = temp_dir("csv");
    auto path = dir / "series.csv";
    {
        std::ofstream os(path);
        os << "timestamp,n0_f0,n1_f0\n";
        int64_t t0 = parse_timestamp_minutes("2024-03-04 00:00");
        for (int i = 0; i < 36; ++i) {
            os << format_timestamp_minutes(t0 + i * 5) << "," << i << "," << (100 + i) << "\n";
        }
    }
    auto src = load_csv(path, 1);
    CHECK(src.steps() == 36);
    CHECK(src.nodes() == 2);
    CHECK(src.features() == 1);
    CHECK(src.granularity_min == 5);
    CHECK(src.values.at3(3, 1, 0) == 103.0);
    CHECK_FALSE(src.native_mask.has_value());
    CHECK(build_windows(src, WindowSpec{}).count() == 13);

    SUBCASE("missing cells populate the native mask") {
        auto path2 = dir / "gaps.csv";
        std::ofstream os(path2);
        os << "timestamp,a,b\n";
        os << "2024-03-04 00:00,1.0,2.0\n";
        os << "2024-03-04 00:05,,3.0\n";
        os << "2024-03-04 00:10,4.0,nan\n";
        os.close();
        auto gaps = load_csv(path2, 1);
        REQUIRE(gaps.native_mask.has_value());
        CHECK(gaps.native_mask->at3(0, 0, 0) == 1.0);
        CHECK(gaps.native_mask->at3(1, 0, 0) == 0.0);
        CHECK(gaps.native_mask->at3(2, 1, 0) == 0.0);
        CHECK(gaps.values.at3(1, 0, 0) == 0.0);
    }
    SUBCASE("ragged rows are rejected with row context") {
        auto path3 = dir / "bad.csv";
        std::ofstream os(path3);
        os << "timestamp,a\n2024-03-04 00:00,1.0,9.9\n";
        os.close();
        CHECK_THROWS_WITH_AS(load_csv(path3, 1), doctest::Contains("row 2"), DataError);
    }
    SUBCASE("non-uniform spacing rejected") {
        auto path4 = dir / "jitter.csv";
        std::ofstream os(path4);
        os << "timestamp,a\n2024-03-04 00:00,1\n2024-03-04 00:05,2\n2024-03-04 00:15,3\n";
        os.close();
        CHECK_THROWS_AS(load_csv(path4, 1), DataError);
    }
}

TEST_CASE("synthetic source is seeded and well-formed") {
    SynthSpec spec;
    spec.steps = 600;
    spec.nodes = 3;
    spec.seed = 42;
    auto a = make_synthetic(spec);
    auto b = make_synthetic(spec);
    CHECK(a.values.data == b.values.data);
    CHECK(a.values.all_finite());
    spec.seed = 43;
    auto c = make_synthetic(spec);
    CHECK_FALSE(a.values.data == c.values.data);
    CHECK(source_hash(a) != source_hash(c));
    CHECK(source_hash(a) == source_hash(b));

    // values hover around the configured offset
    double mean = 0;
    for (double v : a.values.data) mean += v;
    mean /= a.values.size();
    CHECK(mean == doctest::Approx(spec.offset).epsilon(0.2));
}
