#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stdf/error.hpp"
#include "stdf/rng.hpp"

namespace stdf {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Dense row-major tensor. Plain value type; autodiff lives in Tape.
template <typename S>
struct TensorData {
    Shape shape;
    std::vector<S> data;

    TensorData() = default;

    explicit TensorData(Shape sh, S fill = S(0))
        : shape(std::move(sh)), data(static_cast<size_t>(numel(shape)), fill) {}

    TensorData(Shape sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != numel(shape)) {
            throw ShapeError("tensor: " + std::to_string(data.size()) + " values do not fill shape " +
                             shape_str(shape));
        }
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t extent(int64_t axis) const { return shape[static_cast<size_t>(axis)]; }

    S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    S& at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const S& at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    S& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const S& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    bool same_shape(const TensorData& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (S v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    static TensorData zeros(Shape sh) { return TensorData(std::move(sh), S(0)); }
    static TensorData full(Shape sh, S v) { return TensorData(std::move(sh), v); }

    static TensorData randn(Shape sh, Rng& rng, double stddev = 1.0, double mean = 0.0) {
        TensorData t(std::move(sh));
        std::normal_distribution<double> dist(mean, stddev);
        for (auto& v : t.data) v = static_cast<S>(dist(rng));
        return t;
    }

    static TensorData uniform(Shape sh, Rng& rng, double lo, double hi) {
        TensorData t(std::move(sh));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& v : t.data) v = static_cast<S>(dist(rng));
        return t;
    }
};

template <typename To, typename From>
TensorData<To> cast_tensor(const TensorData<From>& src) {
    TensorData<To> out;
    out.shape = src.shape;
    out.data.resize(src.data.size());
    for (size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<To>(src.data[i]);
    return out;
}

}  // namespace stdf
