#pragma once

// STDF binary tensor file:
//   magic "STDF" | version u16 | dtype u8 (1=f32, 2=f64) | rank u8 |
//   extents u64[rank] | row-major little-endian payload
//
// STDB bundle: a named collection of STDF blobs plus text entries, used for
// parameter bundles, cached window sets, and run artifacts that need metadata.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "stdf/error.hpp"
#include "stdf/tensor.hpp"

namespace stdf {

inline constexpr uint16_t kStdfVersion = 1;
inline constexpr uint8_t kDtypeF32 = 1;
inline constexpr uint8_t kDtypeF64 = 2;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    // this codebase targets little-endian hosts only
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, size_t& pos, const char* field) {
    if (pos + sizeof(T) > in.size()) {
        throw IntegrityError(std::string("stdf: truncated while reading ") + field);
    }
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace detail

template <typename S>
uint8_t dtype_tag() {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
    return std::is_same_v<S, float> ? kDtypeF32 : kDtypeF64;
}

template <typename S>
std::string encode_stdf(const TensorData<S>& t) {
    std::string out;
    out.append("STDF", 4);
    detail::put_le<uint16_t>(out, kStdfVersion);
    detail::put_le<uint8_t>(out, dtype_tag<S>());
    detail::put_le<uint8_t>(out, static_cast<uint8_t>(t.rank()));
    for (int64_t e : t.shape) detail::put_le<uint64_t>(out, static_cast<uint64_t>(e));
    for (S v : t.data) detail::put_le<S>(out, v);
    return out;
}

// Decodes to double regardless of stored dtype; the stored tag is reported so
// callers that require an exact dtype can check it.
inline TensorData<double> decode_stdf(const std::string& blob, uint8_t* stored_dtype = nullptr) {
    size_t pos = 0;
    if (blob.size() < 4 || blob.compare(0, 4, "STDF") != 0) {
        throw IntegrityError("stdf: bad magic");
    }
    pos = 4;
    uint16_t version = detail::get_le<uint16_t>(blob, pos, "version");
    if (version != kStdfVersion) {
        throw IntegrityError("stdf: unsupported format version " + std::to_string(version));
    }
    uint8_t dtype = detail::get_le<uint8_t>(blob, pos, "dtype");
    if (dtype != kDtypeF32 && dtype != kDtypeF64) {
        throw IntegrityError("stdf: unknown dtype tag " + std::to_string(dtype));
    }
    uint8_t rank = detail::get_le<uint8_t>(blob, pos, "rank");
    Shape shape(rank);
    for (uint8_t i = 0; i < rank; ++i) {
        uint64_t e = detail::get_le<uint64_t>(blob, pos, "extents");
        if (e == 0) throw IntegrityError("stdf: zero extent");
        shape[i] = static_cast<int64_t>(e);
    }
    int64_t n = numel(shape);
    TensorData<double> t(shape);
    if (dtype == kDtypeF32) {
        for (int64_t i = 0; i < n; ++i) t[i] = detail::get_le<float>(blob, pos, "payload");
    } else {
        for (int64_t i = 0; i < n; ++i) t[i] = detail::get_le<double>(blob, pos, "payload");
    }
    if (pos != blob.size()) throw IntegrityError("stdf: trailing bytes after payload");
    if (stored_dtype) *stored_dtype = dtype;
    return t;
}

template <typename S>
TensorData<S> decode_stdf_as(const std::string& blob) {
    return cast_tensor<S>(decode_stdf(blob));
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

template <typename S>
void save_stdf(const std::filesystem::path& path, const TensorData<S>& t) {
    write_file(path, encode_stdf(t));
}

inline TensorData<double> load_stdf(const std::filesystem::path& path) {
    return decode_stdf(read_file(path));
}

// ---------------------------------------------------------------------------
// Bundle container
// ---------------------------------------------------------------------------

class Bundle {
public:
    static constexpr uint8_t kKindTensor = 1;
    static constexpr uint8_t kKindText = 2;

    struct Entry {
        std::string name;
        uint8_t kind;
        std::string payload;
    };

    template <typename S>
    void put_tensor(const std::string& name, const TensorData<S>& t) {
        entries_.push_back({name, kKindTensor, encode_stdf(t)});
    }

    void put_text(const std::string& name, const std::string& text) {
        entries_.push_back({name, kKindText, text});
    }

    bool has(const std::string& name) const { return find(name) != nullptr; }

    template <typename S>
    TensorData<S> tensor(const std::string& name) const {
        const Entry* e = find(name);
        if (!e || e->kind != kKindTensor) {
            throw IntegrityError("bundle: missing tensor entry '" + name + "'");
        }
        return decode_stdf_as<S>(e->payload);
    }

    std::string text(const std::string& name) const {
        const Entry* e = find(name);
        if (!e || e->kind != kKindText) {
            throw IntegrityError("bundle: missing text entry '" + name + "'");
        }
        return e->payload;
    }

    const std::vector<Entry>& entries() const { return entries_; }

    std::string encode() const {
        std::string out;
        out.append("STDB", 4);
        detail::put_le<uint16_t>(out, kStdfVersion);
        detail::put_le<uint32_t>(out, static_cast<uint32_t>(entries_.size()));
        for (const Entry& e : entries_) {
            detail::put_le<uint16_t>(out, static_cast<uint16_t>(e.name.size()));
            out.append(e.name);
            detail::put_le<uint8_t>(out, e.kind);
            detail::put_le<uint64_t>(out, e.payload.size());
            out.append(e.payload);
        }
        return out;
    }

    static Bundle decode(const std::string& blob) {
        Bundle b;
        if (blob.size() < 4 || blob.compare(0, 4, "STDB") != 0) {
            throw IntegrityError("bundle: bad magic");
        }
        size_t pos = 4;
        uint16_t version = detail::get_le<uint16_t>(blob, pos, "version");
        if (version != kStdfVersion) {
            throw IntegrityError("bundle: unsupported version " + std::to_string(version));
        }
        uint32_t count = detail::get_le<uint32_t>(blob, pos, "entry count");
        for (uint32_t i = 0; i < count; ++i) {
            uint16_t name_len = detail::get_le<uint16_t>(blob, pos, "entry name length");
            if (pos + name_len > blob.size()) throw IntegrityError("bundle: truncated entry name");
            std::string name = blob.substr(pos, name_len);
            pos += name_len;
            uint8_t kind = detail::get_le<uint8_t>(blob, pos, "entry kind");
            uint64_t size = detail::get_le<uint64_t>(blob, pos, "entry size");
            if (pos + size > blob.size()) {
                throw IntegrityError("bundle: truncated payload of entry '" + name + "'");
            }
            b.entries_.push_back({std::move(name), kind, blob.substr(pos, size)});
            pos += size;
        }
        return b;
    }

    void save(const std::filesystem::path& path) const { write_file(path, encode()); }

    static Bundle load(const std::filesystem::path& path) { return decode(read_file(path)); }

private:
    const Entry* find(const std::string& name) const {
        for (const Entry& e : entries_) {
            if (e.name == name) return &e;
        }
        return nullptr;
    }

    std::vector<Entry> entries_;
};

}  // namespace stdf
