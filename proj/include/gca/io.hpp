#pragma once
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gca/errors.hpp"
#include "gca/mat.hpp"

namespace gca {

// Binary tensor blob: 4-byte magic "GCFT", u16 version, u16 reserved,
// then u64 rows, u64 cols, then row-major little-endian payload.
// Version 1 carries float32 (the feature-store payload), version 2 float64
// (checkpoint weights, which must round-trip exactly).
inline constexpr char kGcftMagic[4] = {'G', 'C', 'F', 'T'};
inline constexpr std::uint16_t kGcftVersionF32 = 1;
inline constexpr std::uint16_t kGcftVersionF64 = 2;

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is, const std::string& what) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw DataError("truncated stream while reading " + what);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

} // namespace detail

struct GcftHeader {
    std::uint16_t version = 0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
};

inline void write_gcft_header(std::ostream& os, std::uint16_t version, std::int64_t rows, std::int64_t cols) {
    os.write(kGcftMagic, 4);
    detail::put_le<std::uint16_t>(os, version);
    detail::put_le<std::uint16_t>(os, 0); // reserved
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(rows));
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(cols));
}

inline GcftHeader read_gcft_header(std::istream& is, const std::string& what) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kGcftMagic, 4) != 0)
        throw DataError("bad magic in " + what + " (expected GCFT)");
    GcftHeader h;
    h.version = detail::get_le<std::uint16_t>(is, what);
    detail::get_le<std::uint16_t>(is, what); // reserved
    h.rows = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is, what));
    h.cols = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is, what));
    if (h.rows < 0 || h.cols < 0) throw DataError("negative shape in " + what);
    return h;
}

inline void write_gcft_f32(std::ostream& os, const MatF& m) {
    write_gcft_header(os, kGcftVersionF32, m.rows, m.cols);
    os.write(reinterpret_cast<const char*>(m.v.data()), static_cast<std::streamsize>(m.v.size() * sizeof(float)));
}

inline void write_gcft_f64(std::ostream& os, const MatD& m) {
    write_gcft_header(os, kGcftVersionF64, m.rows, m.cols);
    os.write(reinterpret_cast<const char*>(m.v.data()), static_cast<std::streamsize>(m.v.size() * sizeof(double)));
}

inline MatF read_gcft_f32(std::istream& is, const std::string& what) {
    GcftHeader h = read_gcft_header(is, what);
    if (h.version != kGcftVersionF32)
        throw DataError(what + ": expected float32 tensor (version 1), got version " + std::to_string(h.version));
    MatF m(h.rows, h.cols);
    is.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(m.v.size() * sizeof(float)));
    if (!is) throw DataError("truncated payload in " + what);
    return m;
}

inline MatD read_gcft_f64(std::istream& is, const std::string& what) {
    GcftHeader h = read_gcft_header(is, what);
    if (h.version != kGcftVersionF64)
        throw DataError(what + ": expected float64 tensor (version 2), got version " + std::to_string(h.version));
    MatD m(h.rows, h.cols);
    is.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(m.v.size() * sizeof(double)));
    if (!is) throw DataError("truncated payload in " + what);
    return m;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open file: " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open file for writing: " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("short write to " + path.string());
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_file(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return fnv1a64(bytes.data(), bytes.size());
}

} // namespace gca
