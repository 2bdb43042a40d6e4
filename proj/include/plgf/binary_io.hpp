#pragma once

#include <Eigen/Core>

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

#include "plgf/errors.hpp"

/// Little-endian scalar I/O independent of host byte order.
namespace plgf::io {

template <typename U>
void write_le(std::ostream& out, U v) {
    std::array<char, sizeof(U)> b;
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b.data(), b.size());
}

template <typename U>
U read_le(std::istream& in) {
    std::array<unsigned char, sizeof(U)> b{};
    in.read(reinterpret_cast<char*>(b.data()), b.size());
    if (!in) throw LoadError("unexpected end of file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
inline void write_i32(std::ostream& out, std::int32_t v) { write_le(out, static_cast<std::uint32_t>(v)); }
inline void write_i64(std::ostream& out, std::int64_t v) { write_le(out, static_cast<std::uint64_t>(v)); }
inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
inline std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
inline std::int32_t read_i32(std::istream& in) { return static_cast<std::int32_t>(read_le<std::uint32_t>(in)); }
inline std::int64_t read_i64(std::istream& in) { return static_cast<std::int64_t>(read_le<std::uint64_t>(in)); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }

inline void write_f32_array(std::ostream& out, const float* data, Eigen::Index n) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    } else {
        for (Eigen::Index i = 0; i < n; ++i) write_f32(out, data[i]);
    }
}

inline void read_f32_array(std::istream& in, float* data, Eigen::Index n) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
        if (!in) throw LoadError("unexpected end of file");
    } else {
        for (Eigen::Index i = 0; i < n; ++i) data[i] = read_f32(in);
    }
}

}  // namespace plgf::io
