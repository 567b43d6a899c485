#pragma once

// Little-endian scalar encoding shared by the dataset and model file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "fstta/errors.hpp"

namespace fstta::io {

template <typename U>
void put_uint(std::ostream& out, U value) {
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    out.write(bytes, sizeof(U));
}

inline void put_f32(std::ostream& out, float v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_uint(out, std::bit_cast<std::uint64_t>(v)); }

inline void read_exact(std::istream& in, char* dst, std::size_t n, const std::string& what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw DataError(DataError::Kind::truncated, "truncated file while reading " + what);
    }
}

template <typename U>
U get_uint(std::istream& in, const std::string& what) {
    unsigned char bytes[sizeof(U)];
    read_exact(in, reinterpret_cast<char*>(bytes), sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

inline float get_f32(std::istream& in, const std::string& what) {
    return std::bit_cast<float>(get_uint<std::uint32_t>(in, what));
}
inline double get_f64(std::istream& in, const std::string& what) {
    return std::bit_cast<double>(get_uint<std::uint64_t>(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& file_kind) {
    char got[4];
    in.read(got, 4);
    if (in.gcount() != 4) throw DataError(DataError::Kind::truncated, file_kind + ": file shorter than its magic");
    if (std::memcmp(got, magic, 4) != 0) {
        throw DataError(DataError::Kind::bad_magic, file_kind + ": bad magic, expected " + std::string(magic, 4));
    }
}

}  // namespace fstta::io
