#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cpret/error.hpp"

// Explicit little-endian encoding so file images do not depend on the host.
namespace cpret::detail {

template <typename UInt>
void write_le(std::ostream& out, UInt v) {
    char bytes[sizeof(UInt)];
    for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, sizeof bytes);
}

inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }

template <typename UInt>
UInt read_le(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(UInt)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof bytes)) throw FormatError(std::string("truncated ") + what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
    return v;
}

inline float read_f32(std::istream& in, const char* what) {
    return std::bit_cast<float>(read_le<std::uint32_t>(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
    char got[4];
    if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0)
        throw FormatError(std::string("bad magic: expected \"") + magic + "\"");
}

}  // namespace cpret::detail
