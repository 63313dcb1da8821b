#pragma once

#include "errors.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace coemb::binary {

// Explicit little-endian encoding, independent of host byte order.

inline void write_u32(std::ostream& os, std::uint32_t x) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xFFu);
    os.write(b.data(), b.size());
}

inline void write_u64(std::ostream& os, std::uint64_t x) {
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xFFu);
    os.write(b.data(), b.size());
}

inline void write_f32(std::ostream& os, float x) { write_u32(os, std::bit_cast<std::uint32_t>(x)); }
inline void write_f64(std::ostream& os, double x) { write_u64(os, std::bit_cast<std::uint64_t>(x)); }

inline void write_magic(std::ostream& os, std::string_view magic) {
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, std::string_view what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw DataError("truncated file while reading " + std::string(what));
}

inline std::uint32_t read_u32(std::istream& is, std::string_view what) {
    std::array<unsigned char, 4> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), b.size(), what);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return x;
}

inline std::uint64_t read_u64(std::istream& is, std::string_view what) {
    std::array<unsigned char, 8> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), b.size(), what);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return x;
}

inline float read_f32(std::istream& is, std::string_view what) {
    return std::bit_cast<float>(read_u32(is, what));
}
inline double read_f64(std::istream& is, std::string_view what) {
    return std::bit_cast<double>(read_u64(is, what));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (static_cast<std::size_t>(is.gcount()) != magic.size() || got != magic)
        throw DataError("bad magic (expected " + std::string(magic) + ")");
}

inline bool at_eof(std::istream& is) {
    return is.peek() == std::char_traits<char>::eof();
}

} // namespace coemb::binary
