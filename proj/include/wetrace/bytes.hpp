#pragma once

// Byte-buffer helpers shared across the library: hex/base64 codecs and
// fixed-width little-endian integer packing.

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <sodium.h>

namespace wetrace {

using Bytes = std::vector<uint8_t>;

inline void ensure_sodium_init() {
    static const int rc = sodium_init();
    if (rc < 0) {
        throw std::runtime_error("libsodium initialization failed");
    }
}

inline std::string to_hex(std::span<const uint8_t> data) {
    std::string out(data.size() * 2 + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), data.data(), data.size());
    out.resize(data.size() * 2);
    return out;
}

inline Bytes from_hex(std::string_view hex) {
    Bytes out(hex.size() / 2 + 1);
    size_t bin_len = 0;
    if (sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(),
                       nullptr, &bin_len, nullptr) != 0) {
        throw std::invalid_argument("invalid hex string");
    }
    out.resize(bin_len);
    return out;
}

template <size_t N>
std::array<uint8_t, N> array_from_hex(std::string_view hex) {
    Bytes raw = from_hex(hex);
    if (raw.size() != N) {
        throw std::invalid_argument("hex string has wrong length");
    }
    std::array<uint8_t, N> out{};
    std::memcpy(out.data(), raw.data(), N);
    return out;
}

inline std::string to_base64(std::span<const uint8_t> data) {
    const size_t max_len =
        sodium_base64_encoded_len(data.size(), sodium_base64_VARIANT_ORIGINAL);
    std::string out(max_len, '\0');
    sodium_bin2base64(out.data(), out.size(), data.data(), data.size(),
                      sodium_base64_VARIANT_ORIGINAL);
    out.resize(std::strlen(out.c_str()));
    return out;
}

inline std::optional<Bytes> from_base64(std::string_view text) {
    Bytes out(text.size() + 1);
    size_t bin_len = 0;
    if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(),
                          nullptr, &bin_len, nullptr,
                          sodium_base64_VARIANT_ORIGINAL) != 0) {
        return std::nullopt;
    }
    out.resize(bin_len);
    return out;
}

inline void put_u16_le(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32_le(Bytes& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

inline void put_u64_le(Bytes& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

inline void put_i32_le(Bytes& out, int32_t v) {
    put_u32_le(out, static_cast<uint32_t>(v));
}

inline uint16_t get_u16_le(std::span<const uint8_t> in) {
    return static_cast<uint16_t>(in[0]) | static_cast<uint16_t>(in[1]) << 8;
}

inline uint32_t get_u32_le(std::span<const uint8_t> in) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<uint32_t>(in[i]) << (8 * i);
    }
    return v;
}

inline uint64_t get_u64_le(std::span<const uint8_t> in) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<uint64_t>(in[i]) << (8 * i);
    }
    return v;
}

inline int32_t get_i32_le(std::span<const uint8_t> in) {
    return static_cast<int32_t>(get_u32_le(in));
}

// True if `needle` occurs as a contiguous byte substring of `haystack`.
inline bool contains_bytes(std::span<const uint8_t> haystack,
                           std::span<const uint8_t> needle) {
    if (needle.empty() || needle.size() > haystack.size()) {
        return false;
    }
    const auto* begin = haystack.data();
    const auto* end = haystack.data() + haystack.size() - needle.size() + 1;
    for (const auto* p = begin; p != end; ++p) {
        if (std::memcmp(p, needle.data(), needle.size()) == 0) {
            return true;
        }
    }
    return false;
}

}  // namespace wetrace
