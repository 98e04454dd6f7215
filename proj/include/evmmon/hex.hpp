#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "core_model.hpp"

namespace evmmon {

/// Decodes an EVM JSON-RPC quantity ("0x"-prefixed hex, at most 64 bits).
inline std::uint64_t parse_quantity(std::string_view s) {
    auto fail = [&](const char* why) {
        throw error(error_code::malformed_quantity, "'" + std::string(s) + "': " + why);
    };
    if (s.size() < 2 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) fail("missing 0x prefix");
    auto digits = s.substr(2);
    if (digits.empty()) fail("no digits");
    std::uint64_t v = 0;
    for (char c : digits) {
        unsigned d;
        if (c >= '0' && c <= '9')
            d = static_cast<unsigned>(c - '0');
        else if (c >= 'a' && c <= 'f')
            d = static_cast<unsigned>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F')
            d = static_cast<unsigned>(c - 'A' + 10);
        else
            fail("non-hex character");
        if (v >> 60) fail("exceeds 64 bits");
        v = (v << 4) | d;
    }
    return v;
}

/// Canonical quantity encoding: lowercase, no leading zeros, "0x0" for zero.
inline std::string to_quantity(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    if (v == 0) return "0x0";
    char buf[16];
    int n = 0;
    while (v) {
        buf[n++] = digits[v & 0xf];
        v >>= 4;
    }
    std::string out = "0x";
    while (n) out.push_back(buf[--n]);
    return out;
}

}  // namespace evmmon
