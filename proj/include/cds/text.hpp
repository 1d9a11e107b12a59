#pragma once

#include <charconv>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cds/types.hpp"

namespace cds {

// Shortest decimal form that parses back to the same double. Used everywhere a
// real lands in a text file, so rewrites are byte-stable.
inline std::string format_double(scalar_t value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

inline scalar_t parse_double(std::string_view text) {
    scalar_t value{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw std::invalid_argument("bad real number: '" + std::string(text) + "'");
    return value;
}

inline long long parse_int(std::string_view text) {
    long long value{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw std::invalid_argument("bad integer: '" + std::string(text) + "'");
    return value;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim = ' ') {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        const std::size_t next = line.find(delim, pos);
        if (next == std::string_view::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

}  // namespace cds
