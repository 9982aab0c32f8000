#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace patentscape::detail {

inline bool is_alnum(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

inline char to_lower_ascii(char c) {
    return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

inline std::string lowercase(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out.push_back(to_lower_ascii(c));
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// Lowercase word split. Tokens are maximal runs of alphanumeric characters;
// when keep_hyphen is set, '-' is treated as a word character as long as it
// joins two such runs (leading/trailing hyphens are stripped).
inline std::vector<std::string> split_words(std::string_view text, bool keep_hyphen = false) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char raw : text) {
        char c = to_lower_ascii(raw);
        if (is_alnum(c) || (keep_hyphen && c == '-')) {
            cur.push_back(c);
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    if (keep_hyphen) {
        for (auto& t : tokens) {
            std::size_t b = t.find_first_not_of('-');
            std::size_t e = t.find_last_not_of('-');
            t = (b == std::string::npos) ? std::string() : t.substr(b, e - b + 1);
        }
        std::erase_if(tokens, [](const std::string& t) { return t.empty(); });
    }
    return tokens;
}

inline std::vector<std::string> split_on(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

}  // namespace patentscape::detail
