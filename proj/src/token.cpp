#include "bpi/token.hpp"

#include <charconv>

#include "bpi/errors.hpp"

namespace bpi {

std::uint64_t encode_token(const Token& token) {
    if (token.feature_set_id >= (std::uint32_t{1} << kFeatureSetIdBits))
        throw std::invalid_argument("encode_token: feature set id overflows 24 bits");
    if (token.cursor >= (std::uint64_t{1} << kCursorBits))
        throw std::invalid_argument("encode_token: cursor overflows 40 bits");
    return (std::uint64_t{token.feature_set_id} << kCursorBits) | token.cursor;
}

Token decode_token(std::uint64_t word) {
    Token token;
    token.feature_set_id = static_cast<std::uint32_t>(word >> kCursorBits);
    token.cursor = word & ((std::uint64_t{1} << kCursorBits) - 1);
    return token;
}

std::string token_to_hex(const Token& token) {
    static constexpr char kHex[] = "0123456789abcdef";
    const std::uint64_t word = encode_token(token);
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i)
        out[i] = kHex[(word >> (60 - 4 * i)) & 0xF];
    return out;
}

Token token_from_hex(std::string_view hex) {
    if (hex.size() != 16)
        throw TokenError("token must be 16 hex characters");
    std::uint64_t word = 0;
    for (const char c : hex) {
        word <<= 4;
        if (c >= '0' && c <= '9') word |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') word |= static_cast<std::uint64_t>(c - 'a' + 10);
        else throw TokenError("token must be lowercase hex");
    }
    return decode_token(word);
}

std::uint32_t feature_set_id(std::span<const FeatureId> sorted_ids) {
    if (sorted_ids.empty())
        throw std::invalid_argument("feature_set_id: empty feature list");
    for (std::size_t i = 1; i < sorted_ids.size(); ++i)
        if (sorted_ids[i] <= sorted_ids[i - 1])
            throw std::invalid_argument("feature_set_id: ids must be sorted and unique");

    constexpr std::uint32_t kIdMask = (std::uint32_t{1} << kFeatureSetIdBits) - 1;
    if (sorted_ids.size() == 1 && sorted_ids[0] <= kIdMask) return sorted_ids[0];

    // FNV-1a over the little-endian id words, truncated to 24 bits.
    std::uint64_t h = 1469598103934665603ull;
    for (const FeatureId id : sorted_ids) {
        for (int shift = 0; shift < 32; shift += 8) {
            h ^= (id >> shift) & 0xFF;
            h *= 1099511628211ull;
        }
    }
    return static_cast<std::uint32_t>(h) & kIdMask;
}

void TokenVersionTable::record(const Token& token) {
    auto& list = by_set_[token.feature_set_id];
    if (!list.empty() && token.cursor < list.back().cursor)
        throw std::invalid_argument("TVT: cursor moved backwards for feature set " +
                                    std::to_string(token.feature_set_id));
    list.push_back(token);
}

std::optional<Token> TokenVersionTable::latest(std::uint32_t feature_set_id) const {
    const auto it = by_set_.find(feature_set_id);
    if (it == by_set_.end() || it->second.empty()) return std::nullopt;
    return it->second.back();
}

std::vector<Token> TokenVersionTable::history(std::uint32_t feature_set_id) const {
    const auto it = by_set_.find(feature_set_id);
    if (it == by_set_.end()) return {};
    return it->second;
}

std::size_t TokenVersionTable::size() const {
    std::size_t n = 0;
    for (const auto& [id, list] : by_set_) n += list.size();
    return n;
}

}  // namespace bpi
