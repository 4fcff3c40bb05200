#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpi/feature.hpp"

namespace bpi {

// Resumable-query cursor: 24 bits of feature-set id in [63:40], 40 bits of
// global data index (the first unscanned index) in [39:0].
struct Token {
    std::uint32_t feature_set_id = 0;
    std::uint64_t cursor = 0;

    bool operator==(const Token&) const = default;
};

inline constexpr std::uint32_t kFeatureSetIdBits = 24;
inline constexpr std::uint32_t kCursorBits = 40;

// Throws std::invalid_argument when a field overflows its width.
std::uint64_t encode_token(const Token& token);
Token decode_token(std::uint64_t word);

// Wire form: 16 lowercase hex characters, big-endian field order.
std::string token_to_hex(const Token& token);
Token token_from_hex(std::string_view hex);

// Canonical 24-bit id of a feature conjunction. Singleton sets pass the
// feature id through when it fits; larger sets hash the sorted id list.
// Requires a non-empty, sorted, duplicate-free list.
std::uint32_t feature_set_id(std::span<const FeatureId> sorted_ids);

// Client-side version table of all received tokens, ordered by feature-set
// id; within one id, cursors are non-decreasing in receipt order.
class TokenVersionTable {
public:
    void record(const Token& token);
    std::optional<Token> latest(std::uint32_t feature_set_id) const;
    std::vector<Token> history(std::uint32_t feature_set_id) const;
    std::size_t size() const;

private:
    std::map<std::uint32_t, std::vector<Token>> by_set_;
};

}  // namespace bpi
