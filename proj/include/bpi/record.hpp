#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace bpi {

// The 14 dimensions of a ledger transaction record.
enum class Dim : std::uint8_t {
    From = 0,
    To,
    ToCreate,
    FromIsContract,
    ToIsContract,
    Value,
    GasLimit,
    GasPrice,
    GasUsed,
    CallingFunction,
    IsError,
    Eip2718Type,
    MaxFeePerGas,
    MaxPriorityFeePerGas,
};

inline constexpr int kDimCount = 14;

std::string_view dim_name(Dim d);
bool dim_is_text(Dim d);
bool dim_is_boolean(Dim d);
// Parses a dimension name; throws SchemaError on unknown names.
Dim dim_from_name(std::string_view name);

struct TransactionRecord {
    std::string from;
    std::string to;
    std::int64_t to_create = 0;
    std::int64_t from_is_contract = 0;
    std::int64_t to_is_contract = 0;
    std::int64_t value = 0;
    std::int64_t gas_limit = 0;
    std::int64_t gas_price = 0;
    std::int64_t gas_used = 0;
    std::string calling_function;
    std::int64_t is_error = 0;
    std::int64_t eip2718_type = 0;
    std::int64_t max_fee_per_gas = 0;
    std::int64_t max_priority_fee_per_gas = 0;

    // Throws SchemaError when boolean-like dimensions leave {0,1} or a
    // value/gas field is negative.
    void validate() const;
};

std::int64_t int_field(const TransactionRecord& rec, Dim d);
const std::string& text_field(const TransactionRecord& rec, Dim d);

// Value of dimension `d` rendered as keyword text. Integer dimensions use
// plain decimal. `buf` backs the integer rendering; the returned view may
// point into it.
std::string_view dim_keyword(const TransactionRecord& rec, Dim d, char buf[24]);

// Canonical serialization used for digests: Table-order fields, UTF-8 text,
// decimal integers, 0x1F unit separators between fields.
std::string canonical_bytes(const TransactionRecord& rec);

struct Sha256Digest {
    std::array<std::uint8_t, 32> bytes{};

    auto operator<=>(const Sha256Digest&) const = default;
    std::string hex() const;
};

Sha256Digest sha256(const void* data, std::size_t len);
inline Sha256Digest sha256(std::string_view s) { return sha256(s.data(), s.size()); }

// SHA-256 of the canonical serialization; stable across processes.
Sha256Digest digest(const TransactionRecord& rec);

// Line formats accepted by ingestion. Both throw SchemaError with a
// descriptive message on malformed input.
TransactionRecord record_from_json_line(std::string_view line);
TransactionRecord record_from_csv_line(std::string_view line);
std::string record_to_json_line(const TransactionRecord& rec);
std::string csv_header();

}  // namespace bpi
