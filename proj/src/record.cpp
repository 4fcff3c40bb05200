#include "bpi/record.hpp"

#include <charconv>
#include <cstring>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include "bpi/errors.hpp"

namespace bpi {

namespace {

constexpr std::string_view kDimNames[kDimCount] = {
    "from",       "to",          "toCreate",        "fromIsContract",
    "toIsContract", "value",     "gasLimit",        "gasPrice",
    "gasUsed",    "callingFunction", "isError",     "eip2718type",
    "maxFeePerGas", "maxPriorityFeePerGas",
};

constexpr char kUnitSep = '\x1f';

}  // namespace

std::string_view dim_name(Dim d) { return kDimNames[static_cast<int>(d)]; }

bool dim_is_text(Dim d) {
    return d == Dim::From || d == Dim::To || d == Dim::CallingFunction;
}

bool dim_is_boolean(Dim d) {
    switch (d) {
        case Dim::FromIsContract:
        case Dim::ToIsContract:
        case Dim::IsError:
            return true;
        default:
            return false;
    }
}

Dim dim_from_name(std::string_view name) {
    for (int i = 0; i < kDimCount; ++i)
        if (kDimNames[i] == name) return static_cast<Dim>(i);
    throw SchemaError("unknown dimension: " + std::string(name));
}

std::int64_t int_field(const TransactionRecord& rec, Dim d) {
    switch (d) {
        case Dim::ToCreate: return rec.to_create;
        case Dim::FromIsContract: return rec.from_is_contract;
        case Dim::ToIsContract: return rec.to_is_contract;
        case Dim::Value: return rec.value;
        case Dim::GasLimit: return rec.gas_limit;
        case Dim::GasPrice: return rec.gas_price;
        case Dim::GasUsed: return rec.gas_used;
        case Dim::IsError: return rec.is_error;
        case Dim::Eip2718Type: return rec.eip2718_type;
        case Dim::MaxFeePerGas: return rec.max_fee_per_gas;
        case Dim::MaxPriorityFeePerGas: return rec.max_priority_fee_per_gas;
        default:
            throw std::invalid_argument("int_field: text dimension");
    }
}

const std::string& text_field(const TransactionRecord& rec, Dim d) {
    switch (d) {
        case Dim::From: return rec.from;
        case Dim::To: return rec.to;
        case Dim::CallingFunction: return rec.calling_function;
        default:
            throw std::invalid_argument("text_field: integer dimension");
    }
}

std::string_view dim_keyword(const TransactionRecord& rec, Dim d, char buf[24]) {
    if (dim_is_text(d)) return text_field(rec, d);
    const auto [end, ec] = std::to_chars(buf, buf + 24, int_field(rec, d));
    (void)ec;
    return std::string_view(buf, static_cast<std::size_t>(end - buf));
}

void TransactionRecord::validate() const {
    for (int i = 0; i < kDimCount; ++i) {
        const Dim d = static_cast<Dim>(i);
        if (dim_is_text(d)) continue;
        const std::int64_t v = int_field(*this, d);
        if (dim_is_boolean(d)) {
            if (v != 0 && v != 1)
                throw SchemaError(std::string(dim_name(d)) + " must be 0 or 1");
        } else if (v < 0) {
            throw SchemaError(std::string(dim_name(d)) + " must be non-negative");
        }
    }
}

std::string canonical_bytes(const TransactionRecord& rec) {
    std::string out;
    out.reserve(128);
    char buf[24];
    for (int i = 0; i < kDimCount; ++i) {
        if (i > 0) out.push_back(kUnitSep);
        out += dim_keyword(rec, static_cast<Dim>(i), buf);
    }
    return out;
}

std::string Sha256Digest::hex() const {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s(64, '0');
    for (int i = 0; i < 32; ++i) {
        s[2 * i] = kHex[bytes[i] >> 4];
        s[2 * i + 1] = kHex[bytes[i] & 0xF];
    }
    return s;
}

Sha256Digest sha256(const void* data, std::size_t len) {
    Sha256Digest out;
    unsigned int out_len = 0;
    if (EVP_Digest(data, len, out.bytes.data(), &out_len, EVP_sha256(), nullptr) != 1 ||
        out_len != out.bytes.size())
        throw std::runtime_error("sha256: EVP_Digest failed");
    return out;
}

Sha256Digest digest(const TransactionRecord& rec) {
    const std::string canon = canonical_bytes(rec);
    return sha256(canon.data(), canon.size());
}

namespace {

std::int64_t parse_int(std::string_view s, std::string_view field) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw SchemaError("field " + std::string(field) + ": bad integer '" +
                          std::string(s) + "'");
    return v;
}

void set_field(TransactionRecord& rec, Dim d, std::string_view text) {
    switch (d) {
        case Dim::From: rec.from = text; return;
        case Dim::To: rec.to = text; return;
        case Dim::CallingFunction: rec.calling_function = text; return;
        case Dim::ToCreate: rec.to_create = parse_int(text, dim_name(d)); return;
        case Dim::FromIsContract: rec.from_is_contract = parse_int(text, dim_name(d)); return;
        case Dim::ToIsContract: rec.to_is_contract = parse_int(text, dim_name(d)); return;
        case Dim::Value: rec.value = parse_int(text, dim_name(d)); return;
        case Dim::GasLimit: rec.gas_limit = parse_int(text, dim_name(d)); return;
        case Dim::GasPrice: rec.gas_price = parse_int(text, dim_name(d)); return;
        case Dim::GasUsed: rec.gas_used = parse_int(text, dim_name(d)); return;
        case Dim::IsError: rec.is_error = parse_int(text, dim_name(d)); return;
        case Dim::Eip2718Type: rec.eip2718_type = parse_int(text, dim_name(d)); return;
        case Dim::MaxFeePerGas: rec.max_fee_per_gas = parse_int(text, dim_name(d)); return;
        case Dim::MaxPriorityFeePerGas:
            rec.max_priority_fee_per_gas = parse_int(text, dim_name(d));
            return;
    }
}

}  // namespace

TransactionRecord record_from_json_line(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("bad json: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("record must be a json object");
    TransactionRecord rec;
    for (int i = 0; i < kDimCount; ++i) {
        const Dim d = static_cast<Dim>(i);
        const auto it = j.find(std::string(dim_name(d)));
        if (it == j.end())
            throw SchemaError("missing field " + std::string(dim_name(d)));
        if (dim_is_text(d)) {
            if (!it->is_string())
                throw SchemaError("field " + std::string(dim_name(d)) + " must be a string");
            set_field(rec, d, it->get_ref<const std::string&>());
        } else if (it->is_number_integer()) {
            set_field(rec, d, std::to_string(it->get<std::int64_t>()));
        } else if (it->is_string()) {
            set_field(rec, d, it->get_ref<const std::string&>());
        } else {
            throw SchemaError("field " + std::string(dim_name(d)) + " must be an integer");
        }
    }
    rec.validate();
    return rec;
}

TransactionRecord record_from_csv_line(std::string_view line) {
    TransactionRecord rec;
    int field = 0;
    std::size_t pos = 0;
    while (field < kDimCount) {
        const std::size_t comma = line.find(',', pos);
        const bool last = comma == std::string_view::npos;
        const std::string_view cell =
            last ? line.substr(pos) : line.substr(pos, comma - pos);
        set_field(rec, static_cast<Dim>(field), cell);
        ++field;
        if (last) break;
        pos = comma + 1;
    }
    if (field != kDimCount)
        throw SchemaError("csv line has " + std::to_string(field) + " fields, expected 14");
    rec.validate();
    return rec;
}

std::string record_to_json_line(const TransactionRecord& rec) {
    nlohmann::json j;
    char buf[24];
    for (int i = 0; i < kDimCount; ++i) {
        const Dim d = static_cast<Dim>(i);
        if (dim_is_text(d))
            j[std::string(dim_name(d))] = text_field(rec, d);
        else
            j[std::string(dim_name(d))] = int_field(rec, d);
    }
    (void)buf;
    return j.dump();
}

std::string csv_header() {
    std::string out;
    for (int i = 0; i < kDimCount; ++i) {
        if (i > 0) out.push_back(',');
        out += kDimNames[i];
    }
    return out;
}

}  // namespace bpi
