#include "bpi/verify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace bpi {

namespace {

uint128 width_mask(int k) {
    if (k == 128) return ~uint128{0};
    return (uint128{1} << k) - 1;
}

}  // namespace

std::string uint128_hex(uint128 v) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(32, '0');
    for (int i = 31; i >= 0; --i) {
        out[i] = kHex[static_cast<unsigned>(v & 0xF)];
        v >>= 4;
    }
    return out;
}

uint128 seed_constant_c() {
    uint128 c = 0;
    for (int k = 8; k <= 32; ++k) c |= uint128{1} << (4 * k - 1);
    return c;
}

uint128 make_seed(uint128 r_prime) { return r_prime | seed_constant_c(); }

uint128 improved_crc(std::span<const std::uint8_t> data, int k, uint128 r) {
    if (k < 8 || k > 128)
        throw std::invalid_argument("improved_crc: k must be within [8, 128]");
    const uint128 ones = width_mask(k);
    const uint128 polynomial = r & ones;
    uint128 crc = ones;
    for (const std::uint8_t byte : data) {
        crc ^= byte;
        for (int i = 0; i < 8; ++i) {
            if (crc & 1)
                crc = (crc >> 1) ^ polynomial;
            else
                crc >>= 1;
        }
    }
    return crc ^ ones;
}

uint128 improved_crc(const Sha256Digest& digest, int k, uint128 r) {
    return improved_crc(std::span<const std::uint8_t>(digest.bytes), k, r);
}

double beta_log_product(std::uint64_t n_h, int k) {
    const double space = std::ldexp(1.0, k);  // 2^k
    double log_sum = 0.0;
    for (std::uint64_t i = 2; i <= n_h; ++i)
        log_sum += std::log1p(-static_cast<double>(i - 1) / space);
    return log_sum;
}

std::optional<int> select_k(std::uint64_t n_h, double alpha, double beta) {
    // Bounds arbitrarily close to 1 round to exactly 1.0 in double; such a
    // demand is unsatisfiable at every width and falls through to the
    // raw-hash sentinel, so the closed top of the interval is accepted.
    if (alpha <= 0.0 || alpha > 1.0 || beta <= 0.0 || beta > 1.0)
        throw std::invalid_argument("select_k: alpha and beta must lie in (0, 1]");
    const double log_beta = std::log(beta);
    for (int k = kMinMappedK; k <= kMaxMappedK; k += kMappedKStep) {
        const double detect = 1.0 - static_cast<double>(n_h) / std::ldexp(1.0, k);
        if (!(detect > alpha)) continue;
        if (!(beta_log_product(n_h, k) > log_beta)) continue;
        return k;
    }
    return std::nullopt;
}

std::size_t VerificationObject::wire_size() const {
    if (mode == Mode::Mapped)
        return 2 + 4 + checksums.size() * static_cast<std::size_t>((k + 7) / 8);
    return 1 + 4 + raw.size() * 32;
}

VerificationObject build_vo(std::span<const Sha256Digest> digests, uint128 r,
                            double alpha, double beta, std::optional<int> forced_k) {
    VerificationObject vo;
    const std::optional<int> k =
        forced_k ? forced_k : select_k(digests.size(), alpha, beta);
    if (!k) {
        vo.mode = VerificationObject::Mode::RawHash;
        vo.raw.assign(digests.begin(), digests.end());
        return vo;
    }
    vo.mode = VerificationObject::Mode::Mapped;
    vo.k = *k;
    vo.checksums.reserve(digests.size());
    for (const Sha256Digest& d : digests) vo.checksums.push_back(improved_crc(d, *k, r));
    return vo;
}

std::vector<std::uint8_t> serialize_vo(const VerificationObject& vo) {
    std::vector<std::uint8_t> out;
    out.reserve(vo.wire_size());
    out.push_back(static_cast<std::uint8_t>(vo.mode));
    if (vo.mode == VerificationObject::Mode::Mapped) {
        out.push_back(static_cast<std::uint8_t>(vo.k));
        const std::uint32_t n = static_cast<std::uint32_t>(vo.checksums.size());
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
        const int bytes = (vo.k + 7) / 8;
        for (uint128 c : vo.checksums)
            for (int i = 0; i < bytes; ++i) {
                out.push_back(static_cast<std::uint8_t>(c & 0xFF));
                c >>= 8;
            }
    } else {
        const std::uint32_t n = static_cast<std::uint32_t>(vo.raw.size());
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
        for (const Sha256Digest& d : vo.raw)
            out.insert(out.end(), d.bytes.begin(), d.bytes.end());
    }
    return out;
}

VerificationObject parse_vo(std::span<const std::uint8_t> bytes) {
    const auto fail = [] { throw std::invalid_argument("parse_vo: truncated or malformed"); };
    std::size_t pos = 0;
    const auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n) fail();
    };
    VerificationObject vo;
    need(1);
    const std::uint8_t mode = bytes[pos++];
    if (mode > 1) fail();
    vo.mode = static_cast<VerificationObject::Mode>(mode);
    if (vo.mode == VerificationObject::Mode::Mapped) {
        need(1);
        vo.k = bytes[pos++];
        if (vo.k < 8 || vo.k > 128) fail();
    }
    need(4);
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= std::uint32_t{bytes[pos++]} << (8 * i);
    if (vo.mode == VerificationObject::Mode::Mapped) {
        const std::size_t entry = static_cast<std::size_t>((vo.k + 7) / 8);
        need(static_cast<std::size_t>(n) * entry);
        vo.checksums.reserve(n);
        for (std::uint32_t e = 0; e < n; ++e) {
            uint128 c = 0;
            for (std::size_t i = 0; i < entry; ++i)
                c |= uint128{bytes[pos + i]} << (8 * i);
            pos += entry;
            vo.checksums.push_back(c);
        }
    } else {
        need(static_cast<std::size_t>(n) * 32);
        vo.raw.resize(n);
        for (std::uint32_t e = 0; e < n; ++e) {
            std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), 32,
                        vo.raw[e].bytes.begin());
            pos += 32;
        }
    }
    if (pos != bytes.size()) fail();
    return vo;
}

std::string_view verdict_name(VerdictKind kind) {
    switch (kind) {
        case VerdictKind::Ok: return "OK";
        case VerdictKind::B1: return "B1";
        case VerdictKind::B2: return "B2";
        default: return "B3";
    }
}

namespace {

struct Uint128Less {
    bool operator()(uint128 a, uint128 b) const { return a < b; }
};

template <typename Key, typename Less>
Verdict match_multiset(std::span<const TransactionRecord> results,
                       const std::vector<Key>& chain_keys,
                       const std::vector<Key>& user_keys, double gamma) {
    std::map<Key, std::uint32_t, Less> pool;
    for (const Key& c : chain_keys) ++pool[c];

    Verdict verdict;
    verdict.n_r = results.size();
    std::vector<std::size_t> matched;
    std::vector<std::size_t> unmatched_results;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto it = pool.find(user_keys[i]);
        if (it != pool.end() && it->second > 0) {
            --it->second;
            matched.push_back(i);
        } else {
            unmatched_results.push_back(i);
        }
    }
    verdict.n_acc = matched.size();

    if (verdict.n_r > 0 &&
        static_cast<double>(verdict.n_acc) / static_cast<double>(verdict.n_r) < gamma) {
        verdict.kind = VerdictKind::B3;
        // Nothing is trusted; every chain checksum stays available for later
        // local verification.
        verdict.rejected.resize(results.size());
        for (std::size_t i = 0; i < results.size(); ++i) verdict.rejected[i] = i;
        return verdict;
    }

    verdict.accepted = std::move(matched);
    verdict.rejected = std::move(unmatched_results);
    const bool leftovers = [&] {
        for (const auto& [key, count] : pool)
            if (count > 0) return true;
        return false;
    }();
    if (!verdict.rejected.empty())
        verdict.kind = VerdictKind::B1;  // fabrication beats omission
    else if (leftovers)
        verdict.kind = VerdictKind::B2;
    else
        verdict.kind = VerdictKind::Ok;
    return verdict;
}

}  // namespace

Verdict verify_results(std::span<const TransactionRecord> results,
                       const VerificationObject& vo_chain, uint128 r, double gamma) {
    if (vo_chain.mode == VerificationObject::Mode::Mapped) {
        std::vector<uint128> user;
        user.reserve(results.size());
        for (const TransactionRecord& rec : results)
            user.push_back(improved_crc(digest(rec), vo_chain.k, r));
        Verdict v = match_multiset<uint128, Uint128Less>(results, vo_chain.checksums,
                                                         user, gamma);
        // Leftover chain checksums, in original VO order.
        std::map<uint128, std::uint32_t, Uint128Less> consumed;
        if (v.kind != VerdictKind::B3)
            for (const std::size_t i : v.accepted) ++consumed[user[i]];
        for (const uint128 c : vo_chain.checksums) {
            const auto it = consumed.find(c);
            if (it != consumed.end() && it->second > 0)
                --it->second;
            else
                v.unmatched_checksums.push_back(c);
        }
        return v;
    }

    std::vector<Sha256Digest> user;
    user.reserve(results.size());
    for (const TransactionRecord& rec : results) user.push_back(digest(rec));
    Verdict v = match_multiset<Sha256Digest, std::less<Sha256Digest>>(
        results, vo_chain.raw, user, gamma);
    std::map<Sha256Digest, std::uint32_t, std::less<Sha256Digest>> consumed;
    if (v.kind != VerdictKind::B3)
        for (const std::size_t i : v.accepted) ++consumed[user[i]];
    for (const Sha256Digest& d : vo_chain.raw) {
        const auto it = consumed.find(d);
        if (it != consumed.end() && it->second > 0)
            --it->second;
        else
            v.unmatched_raw.push_back(d);
    }
    return v;
}

std::vector<std::size_t> local_reverify(std::span<const TransactionRecord> new_results,
                                        std::vector<uint128>& remaining, int k,
                                        uint128 r) {
    std::vector<std::size_t> accepted;
    for (std::size_t i = 0; i < new_results.size(); ++i) {
        const uint128 c = improved_crc(digest(new_results[i]), k, r);
        const auto it = std::find(remaining.begin(), remaining.end(), c);
        if (it != remaining.end()) {
            remaining.erase(it);
            accepted.push_back(i);
        }
    }
    return accepted;
}

std::vector<std::size_t> local_reverify(std::span<const TransactionRecord> new_results,
                                        std::vector<Sha256Digest>& remaining) {
    std::vector<std::size_t> accepted;
    for (std::size_t i = 0; i < new_results.size(); ++i) {
        const Sha256Digest d = digest(new_results[i]);
        const auto it = std::find(remaining.begin(), remaining.end(), d);
        if (it != remaining.end()) {
            remaining.erase(it);
            accepted.push_back(i);
        }
    }
    return accepted;
}

}  // namespace bpi
