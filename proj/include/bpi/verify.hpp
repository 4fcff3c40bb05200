#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpi/record.hpp"

namespace bpi {

using uint128 = unsigned __int128;

std::string uint128_hex(uint128 v);

// Admissible checksum widths: {4n + 28 : 1 <= n <= 25} = {32, 36, ..., 128}.
inline constexpr int kMinMappedK = 32;
inline constexpr int kMaxMappedK = 128;
inline constexpr int kMappedKStep = 4;

// 128-bit seed r = r' | c with c = sum_{k=8}^{32} 2^(4k-1), so that for
// every admissible width k the low-k polynomial has a nonzero leading
// coefficient.
uint128 seed_constant_c();
uint128 make_seed(uint128 r_prime);

// k-bit CRC whose polynomial is the low k bits of r: init all-ones,
// per byte XOR into the register then eight right-shift rounds with
// conditional polynomial XOR, final all-ones XOR. Accepts 8 <= k <= 128
// (widths below 32 exist for statistical testing).
uint128 improved_crc(std::span<const std::uint8_t> data, int k, uint128 r);
uint128 improved_crc(const Sha256Digest& digest, int k, uint128 r);

// Smallest admissible k satisfying both bounds, or nullopt when even 128
// bits cannot accommodate n_h (the raw-hash fallback):
//   fabrication detection:   1 - n_h/2^k > alpha
//   collision-free mapping:  prod_{i=2}^{n_h} (1 - (i-1)/2^k) > beta
std::optional<int> select_k(std::uint64_t n_h, double alpha, double beta);

// Log of the collision-free-mapping product, evaluated in log space.
double beta_log_product(std::uint64_t n_h, int k);

struct VerificationObject {
    enum class Mode : std::uint8_t { Mapped = 0, RawHash = 1 };

    Mode mode = Mode::Mapped;
    int k = kMinMappedK;             // mapped mode only
    std::vector<uint128> checksums;  // mapped mode
    std::vector<Sha256Digest> raw;   // raw-hash mode

    std::size_t entry_count() const {
        return mode == Mode::Mapped ? checksums.size() : raw.size();
    }
    std::size_t wire_size() const;
};

// Compresses chain-side correct-result digests into a VO. `forced_k`
// bypasses selection (statistical tests at reduced widths).
VerificationObject build_vo(std::span<const Sha256Digest> digests, uint128 r,
                            double alpha, double beta,
                            std::optional<int> forced_k = std::nullopt);

// Wire form: mode byte; mapped mode adds a k byte; then a 4-byte LE count
// and packed entries (ceil(k/8) bytes LE each, or 32-byte digests).
std::vector<std::uint8_t> serialize_vo(const VerificationObject& vo);
VerificationObject parse_vo(std::span<const std::uint8_t> bytes);

enum class VerdictKind : std::uint8_t { Ok = 0, B1 = 1, B2 = 2, B3 = 3 };
std::string_view verdict_name(VerdictKind kind);

struct Verdict {
    VerdictKind kind = VerdictKind::Ok;
    std::vector<std::size_t> accepted;  // indices into the result list
    std::vector<std::size_t> rejected;  // fabrication evidence (B1)
    // Withheld-result evidence (B2): chain checksums no result matched.
    std::vector<uint128> unmatched_checksums;
    std::vector<Sha256Digest> unmatched_raw;  // raw-hash mode counterpart
    std::size_t n_acc = 0;
    std::size_t n_r = 0;
};

// Multiset-matches the user-side checksums of `results` against the chain
// VO. Accepts matched results individually; when the accepted fraction
// drops below gamma the whole result set is rejected (B3).
Verdict verify_results(std::span<const TransactionRecord> results,
                       const VerificationObject& vo_chain, uint128 r, double gamma);

// Consumes remaining unmatched checksums against newly fetched results,
// with no further chain interaction. Returns indices of newly accepted
// results; `remaining` is updated in place.
std::vector<std::size_t> local_reverify(std::span<const TransactionRecord> new_results,
                                        std::vector<uint128>& remaining, int k,
                                        uint128 r);
std::vector<std::size_t> local_reverify(std::span<const TransactionRecord> new_results,
                                        std::vector<Sha256Digest>& remaining);

}  // namespace bpi
