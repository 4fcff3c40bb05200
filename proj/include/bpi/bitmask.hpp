#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

// Word-level primitives shared by every index module.
//
// A mask is a 32-bit word covering 32 consecutive ledger slots. Slot 0 is
// the MOST significant bit: slot s lives at bit position (31 - s), so the
// temporal order of the underlying data equals MSB-to-LSB order of the word.

namespace bpi::mask {

inline constexpr int kSlotsPerMask = 32;

[[nodiscard]] constexpr std::uint32_t slot_bit(int slot) {
    return std::uint32_t{1} << (31 - slot);
}

// Position of the highest set bit (floor(log2(w))) via de Bruijn
// multiply-and-lookup. Precondition: w != 0.
[[nodiscard]] inline int floor_log2(std::uint32_t w) {
    static constexpr int kTable[32] = {
        0,  9,  1,  10, 13, 21, 2,  29, 11, 14, 16, 18, 22, 25, 3,  30,
        8,  12, 20, 28, 15, 17, 24, 7,  19, 27, 23, 6,  26, 5,  4,  31};
    w |= w >> 1;
    w |= w >> 2;
    w |= w >> 4;
    w |= w >> 8;
    w |= w >> 16;
    return kTable[(w * 0x07C4ACDDu) >> 27];
}

// Slot offset of the first match in the mask (the lowest slot = the MSB of
// the word). Precondition: w != 0.
[[nodiscard]] inline int lowest_set_slot(std::uint32_t w) {
    return 31 - floor_log2(w);
}

// Writes the slot offsets of all set bits into `out` (room for 32) in
// ascending slot order, i.e. temporal order. Returns the count.
inline int find_all_bits_on(std::uint32_t w, int* out) {
    int n = 0;
    while (w != 0) {
        const int bit = floor_log2(w);
        out[n++] = 31 - bit;
        w &= ~(std::uint32_t{1} << bit);
    }
    return n;
}

[[nodiscard]] inline std::vector<int> find_all_bits_on(std::uint32_t w) {
    int buf[kSlotsPerMask];
    const int n = find_all_bits_on(w, buf);
    return std::vector<int>(buf, buf + n);
}

// Number of set bits at slots strictly below `slot`.
[[nodiscard]] inline int rank_before(std::uint32_t w, int slot) {
    if (slot < 0 || slot >= kSlotsPerMask)
        throw std::out_of_range("mask::rank_before: slot out of range");
    if (slot == 0) return 0;
    return std::popcount(w >> (kSlotsPerMask - slot));
}

[[nodiscard]] inline std::uint32_t set_slot(std::uint32_t w, int slot) {
    if (slot < 0 || slot >= kSlotsPerMask)
        throw std::out_of_range("mask::set_slot: slot out of range");
    return w | slot_bit(slot);
}

[[nodiscard]] inline bool test_slot(std::uint32_t w, int slot) {
    if (slot < 0 || slot >= kSlotsPerMask)
        throw std::out_of_range("mask::test_slot: slot out of range");
    return (w & slot_bit(slot)) != 0;
}

// Bitwise AND of all masks; the composition step for conjunctive queries.
[[nodiscard]] inline std::uint32_t conjoin(std::span<const std::uint32_t> masks) {
    if (masks.empty())
        throw std::invalid_argument("mask::conjoin: empty mask list");
    std::uint32_t acc = masks[0];
    for (std::size_t i = 1; i < masks.size(); ++i) acc &= masks[i];
    return acc;
}

}  // namespace bpi::mask
