#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>

namespace bpi {

// Shape parameters of the mask forest. The reference configuration is
// branching 32 (one slot per bit of an unsigned int) and height 3; smaller
// power-of-two branchings exist for walkthrough-scale tests.
struct ForestConfig {
    std::uint32_t branching = 32;
    std::uint32_t height = 3;
    std::uint32_t create_batch_threshold = 8;

    void validate() const {
        if (branching < 2 || branching > 32 || !std::has_single_bit(branching))
            throw std::invalid_argument("branching must be a power of two in [2, 32]");
        if (height != 3)
            throw std::invalid_argument("only height-3 forests (root/middle/leaf) are supported");
    }

    int log2_branching() const { return std::countr_zero(branching); }

    // Data capacities per node: a leaf holds `branching` records, a middle
    // node `branching^2`, a whole tree `branching^height`.
    std::uint64_t leaf_capacity() const { return branching; }
    std::uint64_t middle_capacity() const {
        return std::uint64_t{branching} * branching;
    }
    std::uint64_t tree_capacity() const {
        return std::uint64_t{branching} * branching * branching;
    }

    // Mask-list coordinates of global record index i.
    std::uint64_t leaf_mask_index(std::uint64_t i) const { return i >> log2_branching(); }
    std::uint64_t middle_mask_index(std::uint64_t i) const {
        return i >> (2 * log2_branching());
    }
    std::uint64_t tree_index(std::uint64_t i) const { return i >> (3 * log2_branching()); }

    int leaf_slot(std::uint64_t i) const {
        return static_cast<int>(i & (branching - 1));
    }
    int middle_slot(std::uint64_t i) const {
        return static_cast<int>((i >> log2_branching()) & (branching - 1));
    }
    int root_slot(std::uint64_t i) const {
        return static_cast<int>((i >> (2 * log2_branching())) & (branching - 1));
    }

    std::uint64_t record_index(std::uint64_t tree, int root_slot, int middle_slot,
                               int leaf_slot) const {
        const int b = log2_branching();
        return (((tree << b) + static_cast<std::uint64_t>(root_slot)) << (2 * b)) +
               (static_cast<std::uint64_t>(middle_slot) << b) +
               static_cast<std::uint64_t>(leaf_slot);
    }
};

}  // namespace bpi
