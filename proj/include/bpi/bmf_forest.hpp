#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bpi/feature.hpp"
#include "bpi/forest_config.hpp"
#include "bpi/record.hpp"

namespace bpi {

// The uncompressed mask forest: per feature and per level an append-only
// list of masks forming fixed-height 32-ary (in general B-ary) trees.
// Leaf-slot order equals record insertion order; every tree except the
// growing one is immutable.
//
// Mask lists are dense from the feature's creation point onward; masks
// before that point are implicitly zero (new keywords skip all prior data).
class BmfForest {
public:
    enum Level : int { kRoot = 0, kMiddle = 1, kLeaf = 2 };

    BmfForest(ForestConfig config, FeatureRegistry& registry,
              bool auto_create_keywords = true);

    // Batch feature creation over the full existing ledger (bottom-up mask
    // construction). `records` must be exactly the ledger this forest has
    // indexed so far. Returns the assigned feature ids.
    std::vector<FeatureId> create_features(std::span<const FeatureDraft> drafts,
                                           std::span<const TransactionRecord> records);

    // Registers one feature (no batch-size requirement) and back-fills its
    // masks from the ledger. Used for single custom conditions.
    FeatureId create_feature(const FeatureDraft& draft,
                             std::span<const TransactionRecord> records);

    void insert_record(const TransactionRecord& rec);
    // Insert by pre-computed matched feature ids (ascending, deduplicated).
    void insert_row(std::span<const FeatureId> matched);

    // All global indices whose record matches every listed feature, ascending.
    std::vector<std::uint64_t> search(std::span<const FeatureId> feature_ids) const;

    std::uint64_t record_count() const { return record_count_; }
    std::uint64_t tree_count() const;
    const ForestConfig& config() const { return config_; }

    // Mask at a global position; zero when outside the stored range.
    std::uint32_t word_at(FeatureId f, Level level, std::uint64_t index) const;

    // All mask words of one tree (every registered feature, ascending id,
    // root then middle then leaf) as little-endian bytes. Implicit zeros are
    // materialized, so equal byte strings mean equal tree content.
    std::vector<std::uint8_t> serialize_tree(std::uint64_t tree) const;

    // Size of the dense structure: every feature carries a full mask run
    // over all `records` entries at every level.
    static std::uint64_t dense_bits(const ForestConfig& cfg, std::uint64_t records,
                                    std::uint64_t features);

    // Physically stored mask bytes.
    std::uint64_t stored_mask_bytes() const;

    struct InsertStats {
        std::uint32_t appended_words = 0;
        std::uint32_t mutated_words = 0;
    };
    const InsertStats& last_insert_stats() const { return last_insert_; }

private:
    struct LevelList {
        std::uint64_t base = 0;
        std::vector<std::uint32_t> words;
    };
    struct FeatureMasks {
        LevelList levels[3];
    };

    void sync_registry(std::uint64_t at_index);
    std::size_t ensure_mask(LevelList& list, std::uint64_t needed);
    void append_boundary_masks();
    std::uint64_t mask_index(Level level, std::uint64_t record_index) const;
    int slot_of(Level level, std::uint64_t record_index) const;

    ForestConfig config_;
    FeatureRegistry& registry_;
    bool auto_create_;
    std::uint64_t record_count_ = 0;
    std::vector<FeatureMasks> features_;
    std::vector<FeatureId> match_buf_;
    InsertStats last_insert_;
};

}  // namespace bpi
