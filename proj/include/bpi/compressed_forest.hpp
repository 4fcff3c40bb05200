#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bpi/feature.hpp"
#include "bpi/forest_config.hpp"
#include "bpi/record.hpp"

namespace bpi {

// First nonzero middle/leaf mask of one tree, as indices into the owning
// feature's compressed mask lists.
struct FitEntry {
    std::uint32_t middle_start = 0;
    std::uint32_t leaf_start = 0;

    bool operator==(const FitEntry&) const = default;
};

// The compressed forest: all zero masks elided. Completed trees live in
// per-feature compressed mask lists addressed through the Empty-tree Binary
// Filter (which trees contain the feature) and the FirstNode Index Table
// (where each tree's masks start). The growing tree is kept uncompressed in
// a sparse tail and compressed when it completes.
class CompressedForest {
public:
    struct TailEntry {
        std::uint32_t index = 0;  // tree-local mask index
        std::uint32_t word = 0;
    };

    struct TailView {
        bool present = false;
        std::uint32_t root_word = 0;
        std::span<const TailEntry> middles;
        std::span<const TailEntry> leaves;
    };

    // One feature's contribution to a completed tree, in compressed-list
    // coordinates. Consumed by the persistence layer.
    struct TreeSegment {
        FeatureId feature = 0;
        std::uint32_t root_index = 0;
        std::uint32_t middle_start = 0;
        std::uint32_t middle_count = 0;
        std::uint32_t leaf_start = 0;
        std::uint32_t leaf_count = 0;
    };

    struct QueryCounters {
        std::uint64_t root_reads = 0;
        std::uint64_t middle_reads = 0;
        std::uint64_t leaf_reads = 0;
        std::uint64_t total() const { return root_reads + middle_reads + leaf_reads; }
    };

    struct SizeReport {
        std::uint64_t root_bytes = 0;
        std::uint64_t middle_bytes = 0;
        std::uint64_t leaf_bytes = 0;
        std::uint64_t tail_bytes = 0;
        std::uint64_t keyword_mask_bytes = 0;    // dimension-valued features
        std::uint64_t condition_mask_bytes = 0;  // customized condition features
        std::uint64_t total_mask_bytes() const {
            return root_bytes + middle_bytes + leaf_bytes + tail_bytes;
        }
    };

    CompressedForest(ForestConfig config, FeatureRegistry& registry,
                     bool auto_create_keywords = true);

    // Returns true when this insert filled the current tree; the caller must
    // then call compress_completed_tree() before the next insert.
    bool insert_record(const TransactionRecord& rec);
    bool insert_row(std::span<const FeatureId> matched);

    // Moves the completed tree out of the tail into the compressed lists,
    // updating EBF and FIT. Throws StateError unless `tree` is exactly the
    // pending completed tree.
    void compress_completed_tree(std::uint64_t tree);
    std::optional<std::uint64_t> pending_tree() const { return pending_; }

    // Registers a feature and back-fills it from the ledger (completed trees
    // straight into compressed form, the growing tree into the tail).
    FeatureId create_feature(const FeatureDraft& draft,
                             std::span<const TransactionRecord> records);

    // All matching global indices >= min_index, ascending. Trees that lack
    // any queried feature are skipped via the EBF; per-tree masks are
    // located through FIT entries and in-mask ranks.
    std::vector<std::uint64_t> query(std::span<const FeatureId> feature_ids,
                                     std::uint64_t min_index = 0) const;

    std::uint64_t record_count() const { return record_count_; }
    std::uint64_t completed_trees() const { return completed_trees_; }
    // Completed plus growing; also the logical bit-length of every EBF.
    std::uint64_t tree_count() const;
    const ForestConfig& config() const { return config_; }
    const FeatureRegistry& registry() const { return registry_; }

    bool ebf_test(FeatureId f, std::uint64_t tree) const;
    std::uint64_t ebf_rank_before(FeatureId f, std::uint64_t tree) const;
    std::span<const std::uint64_t> ebf_words(FeatureId f) const;
    std::span<const FitEntry> fit(FeatureId f) const;
    std::span<const std::uint32_t> root_masks(FeatureId f) const;
    std::span<const std::uint32_t> middle_masks(FeatureId f) const;
    std::span<const std::uint32_t> leaf_masks(FeatureId f) const;
    TailView tail_view(FeatureId f) const;
    std::span<const FeatureId> tail_features() const { return touched_; }

    // Features whose mask state changed since the last collect, ascending.
    // The persistence layer stages exactly these.
    std::vector<FeatureId> collect_dirty();
    // Puts a collected set back (a failed flush must not lose it).
    void requeue_dirty(std::span<const FeatureId> features);

    std::vector<TreeSegment> tree_segments(std::uint64_t tree) const;

    SizeReport measured_size() const;
    // Stored mask bits of one completed tree, optionally restricted to
    // dimension-valued (keyword) features.
    std::uint64_t completed_tree_bits(std::uint64_t tree, bool keyword_only) const;

    const QueryCounters& counters() const { return counters_; }
    void reset_counters() const { counters_ = QueryCounters{}; }

    // Restores one feature's compressed state plus tail; used by recovery.
    void restore_feature(FeatureId f, std::vector<std::uint32_t> roots,
                         std::vector<std::uint32_t> middles,
                         std::vector<std::uint32_t> leaves,
                         std::vector<std::uint64_t> ebf_words,
                         std::vector<FitEntry> fit,
                         std::uint32_t tail_root,
                         std::vector<TailEntry> tail_middles,
                         std::vector<TailEntry> tail_leaves);
    void restore_counts(std::uint64_t record_count, std::uint64_t completed_trees);

private:
    struct CompressedFeature {
        std::vector<std::uint32_t> roots, middles, leaves;
        std::vector<std::uint64_t> ebf;  // trailing zero words implicit
        std::vector<FitEntry> fit;
    };
    struct TailFeature {
        std::uint64_t epoch = ~std::uint64_t{0};
        std::uint32_t root_word = 0;
        std::vector<TailEntry> middles, leaves;
    };

    CompressedFeature& ensure_feature(FeatureId f);
    TailFeature& touch_tail(FeatureId f, std::uint64_t tree);
    void set_ebf_bit(CompressedFeature& cf, std::uint64_t tree);
    void mark_dirty(FeatureId f);
    static void upsert(std::vector<TailEntry>& list, std::uint32_t index, int slot);

    ForestConfig config_;
    FeatureRegistry& registry_;
    bool auto_create_;
    std::uint64_t record_count_ = 0;
    std::uint64_t completed_trees_ = 0;
    std::optional<std::uint64_t> pending_;
    std::vector<CompressedFeature> features_;
    std::vector<TailFeature> tails_;
    std::vector<FeatureId> touched_;
    std::vector<FeatureId> match_buf_;
    std::vector<std::uint32_t> dirty_epoch_;
    std::vector<FeatureId> dirty_;
    std::uint32_t flush_epoch_ = 1;
    mutable QueryCounters counters_;
};

}  // namespace bpi
