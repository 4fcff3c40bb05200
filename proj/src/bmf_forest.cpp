#include "bpi/bmf_forest.hpp"

#include <cstring>

#include "bpi/bitmask.hpp"
#include "bpi/errors.hpp"

namespace bpi {

BmfForest::BmfForest(ForestConfig config, FeatureRegistry& registry,
                     bool auto_create_keywords)
    : config_(config), registry_(registry), auto_create_(auto_create_keywords) {
    config_.validate();
    sync_registry(0);
}

std::uint64_t BmfForest::tree_count() const {
    if (record_count_ == 0) return 0;
    return config_.tree_index(record_count_ - 1) + 1;
}

std::uint64_t BmfForest::mask_index(Level level, std::uint64_t i) const {
    switch (level) {
        case kRoot: return config_.tree_index(i);
        case kMiddle: return config_.middle_mask_index(i);
        default: return config_.leaf_mask_index(i);
    }
}

int BmfForest::slot_of(Level level, std::uint64_t i) const {
    switch (level) {
        case kRoot: return config_.root_slot(i);
        case kMiddle: return config_.middle_slot(i);
        default: return config_.leaf_slot(i);
    }
}

void BmfForest::sync_registry(std::uint64_t at_index) {
    while (features_.size() < registry_.size()) {
        FeatureMasks fm;
        for (int level = 0; level < 3; ++level)
            fm.levels[level].base = mask_index(static_cast<Level>(level), at_index);
        features_.push_back(std::move(fm));
    }
}

// Extends `list` so that mask `needed` exists; returns its position.
// Newly created features start at the group they first touch (all prior
// masks stay implicitly zero); established features advance one mask per
// boundary crossing.
std::size_t BmfForest::ensure_mask(LevelList& list, std::uint64_t needed) {
    if (list.words.empty()) {
        list.base = needed;
        list.words.push_back(0);
        ++last_insert_.appended_words;
    } else {
        while (list.base + list.words.size() <= needed) {
            list.words.push_back(0);
            ++last_insert_.appended_words;
        }
    }
    return static_cast<std::size_t>(needed - list.base);
}

void BmfForest::append_boundary_masks() {
    const std::uint64_t i = record_count_;
    for (auto& fm : features_)
        for (int level = 0; level < 3; ++level)
            ensure_mask(fm.levels[level], mask_index(static_cast<Level>(level), i));
}

void BmfForest::insert_record(const TransactionRecord& rec) {
    rec.validate();
    registry_.matching_ids(rec, auto_create_, match_buf_);
    insert_row(match_buf_);
}

void BmfForest::insert_row(std::span<const FeatureId> matched) {
    last_insert_ = InsertStats{};
    const std::uint64_t i = record_count_;
    sync_registry(i);
    // A fresh leaf group starts: give every feature its new mask (and new
    // middle/root masks when those boundaries cross too).
    if (config_.leaf_slot(i) == 0) append_boundary_masks();

    for (const FeatureId f : matched) {
        if (f >= features_.size())
            throw LookupError("insert_row: unregistered feature id " + std::to_string(f));
        FeatureMasks& fm = features_[f];
        for (int level = 0; level < 3; ++level) {
            LevelList& list = fm.levels[level];
            const std::size_t pos =
                ensure_mask(list, mask_index(static_cast<Level>(level), i));
            list.words[pos] =
                mask::set_slot(list.words[pos], slot_of(static_cast<Level>(level), i));
            ++last_insert_.mutated_words;
        }
    }
    ++record_count_;
}

std::uint32_t BmfForest::word_at(FeatureId f, Level level, std::uint64_t index) const {
    if (f >= features_.size()) return 0;
    const LevelList& list = features_[f].levels[level];
    if (index < list.base || index >= list.base + list.words.size()) return 0;
    return list.words[index - list.base];
}

std::vector<FeatureId> BmfForest::create_features(
    std::span<const FeatureDraft> drafts, std::span<const TransactionRecord> records) {
    if (drafts.size() < config_.create_batch_threshold)
        throw std::invalid_argument(
            "create_features: batch of " + std::to_string(drafts.size()) +
            " is below the creation threshold " +
            std::to_string(config_.create_batch_threshold));
    std::vector<FeatureId> ids;
    ids.reserve(drafts.size());
    for (const auto& draft : drafts) ids.push_back(create_feature(draft, records));
    return ids;
}

FeatureId BmfForest::create_feature(const FeatureDraft& draft,
                                    std::span<const TransactionRecord> records) {
    if (records.size() != record_count_)
        throw std::invalid_argument("create_feature: ledger snapshot has " +
                                    std::to_string(records.size()) + " records, forest has " +
                                    std::to_string(record_count_));
    sync_registry(record_count_);
    const FeatureId id = registry_.add(draft);
    const FeatureSpec& spec = registry_.spec(id);

    // Bottom-up construction: scan the ledger into leaf masks with a
    // decrementing bit counter, emit a trailing partial mask for leftovers,
    // then aggregate each level into the one above.
    FeatureMasks fm;
    const std::uint32_t branching = config_.branching;
    std::vector<std::uint32_t>& leaves = fm.levels[kLeaf].words;
    std::uint32_t buffer = 0;
    std::uint32_t filled = 0;
    for (std::size_t j = 0; j < records.size(); ++j) {
        if (spec.matches(records[j]))
            buffer = mask::set_slot(buffer, static_cast<int>(filled));
        if (++filled == branching) {
            leaves.push_back(buffer);
            buffer = 0;
            filled = 0;
        }
    }
    if (filled != 0) leaves.push_back(buffer);

    const auto aggregate = [branching](const std::vector<std::uint32_t>& lower) {
        std::vector<std::uint32_t> upper;
        upper.reserve(lower.size() / branching + 1);
        std::uint32_t buf = 0;
        std::uint32_t n = 0;
        for (const std::uint32_t w : lower) {
            if (w != 0) buf = mask::set_slot(buf, static_cast<int>(n));
            if (++n == branching) {
                upper.push_back(buf);
                buf = 0;
                n = 0;
            }
        }
        if (n != 0) upper.push_back(buf);
        return upper;
    };
    fm.levels[kMiddle].words = aggregate(fm.levels[kLeaf].words);
    fm.levels[kRoot].words = aggregate(fm.levels[kMiddle].words);

    if (features_.size() != id)
        throw StateError("create_feature: registry advanced unexpectedly");
    features_.push_back(std::move(fm));
    return id;
}

std::vector<std::uint64_t> BmfForest::search(
    std::span<const FeatureId> feature_ids) const {
    if (feature_ids.empty())
        throw std::invalid_argument("search: empty feature list");
    for (const FeatureId f : feature_ids)
        if (f >= registry_.size())
            throw LookupError("search: unregistered feature id " + std::to_string(f));

    std::vector<std::uint64_t> out;
    const std::uint64_t trees = tree_count();
    int root_slots[mask::kSlotsPerMask];
    int middle_slots[mask::kSlotsPerMask];
    int leaf_slots[mask::kSlotsPerMask];
    for (std::uint64_t t = 0; t < trees; ++t) {
        std::uint32_t root = 0xFFFFFFFFu;
        for (const FeatureId f : feature_ids) root &= word_at(f, kRoot, t);
        const int nr = mask::find_all_bits_on(root, root_slots);
        for (int a = 0; a < nr; ++a) {
            const int j = root_slots[a];
            const std::uint64_t mid_index = t * config_.branching + j;
            std::uint32_t mid = 0xFFFFFFFFu;
            for (const FeatureId f : feature_ids) mid &= word_at(f, kMiddle, mid_index);
            const int nm = mask::find_all_bits_on(mid, middle_slots);
            for (int b = 0; b < nm; ++b) {
                const int k = middle_slots[b];
                const std::uint64_t leaf_index = mid_index * config_.branching + k;
                std::uint32_t leaf = 0xFFFFFFFFu;
                for (const FeatureId f : feature_ids)
                    leaf &= word_at(f, kLeaf, leaf_index);
                const int nl = mask::find_all_bits_on(leaf, leaf_slots);
                for (int c = 0; c < nl; ++c)
                    out.push_back(config_.record_index(t, j, k, leaf_slots[c]));
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> BmfForest::serialize_tree(std::uint64_t tree) const {
    std::vector<std::uint8_t> bytes;
    const auto push_word = [&bytes](std::uint32_t w) {
        bytes.push_back(static_cast<std::uint8_t>(w));
        bytes.push_back(static_cast<std::uint8_t>(w >> 8));
        bytes.push_back(static_cast<std::uint8_t>(w >> 16));
        bytes.push_back(static_cast<std::uint8_t>(w >> 24));
    };
    const std::uint32_t b = config_.branching;
    for (FeatureId f = 0; f < features_.size(); ++f) {
        push_word(word_at(f, kRoot, tree));
        for (std::uint32_t j = 0; j < b; ++j)
            push_word(word_at(f, kMiddle, tree * b + j));
        for (std::uint32_t j = 0; j < b * b; ++j)
            push_word(word_at(f, kLeaf, tree * b * b + j));
    }
    return bytes;
}

std::uint64_t BmfForest::dense_bits(const ForestConfig& cfg, std::uint64_t records,
                                    std::uint64_t features) {
    if (records == 0) return 0;
    const auto ceil_div = [](std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; };
    const std::uint64_t words = ceil_div(records, cfg.leaf_capacity()) +
                                ceil_div(records, cfg.middle_capacity()) +
                                ceil_div(records, cfg.tree_capacity());
    return features * words * 32;
}

std::uint64_t BmfForest::stored_mask_bytes() const {
    std::uint64_t words = 0;
    for (const auto& fm : features_)
        for (int level = 0; level < 3; ++level) words += fm.levels[level].words.size();
    return words * 4;
}

}  // namespace bpi
