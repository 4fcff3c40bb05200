#include "bpi/compressed_forest.hpp"

#include <algorithm>
#include <bit>
#include <cassert>

#include "bpi/bitmask.hpp"
#include "bpi/errors.hpp"

namespace bpi {

CompressedForest::CompressedForest(ForestConfig config, FeatureRegistry& registry,
                                   bool auto_create_keywords)
    : config_(config), registry_(registry), auto_create_(auto_create_keywords) {
    config_.validate();
}

std::uint64_t CompressedForest::tree_count() const {
    if (record_count_ == 0) return 0;
    return config_.tree_index(record_count_ - 1) + 1;
}

CompressedForest::CompressedFeature& CompressedForest::ensure_feature(FeatureId f) {
    if (features_.size() <= f) features_.resize(f + 1);
    if (tails_.size() <= f) tails_.resize(f + 1);
    return features_[f];
}

void CompressedForest::mark_dirty(FeatureId f) {
    if (dirty_epoch_.size() <= f) dirty_epoch_.resize(f + 1, 0);
    if (dirty_epoch_[f] != flush_epoch_) {
        dirty_epoch_[f] = flush_epoch_;
        dirty_.push_back(f);
    }
}

std::vector<FeatureId> CompressedForest::collect_dirty() {
    std::vector<FeatureId> out = std::move(dirty_);
    dirty_.clear();
    ++flush_epoch_;
    std::sort(out.begin(), out.end());
    return out;
}

void CompressedForest::requeue_dirty(std::span<const FeatureId> features) {
    for (const FeatureId f : features) mark_dirty(f);
}

CompressedForest::TailFeature& CompressedForest::touch_tail(FeatureId f,
                                                            std::uint64_t tree) {
    ensure_feature(f);
    mark_dirty(f);
    TailFeature& tf = tails_[f];
    if (tf.epoch != tree) {
        tf.epoch = tree;
        tf.root_word = 0;
        tf.middles.clear();
        tf.leaves.clear();
        touched_.push_back(f);
    }
    return tf;
}

void CompressedForest::upsert(std::vector<TailEntry>& list, std::uint32_t index,
                              int slot) {
    // Records arrive in temporal order, so mask indices are non-decreasing:
    // either the last entry is the one addressed or a new one begins.
    if (list.empty() || list.back().index < index)
        list.push_back(TailEntry{index, mask::slot_bit(slot)});
    else
        list.back().word |= mask::slot_bit(slot);
}

bool CompressedForest::insert_record(const TransactionRecord& rec) {
    rec.validate();
    registry_.matching_ids(rec, auto_create_, match_buf_);
    return insert_row(match_buf_);
}

bool CompressedForest::insert_row(std::span<const FeatureId> matched) {
    if (pending_)
        throw StateError("insert: completed tree " + std::to_string(*pending_) +
                         " has not been compressed yet");
    const std::uint64_t i = record_count_;
    const std::uint64_t tree = config_.tree_index(i);
    const std::uint64_t local = i - tree * config_.tree_capacity();

    for (const FeatureId f : matched) {
        if (f >= registry_.size())
            throw LookupError("insert_row: unregistered feature id " + std::to_string(f));
        TailFeature& tf = touch_tail(f, tree);
        upsert(tf.leaves, static_cast<std::uint32_t>(config_.leaf_mask_index(local)),
               config_.leaf_slot(local));
        upsert(tf.middles, static_cast<std::uint32_t>(config_.middle_mask_index(local)),
               config_.middle_slot(local));
        tf.root_word = mask::set_slot(tf.root_word, config_.root_slot(local));
    }

    ++record_count_;
    if (local + 1 == config_.tree_capacity()) {
        pending_ = tree;
        return true;
    }
    return false;
}

void CompressedForest::set_ebf_bit(CompressedFeature& cf, std::uint64_t tree) {
    const std::size_t word = static_cast<std::size_t>(tree >> 6);
    if (cf.ebf.size() <= word) cf.ebf.resize(word + 1, 0);
    cf.ebf[word] |= std::uint64_t{1} << (tree & 63);
}

void CompressedForest::compress_completed_tree(std::uint64_t tree) {
    if (!pending_ || *pending_ != tree)
        throw StateError("compress_completed_tree: tree " + std::to_string(tree) +
                         " is not the pending completed tree");
    std::sort(touched_.begin(), touched_.end());
    for (const FeatureId f : touched_) {
        TailFeature& tf = tails_[f];
        if (tf.epoch != tree || tf.root_word == 0) continue;
        mark_dirty(f);  // the compressed/tail boundary moves for this feature
        CompressedFeature& cf = ensure_feature(f);
        set_ebf_bit(cf, tree);
        cf.fit.push_back(FitEntry{static_cast<std::uint32_t>(cf.middles.size()),
                                  static_cast<std::uint32_t>(cf.leaves.size())});
        cf.roots.push_back(tf.root_word);
        for (const TailEntry& e : tf.middles) cf.middles.push_back(e.word);
        for (const TailEntry& e : tf.leaves) cf.leaves.push_back(e.word);
        tf.epoch = ~std::uint64_t{0};
        tf.root_word = 0;
        tf.middles.clear();
        tf.leaves.clear();
    }
    touched_.clear();
    completed_trees_ = tree + 1;
    pending_.reset();
}

FeatureId CompressedForest::create_feature(const FeatureDraft& draft,
                                           std::span<const TransactionRecord> records) {
    if (records.size() != record_count_)
        throw std::invalid_argument("create_feature: ledger snapshot has " +
                                    std::to_string(records.size()) + " records, forest has " +
                                    std::to_string(record_count_));
    const FeatureId id = registry_.add(draft);
    const FeatureSpec& spec = registry_.spec(id);
    CompressedFeature& cf = ensure_feature(id);
    mark_dirty(id);
    const std::uint64_t cap = config_.tree_capacity();

    // Completed trees go straight into compressed form.
    std::vector<TailEntry> mids, leaves;
    for (std::uint64_t t = 0; t < completed_trees_; ++t) {
        std::uint32_t root = 0;
        mids.clear();
        leaves.clear();
        const std::uint64_t begin = t * cap;
        const std::uint64_t end = std::min<std::uint64_t>(begin + cap, records.size());
        for (std::uint64_t i = begin; i < end; ++i) {
            if (!spec.matches(records[i])) continue;
            const std::uint64_t local = i - begin;
            upsert(leaves, static_cast<std::uint32_t>(config_.leaf_mask_index(local)),
                   config_.leaf_slot(local));
            upsert(mids, static_cast<std::uint32_t>(config_.middle_mask_index(local)),
                   config_.middle_slot(local));
            root = mask::set_slot(root, config_.root_slot(local));
        }
        if (root == 0) continue;
        set_ebf_bit(cf, t);
        cf.fit.push_back(FitEntry{static_cast<std::uint32_t>(cf.middles.size()),
                                  static_cast<std::uint32_t>(cf.leaves.size())});
        cf.roots.push_back(root);
        for (const TailEntry& e : mids) cf.middles.push_back(e.word);
        for (const TailEntry& e : leaves) cf.leaves.push_back(e.word);
    }

    // The growing tree joins the tail, exactly as if the records were
    // inserted after registration.
    const std::uint64_t tail_begin = completed_trees_ * cap;
    for (std::uint64_t i = tail_begin; i < records.size(); ++i) {
        if (!spec.matches(records[i])) continue;
        TailFeature& tf = touch_tail(id, completed_trees_);
        const std::uint64_t local = i - tail_begin;
        upsert(tf.leaves, static_cast<std::uint32_t>(config_.leaf_mask_index(local)),
               config_.leaf_slot(local));
        upsert(tf.middles, static_cast<std::uint32_t>(config_.middle_mask_index(local)),
               config_.middle_slot(local));
        tf.root_word = mask::set_slot(tf.root_word, config_.root_slot(local));
    }
    return id;
}

bool CompressedForest::ebf_test(FeatureId f, std::uint64_t tree) const {
    if (f >= features_.size()) return false;
    const auto& ebf = features_[f].ebf;
    const std::size_t word = static_cast<std::size_t>(tree >> 6);
    if (word >= ebf.size()) return false;
    return (ebf[word] >> (tree & 63)) & 1;
}

std::uint64_t CompressedForest::ebf_rank_before(FeatureId f, std::uint64_t tree) const {
    if (f >= features_.size()) return 0;
    const auto& ebf = features_[f].ebf;
    std::uint64_t rank = 0;
    const std::size_t full = std::min<std::size_t>(ebf.size(), tree >> 6);
    for (std::size_t w = 0; w < full; ++w) rank += std::popcount(ebf[w]);
    const std::size_t word = static_cast<std::size_t>(tree >> 6);
    if (word < ebf.size() && (tree & 63) != 0)
        rank += std::popcount(ebf[word] & ((std::uint64_t{1} << (tree & 63)) - 1));
    return rank;
}

std::span<const std::uint64_t> CompressedForest::ebf_words(FeatureId f) const {
    if (f >= features_.size()) return {};
    return features_[f].ebf;
}

std::span<const FitEntry> CompressedForest::fit(FeatureId f) const {
    if (f >= features_.size()) return {};
    return features_[f].fit;
}
std::span<const std::uint32_t> CompressedForest::root_masks(FeatureId f) const {
    if (f >= features_.size()) return {};
    return features_[f].roots;
}
std::span<const std::uint32_t> CompressedForest::middle_masks(FeatureId f) const {
    if (f >= features_.size()) return {};
    return features_[f].middles;
}
std::span<const std::uint32_t> CompressedForest::leaf_masks(FeatureId f) const {
    if (f >= features_.size()) return {};
    return features_[f].leaves;
}

CompressedForest::TailView CompressedForest::tail_view(FeatureId f) const {
    TailView view;
    if (f >= tails_.size()) return view;
    const TailFeature& tf = tails_[f];
    const std::uint64_t growing = completed_trees_;
    if (tf.epoch != growing || tf.root_word == 0) return view;
    view.present = true;
    view.root_word = tf.root_word;
    view.middles = tf.middles;
    view.leaves = tf.leaves;
    return view;
}

namespace {

// Walks one feature's middle masks of one tree in root-slot order, reading
// each mask at most once, and accumulates the leaf-mask prefix counts that
// rank-based leaf addressing needs.
struct MiddleCursor {
    std::span<const std::uint32_t> middles;  // this feature's masks of this tree
    const int* slots = nullptr;              // set slots of the feature's root mask
    int slot_count = 0;
    int ptr = 0;
    std::uint32_t leaf_prefix = 0;
    std::uint32_t cached_word = 0;
    bool cached = false;

    std::uint32_t word_at_ptr(std::uint64_t& read_counter) {
        if (!cached) {
            cached_word = middles[static_cast<std::size_t>(ptr)];
            cached = true;
            ++read_counter;
        }
        return cached_word;
    }

    // Positions the cursor on root slot j (which must be set in the
    // feature's root mask) and returns {middle word, leaf masks before it}.
    std::pair<std::uint32_t, std::uint32_t> at(int j, std::uint64_t& read_counter) {
        while (slots[ptr] != j) {
            leaf_prefix += static_cast<std::uint32_t>(
                std::popcount(word_at_ptr(read_counter)));
            ++ptr;
            cached = false;
        }
        return {word_at_ptr(read_counter), leaf_prefix};
    }
};

const CompressedForest::TailEntry* find_tail(
    std::span<const CompressedForest::TailEntry> list, std::uint32_t index) {
    const auto it = std::lower_bound(
        list.begin(), list.end(), index,
        [](const CompressedForest::TailEntry& e, std::uint32_t v) { return e.index < v; });
    if (it == list.end() || it->index != index) return nullptr;
    return &*it;
}

}  // namespace

std::vector<std::uint64_t> CompressedForest::query(
    std::span<const FeatureId> feature_ids, std::uint64_t min_index) const {
    if (feature_ids.empty())
        throw std::invalid_argument("query: empty feature list");
    for (const FeatureId f : feature_ids)
        if (f >= registry_.size())
            throw LookupError("query: unregistered feature id " + std::to_string(f));

    std::vector<std::uint64_t> out;
    const std::size_t nf = feature_ids.size();
    const std::uint64_t cap = config_.tree_capacity();
    const std::uint64_t first_tree = min_index / cap;

    int root_slots[mask::kSlotsPerMask];
    int middle_slots[mask::kSlotsPerMask];
    int leaf_slots[mask::kSlotsPerMask];

    // Per-feature scratch, reused across trees.
    std::vector<std::uint32_t> root_words(nf);
    std::vector<FitEntry> fits(nf);
    std::vector<MiddleCursor> cursors(nf);
    std::vector<std::vector<int>> own_slots(nf, std::vector<int>(mask::kSlotsPerMask));
    std::vector<std::uint32_t> mid_words(nf);
    std::vector<std::uint32_t> leaf_bases(nf);

    for (std::uint64_t t = first_tree; t < completed_trees_; ++t) {
        bool all_present = true;
        for (const FeatureId f : feature_ids) {
            if (!ebf_test(f, t)) {
                all_present = false;
                break;
            }
        }
        if (!all_present) continue;

        // Within the cursor's own tree, subtrees that end before the cursor
        // are skipped positionally; resume work then scales with the suffix.
        const std::uint64_t local_cursor = min_index > t * cap ? min_index - t * cap : 0;
        const int cursor_root_slot = config_.root_slot(local_cursor);
        const int cursor_middle_slot = config_.middle_slot(local_cursor);

        std::uint32_t root = 0xFFFFFFFFu;
        for (std::size_t a = 0; a < nf; ++a) {
            const CompressedFeature& cf = features_[feature_ids[a]];
            const std::uint64_t rank = ebf_rank_before(feature_ids[a], t);
            root_words[a] = cf.roots[static_cast<std::size_t>(rank)];
            ++counters_.root_reads;
            fits[a] = cf.fit[static_cast<std::size_t>(rank)];
            root &= root_words[a];
        }
        if (root == 0) continue;

        for (std::size_t a = 0; a < nf; ++a) {
            const CompressedFeature& cf = features_[feature_ids[a]];
            MiddleCursor& cur = cursors[a];
            const int n = mask::find_all_bits_on(root_words[a], own_slots[a].data());
            const std::uint32_t mid_count = static_cast<std::uint32_t>(n);
            cur.middles = std::span<const std::uint32_t>(cf.middles)
                              .subspan(fits[a].middle_start, mid_count);
            cur.slots = own_slots[a].data();
            cur.slot_count = n;
            cur.ptr = 0;
            cur.leaf_prefix = 0;
            cur.cached = false;
        }

        const int nr = mask::find_all_bits_on(root, root_slots);
        for (int a = 0; a < nr; ++a) {
            const int j = root_slots[a];
            if (j < cursor_root_slot) continue;
            std::uint32_t mid = 0xFFFFFFFFu;
            for (std::size_t x = 0; x < nf; ++x) {
                const auto [word, base] = cursors[x].at(j, counters_.middle_reads);
                mid_words[x] = word;
                leaf_bases[x] = base;
                mid &= word;
            }
            if (mid == 0) continue;
            const int nm = mask::find_all_bits_on(mid, middle_slots);
            for (int b = 0; b < nm; ++b) {
                const int k = middle_slots[b];
                if (j == cursor_root_slot && k < cursor_middle_slot) continue;
                std::uint32_t leaf = 0xFFFFFFFFu;
                for (std::size_t x = 0; x < nf; ++x) {
                    const CompressedFeature& cf = features_[feature_ids[x]];
                    const std::uint32_t leaf_index =
                        fits[x].leaf_start + leaf_bases[x] +
                        static_cast<std::uint32_t>(mask::rank_before(mid_words[x], k));
                    leaf &= cf.leaves[leaf_index];
                    ++counters_.leaf_reads;
                }
                if (leaf == 0) continue;
                const int nl = mask::find_all_bits_on(leaf, leaf_slots);
                for (int c = 0; c < nl; ++c) {
                    const std::uint64_t idx = config_.record_index(t, j, k, leaf_slots[c]);
                    if (idx >= min_index) out.push_back(idx);
                }
            }
        }
    }

    // Growing tree, served from the uncompressed tail.
    const std::uint64_t growing = completed_trees_;
    if (record_count_ > growing * cap && growing >= first_tree) {
        std::vector<TailView> views(nf);
        bool all_present = true;
        std::uint32_t root = 0xFFFFFFFFu;
        for (std::size_t a = 0; a < nf; ++a) {
            views[a] = tail_view(feature_ids[a]);
            if (!views[a].present) {
                all_present = false;
                break;
            }
            root &= views[a].root_word;
            ++counters_.root_reads;
        }
        if (all_present && root != 0) {
            const std::uint64_t local_cursor =
                min_index > growing * cap ? min_index - growing * cap : 0;
            const int cursor_root_slot = config_.root_slot(local_cursor);
            const int cursor_middle_slot = config_.middle_slot(local_cursor);
            const int nr = mask::find_all_bits_on(root, root_slots);
            for (int a = 0; a < nr; ++a) {
                const int j = root_slots[a];
                if (j < cursor_root_slot) continue;
                std::uint32_t mid = 0xFFFFFFFFu;
                for (std::size_t x = 0; x < nf && mid != 0; ++x) {
                    const TailEntry* e =
                        find_tail(views[x].middles, static_cast<std::uint32_t>(j));
                    ++counters_.middle_reads;
                    mid &= e ? e->word : 0;
                }
                if (mid == 0) continue;
                const int nm = mask::find_all_bits_on(mid, middle_slots);
                for (int b = 0; b < nm; ++b) {
                    const int k = middle_slots[b];
                    if (j == cursor_root_slot && k < cursor_middle_slot) continue;
                    const std::uint32_t leaf_index =
                        static_cast<std::uint32_t>(j) * config_.branching +
                        static_cast<std::uint32_t>(k);
                    std::uint32_t leaf = 0xFFFFFFFFu;
                    for (std::size_t x = 0; x < nf && leaf != 0; ++x) {
                        const TailEntry* e = find_tail(views[x].leaves, leaf_index);
                        ++counters_.leaf_reads;
                        leaf &= e ? e->word : 0;
                    }
                    if (leaf == 0) continue;
                    const int nl = mask::find_all_bits_on(leaf, leaf_slots);
                    for (int c = 0; c < nl; ++c) {
                        const std::uint64_t idx =
                            config_.record_index(growing, j, k, leaf_slots[c]);
                        if (idx >= min_index) out.push_back(idx);
                    }
                }
            }
        }
    }
    return out;
}

std::vector<CompressedForest::TreeSegment> CompressedForest::tree_segments(
    std::uint64_t tree) const {
    if (tree >= completed_trees_)
        throw StateError("tree_segments: tree " + std::to_string(tree) +
                         " is not completed");
    std::vector<TreeSegment> out;
    for (FeatureId f = 0; f < features_.size(); ++f) {
        if (!ebf_test(f, tree)) continue;
        const CompressedFeature& cf = features_[f];
        const std::uint64_t rank = ebf_rank_before(f, tree);
        TreeSegment seg;
        seg.feature = f;
        seg.root_index = static_cast<std::uint32_t>(rank);
        const FitEntry& e = cf.fit[static_cast<std::size_t>(rank)];
        seg.middle_start = e.middle_start;
        seg.leaf_start = e.leaf_start;
        const bool last = rank + 1 == cf.fit.size();
        seg.middle_count =
            (last ? static_cast<std::uint32_t>(cf.middles.size())
                  : cf.fit[static_cast<std::size_t>(rank) + 1].middle_start) -
            e.middle_start;
        seg.leaf_count =
            (last ? static_cast<std::uint32_t>(cf.leaves.size())
                  : cf.fit[static_cast<std::size_t>(rank) + 1].leaf_start) -
            e.leaf_start;
        out.push_back(seg);
    }
    return out;
}

CompressedForest::SizeReport CompressedForest::measured_size() const {
    SizeReport report;
    for (FeatureId f = 0; f < features_.size(); ++f) {
        const CompressedFeature& cf = features_[f];
        const std::uint64_t root_b = cf.roots.size() * 4;
        const std::uint64_t mid_b = cf.middles.size() * 4;
        const std::uint64_t leaf_b = cf.leaves.size() * 4;
        report.root_bytes += root_b;
        report.middle_bytes += mid_b;
        report.leaf_bytes += leaf_b;
        std::uint64_t tail_b = 0;
        const TailView view = tail_view(f);
        if (view.present)
            tail_b = 4 * (1 + view.middles.size() + view.leaves.size());
        report.tail_bytes += tail_b;
        const std::uint64_t all = root_b + mid_b + leaf_b + tail_b;
        if (registry_.spec(f).kind == MatcherKind::Keyword)
            report.keyword_mask_bytes += all;
        else
            report.condition_mask_bytes += all;
    }
    return report;
}

std::uint64_t CompressedForest::completed_tree_bits(std::uint64_t tree,
                                                    bool keyword_only) const {
    std::uint64_t bits = 0;
    for (const TreeSegment& seg : tree_segments(tree)) {
        if (keyword_only && registry_.spec(seg.feature).kind != MatcherKind::Keyword)
            continue;
        bits += 32ull * (1 + seg.middle_count + seg.leaf_count);
    }
    return bits;
}

void CompressedForest::restore_feature(
    FeatureId f, std::vector<std::uint32_t> roots, std::vector<std::uint32_t> middles,
    std::vector<std::uint32_t> leaves, std::vector<std::uint64_t> ebf_words,
    std::vector<FitEntry> fit, std::uint32_t tail_root,
    std::vector<TailEntry> tail_middles, std::vector<TailEntry> tail_leaves) {
    CompressedFeature& cf = ensure_feature(f);
    cf.roots = std::move(roots);
    cf.middles = std::move(middles);
    cf.leaves = std::move(leaves);
    cf.ebf = std::move(ebf_words);
    cf.fit = std::move(fit);
    TailFeature& tf = tails_[f];
    if (tail_root != 0) {
        tf.epoch = completed_trees_;
        tf.root_word = tail_root;
        tf.middles = std::move(tail_middles);
        tf.leaves = std::move(tail_leaves);
        touched_.push_back(f);
    }
}

void CompressedForest::restore_counts(std::uint64_t record_count,
                                      std::uint64_t completed_trees) {
    record_count_ = record_count;
    completed_trees_ = completed_trees;
}

}  // namespace bpi
