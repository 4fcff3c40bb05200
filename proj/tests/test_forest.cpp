#include <doctest.h>

#include <random>

#include "bpi/bmf_forest.hpp"
#include "bpi/errors.hpp"
#include "bpi/sim.hpp"
#include "oracle.hpp"

using namespace bpi;

namespace {

TransactionRecord record_with_from(std::string from) {
    TransactionRecord rec;
    rec.from = std::move(from);
    rec.to = "0xrecv";
    rec.calling_function = "transfer";
    rec.value = 100;
    return rec;
}

ForestConfig tiny_config() {
    ForestConfig cfg;
    cfg.branching = 2;
    cfg.create_batch_threshold = 3;
    return cfg;
}

}  // namespace

TEST_CASE("walkthrough forest: branching 2, five records, three features") {
    // Records 0..4 keyed by sender; feature b matches only the fourth entry.
    const std::vector<TransactionRecord> records = {
        record_with_from("a"), record_with_from("x"), record_with_from("a"),
        record_with_from("b"), record_with_from("c")};

    FeatureRegistry registry;
    BmfForest forest(tiny_config(), registry, /*auto_create_keywords=*/false);
    const std::vector<FeatureDraft> drafts = {
        FeatureDraft::keyword_on(Dim::From, "a"),
        FeatureDraft::keyword_on(Dim::From, "b"),
        FeatureDraft::keyword_on(Dim::From, "c")};

    SUBCASE("created over an empty ledger, lists stay empty") {
        const auto ids = forest.create_features(drafts, {});
        CHECK(forest.search({{ids[1]}}).empty());
        CHECK(forest.stored_mask_bytes() == 0);
    }

    SUBCASE("created over the full ledger") {
        BmfForest full(tiny_config(), registry, false);
        for (const auto& rec : records) {
            // Features do not exist yet; rows carry no matches.
            full.insert_row({});
        }
        const auto ids = full.create_features(drafts, records);
        const FeatureId b = ids[1];

        // Level patterns for feature b: only the second leaf group holds a
        // match, in its second slot.
        CHECK(full.word_at(b, BmfForest::kLeaf, 0) == 0x00000000u);
        CHECK(full.word_at(b, BmfForest::kLeaf, 1) == 0x40000000u);
        CHECK(full.word_at(b, BmfForest::kLeaf, 2) == 0x00000000u);
        CHECK(full.word_at(b, BmfForest::kMiddle, 0) == 0x40000000u);
        CHECK(full.word_at(b, BmfForest::kMiddle, 1) == 0x00000000u);
        CHECK(full.word_at(b, BmfForest::kRoot, 0) == 0x80000000u);

        // Top-down search lands on the fourth data entry.
        CHECK(full.search({{b}}) == std::vector<std::uint64_t>{3});
        CHECK(full.search({{ids[0]}}) == std::vector<std::uint64_t>{0, 2});
        CHECK(full.search({{ids[2]}}) == std::vector<std::uint64_t>{4});
    }

    SUBCASE("insert-driven forest matches the batch-created one") {
        FeatureRegistry reg2;
        BmfForest batch(tiny_config(), reg2, false);
        BmfForest grown(tiny_config(), reg2, false);
        std::vector<FeatureId> ids;
        for (const auto& d : drafts) ids.push_back(reg2.add(d));
        for (const auto& rec : records) {
            std::vector<FeatureId> matched;
            for (const FeatureId id : ids)
                if (reg2.spec(id).matches(rec)) matched.push_back(id);
            grown.insert_row(matched);
        }
        // Batch creation over the same ledger must produce the same masks.
        FeatureRegistry reg3;
        BmfForest built(tiny_config(), reg3, false);
        for (std::size_t i = 0; i < records.size(); ++i) built.insert_row({});
        const auto ids3 = built.create_features(drafts, records);
        for (std::size_t fi = 0; fi < ids.size(); ++fi) {
            for (int level = 0; level < 3; ++level) {
                for (std::uint64_t idx = 0; idx < 8; ++idx) {
                    CHECK(grown.word_at(ids[fi], static_cast<BmfForest::Level>(level), idx) ==
                          built.word_at(ids3[fi], static_cast<BmfForest::Level>(level), idx));
                }
            }
        }
    }
}

TEST_CASE("create_features enforces the batch threshold") {
    FeatureRegistry registry;
    ForestConfig cfg;  // default threshold 8
    BmfForest forest(cfg, registry, false);
    const std::vector<FeatureDraft> two = {FeatureDraft::keyword_on(Dim::From, "a"),
                                           FeatureDraft::keyword_on(Dim::From, "b")};
    CHECK_THROWS_AS((void)forest.create_features(two, {}), std::invalid_argument);
}

TEST_CASE("create_features rejects a mismatched ledger snapshot") {
    FeatureRegistry registry;
    BmfForest forest(tiny_config(), registry, false);
    forest.insert_row({});
    const std::vector<TransactionRecord> wrong;  // forest has 1 record
    CHECK_THROWS_AS((void)forest.create_feature(FeatureDraft::keyword_on(Dim::From, "a"),
                                                wrong),
                    std::invalid_argument);
}

TEST_CASE("duplicate feature registration fails") {
    FeatureRegistry registry;
    BmfForest forest(tiny_config(), registry, false);
    (void)forest.create_feature(FeatureDraft::keyword_on(Dim::From, "a"), {});
    CHECK_THROWS_AS((void)forest.create_feature(FeatureDraft::keyword_on(Dim::From, "a"), {}),
                    RegistrationError);
}

TEST_CASE("first matching insert sets the slot-0 bit at every level") {
    FeatureRegistry registry;
    ForestConfig cfg;  // defaults: branching 32
    BmfForest forest(cfg, registry, false);
    const FeatureId f = registry.add(FeatureDraft::keyword_on(Dim::From, "x"));
    forest.insert_row({{f}});
    CHECK(forest.word_at(f, BmfForest::kLeaf, 0) == 0x80000000u);
    CHECK(forest.word_at(f, BmfForest::kMiddle, 0) == 0x80000000u);
    CHECK(forest.word_at(f, BmfForest::kRoot, 0) == 0x80000000u);
    CHECK(forest.record_count() == 1);

    // A non-matching insert changes no masks.
    forest.insert_row({});
    CHECK(forest.word_at(f, BmfForest::kLeaf, 0) == 0x80000000u);
    CHECK(forest.last_insert_stats().mutated_words == 0);
    CHECK(forest.record_count() == 2);
}

TEST_CASE("leaf masks match a per-record scan for 100 random records") {
    std::mt19937_64 rng(99);
    FeatureRegistry registry;
    BmfForest forest(ForestConfig{}, registry, false);
    std::vector<TransactionRecord> records;
    for (int i = 0; i < 100; ++i) {
        records.push_back(record_with_from("0x" + std::to_string(rng() % 7)));
        forest.insert_row({});
    }
    const FeatureId f =
        forest.create_feature(FeatureDraft::keyword_on(Dim::From, "0x3"), records);
    for (std::uint64_t j = 0; j < records.size(); ++j) {
        const bool expect = records[static_cast<std::size_t>(j)].from == "0x3";
        const std::uint32_t word = forest.word_at(f, BmfForest::kLeaf, j / 32);
        CHECK(((word >> (31 - (j % 32))) & 1) == (expect ? 1u : 0u));
    }
}

TEST_CASE("tree boundary starts a new tree and freezes the old one") {
    FeatureRegistry registry;
    ForestConfig cfg = tiny_config();  // capacity 8
    BmfForest forest(cfg, registry, false);
    const FeatureId f = registry.add(FeatureDraft::keyword_on(Dim::From, "k"));
    for (int i = 0; i < 8; ++i) forest.insert_row({{f}});
    CHECK(forest.tree_count() == 1);
    const auto frozen = forest.serialize_tree(0);
    forest.insert_row({{f}});
    CHECK(forest.tree_count() == 2);
    for (int i = 0; i < 5; ++i) forest.insert_row({{f}});
    CHECK(forest.serialize_tree(0) == frozen);
}

TEST_CASE("parent bits summarize children") {
    std::mt19937_64 rng(5);
    FeatureRegistry registry;
    ForestConfig cfg;
    cfg.branching = 4;  // capacity 64
    cfg.create_batch_threshold = 1;
    BmfForest forest(cfg, registry, false);
    const FeatureId f = registry.add(FeatureDraft::keyword_on(Dim::From, "hit"));
    for (int i = 0; i < 300; ++i)
        forest.insert_row(rng() % 5 == 0 ? std::vector<FeatureId>{f}
                                         : std::vector<FeatureId>{});

    for (std::uint64_t mid = 0; mid * 4 < 300 / 4 + 1; ++mid) {
        const std::uint32_t word = forest.word_at(f, BmfForest::kMiddle, mid);
        for (int slot = 0; slot < 4; ++slot) {
            const bool bit = (word >> (31 - slot)) & 1;
            const bool child = forest.word_at(f, BmfForest::kLeaf, mid * 4 + slot) != 0;
            CHECK(bit == child);
        }
    }
    for (std::uint64_t tree = 0; tree < forest.tree_count(); ++tree) {
        const std::uint32_t word = forest.word_at(f, BmfForest::kRoot, tree);
        for (int slot = 0; slot < 4; ++slot) {
            const bool bit = (word >> (31 - slot)) & 1;
            const bool child = forest.word_at(f, BmfForest::kMiddle, tree * 4 + slot) != 0;
            CHECK(bit == child);
        }
    }
}

TEST_CASE("search equals linear scan on 10k generated records incl. conjunctions") {
    const auto records = sim::generate_dataset(10000, sim::DatasetShape::table_like(10000), 31);
    FeatureRegistry registry;
    BmfForest forest(ForestConfig{}, registry, /*auto_create_keywords=*/true);
    for (const auto& rec : records) forest.insert_record(rec);

    std::mt19937_64 rng(12);
    REQUIRE(registry.size() > 20);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<FeatureId> features;
        const int n = 1 + static_cast<int>(rng() % 3);
        while (features.size() < static_cast<std::size_t>(n)) {
            const FeatureId f = static_cast<FeatureId>(rng() % registry.size());
            if (std::find(features.begin(), features.end(), f) == features.end())
                features.push_back(f);
        }
        // Conjunctions within one dimension are usually empty; mix dims too.
        CHECK(forest.search(features) ==
              testing::linear_scan(records, registry, features));
    }
}

TEST_CASE("insert touches at most h masks per matched feature") {
    FeatureRegistry registry;
    BmfForest forest(ForestConfig{}, registry, false);
    const FeatureId f = registry.add(FeatureDraft::keyword_on(Dim::From, "only"));
    std::mt19937_64 rng(4);
    for (int i = 0; i < 3000; ++i) {
        const bool hit = rng() % 7 == 0;
        forest.insert_row(hit ? std::vector<FeatureId>{f} : std::vector<FeatureId>{});
        const auto& st = forest.last_insert_stats();
        CHECK(st.mutated_words <= 3);   // one registered feature
        CHECK(st.appended_words <= 3);  // the Fig-5b expansion bound
    }
}

TEST_CASE("search error paths") {
    FeatureRegistry registry;
    BmfForest forest(ForestConfig{}, registry, false);
    CHECK_THROWS_AS((void)forest.search({}), std::invalid_argument);
    CHECK_THROWS_AS((void)forest.search({{42}}), LookupError);
}
