#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpi/compressed_forest.hpp"
#include "bpi/feature.hpp"
#include "bpi/forest_config.hpp"
#include "bpi/token.hpp"

namespace bpi {

// Security parameters established at system initialization.
struct SecurityParams {
    double alpha = 0.99999;  // fabrication-detection probability bound
    double beta = 0.99;      // collision-free-checksum probability bound
    double gamma = 0.5;      // minimum accepted fraction before total rejection
};

// One unit of a persistence event: contiguous mask words of one feature at
// one level. When first_mask_complete is false, payload[0] is the OR-merged
// value of the previously flushed partial mask and overwrites it in place;
// everything after is appended.
struct Page {
    int level = 0;  // 0 root, 1 middle, 2 leaf
    FeatureId feature = 0;
    std::vector<std::uint32_t> payload;
    bool first_mask_complete = true;
};

// Fault-injection hook for crash tests: called before each file write with
// (file name, byte offset, length); returns how many bytes may be written.
// Returning less than `len` makes the writer stop mid-write and throw.
using WriteHook =
    std::function<std::size_t(std::string_view file, std::uint64_t offset, std::size_t len)>;

struct StoreOptions {
    WriteHook write_hook;
};

struct EngineStats {
    std::uint64_t record_count = 0;
    std::uint64_t durable_record_count = 0;
    std::uint64_t completed_trees = 0;
    std::uint64_t tree_count = 0;
    std::uint64_t feature_count = 0;
    std::uint64_t ebf_bits = 0;  // logical EBF length per feature
    std::array<std::uint64_t, 3> level_file_bytes{};
    std::uint64_t manifest_bytes = 0;
    std::uint64_t commit_count = 0;
};

// The engine binds the feature registry and the compressed forest to an
// optional append-only store directory:
//
//   root.masks / middle.masks / leaf.masks   32-bit LE mask words
//   manifest                                 commit records (the source of
//                                            truth for what is durable)
//   config                                   key=value parameters
//
// Completed trees are persisted automatically; manual persists flush the
// growing tree, OR-merging the partial boundary masks already on disk.
class Engine {
public:
    explicit Engine(ForestConfig cfg = {}, SecurityParams params = {});
    static Engine create(const std::filesystem::path& dir, ForestConfig cfg = {},
                         SecurityParams params = {}, StoreOptions options = {});
    // Loads the last committed state; an empty directory yields a fresh
    // engine with the fallback configuration.
    static Engine open(const std::filesystem::path& dir, StoreOptions options = {},
                       ForestConfig fallback_cfg = {},
                       SecurityParams fallback_params = {});

    Engine(Engine&&) noexcept;
    Engine& operator=(Engine&&) noexcept;
    ~Engine();

    void insert(const TransactionRecord& rec);

    struct QueryResult {
        std::vector<std::uint64_t> indices;
        Token token;
    };
    // Conjunctive query, optionally resuming from a token. The token must
    // carry the feature set id of `feature_ids`; the returned token's cursor
    // is the current record count.
    QueryResult query(std::span<const FeatureId> feature_ids,
                      const std::optional<Token>& resume = std::nullopt) const;

    // Explicit keyword registration (fast path, no historical scan).
    FeatureId add_keyword_feature(Dim dim, std::string_view keyword,
                                  std::string name = "");
    // Condition over the value dimension; scans the supplied ledger to
    // back-fill historical masks.
    FeatureId add_condition_feature(std::string name, std::int64_t min_value,
                                    std::int64_t max_value,
                                    std::span<const TransactionRecord> ledger);

    // Flushes the growing tree's current masks (the tail masks on disk may
    // end partial). No-op when nothing changed since the last commit.
    void manual_persist();

    const FeatureRegistry& registry() const { return *registry_; }
    FeatureRegistry& registry() { return *registry_; }
    const CompressedForest& forest() const { return *forest_; }
    const ForestConfig& config() const { return cfg_; }
    const SecurityParams& params() const { return params_; }
    SecurityParams& params() { return params_; }
    std::uint64_t record_count() const { return forest_->record_count(); }
    bool persistent() const { return persistent_; }
    const std::filesystem::path& directory() const { return dir_; }

    EngineStats stats() const;

    // Location (byte offset into the level file) and committed value of the
    // last flushed mask of one feature and level, if any.
    struct DurableWordInfo {
        std::uint64_t byte_offset = 0;
        std::uint32_t value = 0;
        std::uint64_t durable_words = 0;
    };
    std::optional<DurableWordInfo> last_durable_word(FeatureId f, int level) const;

private:
    struct LevelFlushState {
        std::uint64_t durable_words = 0;
        std::uint64_t comp_durable = 0;  // committed compressed-list length
        std::uint64_t last_offset = 0;   // word offset of the final durable word
        std::uint32_t last_value = 0;
    };
    struct FeatureFlushState {
        LevelFlushState levels[3];
        std::uint32_t fit_durable = 0;
    };
    struct FdFile;

    void open_files(bool must_be_fresh);
    void write_config_file() const;
    void read_config_file();
    void flush_event();
    void load_manifest();

    // Current durable-order word sequence of (feature, level):
    // compressed-list words followed by tail words.
    std::uint32_t sequence_value(FeatureId f, int level, std::uint64_t pos) const;
    std::uint64_t sequence_total(FeatureId f, int level) const;

    ForestConfig cfg_;
    SecurityParams params_;
    std::unique_ptr<FeatureRegistry> registry_;
    std::unique_ptr<CompressedForest> forest_;

    bool persistent_ = false;
    std::filesystem::path dir_;
    StoreOptions options_;
    std::unique_ptr<FdFile> level_files_[3];
    std::unique_ptr<FdFile> manifest_file_;
    std::unique_ptr<FdFile> lock_file_;
    std::array<std::uint64_t, 3> committed_words_{};
    std::uint64_t manifest_len_ = 0;
    std::uint64_t commit_count_ = 0;
    std::uint64_t durable_record_count_ = 0;
    std::uint64_t durable_feature_count_ = 0;
    std::vector<FeatureFlushState> flush_;
};

}  // namespace bpi
