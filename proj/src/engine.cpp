#include "bpi/engine.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "bpi/bitmask.hpp"
#include "bpi/errors.hpp"
#include "bpi/verify.hpp"

namespace bpi {

namespace {

constexpr std::uint32_t kManifestMagic = 0x4D495042;  // "BPIM"
constexpr std::uint32_t kManifestVersion = 1;
constexpr const char* kLevelFileNames[3] = {"root.masks", "middle.masks", "leaf.masks"};

std::uint32_t manifest_crc(std::span<const std::uint8_t> payload) {
    return static_cast<std::uint32_t>(improved_crc(payload, 32, uint128{0xEDB88320u}));
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IntegrityError("manifest payload truncated");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

struct Engine::FdFile {
    int fd = -1;
    std::string name;
    WriteHook hook;

    FdFile(const std::filesystem::path& path, std::string file_name, WriteHook h)
        : name(std::move(file_name)), hook(std::move(h)) {
        fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd < 0)
            throw PersistenceError("cannot open " + name + ": " + std::strerror(errno));
    }
    FdFile(const FdFile&) = delete;
    FdFile& operator=(const FdFile&) = delete;
    ~FdFile() {
        if (fd >= 0) ::close(fd);
    }

    std::uint64_t size() const {
        struct stat st {};
        if (::fstat(fd, &st) != 0)
            throw PersistenceError("fstat " + name + ": " + std::strerror(errno));
        return static_cast<std::uint64_t>(st.st_size);
    }

    void write_at(std::uint64_t offset, const void* data, std::size_t len) {
        std::size_t allowed = len;
        if (hook) allowed = std::min(allowed, hook(name, offset, len));
        const std::uint8_t* p = static_cast<const std::uint8_t*>(data);
        std::size_t written = 0;
        while (written < allowed) {
            const ssize_t n = ::pwrite(fd, p + written, allowed - written,
                                       static_cast<off_t>(offset + written));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw PersistenceError("pwrite " + name + ": " + std::strerror(errno));
            }
            written += static_cast<std::size_t>(n);
        }
        if (allowed < len)
            throw PersistenceError("write aborted by fault injection in " + name);
    }

    void read_at(std::uint64_t offset, void* data, std::size_t len) const {
        std::uint8_t* p = static_cast<std::uint8_t*>(data);
        std::size_t got = 0;
        while (got < len) {
            const ssize_t n =
                ::pread(fd, p + got, len - got, static_cast<off_t>(offset + got));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw PersistenceError("pread " + name + ": " + std::strerror(errno));
            }
            if (n == 0) throw IntegrityError(name + " shorter than committed length");
            got += static_cast<std::size_t>(n);
        }
    }

    void sync() {
        if (::fdatasync(fd) != 0)
            throw PersistenceError("fdatasync " + name + ": " + std::strerror(errno));
    }

    void lock_exclusive() {
        if (::flock(fd, LOCK_EX | LOCK_NB) != 0)
            throw PersistenceError("store directory is locked by another process");
    }
};

Engine::Engine(ForestConfig cfg, SecurityParams params)
    : cfg_(cfg),
      params_(params),
      registry_(std::make_unique<FeatureRegistry>()),
      forest_(std::make_unique<CompressedForest>(cfg, *registry_)) {
    cfg_.validate();
}

Engine::Engine(Engine&&) noexcept = default;
Engine& Engine::operator=(Engine&&) noexcept = default;
Engine::~Engine() = default;

void Engine::open_files(bool must_be_fresh) {
    std::filesystem::create_directories(dir_);
    lock_file_ = std::make_unique<FdFile>(dir_ / ".lock", ".lock", WriteHook{});
    lock_file_->lock_exclusive();
    manifest_file_ =
        std::make_unique<FdFile>(dir_ / "manifest", "manifest", options_.write_hook);
    if (must_be_fresh && manifest_file_->size() > 0)
        throw PersistenceError("store directory already initialized: " + dir_.string());
    for (int level = 0; level < 3; ++level)
        level_files_[level] = std::make_unique<FdFile>(
            dir_ / kLevelFileNames[level], kLevelFileNames[level], options_.write_hook);
    persistent_ = true;
}

Engine Engine::create(const std::filesystem::path& dir, ForestConfig cfg,
                      SecurityParams params, StoreOptions options) {
    Engine engine(cfg, params);
    engine.dir_ = dir;
    engine.options_ = std::move(options);
    engine.open_files(/*must_be_fresh=*/true);
    engine.write_config_file();
    return engine;
}

Engine Engine::open(const std::filesystem::path& dir, StoreOptions options,
                    ForestConfig fallback_cfg, SecurityParams fallback_params) {
    Engine engine(fallback_cfg, fallback_params);
    engine.dir_ = dir;
    engine.options_ = std::move(options);
    engine.open_files(/*must_be_fresh=*/false);
    if (std::filesystem::exists(dir / "config")) {
        engine.read_config_file();
        // Structure parameters come from the store; rebuild the forest.
        engine.forest_ = std::make_unique<CompressedForest>(engine.cfg_, *engine.registry_);
    } else {
        engine.write_config_file();
    }
    engine.load_manifest();
    return engine;
}

void Engine::write_config_file() const {
    std::ofstream out(dir_ / "config", std::ios::trunc);
    out << "branching=" << cfg_.branching << "\n"
        << "height=" << cfg_.height << "\n"
        << "createBatchThreshold=" << cfg_.create_batch_threshold << "\n"
        << "alpha=" << params_.alpha << "\n"
        << "beta=" << params_.beta << "\n"
        << "gamma=" << params_.gamma << "\n";
    if (!out) throw PersistenceError("cannot write config file in " + dir_.string());
}

void Engine::read_config_file() {
    std::ifstream in(dir_ / "config");
    if (!in) throw PersistenceError("cannot read config file in " + dir_.string());
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "branching") cfg_.branching = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "height") cfg_.height = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "createBatchThreshold")
                cfg_.create_batch_threshold = static_cast<std::uint32_t>(std::stoul(value));
            else if (key == "alpha") params_.alpha = std::stod(value);
            else if (key == "beta") params_.beta = std::stod(value);
            else if (key == "gamma") params_.gamma = std::stod(value);
        } catch (const std::exception&) {
            throw IntegrityError("config file: bad value for " + key);
        }
    }
    cfg_.validate();
}

void Engine::insert(const TransactionRecord& rec) {
    const bool completed = forest_->insert_record(rec);
    if (completed) {
        const std::uint64_t tree = *forest_->pending_tree();
        forest_->compress_completed_tree(tree);
        if (persistent_) flush_event();  // automatic persistence at tree boundary
    }
}

Engine::QueryResult Engine::query(std::span<const FeatureId> feature_ids,
                                  const std::optional<Token>& resume) const {
    std::vector<FeatureId> sorted(feature_ids.begin(), feature_ids.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    const std::uint32_t set_id = feature_set_id(sorted);

    std::uint64_t min_index = 0;
    if (resume) {
        if (resume->feature_set_id != set_id)
            throw TokenError("token mismatch: token belongs to feature set " +
                             std::to_string(resume->feature_set_id) +
                             ", query is feature set " + std::to_string(set_id));
        min_index = resume->cursor;
    }

    QueryResult result;
    result.indices = forest_->query(sorted, min_index);
    result.token = Token{set_id, forest_->record_count()};
    return result;
}

FeatureId Engine::add_keyword_feature(Dim dim, std::string_view keyword,
                                      std::string name) {
    FeatureDraft draft = FeatureDraft::keyword_on(dim, keyword);
    draft.name = std::move(name);
    // New keywords skip all prior data: registration only, no scan.
    const FeatureId id = registry_->add(draft);
    if (persistent_) flush_event();
    return id;
}

FeatureId Engine::add_condition_feature(std::string name, std::int64_t min_value,
                                        std::int64_t max_value,
                                        std::span<const TransactionRecord> ledger) {
    const FeatureId id = forest_->create_feature(
        FeatureDraft::value_between(std::move(name), min_value, max_value), ledger);
    if (persistent_) flush_event();
    return id;
}

void Engine::manual_persist() {
    if (!persistent_)
        throw StateError("manual_persist: engine has no store directory");
    flush_event();
}

std::uint64_t Engine::sequence_total(FeatureId f, int level) const {
    const CompressedForest::TailView tail = forest_->tail_view(f);
    std::uint64_t tail_count = 0;
    if (tail.present)
        tail_count = level == 0   ? 1
                     : level == 1 ? tail.middles.size()
                                  : tail.leaves.size();
    const std::size_t comp = level == 0   ? forest_->root_masks(f).size()
                             : level == 1 ? forest_->middle_masks(f).size()
                                          : forest_->leaf_masks(f).size();
    return comp + tail_count;
}

std::uint32_t Engine::sequence_value(FeatureId f, int level, std::uint64_t pos) const {
    const std::span<const std::uint32_t> comp =
        level == 0   ? forest_->root_masks(f)
        : level == 1 ? forest_->middle_masks(f)
                     : forest_->leaf_masks(f);
    if (pos < comp.size()) return comp[static_cast<std::size_t>(pos)];
    const CompressedForest::TailView tail = forest_->tail_view(f);
    const std::uint64_t tpos = pos - comp.size();
    if (level == 0) return tail.root_word;
    const std::span<const CompressedForest::TailEntry> entries =
        level == 1 ? tail.middles : tail.leaves;
    return entries[static_cast<std::size_t>(tpos)].word;
}

// One persistence event: OR-merge the boundary masks that grew, append all
// new masks level by level, then commit an incremental manifest record
// describing exactly this event. Commit cost scales with the event, never
// with store history.
void Engine::flush_event() {
    const std::size_t feature_count = registry_->size();
    if (flush_.size() < feature_count) flush_.resize(feature_count);

    struct StagedLevel {
        bool present = false;
        bool merge = false;
        std::uint64_t merge_offset = 0;
        std::uint32_t merge_value = 0;
        std::uint64_t comp_after = 0;
        std::uint64_t appended = 0;
        std::vector<std::uint32_t> tail_indices;  // of the appended tail words
        std::uint32_t last_value = 0;
        std::uint64_t base_offset = 0;
        LevelFlushState next;
    };
    struct StagedFeature {
        FeatureId feature = 0;
        std::uint32_t new_fit = 0;
        std::vector<std::uint64_t> new_trees;
        StagedLevel levels[3];
    };

    std::vector<StagedFeature> staged;
    std::array<std::uint64_t, 3> next_committed = committed_words_;

    const std::vector<FeatureId> dirty = forest_->collect_dirty();
    try {
    for (const FeatureId f : dirty) {
        FeatureFlushState& cur = flush_[f];
        const CompressedForest::TailView tail = forest_->tail_view(f);
        StagedFeature sf;
        sf.feature = f;
        bool any = false;

        const std::span<const FitEntry> fit = forest_->fit(f);
        if (fit.size() > cur.fit_durable) {
            sf.new_fit = static_cast<std::uint32_t>(fit.size() - cur.fit_durable);
            // Tree ids of the new FIT entries = set EBF bits past the old rank.
            const auto ebf = forest_->ebf_words(f);
            std::uint32_t rank = 0;
            for (std::size_t w = 0; w < ebf.size(); ++w) {
                std::uint64_t word = ebf[w];
                while (word != 0) {
                    const int bit = std::countr_zero(word);
                    word &= word - 1;
                    if (rank >= cur.fit_durable)
                        sf.new_trees.push_back(static_cast<std::uint64_t>(w) * 64 + bit);
                    ++rank;
                }
            }
            any = true;
        }

        for (int level = 0; level < 3; ++level) {
            const LevelFlushState& state = cur.levels[level];
            const std::uint64_t total = sequence_total(f, level);
            const std::uint64_t comp_now =
                level == 0   ? forest_->root_masks(f).size()
                : level == 1 ? forest_->middle_masks(f).size()
                             : forest_->leaf_masks(f).size();
            StagedLevel& sl = sf.levels[level];
            const bool grew = total > state.durable_words;
            // Compression can move the whole flushed tail into the
            // compressed region without appending anything; the boundary
            // shift still has to be committed.
            const bool comp_moved = comp_now != state.comp_durable;
            bool merge = false;
            if (state.durable_words > 0) {
                const std::uint32_t now = sequence_value(f, level, state.durable_words - 1);
                merge = now != state.last_value;
                if (merge) {
                    sl.merge = true;
                    sl.merge_offset = state.last_offset;
                    sl.merge_value = now;
                }
            }
            if (!grew && !merge && !comp_moved) continue;
            sl.present = true;
            sl.comp_after = comp_now;
            sl.appended = total - state.durable_words;
            for (std::uint64_t pos = std::max(state.durable_words, comp_now); pos < total;
                 ++pos) {
                if (level == 0) {
                    sl.tail_indices.push_back(0);
                } else {
                    const auto entries = level == 1 ? tail.middles : tail.leaves;
                    sl.tail_indices.push_back(
                        entries[static_cast<std::size_t>(pos - comp_now)].index);
                }
            }
            sl.next.durable_words = total;
            sl.next.comp_durable = comp_now;
            sl.next.last_value = sequence_value(f, level, total - 1);
            sl.last_value = sl.next.last_value;
            any = true;
        }
        if (any) staged.push_back(std::move(sf));
    }

    const bool meta_changed = forest_->record_count() != durable_record_count_ ||
                              feature_count != durable_feature_count_;
    if (staged.empty() && !meta_changed) return;  // nothing new since last commit

    // Assign append offsets and write pages, level-major then feature order.
    std::array<std::vector<std::uint32_t>, 3> append_buffers;
    for (int level = 0; level < 3; ++level) {
        for (StagedFeature& sf : staged) {
            StagedLevel& sl = sf.levels[level];
            if (!sl.present) continue;
            Page page;
            page.level = level;
            page.feature = sf.feature;
            page.first_mask_complete = !sl.merge;
            if (sl.merge) page.payload.push_back(sl.merge_value);
            sl.base_offset = next_committed[level];
            const std::uint64_t from = flush_[sf.feature].levels[level].durable_words;
            for (std::uint64_t pos = from; pos < from + sl.appended; ++pos)
                page.payload.push_back(sequence_value(sf.feature, level, pos));
            next_committed[level] += sl.appended;
            sl.next.last_offset =
                sl.appended > 0 ? sl.base_offset + sl.appended - 1
                                : flush_[sf.feature].levels[level].last_offset;

            std::size_t skip = 0;
            if (sl.merge) {
                level_files_[level]->write_at(sl.merge_offset * 4, page.payload.data(), 4);
                skip = 1;
            }
            append_buffers[level].insert(
                append_buffers[level].end(),
                page.payload.begin() + static_cast<std::ptrdiff_t>(skip),
                page.payload.end());
        }
    }
    for (int level = 0; level < 3; ++level) {
        if (append_buffers[level].empty()) continue;
        level_files_[level]->write_at(committed_words_[level] * 4,
                                      append_buffers[level].data(),
                                      append_buffers[level].size() * 4);
    }
    for (int level = 0; level < 3; ++level) level_files_[level]->sync();

    // The commit record: global counters plus this event's deltas.
    ByteWriter w;
    w.u64(forest_->record_count());
    w.u64(forest_->completed_trees());
    for (int level = 0; level < 3; ++level) w.u64(next_committed[level]);
    w.u32(static_cast<std::uint32_t>(feature_count - durable_feature_count_));
    for (FeatureId f = static_cast<FeatureId>(durable_feature_count_); f < feature_count;
         ++f) {
        const FeatureSpec& spec = registry_->spec(f);
        w.u8(static_cast<std::uint8_t>(spec.dimension));
        w.u8(static_cast<std::uint8_t>(spec.kind));
        w.str(spec.name);
        w.str(spec.keyword);
        w.i64(spec.min_value);
        w.i64(spec.max_value);
    }
    w.u32(static_cast<std::uint32_t>(staged.size()));
    for (const StagedFeature& sf : staged) {
        w.u32(sf.feature);
        w.u32(sf.new_fit);
        const std::span<const FitEntry> fit = forest_->fit(sf.feature);
        for (std::uint32_t i = 0; i < sf.new_fit; ++i) {
            const FitEntry& e = fit[flush_[sf.feature].fit_durable + i];
            w.u32(e.middle_start);
            w.u32(e.leaf_start);
        }
        w.u32(static_cast<std::uint32_t>(sf.new_trees.size()));
        for (const std::uint64_t t : sf.new_trees) w.u64(t);
        for (int level = 0; level < 3; ++level) {
            const StagedLevel& sl = sf.levels[level];
            w.u8(sl.present ? 1 : 0);
            if (!sl.present) continue;
            w.u64(sl.comp_after);
            w.u64(sl.appended);
            w.u32(static_cast<std::uint32_t>(sl.tail_indices.size()));
            for (const std::uint32_t idx : sl.tail_indices) w.u32(idx);
            w.u32(sl.last_value);
        }
    }
    const std::vector<std::uint8_t> payload = w.take();

    ByteWriter header;
    header.u32(kManifestMagic);
    header.u32(kManifestVersion);
    header.u64(payload.size());
    std::vector<std::uint8_t> rec = header.take();
    rec.insert(rec.end(), payload.begin(), payload.end());
    const std::uint32_t crc = manifest_crc(payload);
    for (int i = 0; i < 4; ++i) rec.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    manifest_file_->write_at(manifest_len_, rec.data(), rec.size());
    manifest_file_->sync();
    manifest_len_ += rec.size();

    // Only now does the in-memory durable state advance.
    committed_words_ = next_committed;
    for (StagedFeature& sf : staged) {
        FeatureFlushState& cur = flush_[sf.feature];
        cur.fit_durable += sf.new_fit;
        for (int level = 0; level < 3; ++level) {
            StagedLevel& sl = sf.levels[level];
            if (!sl.present) {
                continue;
            }
            cur.levels[level] = sl.next;
        }
    }
    ++commit_count_;
    durable_record_count_ = forest_->record_count();
    durable_feature_count_ = feature_count;
    } catch (...) {
        forest_->requeue_dirty(dirty);
        throw;
    }
}

void Engine::load_manifest() {
    const std::uint64_t file_size = manifest_file_->size();

    struct ReplayLevel {
        struct Run {
            std::uint64_t offset = 0;
            std::uint64_t count = 0;
        };
        std::vector<Run> runs;
        std::uint64_t durable = 0;
        std::uint64_t comp_len = 0;
        std::vector<std::uint32_t> tail_indices;
        std::uint32_t last_value = 0;
        std::uint64_t last_offset = 0;
    };
    struct ReplayFeature {
        ReplayLevel levels[3];
        std::vector<FitEntry> fit;
        std::vector<std::uint64_t> ebf;
    };
    std::vector<ReplayFeature> replay;
    std::array<std::uint64_t, 3> running{};
    std::uint64_t record_count = 0;
    std::uint64_t completed_trees = 0;
    std::uint64_t records_applied = 0;

    std::uint64_t pos = 0;
    std::uint64_t valid_end = 0;
    while (pos + 16 + 4 <= file_size) {
        std::uint8_t header[16];
        manifest_file_->read_at(pos, header, sizeof header);
        ByteReader hr(std::span<const std::uint8_t>(header, sizeof header));
        if (hr.u32() != kManifestMagic || hr.u32() != kManifestVersion) break;
        const std::uint64_t len = hr.u64();
        if (pos + 16 + len + 4 > file_size) break;
        std::vector<std::uint8_t> payload(static_cast<std::size_t>(len));
        if (len > 0) manifest_file_->read_at(pos + 16, payload.data(), payload.size());
        std::uint8_t crc_bytes[4];
        manifest_file_->read_at(pos + 16 + len, crc_bytes, 4);
        std::uint32_t crc = 0;
        for (int i = 0; i < 4; ++i) crc |= std::uint32_t{crc_bytes[i]} << (8 * i);
        if (crc != manifest_crc(payload)) break;

        // Apply this commit record to the replayed state.
        ByteReader r(payload);
        record_count = r.u64();
        completed_trees = r.u64();
        std::array<std::uint64_t, 3> committed_after{};
        for (int level = 0; level < 3; ++level) committed_after[level] = r.u64();

        const std::uint32_t new_features = r.u32();
        for (std::uint32_t i = 0; i < new_features; ++i) {
            FeatureDraft draft;
            draft.dimension = static_cast<Dim>(r.u8());
            draft.kind = static_cast<MatcherKind>(r.u8());
            draft.name = r.str();
            draft.keyword = r.str();
            draft.min_value = r.i64();
            draft.max_value = r.i64();
            const FeatureId assigned = registry_->add(draft);
            if (assigned != replay.size())
                throw IntegrityError("manifest feature ids are not contiguous");
            replay.emplace_back();
        }

        const std::uint32_t touched = r.u32();
        struct TouchedLevel {
            FeatureId feature;
            std::uint64_t comp_after;
            std::uint64_t appended;
            std::vector<std::uint32_t> tail_indices;
            std::uint32_t last_value;
            bool present;
        };
        std::vector<std::array<TouchedLevel, 3>> entries(touched);
        for (std::uint32_t i = 0; i < touched; ++i) {
            const FeatureId f = r.u32();
            if (f >= replay.size()) throw IntegrityError("manifest touches unknown feature");
            ReplayFeature& rf = replay[f];
            const std::uint32_t new_fit = r.u32();
            for (std::uint32_t e = 0; e < new_fit; ++e) {
                FitEntry entry;
                entry.middle_start = r.u32();
                entry.leaf_start = r.u32();
                rf.fit.push_back(entry);
            }
            const std::uint32_t new_trees = r.u32();
            for (std::uint32_t e = 0; e < new_trees; ++e) {
                const std::uint64_t tree = r.u64();
                const std::size_t word = static_cast<std::size_t>(tree >> 6);
                if (rf.ebf.size() <= word) rf.ebf.resize(word + 1, 0);
                rf.ebf[word] |= std::uint64_t{1} << (tree & 63);
            }
            for (int level = 0; level < 3; ++level) {
                TouchedLevel& tl = entries[i][level];
                tl.feature = f;
                tl.present = r.u8() != 0;
                if (!tl.present) continue;
                tl.comp_after = r.u64();
                tl.appended = r.u64();
                tl.tail_indices.resize(r.u32());
                for (auto& idx : tl.tail_indices) idx = r.u32();
                tl.last_value = r.u32();
            }
        }
        if (!r.done()) throw IntegrityError("manifest record has trailing bytes");

        // Appends land level-major in feature order; replay mirrors that to
        // recover every run's file position.
        for (int level = 0; level < 3; ++level) {
            for (std::uint32_t i = 0; i < touched; ++i) {
                const TouchedLevel& tl = entries[i][level];
                if (!tl.present) continue;
                ReplayLevel& rl = replay[tl.feature].levels[level];
                if (tl.appended > 0) {
                    if (!rl.runs.empty() &&
                        rl.runs.back().offset + rl.runs.back().count == running[level])
                        rl.runs.back().count += tl.appended;
                    else
                        rl.runs.push_back({running[level], tl.appended});
                    rl.last_offset = running[level] + tl.appended - 1;
                    running[level] += tl.appended;
                }
                if (tl.tail_indices.size() > tl.appended)
                    throw IntegrityError("manifest tail indices exceed appended words");
                const std::uint64_t comp_appends =
                    tl.appended - tl.tail_indices.size();
                if (tl.comp_after > rl.comp_len) {
                    // Compression or back-fill absorbed the old tail.
                    if (tl.comp_after != rl.comp_len + rl.tail_indices.size() + comp_appends)
                        throw IntegrityError("manifest compression accounting mismatch");
                    rl.tail_indices.assign(tl.tail_indices.begin(), tl.tail_indices.end());
                } else {
                    if (tl.comp_after != rl.comp_len || comp_appends != 0)
                        throw IntegrityError("manifest append accounting mismatch");
                    rl.tail_indices.insert(rl.tail_indices.end(), tl.tail_indices.begin(),
                                           tl.tail_indices.end());
                }
                rl.comp_len = tl.comp_after;
                rl.durable += tl.appended;
                rl.last_value = tl.last_value;
                if (rl.durable != rl.comp_len + rl.tail_indices.size())
                    throw IntegrityError("manifest word accounting mismatch");
            }
        }
        for (int level = 0; level < 3; ++level)
            if (running[level] != committed_after[level])
                throw IntegrityError("manifest committed lengths disagree with replay");

        pos += 16 + len + 4;
        valid_end = pos;
        ++records_applied;
    }
    manifest_len_ = valid_end;
    commit_count_ = records_applied;
    if (records_applied == 0) {
        // Fresh store, or a manifest whose first record is torn. Feature
        // registrations from partially applied records cannot exist because
        // registry state is rebuilt only from valid records.
        return;
    }

    committed_words_ = running;
    for (int level = 0; level < 3; ++level)
        if (level_files_[level]->size() < committed_words_[level] * 4)
            throw IntegrityError(std::string(kLevelFileNames[level]) +
                                 " is shorter than its committed length");

    durable_record_count_ = record_count;
    durable_feature_count_ = replay.size();
    forest_->restore_counts(record_count, completed_trees);
    flush_.assign(replay.size(), {});

    std::vector<std::uint32_t> words;
    for (FeatureId f = 0; f < replay.size(); ++f) {
        ReplayFeature& rf = replay[f];
        // Repair the boundary words first: an uncommitted post-crash flush
        // may have OR-merged them past the committed values.
        for (int level = 0; level < 3; ++level) {
            ReplayLevel& rl = rf.levels[level];
            if (rl.durable == 0) continue;
            std::uint32_t on_disk = 0;
            level_files_[level]->read_at(rl.last_offset * 4, &on_disk, 4);
            if (on_disk != rl.last_value)
                level_files_[level]->write_at(rl.last_offset * 4, &rl.last_value, 4);
        }

        std::vector<std::uint32_t> lists[3];
        std::uint32_t tail_root = 0;
        std::vector<CompressedForest::TailEntry> tail_mid, tail_leaf;
        for (int level = 0; level < 3; ++level) {
            ReplayLevel& rl = rf.levels[level];
            words.clear();
            words.resize(static_cast<std::size_t>(rl.durable));
            std::uint64_t filled = 0;
            for (const auto& run : rl.runs) {
                if (run.offset + run.count > committed_words_[level])
                    throw IntegrityError("mask run beyond committed length");
                level_files_[level]->read_at(run.offset * 4, words.data() + filled,
                                             run.count * 4);
                filled += run.count;
            }
            if (filled != rl.durable)
                throw IntegrityError("mask runs disagree with durable word count");
            lists[level].assign(words.begin(),
                                words.begin() + static_cast<std::ptrdiff_t>(rl.comp_len));
            for (std::size_t t = 0; t < rl.tail_indices.size(); ++t) {
                const std::uint32_t value =
                    words[static_cast<std::size_t>(rl.comp_len) + t];
                if (level == 0) tail_root = value;
                else if (level == 1)
                    tail_mid.push_back({rl.tail_indices[t], value});
                else
                    tail_leaf.push_back({rl.tail_indices[t], value});
            }
            FeatureFlushState& state = flush_[f];
            state.levels[level].durable_words = rl.durable;
            state.levels[level].comp_durable = rl.comp_len;
            state.levels[level].last_offset = rl.last_offset;
            state.levels[level].last_value = rl.last_value;
        }
        flush_[f].fit_durable = static_cast<std::uint32_t>(rf.fit.size());
        forest_->restore_feature(f, std::move(lists[0]), std::move(lists[1]),
                                 std::move(lists[2]), std::move(rf.ebf),
                                 std::move(rf.fit), tail_root, std::move(tail_mid),
                                 std::move(tail_leaf));
    }
}

EngineStats Engine::stats() const {
    EngineStats s;
    s.record_count = forest_->record_count();
    s.durable_record_count = durable_record_count_;
    s.completed_trees = forest_->completed_trees();
    s.tree_count = forest_->tree_count();
    s.feature_count = registry_->size();
    s.ebf_bits = forest_->tree_count();
    for (int level = 0; level < 3; ++level)
        s.level_file_bytes[level] = committed_words_[level] * 4;
    s.manifest_bytes = manifest_len_;
    s.commit_count = commit_count_;
    return s;
}

std::optional<Engine::DurableWordInfo> Engine::last_durable_word(FeatureId f,
                                                                 int level) const {
    if (f >= flush_.size()) return std::nullopt;
    const LevelFlushState& state = flush_[f].levels[level];
    if (state.durable_words == 0) return std::nullopt;
    DurableWordInfo info;
    info.byte_offset = state.last_offset * 4;
    info.value = state.last_value;
    info.durable_words = state.durable_words;
    return info;
}

}  // namespace bpi
