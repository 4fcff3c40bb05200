// bpi: append-only keyword index over transaction ledgers, with resumable
// queries and checksum-verified results.
//
// The data directory holds the record ledger (records.jsonl) plus one index
// store per simulated side (sp/, chain/).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bpi/engine.hpp"
#include "bpi/errors.hpp"
#include "bpi/sim.hpp"
#include "bpi/token.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct CliConfig {
    std::string data_dir;
    std::uint32_t branching = 32;
    std::uint32_t height = 3;
    std::uint32_t create_batch_threshold = 8;
    double alpha = 0.99999;
    double beta = 0.99;
    double gamma = 0.5;
    std::uint64_t seed = 42;

    bpi::ForestConfig forest() const {
        bpi::ForestConfig cfg;
        cfg.branching = branching;
        cfg.height = height;
        cfg.create_batch_threshold = create_batch_threshold;
        return cfg;
    }
    bpi::SecurityParams params() const { return {alpha, beta, gamma}; }
};

std::vector<bpi::TransactionRecord> load_ledger(const fs::path& path) {
    std::vector<bpi::TransactionRecord> records;
    std::ifstream in(path);
    if (!in) return records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(bpi::record_from_json_line(line));
        } catch (const bpi::SchemaError& e) {
            // A torn final line is a crash artifact; anything else is real.
            if (in.peek() == std::ifstream::traits_type::eof()) break;
            throw bpi::IntegrityError("ledger line " + std::to_string(line_no) + ": " +
                                      e.what());
        }
    }
    return records;
}

struct OpenStores {
    bpi::sim::Harness harness;
    fs::path ledger_path;
};

OpenStores open_stores(const CliConfig& cfg) {
    const fs::path dir(cfg.data_dir);
    fs::create_directories(dir);
    const auto open_side = [&](const char* name) {
        const fs::path side = dir / name;
        if (fs::exists(side / "manifest"))
            return bpi::Engine::open(side, {}, cfg.forest(), cfg.params());
        return bpi::Engine::create(side, cfg.forest(), cfg.params());
    };
    bpi::Engine sp = open_side("sp");
    bpi::Engine chain = open_side("chain");

    OpenStores stores{
        bpi::sim::Harness(std::move(sp), std::move(chain), cfg.params(), cfg.seed),
        dir / "records.jsonl"};
    auto records = load_ledger(stores.ledger_path);
    stores.harness.chain().restore_digests(records);
    stores.harness.sp().restore_ledger(std::move(records));
    return stores;
}

std::vector<bpi::FeatureId> resolve_features(const bpi::Engine& engine,
                                             const std::string& spec) {
    std::vector<bpi::FeatureId> out;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const std::size_t comma = spec.find(',', pos);
        const std::string item = comma == std::string::npos
                                     ? spec.substr(pos)
                                     : spec.substr(pos, comma - pos);
        if (item.empty()) throw std::invalid_argument("empty feature name");
        if (item.find_first_not_of("0123456789") == std::string::npos) {
            out.push_back(static_cast<bpi::FeatureId>(std::stoul(item)));
        } else if (const auto id = engine.registry().lookup_name(item)) {
            out.push_back(*id);
        } else {
            throw std::invalid_argument("unknown feature: " + item);
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw std::invalid_argument("no features given");
    for (const auto f : out) (void)engine.registry().spec(f);  // validates ids
    return out;
}

int cmd_ingest(const CliConfig& cfg, const std::string& input, const std::string& format) {
    const auto start = Clock::now();
    std::ifstream in(input);
    if (!in) throw std::invalid_argument("cannot open input file: " + input);

    std::vector<bpi::TransactionRecord> parsed;
    std::string line;
    std::size_t line_no = 0;
    bool csv_header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (format == "csv" && !csv_header_seen) {
            csv_header_seen = true;
            if (line == bpi::csv_header()) continue;  // header optional
        }
        try {
            parsed.push_back(format == "csv" ? bpi::record_from_csv_line(line)
                                             : bpi::record_from_json_line(line));
        } catch (const bpi::SchemaError& e) {
            std::fprintf(stderr, "error: line %zu: %s\n", line_no, e.what());
            return 1;
        }
    }

    OpenStores stores = open_stores(cfg);
    // Ledger first, then the indexes; a torn run replays on next open.
    {
        std::ofstream out(stores.ledger_path, std::ios::app);
        for (const auto& rec : parsed) out << bpi::record_to_json_line(rec) << "\n";
        out.flush();
        if (!out) throw bpi::PersistenceError("cannot append to records.jsonl");
    }
    for (const auto& rec : parsed) stores.harness.outsource(rec);
    stores.harness.sp().engine().manual_persist();
    stores.harness.chain().engine().manual_persist();

    std::printf("ingested %zu (%.1f ms)\n", parsed.size(), ms_since(start));
    return 0;
}

int cmd_feature_add(const CliConfig& cfg, const std::string& name,
                    const std::string& dimension, const std::string& keyword,
                    std::optional<std::int64_t> min_v, std::optional<std::int64_t> max_v) {
    OpenStores stores = open_stores(cfg);
    auto& sp_engine = stores.harness.sp().engine();
    auto& chain_engine = stores.harness.chain().engine();

    bpi::FeatureId id = 0;
    if (!keyword.empty()) {
        if (min_v || max_v)
            throw std::invalid_argument("--keyword and --min/--max are exclusive");
        const bpi::Dim dim = bpi::dim_from_name(dimension);
        id = sp_engine.add_keyword_feature(dim, keyword, name);
        const bpi::FeatureId chain_id = chain_engine.add_keyword_feature(dim, keyword, name);
        if (chain_id != id) throw bpi::StateError("feature ids diverged between sides");
    } else if (min_v || max_v) {
        if (!dimension.empty() && dimension != "value")
            throw std::invalid_argument("range conditions are supported on `value` only");
        if (name.empty()) throw std::invalid_argument("condition features need --name");
        const std::int64_t lo = min_v.value_or(std::numeric_limits<std::int64_t>::min());
        const std::int64_t hi = max_v.value_or(std::numeric_limits<std::int64_t>::max());
        id = sp_engine.add_condition_feature(name, lo, hi, stores.harness.sp().ledger());
        const bpi::FeatureId chain_id = chain_engine.add_condition_feature(
            name, lo, hi, stores.harness.sp().ledger());
        if (chain_id != id) throw bpi::StateError("feature ids diverged between sides");
    } else {
        throw std::invalid_argument("give either --keyword or --min/--max");
    }
    std::printf("feature %s registered with id %u\n",
                sp_engine.registry().spec(id).name.c_str(), id);
    return 0;
}

int cmd_query(const CliConfig& cfg, const std::string& features_arg,
              const std::string& token_hex, bool emit_token, bool emit_records) {
    OpenStores stores = open_stores(cfg);
    auto& sp = stores.harness.sp();
    const auto features = resolve_features(sp.engine(), features_arg);

    std::optional<bpi::Token> resume;
    if (!token_hex.empty()) resume = bpi::token_from_hex(token_hex);

    const auto result = sp.engine().query(features, resume);
    std::printf("matches: %zu\n", result.indices.size());
    for (const auto i : result.indices) {
        if (emit_records)
            std::printf("%llu\t%s\n", static_cast<unsigned long long>(i),
                        bpi::record_to_json_line(sp.ledger()[static_cast<std::size_t>(i)])
                            .c_str());
        else
            std::printf("%llu\n", static_cast<unsigned long long>(i));
    }
    if (emit_token)
        std::printf("token: %s\n", bpi::token_to_hex(result.token).c_str());
    return 0;
}

int cmd_verify_demo(const CliConfig& cfg, const std::string& features_arg,
                    const std::string& behavior_name, std::uint32_t count) {
    OpenStores stores = open_stores(cfg);
    const auto features = resolve_features(stores.harness.sp().engine(), features_arg);

    bpi::sim::SpBehavior behavior = bpi::sim::SpBehavior::honest();
    if (behavior_name == "b1") behavior = bpi::sim::SpBehavior::inject_fabricated(count);
    else if (behavior_name == "b2") behavior = bpi::sim::SpBehavior::omit(count);
    else if (behavior_name == "b3") behavior = bpi::sim::SpBehavior::fully_malicious();
    else if (behavior_name != "honest")
        throw std::invalid_argument("behavior must be honest|b1|b2|b3");

    const bpi::sim::QueryOutcome outcome =
        stores.harness.user_round_trip(features, behavior);
    std::printf("n_h: %zu\n", outcome.n_h);
    if (outcome.k_used > 0) std::printf("k: %d\n", outcome.k_used);
    else std::printf("k: raw-hash\n");
    std::printf("vo_bytes: %zu\n", outcome.vo_bytes);
    std::printf("n_acc: %zu\n", outcome.verdict.n_acc);
    std::printf("verdict: %s\n", std::string(bpi::verdict_name(outcome.verdict.kind)).c_str());
    if (outcome.verdict.kind == bpi::VerdictKind::B2)
        std::printf("recovered %u via local reverify (0 extra chain calls)\n",
                    outcome.recovered_locally);
    if (outcome.verdict.kind == bpi::VerdictKind::B3)
        std::printf("rejected all %zu results\n", outcome.verdict.n_r);
    std::printf("accepted: %zu\n", outcome.results.size());
    return 0;
}

int cmd_stats(const CliConfig& cfg) {
    OpenStores stores = open_stores(cfg);
    const bpi::EngineStats s = stores.harness.sp().engine().stats();
    std::printf("records: %llu\n", static_cast<unsigned long long>(s.record_count));
    std::printf("durable_records: %llu\n",
                static_cast<unsigned long long>(s.durable_record_count));
    std::printf("trees: %llu\n", static_cast<unsigned long long>(s.tree_count));
    std::printf("completed_trees: %llu\n",
                static_cast<unsigned long long>(s.completed_trees));
    std::printf("features: %llu\n", static_cast<unsigned long long>(s.feature_count));
    std::printf("ebf_bits_per_feature: %llu\n",
                static_cast<unsigned long long>(s.ebf_bits));
    std::printf("root_file_bytes: %llu\n",
                static_cast<unsigned long long>(s.level_file_bytes[0]));
    std::printf("middle_file_bytes: %llu\n",
                static_cast<unsigned long long>(s.level_file_bytes[1]));
    std::printf("leaf_file_bytes: %llu\n",
                static_cast<unsigned long long>(s.level_file_bytes[2]));
    std::printf("manifest_bytes: %llu\n",
                static_cast<unsigned long long>(s.manifest_bytes));
    std::printf("commits: %llu\n", static_cast<unsigned long long>(s.commit_count));
    return 0;
}

int cmd_bench(const CliConfig& cfg, const std::string& sizes_arg, const std::string& out_path) {
    std::vector<std::uint64_t> sizes;
    std::size_t pos = 0;
    while (pos <= sizes_arg.size()) {
        const std::size_t comma = sizes_arg.find(',', pos);
        const std::string item = comma == std::string::npos
                                     ? sizes_arg.substr(pos)
                                     : sizes_arg.substr(pos, comma - pos);
        if (!item.empty()) sizes.push_back(static_cast<std::uint64_t>(std::stod(item)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (sizes.empty()) throw std::invalid_argument("--sizes is empty");

    std::ofstream out(out_path);
    if (!out) throw std::invalid_argument("cannot write " + out_path);
    out << "size,full_query_ms,delta_query_ms,insert_batch_ms,index_bytes,bits_per_entry\n";

    const fs::path bench_dir = fs::path(cfg.data_dir) / "bench.tmp";
    for (const std::uint64_t size : sizes) {
        fs::remove_all(bench_dir);
        bpi::Engine engine = bpi::Engine::create(bench_dir, cfg.forest(), cfg.params());
        const auto shape = bpi::sim::DatasetShape::table_like(size);
        const auto records = bpi::sim::generate_dataset(size, shape, cfg.seed);
        for (const auto& rec : records) engine.insert(rec);
        engine.manual_persist();

        const std::vector<bpi::FeatureId> features = {0};
        const auto warm = engine.query(features);
        double full_ms = 0;
        const int reps = 20;
        {
            const auto t0 = Clock::now();
            for (int r = 0; r < reps; ++r) (void)engine.query(features);
            full_ms = ms_since(t0) / reps;
        }

        // Articulated delta over a fixed-size suffix.
        const bpi::Token token = warm.token;
        const auto suffix = bpi::sim::generate_dataset(10000, shape, cfg.seed + 1);
        const auto t_ins = Clock::now();
        for (const auto& rec : suffix) engine.insert(rec);
        engine.manual_persist();
        const double insert_ms = ms_since(t_ins);
        double delta_ms = 0;
        {
            const auto t0 = Clock::now();
            for (int r = 0; r < reps; ++r) (void)engine.query(features, token);
            delta_ms = ms_since(t0) / reps;
        }

        const auto stats = engine.stats();
        const std::uint64_t index_bytes = stats.level_file_bytes[0] +
                                          stats.level_file_bytes[1] +
                                          stats.level_file_bytes[2];
        const double bits_per_entry =
            static_cast<double>(index_bytes) * 8.0 / static_cast<double>(size + 10000);
        out << size << ',' << full_ms << ',' << delta_ms << ',' << insert_ms << ','
            << index_bytes << ',' << bits_per_entry << "\n";
    }
    fs::remove_all(bench_dir);
    out.flush();
    std::printf("bench results written to %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bpi: bitmap-forest keyword index with verifiable queries"};
    app.require_subcommand(1);

    CliConfig cfg;
    const char* env_dir = std::getenv("BITFOREST_DATA_DIR");
    cfg.data_dir = env_dir ? env_dir : "./bpi-data";
    app.add_option("--data-dir", cfg.data_dir, "store directory");
    app.add_option("--branching", cfg.branching, "mask slots per node (power of two)");
    app.add_option("--create-batch-threshold", cfg.create_batch_threshold,
                   "minimum batch size for bulk feature creation");
    app.add_option("--alpha", cfg.alpha, "fabrication-detection bound");
    app.add_option("--beta", cfg.beta, "collision-free-checksum bound");
    app.add_option("--gamma", cfg.gamma, "minimum accepted fraction");
    app.add_option("--seed", cfg.seed, "rng seed");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "index records from a file");
    std::string input, format = "jsonl";
    ingest->add_option("--input", input, "input file")->required();
    ingest->add_option("--format", format, "jsonl or csv")
        ->check(CLI::IsMember({"jsonl", "csv"}));

    // feature-add
    auto* fadd = app.add_subcommand("feature-add", "register a feature");
    std::string fname, fdim, fkeyword;
    std::optional<std::int64_t> fmin, fmax;
    fadd->add_option("--name", fname, "feature name");
    fadd->add_option("--dimension", fdim, "record dimension");
    fadd->add_option("--keyword", fkeyword, "keyword to match");
    fadd->add_option("--min", fmin, "minimum value (value dimension)");
    fadd->add_option("--max", fmax, "maximum value (value dimension)");

    // query
    auto* query = app.add_subcommand("query", "conjunctive keyword query");
    std::string qfeatures, qtoken;
    bool emit_token = false, emit_records = false;
    query->add_option("--features", qfeatures, "comma-separated ids or names")->required();
    query->add_option("--token", qtoken, "resume token (16 hex chars)");
    query->add_flag("--emit-token", emit_token, "print the new resume token");
    query->add_flag("--records", emit_records, "print full records");

    // verify-demo
    auto* demo = app.add_subcommand("verify-demo", "run the verification protocol");
    std::string dfeatures, dbehavior = "honest";
    std::uint32_t dcount = 2;
    demo->add_option("--features", dfeatures, "comma-separated ids or names")->required();
    demo->add_option("--behavior", dbehavior, "honest|b1|b2|b3");
    demo->add_option("--count", dcount, "records to fabricate/omit");

    // bench
    auto* bench = app.add_subcommand("bench", "size/latency measurements");
    std::string bsizes, bout = "bench.csv";
    bench->add_option("--sizes", bsizes, "comma-separated record counts")->required();
    bench->add_option("--out", bout, "output csv path");

    // stats
    app.add_subcommand("stats", "engine report");

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest->parsed()) return cmd_ingest(cfg, input, format);
        if (fadd->parsed()) return cmd_feature_add(cfg, fname, fdim, fkeyword, fmin, fmax);
        if (query->parsed()) return cmd_query(cfg, qfeatures, qtoken, emit_token, emit_records);
        if (demo->parsed()) return cmd_verify_demo(cfg, dfeatures, dbehavior, dcount);
        if (bench->parsed()) return cmd_bench(cfg, bsizes, bout);
        return cmd_stats(cfg);
    } catch (const bpi::TokenError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const bpi::SchemaError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const bpi::RegistrationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const bpi::LookupError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const bpi::IntegrityError& e) {
        std::fprintf(stderr, "integrity error: %s\n", e.what());
        return 2;
    } catch (const bpi::PersistenceError& e) {
        std::fprintf(stderr, "persistence error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "fatal: %s\n", e.what());
        return 2;
    }
}
