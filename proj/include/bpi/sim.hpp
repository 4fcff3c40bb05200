#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "bpi/engine.hpp"
#include "bpi/record.hpp"
#include "bpi/token.hpp"
#include "bpi/verify.hpp"

namespace bpi::sim {

// Services-provider behavior under test.
struct SpBehavior {
    enum class Kind : std::uint8_t { Honest, InjectFabricated, Omit, FullyMalicious };

    Kind kind = Kind::Honest;
    std::uint32_t count = 0;

    static SpBehavior honest() { return {Kind::Honest, 0}; }
    static SpBehavior inject_fabricated(std::uint32_t n) {
        return {Kind::InjectFabricated, n};
    }
    static SpBehavior omit(std::uint32_t n) { return {Kind::Omit, n}; }
    static SpBehavior fully_malicious() { return {Kind::FullyMalicious, 0}; }
};

// Synthetic record with values outside the generator's namespaces; digests
// are absent from the chain with overwhelming probability.
TransactionRecord fabricated_record(std::mt19937_64& rng);

// Off-chain storage: holds <keywords, m> and answers keyword queries,
// honestly or not.
class ServiceProvider {
public:
    explicit ServiceProvider(Engine engine, std::uint64_t rng_seed = 17);

    void store(const TransactionRecord& rec);
    // Pre-loads ledger content the engine already indexes (reopen path).
    void restore_ledger(std::vector<TransactionRecord> records);

    struct Response {
        std::vector<TransactionRecord> records;
        std::vector<std::uint64_t> indices;
        Token token;
    };
    Response query(std::span<const FeatureId> features, const SpBehavior& behavior,
                   const std::optional<Token>& resume = std::nullopt);

    Engine& engine() { return engine_; }
    const Engine& engine() const { return engine_; }
    const std::vector<TransactionRecord>& ledger() const { return ledger_; }

private:
    Engine engine_;
    std::vector<TransactionRecord> ledger_;
    std::mt19937_64 rng_;
};

// Simulated blockchain: stores <keywords, h>, runs the same index over
// digests, and compresses correct-result digests into VOs. Consensus is a
// single authoritative node.
class ChainNode {
public:
    explicit ChainNode(Engine engine);

    void store(const TransactionRecord& rec);
    void restore_digests(std::span<const TransactionRecord> records);

    struct VoResponse {
        VerificationObject vo;
        Token token;
        std::size_t n_h = 0;
    };
    VoResponse verify_query(std::span<const FeatureId> features, uint128 r,
                            double alpha, double beta,
                            const std::optional<Token>& resume = std::nullopt,
                            std::optional<int> forced_k = std::nullopt) const;

    const Sha256Digest& digest_at(std::uint64_t index) const { return digests_[index]; }
    Engine& engine() { return engine_; }
    const Engine& engine() const { return engine_; }

private:
    Engine engine_;
    std::vector<Sha256Digest> digests_;
};

struct QueryOutcome {
    std::vector<TransactionRecord> results;  // finally accepted records
    Verdict verdict;
    Token token;
    std::uint32_t vo_round_trips = 0;
    std::uint32_t recovered_locally = 0;
    int k_used = 0;  // 0 = raw-hash mode
    std::size_t vo_bytes = 0;
    std::size_t n_h = 0;
};

// Drives the full protocol: query the SP, derive a random seed, fetch the
// chain VO, verify, and on omissions re-fetch and verify locally without a
// second chain request.
class DataUser {
public:
    explicit DataUser(std::uint64_t seed);

    QueryOutcome round_trip(ServiceProvider& sp, const ChainNode& chain,
                            std::span<const FeatureId> features,
                            const SpBehavior& behavior, const SecurityParams& params,
                            bool use_stored_token = false,
                            std::optional<int> forced_k = std::nullopt);

    void rotate_seed();
    uint128 seed_r() const { return seed_r_; }
    TokenVersionTable& tvt() { return tvt_; }

private:
    std::mt19937_64 rng_;
    TokenVersionTable tvt_;
    uint128 seed_r_ = 0;
};

// Data owner plus both storage sides, wired together.
class Harness {
public:
    Harness(ForestConfig cfg, SecurityParams params, std::uint64_t seed);
    Harness(Engine sp_engine, Engine chain_engine, SecurityParams params,
            std::uint64_t seed);

    // <keywords, m> to the SP, <keywords, h> to the chain.
    void outsource(const TransactionRecord& rec);

    QueryOutcome user_round_trip(std::span<const FeatureId> features,
                                 const SpBehavior& behavior,
                                 bool use_stored_token = false,
                                 std::optional<int> forced_k = std::nullopt);

    ServiceProvider& sp() { return sp_; }
    ChainNode& chain() { return chain_; }
    DataUser& user() { return user_; }
    const SecurityParams& params() const { return params_; }

private:
    SecurityParams params_;
    ServiceProvider sp_;
    ChainNode chain_;
    DataUser user_;
};

// Per-dimension feature cardinalities for the synthetic generator.
struct DatasetShape {
    std::uint32_t cardinality[kDimCount] = {};
    double zipf_s = 1.0;

    // Cardinalities proportioned like the reference dataset's feature
    // statistics, scaled to n records.
    static DatasetShape table_like(std::uint64_t n);
    // Every non-boolean dimension gets the same cardinality (booleans stay 2).
    static DatasetShape flat(std::uint32_t per_dim);
};

// Deterministic under (shape, seed); dimension values follow a Zipf-like
// rank distribution so dense and sparse features both exist.
std::vector<TransactionRecord> generate_dataset(std::uint64_t n, const DatasetShape& shape,
                                                std::uint64_t seed);

}  // namespace bpi::sim
