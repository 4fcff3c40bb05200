#include "bpi/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bpi/errors.hpp"

namespace bpi::sim {

namespace {

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string hex_handle(const char* prefix, std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%016llx", prefix,
                  static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = 1469598103934665603ull ^ a;
    h *= 1099511628211ull;
    h ^= b;
    h *= 1099511628211ull;
    return h;
}

// Rank sampler with P(rank) proportional to 1/(rank+1)^s.
class ZipfSampler {
public:
    ZipfSampler(std::uint32_t cardinality, double s) {
        cum_.reserve(cardinality);
        double total = 0.0;
        for (std::uint32_t i = 0; i < cardinality; ++i) {
            total += 1.0 / std::pow(static_cast<double>(i + 1), s);
            cum_.push_back(total);
        }
        for (double& c : cum_) c /= total;
    }

    std::uint32_t sample(std::mt19937_64& rng) const {
        const double u = uniform01(rng);
        const auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
        if (it == cum_.end()) return static_cast<std::uint32_t>(cum_.size() - 1);
        return static_cast<std::uint32_t>(it - cum_.begin());
    }

private:
    std::vector<double> cum_;
};

}  // namespace

TransactionRecord fabricated_record(std::mt19937_64& rng) {
    TransactionRecord rec;
    rec.from = hex_handle("0xfab", rng());
    rec.to = hex_handle("0xfab", rng());
    rec.to_create = static_cast<std::int64_t>(rng() % 3);
    rec.from_is_contract = static_cast<std::int64_t>(rng() % 2);
    rec.to_is_contract = static_cast<std::int64_t>(rng() % 2);
    rec.value = static_cast<std::int64_t>(rng() % 1000000000);
    rec.gas_limit = static_cast<std::int64_t>(21000 + rng() % 100000);
    rec.gas_price = static_cast<std::int64_t>(rng() % 100000);
    rec.gas_used = static_cast<std::int64_t>(rng() % 100000);
    rec.calling_function = hex_handle("fab_", rng());
    rec.is_error = static_cast<std::int64_t>(rng() % 2);
    rec.eip2718_type = static_cast<std::int64_t>(rng() % 3);
    rec.max_fee_per_gas = static_cast<std::int64_t>(rng() % 100000);
    rec.max_priority_fee_per_gas = static_cast<std::int64_t>(rng() % 100000);
    return rec;
}

ServiceProvider::ServiceProvider(Engine engine, std::uint64_t rng_seed)
    : engine_(std::move(engine)), rng_(rng_seed) {}

void ServiceProvider::store(const TransactionRecord& rec) {
    engine_.insert(rec);
    ledger_.push_back(rec);
}

void ServiceProvider::restore_ledger(std::vector<TransactionRecord> records) {
    if (records.size() < engine_.record_count())
        throw StateError("restore_ledger: ledger shorter than the index");
    ledger_ = std::move(records);
    // Records past the engine's durable state are re-indexed.
    for (std::uint64_t i = engine_.record_count(); i < ledger_.size(); ++i)
        engine_.insert(ledger_[i]);
}

ServiceProvider::Response ServiceProvider::query(std::span<const FeatureId> features,
                                                 const SpBehavior& behavior,
                                                 const std::optional<Token>& resume) {
    Engine::QueryResult qr = engine_.query(features, resume);
    Response resp;
    resp.token = qr.token;
    resp.indices = std::move(qr.indices);
    resp.records.reserve(resp.indices.size());
    for (const std::uint64_t i : resp.indices)
        resp.records.push_back(ledger_[static_cast<std::size_t>(i)]);

    switch (behavior.kind) {
        case SpBehavior::Kind::Honest:
            break;
        case SpBehavior::Kind::InjectFabricated:
            for (std::uint32_t i = 0; i < behavior.count; ++i)
                resp.records.push_back(fabricated_record(rng_));
            break;
        case SpBehavior::Kind::Omit:
            for (std::uint32_t i = 0; i < behavior.count && !resp.records.empty(); ++i) {
                const std::size_t victim =
                    static_cast<std::size_t>(rng_() % resp.records.size());
                resp.records.erase(resp.records.begin() +
                                   static_cast<std::ptrdiff_t>(victim));
            }
            break;
        case SpBehavior::Kind::FullyMalicious: {
            const std::size_t n = resp.records.size();
            resp.records.clear();
            for (std::size_t i = 0; i < n; ++i)
                resp.records.push_back(fabricated_record(rng_));
            break;
        }
    }
    return resp;
}

ChainNode::ChainNode(Engine engine) : engine_(std::move(engine)) {}

void ChainNode::store(const TransactionRecord& rec) {
    engine_.insert(rec);
    digests_.push_back(digest(rec));
}

void ChainNode::restore_digests(std::span<const TransactionRecord> records) {
    digests_.clear();
    digests_.reserve(records.size());
    for (const TransactionRecord& rec : records) digests_.push_back(digest(rec));
    for (std::uint64_t i = engine_.record_count(); i < records.size(); ++i)
        engine_.insert(records[static_cast<std::size_t>(i)]);
}

ChainNode::VoResponse ChainNode::verify_query(std::span<const FeatureId> features,
                                              uint128 r, double alpha, double beta,
                                              const std::optional<Token>& resume,
                                              std::optional<int> forced_k) const {
    const Engine::QueryResult qr = engine_.query(features, resume);
    std::vector<Sha256Digest> found;
    found.reserve(qr.indices.size());
    for (const std::uint64_t i : qr.indices)
        found.push_back(digests_[static_cast<std::size_t>(i)]);
    VoResponse resp;
    resp.n_h = found.size();
    resp.vo = build_vo(found, r, alpha, beta, forced_k);
    resp.token = qr.token;
    return resp;
}

DataUser::DataUser(std::uint64_t seed) : rng_(seed) { rotate_seed(); }

void DataUser::rotate_seed() {
    const uint128 hi = uint128{rng_()} << 64;
    seed_r_ = make_seed(hi | rng_());
}

QueryOutcome DataUser::round_trip(ServiceProvider& sp, const ChainNode& chain,
                                  std::span<const FeatureId> features,
                                  const SpBehavior& behavior,
                                  const SecurityParams& params, bool use_stored_token,
                                  std::optional<int> forced_k) {
    std::vector<FeatureId> sorted(features.begin(), features.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    const std::uint32_t set_id = feature_set_id(sorted);

    std::optional<Token> resume;
    if (use_stored_token) resume = tvt_.latest(set_id);

    ServiceProvider::Response sp_resp = sp.query(sorted, behavior, resume);
    const ChainNode::VoResponse chain_resp =
        chain.verify_query(sorted, seed_r_, params.alpha, params.beta, resume, forced_k);

    QueryOutcome outcome;
    outcome.vo_round_trips = 1;
    outcome.n_h = chain_resp.n_h;
    outcome.k_used =
        chain_resp.vo.mode == VerificationObject::Mode::Mapped ? chain_resp.vo.k : 0;
    outcome.vo_bytes = serialize_vo(chain_resp.vo).size();
    outcome.verdict = verify_results(sp_resp.records, chain_resp.vo, seed_r_, params.gamma);
    outcome.token = sp_resp.token;

    for (const std::size_t i : outcome.verdict.accepted)
        outcome.results.push_back(sp_resp.records[i]);

    // Withheld correct results: re-fetch once the SP answers honestly and
    // settle them against the leftover checksums, with no new chain request.
    const bool omissions = outcome.verdict.kind == VerdictKind::B2 ||
                           (!outcome.verdict.unmatched_checksums.empty() ||
                            !outcome.verdict.unmatched_raw.empty());
    if (outcome.verdict.kind != VerdictKind::B3 && omissions) {
        ServiceProvider::Response refetch = sp.query(sorted, SpBehavior::honest(), resume);
        std::vector<Sha256Digest> have;
        have.reserve(outcome.results.size());
        for (const TransactionRecord& rec : outcome.results) have.push_back(digest(rec));
        std::vector<TransactionRecord> fresh;
        for (const TransactionRecord& rec : refetch.records) {
            const Sha256Digest d = digest(rec);
            const auto it = std::find(have.begin(), have.end(), d);
            if (it != have.end())
                have.erase(it);
            else
                fresh.push_back(rec);
        }
        std::vector<std::size_t> recovered;
        if (chain_resp.vo.mode == VerificationObject::Mode::Mapped)
            recovered = local_reverify(fresh, outcome.verdict.unmatched_checksums,
                                       chain_resp.vo.k, seed_r_);
        else
            recovered = local_reverify(fresh, outcome.verdict.unmatched_raw);
        for (const std::size_t i : recovered) outcome.results.push_back(fresh[i]);
        outcome.recovered_locally = static_cast<std::uint32_t>(recovered.size());
    }

    tvt_.record(outcome.token);
    return outcome;
}

Harness::Harness(ForestConfig cfg, SecurityParams params, std::uint64_t seed)
    : params_(params),
      sp_(Engine(cfg, params), mix(seed, 1)),
      chain_(Engine(cfg, params)),
      user_(mix(seed, 2)) {}

Harness::Harness(Engine sp_engine, Engine chain_engine, SecurityParams params,
                 std::uint64_t seed)
    : params_(params),
      sp_(std::move(sp_engine), mix(seed, 1)),
      chain_(std::move(chain_engine)),
      user_(mix(seed, 2)) {}

void Harness::outsource(const TransactionRecord& rec) {
    rec.validate();
    sp_.store(rec);
    chain_.store(rec);
}

QueryOutcome Harness::user_round_trip(std::span<const FeatureId> features,
                                      const SpBehavior& behavior, bool use_stored_token,
                                      std::optional<int> forced_k) {
    return user_.round_trip(sp_, chain_, features, behavior, params_, use_stored_token,
                            forced_k);
}

DatasetShape DatasetShape::table_like(std::uint64_t n) {
    // Feature-count proportions of the reference 7.3M-record corpus.
    const auto scaled = [n](double fraction) {
        const std::uint64_t c = static_cast<std::uint64_t>(fraction * static_cast<double>(n));
        return static_cast<std::uint32_t>(std::clamp<std::uint64_t>(c, 2, 400000));
    };
    DatasetShape shape;
    shape.cardinality[static_cast<int>(Dim::From)] = scaled(0.048);
    shape.cardinality[static_cast<int>(Dim::To)] = scaled(0.046);
    shape.cardinality[static_cast<int>(Dim::ToCreate)] = scaled(0.0077);
    shape.cardinality[static_cast<int>(Dim::FromIsContract)] = 2;
    shape.cardinality[static_cast<int>(Dim::ToIsContract)] = 2;
    shape.cardinality[static_cast<int>(Dim::Value)] = scaled(0.00023);
    shape.cardinality[static_cast<int>(Dim::GasLimit)] = scaled(0.0048);
    shape.cardinality[static_cast<int>(Dim::GasPrice)] = scaled(0.028);
    shape.cardinality[static_cast<int>(Dim::GasUsed)] = scaled(0.0054);
    shape.cardinality[static_cast<int>(Dim::CallingFunction)] = scaled(0.0059);
    shape.cardinality[static_cast<int>(Dim::IsError)] = 2;
    shape.cardinality[static_cast<int>(Dim::Eip2718Type)] = 2;
    shape.cardinality[static_cast<int>(Dim::MaxFeePerGas)] = 2;
    shape.cardinality[static_cast<int>(Dim::MaxPriorityFeePerGas)] = 2;
    return shape;
}

DatasetShape DatasetShape::flat(std::uint32_t per_dim) {
    DatasetShape shape;
    for (int i = 0; i < kDimCount; ++i) {
        const Dim d = static_cast<Dim>(i);
        shape.cardinality[i] = dim_is_boolean(d) ? 2 : per_dim;
    }
    shape.cardinality[static_cast<int>(Dim::Eip2718Type)] = std::min(per_dim, 3u);
    return shape;
}

std::vector<TransactionRecord> generate_dataset(std::uint64_t n, const DatasetShape& shape,
                                                std::uint64_t seed) {
    for (int i = 0; i < kDimCount; ++i)
        if (shape.cardinality[i] < 1)
            throw std::invalid_argument("generate_dataset: cardinality must be >= 1");

    std::mt19937_64 rng(seed);
    std::vector<ZipfSampler> samplers;
    samplers.reserve(kDimCount);
    for (int i = 0; i < kDimCount; ++i)
        samplers.emplace_back(shape.cardinality[i], shape.zipf_s);

    const auto rank_of = [&](Dim d) { return samplers[static_cast<int>(d)].sample(rng); };

    std::vector<TransactionRecord> records;
    records.reserve(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
        TransactionRecord rec;
        rec.from = hex_handle("0x", mix(0, rank_of(Dim::From)));
        rec.to = hex_handle("0x", mix(1, rank_of(Dim::To)));
        rec.to_create = rank_of(Dim::ToCreate);
        rec.from_is_contract = rank_of(Dim::FromIsContract);
        rec.to_is_contract = rank_of(Dim::ToIsContract);
        rec.value = (static_cast<std::int64_t>(rank_of(Dim::Value)) + 1) * 1000;
        rec.gas_limit = 21000 + rank_of(Dim::GasLimit);
        rec.gas_price = 1000 + rank_of(Dim::GasPrice);
        rec.gas_used = 100 + rank_of(Dim::GasUsed);
        const std::uint32_t fn = rank_of(Dim::CallingFunction);
        rec.calling_function = fn == 0 ? "transfer" : "fn_" + std::to_string(fn);
        rec.is_error = rank_of(Dim::IsError);
        rec.eip2718_type = rank_of(Dim::Eip2718Type);
        rec.max_fee_per_gas = rank_of(Dim::MaxFeePerGas);
        rec.max_priority_fee_per_gas = rank_of(Dim::MaxPriorityFeePerGas);
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace bpi::sim
