#include "bpi/feature.hpp"

#include <algorithm>

#include "bpi/errors.hpp"

namespace bpi {

bool FeatureSpec::matches(const TransactionRecord& rec) const {
    if (kind == MatcherKind::ValueCondition)
        return rec.value >= min_value && rec.value <= max_value;
    char buf[24];
    return dim_keyword(rec, dimension, buf) == keyword;
}

FeatureDraft FeatureDraft::keyword_on(Dim d, std::string_view kw) {
    FeatureDraft draft;
    draft.dimension = d;
    draft.kind = MatcherKind::Keyword;
    draft.keyword = kw;
    return draft;
}

FeatureDraft FeatureDraft::value_between(std::string name, std::int64_t min_v,
                                         std::int64_t max_v) {
    FeatureDraft draft;
    draft.name = std::move(name);
    draft.dimension = Dim::Value;
    draft.kind = MatcherKind::ValueCondition;
    draft.min_value = min_v;
    draft.max_value = max_v;
    return draft;
}

FeatureId MappingTable::insert(Dim d, std::string_view key) {
    auto& m = by_key_[static_cast<int>(d)];
    if (m.find(key) != m.end())
        throw RegistrationError("feature already registered on " +
                                std::string(dim_name(d)) + ": " + std::string(key));
    const FeatureId id = next_id_++;
    m.emplace(std::string(key), id);
    return id;
}

std::optional<FeatureId> MappingTable::lookup(Dim d, std::string_view key) const {
    const auto& m = by_key_[static_cast<int>(d)];
    const auto it = m.find(key);
    if (it == m.end()) return std::nullopt;
    return it->second;
}

FeatureId FeatureRegistry::add(const FeatureDraft& draft) {
    std::string name = draft.name;
    if (name.empty()) {
        if (draft.kind != MatcherKind::Keyword)
            throw RegistrationError("condition features require a name");
        name = std::string(dim_name(draft.dimension)) + "=" + draft.keyword;
    }
    if (by_name_.find(name) != by_name_.end())
        throw RegistrationError("duplicate feature name: " + name);

    // Condition features key the mapping table by their name; keyword
    // features by the keyword itself.
    const std::string_view key =
        draft.kind == MatcherKind::Keyword ? std::string_view(draft.keyword)
                                           : std::string_view(name);
    const FeatureId id = table_.insert(draft.dimension, key);

    FeatureSpec spec;
    spec.id = id;
    spec.name = std::move(name);
    spec.dimension = draft.dimension;
    spec.kind = draft.kind;
    spec.keyword = draft.keyword;
    spec.min_value = draft.min_value;
    spec.max_value = draft.max_value;
    by_name_.emplace(spec.name, id);
    if (spec.kind == MatcherKind::ValueCondition) condition_ids_.push_back(id);
    specs_.push_back(std::move(spec));
    return id;
}

FeatureId FeatureRegistry::ensure_keyword(Dim d, std::string_view value) {
    if (const auto id = table_.lookup(d, value)) return *id;
    return add(FeatureDraft::keyword_on(d, value));
}

std::optional<FeatureId> FeatureRegistry::lookup_name(std::string_view name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
}

const FeatureSpec& FeatureRegistry::spec(FeatureId id) const {
    if (id >= specs_.size())
        throw LookupError("unregistered feature id " + std::to_string(id));
    return specs_[id];
}

void FeatureRegistry::matching_ids(const TransactionRecord& rec, bool auto_create,
                                   std::vector<FeatureId>& out) {
    out.clear();
    char buf[24];
    for (int i = 0; i < kDimCount; ++i) {
        const Dim d = static_cast<Dim>(i);
        const std::string_view kw = dim_keyword(rec, d, buf);
        if (d != Dim::Value && auto_create) {
            out.push_back(ensure_keyword(d, kw));
        } else if (const auto id = table_.lookup(d, kw)) {
            if (specs_[*id].kind == MatcherKind::Keyword) out.push_back(*id);
        }
    }
    for (const FeatureId id : condition_ids_)
        if (specs_[id].matches(rec)) out.push_back(id);
    std::sort(out.begin(), out.end());
}

}  // namespace bpi
