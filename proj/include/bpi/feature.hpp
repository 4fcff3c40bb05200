#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bpi/record.hpp"

namespace bpi {

using FeatureId = std::uint32_t;

enum class MatcherKind : std::uint8_t {
    Keyword = 0,        // equality against one dimension's value
    ValueCondition = 1, // min <= value <= max on the value dimension
};

// A named predicate over one record dimension plus its registered id.
struct FeatureSpec {
    FeatureId id = 0;
    std::string name;
    Dim dimension = Dim::From;
    MatcherKind kind = MatcherKind::Keyword;
    std::string keyword;
    std::int64_t min_value = std::numeric_limits<std::int64_t>::min();
    std::int64_t max_value = std::numeric_limits<std::int64_t>::max();

    bool matches(const TransactionRecord& rec) const;
};

// Fields of a feature before an id has been assigned.
struct FeatureDraft {
    std::string name;  // empty -> default "<dim>=<keyword>"
    Dim dimension = Dim::From;
    MatcherKind kind = MatcherKind::Keyword;
    std::string keyword;
    std::int64_t min_value = std::numeric_limits<std::int64_t>::min();
    std::int64_t max_value = std::numeric_limits<std::int64_t>::max();

    static FeatureDraft keyword_on(Dim d, std::string_view kw);
    static FeatureDraft value_between(std::string name, std::int64_t min_v,
                                      std::int64_t max_v);
};

// (dimension, keyword-or-condition-name) -> feature id. Ids are assigned
// monotonically and never reused; durability is the store's job.
class MappingTable {
public:
    // Throws RegistrationError when the key is already mapped.
    FeatureId insert(Dim d, std::string_view key);
    std::optional<FeatureId> lookup(Dim d, std::string_view key) const;
    FeatureId next_id() const { return next_id_; }
    std::size_t size() const { return static_cast<std::size_t>(next_id_); }

private:
    struct StringHash {
        using is_transparent = void;
        std::size_t operator()(std::string_view s) const {
            return std::hash<std::string_view>{}(s);
        }
        std::size_t operator()(const std::string& s) const {
            return std::hash<std::string_view>{}(s);
        }
    };
    using KeyMap =
        std::unordered_map<std::string, FeatureId, StringHash, std::equal_to<>>;

    KeyMap by_key_[kDimCount];
    FeatureId next_id_ = 0;
};

// Runtime feature registry: the mapping table plus full specs and the
// user-facing name index.
class FeatureRegistry {
public:
    // Registers a draft; throws RegistrationError on duplicate name or key.
    FeatureId add(const FeatureDraft& draft);

    // Auto-creation path for keyword features observed at insert time:
    // returns the existing id or registers a new one.
    FeatureId ensure_keyword(Dim d, std::string_view value);

    std::optional<FeatureId> lookup_keyword(Dim d, std::string_view value) const {
        return table_.lookup(d, value);
    }
    std::optional<FeatureId> lookup_name(std::string_view name) const;

    const FeatureSpec& spec(FeatureId id) const;
    std::size_t size() const { return specs_.size(); }
    const std::vector<FeatureSpec>& specs() const { return specs_; }
    const std::vector<FeatureId>& condition_ids() const { return condition_ids_; }
    const MappingTable& mapping() const { return table_; }

    // Ids of all features the record matches, ascending. Keyword features of
    // every dimension except `value` are auto-created when `auto_create` is
    // set; value-dimension keywords and conditions only match if registered.
    void matching_ids(const TransactionRecord& rec, bool auto_create,
                      std::vector<FeatureId>& out);

    std::size_t keyword_feature_count() const { return size() - condition_ids_.size(); }

private:
    struct StringHash {
        using is_transparent = void;
        std::size_t operator()(std::string_view s) const {
            return std::hash<std::string_view>{}(s);
        }
        std::size_t operator()(const std::string& s) const {
            return std::hash<std::string_view>{}(s);
        }
    };

    MappingTable table_;
    std::vector<FeatureSpec> specs_;
    std::unordered_map<std::string, FeatureId, StringHash, std::equal_to<>> by_name_;
    std::vector<FeatureId> condition_ids_;
};

}  // namespace bpi
