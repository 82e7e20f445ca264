#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "echo/ingest.hpp"
#include "echo/matcher.hpp"
#include "echo/miner.hpp"
#include "echo/tree_encoding.hpp"

namespace echo {

using Rational = boost::multiprecision::cpp_rational;

std::string to_string(const Rational& r);

struct Annotation {
    std::string id;
    std::string text;

    bool operator==(const Annotation&) const = default;
};

struct AnnotationInstance {
    std::string annotation_id;
    std::string submission_id;
    /// 1-based.
    int line = 0;

    bool operator==(const AnnotationInstance&) const = default;
};

struct ModelConfig {
    MinerConfig miner;
    /// combined = alpha * pattern_score + (1 - alpha) * unique_fraction
    double alpha = 0.5;
    /// Annotations with fewer context trees are not mined.
    std::size_t min_trees = 3;
    /// A label seen in this many other annotations' forests is not unique.
    std::size_t unique_exclusion = 3;
    /// Worker threads for per-annotation mining; 0 picks the hardware count.
    unsigned threads = 0;

    bool operator==(const ModelConfig& o) const {
        return miner.min_support == o.miner.min_support && miner.strict_support == o.miner.strict_support &&
               miner.max_patterns == o.miner.max_patterns && alpha == o.alpha && min_trees == o.min_trees &&
               unique_exclusion == o.unique_exclusion;
    }
};

struct WeightedPattern {
    Pattern pattern;
    /// Number of annotations whose pattern set contains this pattern.
    std::size_t occurrences = 1;

    /// size / occurrences, reduced.
    Rational weight() const { return Rational(static_cast<long long>(pattern.size()), static_cast<long long>(occurrences)); }

    bool operator==(const WeightedPattern&) const = default;
};

/// Context trees per annotation id, in instance order. The only input the
/// model build depends on.
using TrainingSet = std::map<std::string, std::vector<LabeledTree>>;

struct RankedSuggestion {
    std::string annotation_id;
    double combined = 0.0;
    Rational pattern_score;
    Rational unique_fraction;
};

struct Score {
    Rational pattern_score;
    Rational unique_fraction;
};

class UnknownAnnotation : public Error {
public:
    explicit UnknownAnnotation(const std::string& id) : Error("UnknownAnnotation", "unknown annotation '" + id + "'") {}
};

class EmptyTrainingSet : public Error {
public:
    EmptyTrainingSet() : Error("EmptyTrainingSet", "no annotation instance yields a context subtree") {}
};

/// Mined pattern sets keyed by forest content and miner settings, in label
/// text form so they survive re-interning. Thread-safe.
class MiningCache {
public:
    std::optional<std::vector<LabeledTree>> find(const std::string& key) const;
    void store(const std::string& key, std::vector<LabeledTree> patterns);
    std::size_t size() const;
    /// Drops entries not used since the previous prune.
    void prune();

    static std::string key(const std::vector<LabeledTree>& forest, const MinerConfig& config);

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::vector<LabeledTree>> entries_;
    mutable std::set<std::string> used_;
};

/// Per-annotation weighted patterns and unique-node sets over one label table.
/// Immutable once built.
class AnnotationModel {
public:
    struct Entry {
        std::string id;
        std::vector<EncodedTree> trees;
        std::vector<WeightedPattern> patterns;
        /// Sorted label ids.
        std::vector<Item> unique_nodes;

        bool operator==(const Entry&) const = default;
    };

    AnnotationModel() = default;

    /// Builds from context trees. Throws PatternExplosion (with the
    /// annotation id) when the miner cap is hit.
    static AnnotationModel build(const TrainingSet& training, const ModelConfig& config,
                                 MiningCache* cache = nullptr);

    const ModelConfig& config() const noexcept { return config_; }
    const LabelTable& labels() const noexcept { return labels_; }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }
    const Entry* find(std::string_view annotation_id) const;
    bool contains(std::string_view annotation_id) const { return find(annotation_id) != nullptr; }

    /// The training data, reconstructed from the stored trees.
    TrainingSet training_set() const;

    /// Re-expresses a query tree in this model's label ids; labels the model
    /// has never seen get fresh ids past the table, so they never match.
    EncodedTree encode_query(const LabeledTree& tree) const;

    Score score(std::string_view annotation_id, const EncodedTree& subtree) const;
    std::vector<RankedSuggestion> rank(const EncodedTree& subtree, std::size_t top_k) const;
    /// Full ranking (every annotation).
    std::vector<RankedSuggestion> rank_all(const EncodedTree& subtree) const;

    nlohmann::json to_json() const;
    static AnnotationModel from_json(const nlohmann::json& j);
    /// Canonical serialization (sorted keys, compact).
    std::string serialize() const { return to_json().dump(); }

    /// Structural equality of config, labels and per-annotation content.
    bool operator==(const AnnotationModel& other) const {
        return config_ == other.config_ && labels_ == other.labels_ && entries_ == other.entries_;
    }

private:
    struct Prepared {
        std::vector<PreparedPattern> patterns;
    };

    void prepare();
    Score score_entry(std::size_t index, const PreparedTree& subtree) const;

    ModelConfig config_;
    LabelTable labels_;
    std::vector<Entry> entries_;
    std::vector<Prepared> prepared_;
};

/// A parsed, identifier-post-processed submission.
struct ParsedSubmission {
    std::string id;
    std::string source;
    SyntaxNode tree;
};

struct TrainingReport {
    /// Instances whose line has no extractable context.
    std::vector<AnnotationInstance> dropped;
};

/// Collects context trees for `instances`; lines are 1-based.
TrainingSet collect_training_set(const std::vector<AnnotationInstance>& instances,
                                 const std::map<std::string, ParsedSubmission>& submissions,
                                 TrainingReport* report = nullptr);

/// Throws EmptyTrainingSet when no instance yields a context tree.
AnnotationModel train(const std::vector<AnnotationInstance>& instances,
                      const std::map<std::string, ParsedSubmission>& submissions, const ModelConfig& config,
                      TrainingReport* report = nullptr, MiningCache* cache = nullptr);

/// Full rebuild on the model's own training data plus `new_instances`.
AnnotationModel retrain(const AnnotationModel& model, const std::vector<AnnotationInstance>& new_instances,
                        const std::map<std::string, ParsedSubmission>& submissions,
                        TrainingReport* report = nullptr, MiningCache* cache = nullptr);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace echo
