#pragma once

#include <cstdint>
#include <vector>

#include "echo/tree_encoding.hpp"

namespace echo {

/// Set of dense label ids.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(const std::vector<Item>& items);

    void insert(Item label);
    bool contains(Item label) const;
    bool is_subset_of(const LabelSet& other) const;
    std::size_t count() const;

    bool operator==(const LabelSet& other) const;

private:
    std::vector<std::uint64_t> words_;
};

/// Pattern with the lookup tables the matcher needs, built once per model.
struct PreparedPattern {
    std::vector<Item> items;
    LabelSet labels;
    std::vector<Item> distinct_labels;
    /// need[k][p]: occurrences of distinct_labels[k] in items[p..].
    std::vector<std::vector<std::uint32_t>> need;

    explicit PreparedPattern(const Pattern& pattern);
};

/// Query subtree with per-label position lists, built once per query.
struct PreparedTree {
    std::vector<Item> items;
    LabelSet labels;
    /// positions[label]: ascending item indices holding that label.
    std::vector<std::vector<std::uint32_t>> positions;

    explicit PreparedTree(const EncodedTree& tree);

    std::uint32_t count_from(Item label, std::uint32_t from) const;
};

/// labels_of(pattern) is a subset of labels_of(subtree).
bool label_prefilter(const PreparedPattern& pattern, const PreparedTree& subtree);
bool label_prefilter(const Pattern& pattern, const EncodedTree& subtree);

/// Resumption states the backtracking scan may queue before the call
/// switches to the polynomial inclusion check.
inline constexpr std::size_t kDefaultStateBudget = 4096;

/// Exact embedded-subtree containment of `pattern` in `subtree`. A single
/// left-to-right scan over both encodings with a depth stack; each label
/// match also records the branch that skips it, and those branches are
/// resumed (deduplicated) when the scan fails.
bool pattern_matches(const PreparedPattern& pattern, const PreparedTree& subtree,
                     std::size_t state_budget = kDefaultStateBudget);
bool pattern_matches(const Pattern& pattern, const EncodedTree& subtree);

/// Same answer by ordered tree inclusion: bottom-up rooted-match table with
/// greedy earliest-finishing placement of sibling subtrees.
/// O(|pattern| * |subtree|^2) worst case.
bool pattern_included(const PreparedPattern& pattern, const PreparedTree& subtree);

}  // namespace echo
