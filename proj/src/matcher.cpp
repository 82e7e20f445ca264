#include "echo/matcher.hpp"

#include <algorithm>
#include <bit>
#include <optional>
#include <unordered_set>

namespace echo {

LabelSet::LabelSet(const std::vector<Item>& items) {
    for (Item i : items)
        if (!is_up(i)) insert(i);
}

void LabelSet::insert(Item label) {
    const auto word = static_cast<std::size_t>(label) / 64;
    if (word >= words_.size()) words_.resize(word + 1, 0);
    words_[word] |= std::uint64_t{1} << (static_cast<std::size_t>(label) % 64);
}

bool LabelSet::contains(Item label) const {
    const auto word = static_cast<std::size_t>(label) / 64;
    return word < words_.size() && (words_[word] >> (static_cast<std::size_t>(label) % 64) & 1U);
}

bool LabelSet::is_subset_of(const LabelSet& other) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
        const std::uint64_t theirs = w < other.words_.size() ? other.words_[w] : 0;
        if (words_[w] & ~theirs) return false;
    }
    return true;
}

std::size_t LabelSet::count() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

bool LabelSet::operator==(const LabelSet& other) const {
    const std::size_t n = std::max(words_.size(), other.words_.size());
    for (std::size_t w = 0; w < n; ++w) {
        const std::uint64_t a = w < words_.size() ? words_[w] : 0;
        const std::uint64_t b = w < other.words_.size() ? other.words_[w] : 0;
        if (a != b) return false;
    }
    return true;
}

PreparedPattern::PreparedPattern(const Pattern& pattern)
    : items(pattern.items()), labels(pattern.items()), distinct_labels(labels_of(pattern)) {
    need.assign(distinct_labels.size(), std::vector<std::uint32_t>(items.size() + 1, 0));
    for (std::size_t k = 0; k < distinct_labels.size(); ++k) {
        for (std::size_t p = items.size(); p-- > 0;)
            need[k][p] = need[k][p + 1] + (items[p] == distinct_labels[k] ? 1U : 0U);
    }
}

PreparedTree::PreparedTree(const EncodedTree& tree) : items(tree.items()), labels(tree.items()) {
    for (std::uint32_t i = 0; i < items.size(); ++i) {
        if (is_up(items[i])) continue;
        const auto label = static_cast<std::size_t>(items[i]);
        if (label >= positions.size()) positions.resize(label + 1);
        positions[label].push_back(i);
    }
}

std::uint32_t PreparedTree::count_from(Item label, std::uint32_t from) const {
    const auto l = static_cast<std::size_t>(label);
    if (l >= positions.size()) return 0;
    const auto& pos = positions[l];
    return static_cast<std::uint32_t>(pos.end() - std::lower_bound(pos.begin(), pos.end(), from));
}

bool label_prefilter(const PreparedPattern& pattern, const PreparedTree& subtree) {
    return pattern.labels.is_subset_of(subtree.labels);
}

bool label_prefilter(const Pattern& pattern, const EncodedTree& subtree) {
    return LabelSet(pattern.items()).is_subset_of(LabelSet(subtree.items()));
}

namespace {

// A point where the scan may resume: the subtree node just passed was
// a label match that this branch declines to use.
struct Resume {
    std::uint32_t pos;
    std::uint32_t p;
    std::int32_t depth;
    std::vector<std::int32_t> depth_stack;
};

struct StateHash {
    std::size_t operator()(const std::vector<std::int32_t>& v) const noexcept {
        std::size_t h = 1469598103934665603ULL;
        for (auto x : v) {
            h ^= static_cast<std::uint32_t>(x);
            h *= 1099511628211ULL;
        }
        return h;
    }
};

class MatchRun {
public:
    MatchRun(const PreparedPattern& pattern, const PreparedTree& subtree, std::size_t budget)
        : pattern_(pattern), subtree_(subtree), budget_(budget) {}

    /// nullopt when the state budget ran out before a decision.
    std::optional<bool> run() {
        if (pattern_.items.empty()) return true;
        if (scan(Resume{0, 0, 0, {}})) return true;
        while (!history_.empty()) {
            if (exhausted_) return std::nullopt;
            Resume next = std::move(history_.back());
            history_.pop_back();
            if (scan(std::move(next))) return true;
        }
        return exhausted_ ? std::optional<bool>{} : std::optional<bool>{false};
    }

private:
    // The rest of the pattern can still fit into the rest of the subtree.
    bool feasible(std::uint32_t pos, std::uint32_t p) const {
        if (pattern_.items.size() - p > subtree_.items.size() - pos) return false;
        for (std::size_t k = 0; k < pattern_.distinct_labels.size(); ++k)
            if (pattern_.need[k][p] > subtree_.count_from(pattern_.distinct_labels[k], pos)) return false;
        return true;
    }

    void offer(std::uint32_t pos, std::uint32_t p, std::int32_t depth, const std::vector<std::int32_t>& stack) {
        if (pos >= subtree_.items.size() || !feasible(pos, p)) return;
        std::vector<std::int32_t> key;
        key.reserve(stack.size() + 2);
        key.push_back(static_cast<std::int32_t>(pos));
        key.push_back(static_cast<std::int32_t>(p));
        key.insert(key.end(), stack.begin(), stack.end());
        if (visited_.size() >= budget_) {
            exhausted_ = true;
            return;
        }
        if (!visited_.insert(std::move(key)).second) return;
        history_.push_back(Resume{pos, p, depth, stack});
    }

    bool scan(Resume state) {
        const auto& pattern = pattern_.items;
        const auto& items = subtree_.items;
        const auto pattern_length = static_cast<std::uint32_t>(pattern.size());
        std::uint32_t p = state.p;
        std::int32_t depth = state.depth;
        auto& depth_stack = state.depth_stack;
        for (std::uint32_t i = state.pos; i < items.size(); ++i) {
            const Item item = items[i];
            if (is_up(item)) {
                if (!depth_stack.empty() && depth - 1 == depth_stack.back()) {
                    depth_stack.pop_back();
                    // The pattern still wants a descendant of the node being closed.
                    if (!is_up(pattern[p])) return false;
                    ++p;
                }
                --depth;
            } else {
                if (pattern[p] == item) {
                    offer(i + 1, p, depth + 1, depth_stack);
                    depth_stack.push_back(depth);
                    ++p;
                }
                ++depth;
            }
            if (p == pattern_length) return true;
        }
        return false;
    }

    const PreparedPattern& pattern_;
    const PreparedTree& subtree_;
    std::size_t budget_;
    bool exhausted_ = false;
    std::vector<Resume> history_;
    std::unordered_set<std::vector<std::int32_t>, StateHash> visited_;
};

struct Nodes {
    std::vector<Item> label;
    std::vector<std::uint32_t> last;
    std::vector<std::vector<std::uint32_t>> children;

    explicit Nodes(const std::vector<Item>& items) {
        std::vector<std::uint32_t> open;
        for (Item item : items) {
            if (is_up(item)) {
                last[open.back()] = static_cast<std::uint32_t>(label.size() - 1);
                open.pop_back();
                continue;
            }
            const auto id = static_cast<std::uint32_t>(label.size());
            if (!open.empty()) children[open.back()].push_back(id);
            open.push_back(id);
            label.push_back(item);
            last.push_back(0);
            children.emplace_back();
        }
        for (auto k : open) last[k] = static_cast<std::uint32_t>(label.size() - 1);
    }
};

}  // namespace

bool pattern_included(const PreparedPattern& pattern, const PreparedTree& subtree) {
    const Nodes p(pattern.items);
    const Nodes t(subtree.items);
    const std::size_t m = p.label.size(), n = t.label.size();
    if (m == 0) return true;
    // rooted[v * n + u]: pattern subtree v embeds with v mapped to u.
    std::vector<char> rooted(m * n, 0);
    for (std::size_t v = m; v-- > 0;) {
        for (std::size_t u = 0; u < n; ++u) {
            if (t.label[u] != p.label[v]) continue;
            // Place v's children left to right, each at the candidate whose
            // subtree ends first; that leaves the most room for the rest.
            std::uint32_t from = static_cast<std::uint32_t>(u) + 1;
            bool ok = true;
            for (std::uint32_t c : p.children[v]) {
                std::uint32_t best_end = 0;
                bool found = false;
                for (std::uint32_t w = from; w <= t.last[u] && (!found || w <= best_end); ++w) {
                    if (rooted[c * n + w] && (!found || t.last[w] < best_end)) {
                        best_end = t.last[w];
                        found = true;
                    }
                }
                if (!found) {
                    ok = false;
                    break;
                }
                from = best_end + 1;
            }
            rooted[v * n + u] = ok ? 1 : 0;
        }
    }
    for (std::size_t u = 0; u < n; ++u)
        if (rooted[u]) return true;
    return false;
}

bool pattern_matches(const PreparedPattern& pattern, const PreparedTree& subtree, std::size_t state_budget) {
    if (auto decided = MatchRun(pattern, subtree, state_budget).run()) return *decided;
    return pattern_included(pattern, subtree);
}

bool pattern_matches(const Pattern& pattern, const EncodedTree& subtree) {
    return pattern_matches(PreparedPattern(pattern), PreparedTree(subtree));
}

}  // namespace echo
