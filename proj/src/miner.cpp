#include "echo/miner.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace echo {

std::size_t min_support_count(double min_support, std::size_t n, bool strict) {
    const double exact = min_support * static_cast<double>(n);
    double count = strict ? std::floor(exact + 1e-9) + 1.0 : std::ceil(exact - 1e-9);
    return std::max<std::size_t>(1, static_cast<std::size_t>(count));
}

namespace {

// Preorder view of one forest tree.
struct TreeIndex {
    std::vector<Item> label;
    std::vector<std::uint32_t> last;  // last descendant's preorder index

    explicit TreeIndex(const EncodedTree& tree) {
        std::vector<std::uint32_t> open;
        for (Item item : tree.items()) {
            if (is_up(item)) {
                last[open.back()] = static_cast<std::uint32_t>(label.size() - 1);
                open.pop_back();
            } else {
                open.push_back(static_cast<std::uint32_t>(label.size()));
                label.push_back(item);
                last.push_back(0);
            }
        }
        for (auto k : open) last[k] = static_cast<std::uint32_t>(label.size() - 1);
    }
};

// One embedding of prefix + element: the prefix occurrence it extends and
// the tree node matched by the element.
struct ScopeEntry {
    std::uint32_t prefix_occ;
    std::uint32_t tree;
    std::uint32_t node;
};

struct Element {
    Item label;
    std::size_t attach;  // pattern position of the parent node
    std::vector<ScopeEntry> entries;
};

struct PatternNode {
    Item label;
    std::size_t parent;
};

std::size_t distinct_trees(const std::vector<ScopeEntry>& entries) {
    // Entries are ordered by prefix occurrence, hence by tree.
    std::size_t count = 0;
    std::uint32_t prev = 0;
    bool first = true;
    for (const auto& e : entries) {
        if (first || e.tree != prev) {
            ++count;
            prev = e.tree;
            first = false;
        }
    }
    return count;
}

class Miner {
public:
    Miner(const std::vector<EncodedTree>& forest, const MinerConfig& config)
        : config_(config), threshold_(min_support_count(config.min_support, forest.size(), config.strict_support)) {
        trees_.reserve(forest.size());
        for (const auto& t : forest) trees_.emplace_back(t);
    }

    std::vector<MinedPattern> run() {
        std::map<Item, std::vector<std::pair<std::uint32_t, std::uint32_t>>> occurrences;
        for (std::uint32_t t = 0; t < trees_.size(); ++t)
            for (std::uint32_t k = 0; k < trees_[t].label.size(); ++k) occurrences[trees_[t].label[k]].push_back({t, k});

        std::vector<Item> frequent;
        for (const auto& [label, occ] : occurrences) {
            std::vector<ScopeEntry> entries;
            for (auto [t, k] : occ) entries.push_back({0, t, k});
            const std::size_t support = distinct_trees(entries);
            if (support >= threshold_) {
                frequent.push_back(label);
                emit({{label, 0}}, support);
            }
        }

        for (Item root : frequent) {
            const auto& occ = occurrences[root];
            std::vector<Element> elements;
            for (Item child : frequent) {
                Element e{child, 0, {}};
                for (std::uint32_t o = 0; o < occ.size(); ++o) {
                    const auto [t, k] = occ[o];
                    const auto& tree = trees_[t];
                    for (std::uint32_t v = k + 1; v <= tree.last[k]; ++v)
                        if (tree.label[v] == child) e.entries.push_back({o, t, v});
                }
                if (distinct_trees(e.entries) >= threshold_) elements.push_back(std::move(e));
            }
            extend_class({{root, 0}}, elements);
        }

        std::sort(out_.begin(), out_.end(),
                  [](const MinedPattern& a, const MinedPattern& b) { return a.pattern < b.pattern; });
        return std::move(out_);
    }

private:
    void emit(const std::vector<PatternNode>& nodes, std::size_t support) {
        if (config_.max_patterns != 0 && out_.size() >= config_.max_patterns)
            throw PatternExplosion(config_.max_patterns);
        std::vector<std::size_t> depth(nodes.size(), 0);
        std::vector<Item> items{nodes.front().label};
        for (std::size_t k = 1; k < nodes.size(); ++k) {
            depth[k] = depth[nodes[k].parent] + 1;
            for (std::size_t up = depth[k - 1]; up >= depth[k]; --up) items.push_back(kUp);
            items.push_back(nodes[k].label);
        }
        out_.push_back({Pattern::canonical(std::move(items)), support});
    }

    // `prefix` is the class prefix; each element extends it by one node.
    void extend_class(const std::vector<PatternNode>& prefix, const std::vector<Element>& elements) {
        for (const auto& x : elements) {
            auto grown = prefix;
            grown.push_back({x.label, x.attach});
            emit(grown, distinct_trees(x.entries));

            const std::size_t x_pos = prefix.size();
            std::vector<Element> next;
            for (const auto& y : elements) {
                if (y.attach == x.attach) {
                    Element child{y.label, x_pos, {}};
                    join(x, y, true, child.entries);
                    if (distinct_trees(child.entries) >= threshold_) next.push_back(std::move(child));
                }
                if (y.attach <= x.attach) {
                    Element sibling{y.label, y.attach, {}};
                    join(x, y, false, sibling.entries);
                    if (distinct_trees(sibling.entries) >= threshold_) next.push_back(std::move(sibling));
                }
            }
            if (!next.empty()) extend_class(grown, next);
        }
    }

    // In-scope: y's node lies strictly inside x's subtree (child extension).
    // Out-scope: y's node follows x's whole subtree (sibling extension).
    void join(const Element& x, const Element& y, bool in_scope, std::vector<ScopeEntry>& out) const {
        std::size_t yi = 0;
        for (std::uint32_t xe = 0; xe < x.entries.size(); ++xe) {
            const auto& a = x.entries[xe];
            while (yi < y.entries.size() && y.entries[yi].prefix_occ < a.prefix_occ) ++yi;
            const auto& tree = trees_[a.tree];
            for (std::size_t k = yi; k < y.entries.size() && y.entries[k].prefix_occ == a.prefix_occ; ++k) {
                const std::uint32_t v = y.entries[k].node;
                const bool ok = in_scope ? (v > a.node && v <= tree.last[a.node]) : (v > tree.last[a.node]);
                if (ok) out.push_back({xe, a.tree, v});
            }
        }
    }

    MinerConfig config_;
    std::size_t threshold_;
    std::vector<TreeIndex> trees_;
    std::vector<MinedPattern> out_;
};

}  // namespace

std::vector<MinedPattern> mine_patterns_with_support(const std::vector<EncodedTree>& forest,
                                                     const MinerConfig& config) {
    if (forest.empty()) return {};
    return Miner(forest, config).run();
}

std::vector<Pattern> mine_patterns(const std::vector<EncodedTree>& forest, const MinerConfig& config) {
    std::vector<Pattern> out;
    for (auto& m : mine_patterns_with_support(forest, config)) out.push_back(std::move(m.pattern));
    return out;
}

}  // namespace echo
