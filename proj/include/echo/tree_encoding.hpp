#pragma once

// Depth-first string encoding of rooted, ordered, labeled trees.
//
// A tree is a preorder walk where every label pushes a node and every
// UP marker returns to the parent. Full trees carry one UP per edge
// (2n - 1 items for n labels); patterns drop the trailing UPs.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace echo {

using Item = std::int32_t;
inline constexpr Item kUp = -1;

inline bool is_up(Item item) { return item == kUp; }

class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class MalformedEncoding : public Error {
public:
    MalformedEncoding(std::size_t position, std::string reason);
    std::size_t position() const noexcept { return position_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t position_;
    std::string reason_;
};

class InvalidLabel : public Error {
public:
    explicit InvalidLabel(const std::string& text);
};

/// Text spelling of the UP marker in the whitespace-separated debug form.
inline constexpr std::string_view kUpToken = "UP";

bool is_valid_label_text(std::string_view text);

/// Interns label strings to dense ids. Ids are assigned in first-seen order.
class LabelTable {
public:
    Item intern(std::string_view text);
    std::optional<Item> find(std::string_view text) const;
    const std::string& text(Item id) const { return names_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

    bool operator==(const LabelTable& other) const { return names_ == other.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, Item> ids_;
};

class EncodedTree {
public:
    EncodedTree() = default;

    /// Throws MalformedEncoding unless `items` is a full-form tree.
    static EncodedTree validate(std::vector<Item> items);

    const std::vector<Item>& items() const noexcept { return items_; }
    std::size_t node_count() const noexcept { return (items_.size() + 1) / 2; }

    bool operator==(const EncodedTree&) const = default;
    auto operator<=>(const EncodedTree&) const = default;

private:
    explicit EncodedTree(std::vector<Item> items) : items_(std::move(items)) {}
    std::vector<Item> items_;
};

class Pattern {
public:
    Pattern() = default;

    /// Strips trailing UPs and validates the prefix form.
    static Pattern canonical(std::vector<Item> items);

    const std::vector<Item>& items() const noexcept { return items_; }
    std::size_t size() const noexcept { return size_; }

    /// Re-appends the stripped UPs, giving the pattern as a full tree.
    EncodedTree as_tree() const;

    bool operator==(const Pattern& other) const { return items_ == other.items_; }
    auto operator<=>(const Pattern& other) const { return items_ <=> other.items_; }

private:
    Pattern(std::vector<Item> items, std::size_t size) : items_(std::move(items)), size_(size) {}
    std::vector<Item> items_;
    std::size_t size_ = 0;
};

struct PatternHash {
    std::size_t operator()(const Pattern& p) const noexcept;
};

EncodedTree validate(std::vector<Item> items);
Pattern canonical_pattern(std::vector<Item> items);

/// Distinct labels, ascending by id.
std::vector<Item> labels_of(const std::vector<Item>& items);
inline std::vector<Item> labels_of(const EncodedTree& t) { return labels_of(t.items()); }
inline std::vector<Item> labels_of(const Pattern& p) { return labels_of(p.items()); }

/// Parses the whitespace-separated debug form ("a b UP c UP"), interning labels.
std::vector<Item> parse_items(std::string_view text, LabelTable& table);
std::string format_items(const std::vector<Item>& items, const LabelTable& table);

/// A tree or pattern carrying its own label list: the interchange form
/// {"labels": [...], "items": [...]} where -1 is UP.
struct LabeledTree {
    std::vector<std::string> labels;
    std::vector<Item> items;

    bool operator==(const LabeledTree&) const = default;

    std::vector<std::string> label_texts() const;
    /// Re-expresses items against `table`, interning unseen labels.
    std::vector<Item> intern_into(LabelTable& table) const;
};

/// Builds the interchange form from items in `table`'s id space; the local
/// label list is ordered by first occurrence.
LabeledTree to_labeled(const std::vector<Item>& items, const LabelTable& table);

nlohmann::json to_json(const LabeledTree& tree);
/// `require_full_tree` enforces items.size() == 2n - 1.
LabeledTree labeled_tree_from_json(const nlohmann::json& j, bool require_full_tree);

}  // namespace echo
