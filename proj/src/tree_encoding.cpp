#include "echo/tree_encoding.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace echo {

MalformedEncoding::MalformedEncoding(std::size_t position, std::string reason)
    : Error("MalformedEncoding",
            "malformed encoding at item " + std::to_string(position) + ": " + reason),
      position_(position),
      reason_(std::move(reason)) {}

InvalidLabel::InvalidLabel(const std::string& text)
    : Error("InvalidLabel", "invalid label text '" + text + "'") {}

bool is_valid_label_text(std::string_view text) {
    return !text.empty() && text != kUpToken && text != "-1";
}

Item LabelTable::intern(std::string_view text) {
    if (!is_valid_label_text(text)) throw InvalidLabel(std::string(text));
    std::string key(text);
    if (auto it = ids_.find(key); it != ids_.end()) return it->second;
    auto id = static_cast<Item>(names_.size());
    names_.push_back(key);
    ids_.emplace(std::move(key), id);
    return id;
}

std::optional<Item> LabelTable::find(std::string_view text) const {
    if (auto it = ids_.find(std::string(text)); it != ids_.end()) return it->second;
    return std::nullopt;
}

namespace {

// Returns the final depth; throws on leading UP or underflow.
long check_prefix(const std::vector<Item>& items) {
    if (items.empty()) throw MalformedEncoding(0, "empty input");
    if (is_up(items.front())) throw MalformedEncoding(0, "leading UP");
    long depth = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (is_up(items[i])) {
            --depth;
            if (depth < 1) throw MalformedEncoding(i, "depth underflow");
        } else if (items[i] < 0) {
            throw MalformedEncoding(i, "negative label id");
        } else {
            ++depth;
        }
    }
    return depth;
}

}  // namespace

EncodedTree EncodedTree::validate(std::vector<Item> items) {
    if (items.empty()) throw MalformedEncoding(0, "empty input");
    if (is_up(items.front())) throw MalformedEncoding(0, "leading UP");
    long depth = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (is_up(items[i])) {
            --depth;
            if (depth < 1) {
                // Closing the root is the classic "a UP" mistake.
                throw MalformedEncoding(i, i + 1 == items.size() ? "final depth 0"
                                                                 : "depth underflow");
            }
        } else if (items[i] < 0) {
            throw MalformedEncoding(i, "negative label id");
        } else {
            ++depth;
        }
    }
    if (depth != 1) {
        throw MalformedEncoding(items.size(),
                                "final depth " + std::to_string(depth) + ", expected 1");
    }
    return EncodedTree(std::move(items));
}

Pattern Pattern::canonical(std::vector<Item> items) {
    while (!items.empty() && is_up(items.back())) items.pop_back();
    check_prefix(items);
    auto size = static_cast<std::size_t>(
        std::count_if(items.begin(), items.end(), [](Item i) { return !is_up(i); }));
    return Pattern(std::move(items), size);
}

EncodedTree Pattern::as_tree() const {
    auto items = items_;
    const std::size_t ups = std::count_if(items.begin(), items.end(), is_up);
    items.insert(items.end(), size_ - 1 - ups, kUp);
    return EncodedTree::validate(std::move(items));
}

std::size_t PatternHash::operator()(const Pattern& p) const noexcept {
    std::size_t h = 1469598103934665603ULL;
    for (Item i : p.items()) {
        h ^= static_cast<std::size_t>(static_cast<std::uint32_t>(i));
        h *= 1099511628211ULL;
    }
    return h;
}

EncodedTree validate(std::vector<Item> items) { return EncodedTree::validate(std::move(items)); }

Pattern canonical_pattern(std::vector<Item> items) { return Pattern::canonical(std::move(items)); }

std::vector<Item> labels_of(const std::vector<Item>& items) {
    std::vector<Item> out;
    out.reserve(items.size());
    for (Item i : items)
        if (!is_up(i)) out.push_back(i);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<Item> parse_items(std::string_view text, LabelTable& table) {
    std::vector<Item> out;
    std::istringstream in{std::string(text)};
    std::string token;
    while (in >> token) out.push_back(token == kUpToken ? kUp : table.intern(token));
    return out;
}

std::string format_items(const std::vector<Item>& items, const LabelTable& table) {
    std::string out;
    for (Item i : items) {
        if (!out.empty()) out += ' ';
        out += is_up(i) ? std::string(kUpToken) : table.text(i);
    }
    return out;
}

std::vector<std::string> LabeledTree::label_texts() const {
    std::vector<std::string> out;
    for (Item i : items)
        if (!is_up(i)) out.push_back(labels.at(static_cast<std::size_t>(i)));
    return out;
}

std::vector<Item> LabeledTree::intern_into(LabelTable& table) const {
    std::vector<Item> local_to_table;
    local_to_table.reserve(labels.size());
    for (const auto& l : labels) local_to_table.push_back(table.intern(l));
    std::vector<Item> out;
    out.reserve(items.size());
    for (Item i : items) {
        if (is_up(i)) {
            out.push_back(kUp);
        } else {
            if (i < 0 || static_cast<std::size_t>(i) >= labels.size())
                throw MalformedEncoding(out.size(), "label index out of range");
            out.push_back(local_to_table[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

LabeledTree to_labeled(const std::vector<Item>& items, const LabelTable& table) {
    LabeledTree out;
    std::unordered_map<Item, Item> local;
    out.items.reserve(items.size());
    for (Item i : items) {
        if (is_up(i)) {
            out.items.push_back(kUp);
            continue;
        }
        auto [it, inserted] = local.try_emplace(i, static_cast<Item>(out.labels.size()));
        if (inserted) out.labels.push_back(table.text(i));
        out.items.push_back(it->second);
    }
    return out;
}

nlohmann::json to_json(const LabeledTree& tree) {
    return nlohmann::json{{"items", tree.items}, {"labels", tree.labels}};
}

LabeledTree labeled_tree_from_json(const nlohmann::json& j, bool require_full_tree) {
    if (!j.is_object() || !j.contains("labels") || !j.contains("items"))
        throw Error("SchemaError", "tree interchange needs 'labels' and 'items'");
    LabeledTree out;
    for (const auto& l : j.at("labels")) {
        auto text = l.get<std::string>();
        if (!is_valid_label_text(text)) throw InvalidLabel(text);
        out.labels.push_back(std::move(text));
    }
    for (const auto& i : j.at("items")) {
        auto v = i.get<long long>();
        if (v < -1 || v >= static_cast<long long>(out.labels.size()))
            throw MalformedEncoding(out.items.size(), "item out of range");
        out.items.push_back(static_cast<Item>(v));
    }
    if (require_full_tree) {
        EncodedTree::validate(out.items);
        const std::size_t n = std::count_if(out.items.begin(), out.items.end(),
                                            [](Item i) { return !is_up(i); });
        if (out.items.size() != 2 * n - 1)
            throw MalformedEncoding(out.items.size(), "tree items must number 2n-1");
    } else {
        Pattern::canonical(out.items);
    }
    return out;
}

}  // namespace echo
