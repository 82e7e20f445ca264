#include "echo/ingest.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <unistd.h>

#include "echo/python_parser.hpp"

namespace echo {

nlohmann::json to_json(const SyntaxNode& node) {
    nlohmann::json children = nlohmann::json::array();
    for (const auto& c : node.children) children.push_back(to_json(c));
    nlohmann::json j{
        {"kind", node.kind},
        {"span", {node.span.start_line, node.span.start_col, node.span.end_line, node.span.end_col}},
        {"children", std::move(children)}};
    if (!node.text.empty()) j["text"] = node.text;
    return j;
}

namespace {

SyntaxNode read_syntax_node(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind") || !j.contains("span"))
        throw Error("SchemaError", "syntax node needs 'kind' and 'span'");
    SyntaxNode node;
    node.kind = j.at("kind").get<std::string>();
    const auto& span = j.at("span");
    if (!span.is_array() || span.size() != 4)
        throw Error("SchemaError", "syntax node span must be [sl, sc, el, ec]");
    node.span = {span[0].get<int>(), span[1].get<int>(), span[2].get<int>(), span[3].get<int>()};
    if (auto it = j.find("text"); it != j.end()) node.text = it->get<std::string>();
    if (auto it = j.find("children"); it != j.end())
        for (const auto& c : *it) node.children.push_back(read_syntax_node(c));
    return node;
}

}  // namespace

SyntaxNode syntax_node_from_json(const nlohmann::json& j) {
    try {
        return read_syntax_node(j);
    } catch (const nlohmann::json::exception& e) {
        throw Error("SchemaError", std::string("syntax node: ") + e.what());
    }
}

namespace {

bool before_or_equal(int l1, int c1, int l2, int c2) { return l1 < l2 || (l1 == l2 && c1 <= c2); }

const SyntaxNode* span_violation(const SyntaxNode& node) {
    const Span& s = node.span;
    if (!before_or_equal(s.start_line, s.start_col, s.end_line, s.end_col)) return &node;
    const SyntaxNode* prev = nullptr;
    for (const auto& c : node.children) {
        const Span& cs = c.span;
        if (!before_or_equal(s.start_line, s.start_col, cs.start_line, cs.start_col) ||
            !before_or_equal(cs.end_line, cs.end_col, s.end_line, s.end_col))
            return &c;
        if (prev && !before_or_equal(prev->span.end_line, prev->span.end_col, cs.start_line,
                                     cs.start_col))
            return &c;
        if (auto* bad = span_violation(c)) return bad;
        prev = &c;
    }
    return nullptr;
}

}  // namespace

std::optional<std::string> find_span_violation(const SyntaxNode& root) {
    if (auto* bad = span_violation(root)) return bad->kind;
    return std::nullopt;
}

SyntaxNode SyntaxJsonAdapter::parse(std::string_view source) const {
    if (source.find_first_not_of(" \t\r\n") == std::string_view::npos) return SyntaxNode{"module", {}, {}, {}};
    try {
        return syntax_node_from_json(nlohmann::json::parse(source));
    } catch (const nlohmann::json::exception& e) {
        throw Error("SchemaError", std::string("syntax-json adapter: ") + e.what());
    }
}

SyntaxNode CommandAdapter::parse(std::string_view source) const {
    char path[] = "/tmp/echo-src-XXXXXX";
    const int fd = ::mkstemp(path);
    if (fd < 0) throw IoError("cannot create temporary file for parser command");
    {
        std::ofstream out(path, std::ios::binary);
        out.write(source.data(), static_cast<std::streamsize>(source.size()));
    }
    ::close(fd);
    const std::string command = command_ + " < '" + path + "'";
    std::string output;
    if (FILE* pipe = ::popen(command.c_str(), "r")) {
        std::array<char, 4096> buffer{};
        std::size_t n = 0;
        while ((n = std::fread(buffer.data(), 1, buffer.size(), pipe)) > 0) output.append(buffer.data(), n);
        const int status = ::pclose(pipe);
        ::unlink(path);
        if (status != 0) throw IoError("parser command failed: " + command_);
    } else {
        ::unlink(path);
        throw IoError("cannot run parser command: " + command_);
    }
    return SyntaxJsonAdapter{}.parse(output);
}

namespace {

class PythonAdapter : public ParserAdapter {
public:
    SyntaxNode parse(std::string_view source) const override { return python::parse(source); }
    std::set<std::string> identifier_kinds() const override { return {"identifier"}; }
};

}  // namespace

GrammarRegistry GrammarRegistry::with_builtins() {
    GrammarRegistry r;
    r.add("python", std::make_shared<PythonAdapter>());
    r.add("syntax-json", std::make_shared<SyntaxJsonAdapter>());
    return r;
}

void GrammarRegistry::add(std::string grammar, std::shared_ptr<const ParserAdapter> adapter) {
    adapters_[std::move(grammar)] = std::move(adapter);
}

const ParserAdapter& GrammarRegistry::get(std::string_view grammar) const {
    auto it = adapters_.find(grammar);
    if (it == adapters_.end()) throw UnknownGrammar(std::string(grammar));
    return *it->second;
}

bool GrammarRegistry::contains(std::string_view grammar) const { return adapters_.find(grammar) != adapters_.end(); }

const GrammarRegistry& default_registry() {
    static const GrammarRegistry registry = GrammarRegistry::with_builtins();
    return registry;
}

SyntaxNode parse_source(std::string_view source, std::string_view grammar, const GrammarRegistry& registry) {
    return registry.get(grammar).parse(source);
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SyntaxNode postprocess_identifiers(SyntaxNode root, const std::set<std::string>& identifier_kinds) {
    if (root.children.empty() && identifier_kinds.count(root.kind) && !root.text.empty()) {
        SyntaxNode name;
        name.kind = std::string(kIdentifierPrefix) + root.text;
        name.span = root.span;
        root.children.push_back(std::move(name));
        return root;
    }
    for (auto& c : root.children) c = postprocess_identifiers(std::move(c), identifier_kinds);
    return root;
}

SyntaxNode parse_and_postprocess(std::string_view source, std::string_view grammar,
                                 const GrammarRegistry& registry) {
    const auto& adapter = registry.get(grammar);
    return postprocess_identifiers(adapter.parse(source), adapter.identifier_kinds());
}

namespace {

void collect_line_roots(const SyntaxNode& node, int line, std::vector<const SyntaxNode*>& out) {
    for (const auto& c : node.children) {
        if (c.span.end_line < line || c.span.start_line > line) continue;
        if (c.span.start_line == line && node.span.start_line != line) {
            out.push_back(&c);
        } else if (c.span.start_line < line) {
            collect_line_roots(c, line, out);
        }
    }
}

// The root itself is never a candidate: it is the file, not a line construct.
void collect_from_root(const SyntaxNode& root, int line, std::vector<const SyntaxNode*>& out) {
    for (const auto& c : root.children) {
        if (c.span.end_line < line || c.span.start_line > line) continue;
        if (c.span.start_line == line) {
            out.push_back(&c);
        } else {
            collect_line_roots(c, line, out);
        }
    }
}

struct Encoder {
    LabeledTree tree;
    std::unordered_map<std::string, Item> local;

    void label(const std::string& kind) {
        auto [it, inserted] = local.try_emplace(kind, static_cast<Item>(tree.labels.size()));
        if (inserted) tree.labels.push_back(kind);
        tree.items.push_back(it->second);
    }

    void encode(const SyntaxNode& node) {
        label(node.kind);
        for (const auto& c : node.children) {
            encode(c);
            tree.items.push_back(kUp);
        }
    }
};

}  // namespace

std::optional<LabeledTree> extract_line_context(const SyntaxNode& root, int line) {
    std::vector<const SyntaxNode*> maximal;
    collect_from_root(root, line, maximal);
    if (maximal.empty()) return std::nullopt;
    Encoder enc;
    if (maximal.size() == 1) {
        enc.encode(*maximal.front());
    } else {
        enc.label(std::string(kLineRootKind));
        for (const auto* n : maximal) {
            enc.encode(*n);
            enc.tree.items.push_back(kUp);
        }
    }
    return std::move(enc.tree);
}

}  // namespace echo
