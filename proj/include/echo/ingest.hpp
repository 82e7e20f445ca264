#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "echo/tree_encoding.hpp"

namespace echo {

/// 0-based lines and byte columns; the end point is exclusive.
struct Span {
    int start_line = 0;
    int start_col = 0;
    int end_line = 0;
    int end_col = 0;

    bool operator==(const Span&) const = default;
};

struct SyntaxNode {
    std::string kind;
    Span span;
    std::vector<SyntaxNode> children;
    /// Token text for leaves, when the front end provides it.
    std::string text;

    bool operator==(const SyntaxNode&) const = default;
};

inline constexpr std::string_view kErrorKind = "ERROR";
inline constexpr std::string_view kLineRootKind = "LINE";
inline constexpr std::string_view kIdentifierPrefix = "id:";

nlohmann::json to_json(const SyntaxNode& node);
SyntaxNode syntax_node_from_json(const nlohmann::json& j);

/// Checks the span nesting and ordering rules; returns the first offending
/// node's kind, if any.
std::optional<std::string> find_span_violation(const SyntaxNode& root);

/// Front end turning source text into a SyntaxNode tree. Parsing is total:
/// malformed input yields ERROR nodes rather than an exception.
class ParserAdapter {
public:
    virtual ~ParserAdapter() = default;
    virtual SyntaxNode parse(std::string_view source) const = 0;
    /// Leaf kinds that receive an "id:<text>" child during post-processing.
    virtual std::set<std::string> identifier_kinds() const = 0;
};

class UnknownGrammar : public Error {
public:
    explicit UnknownGrammar(const std::string& grammar)
        : Error("UnknownGrammar", "unknown grammar '" + grammar + "'") {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("IoError", message) {}
};

class GrammarRegistry {
public:
    /// Registry holding "python" and "syntax-json".
    static GrammarRegistry with_builtins();

    void add(std::string grammar, std::shared_ptr<const ParserAdapter> adapter);
    const ParserAdapter& get(std::string_view grammar) const;
    bool contains(std::string_view grammar) const;

private:
    std::map<std::string, std::shared_ptr<const ParserAdapter>, std::less<>> adapters_;
};

const GrammarRegistry& default_registry();

/// Reads already-parsed SyntaxNode JSON as its "source".
class SyntaxJsonAdapter : public ParserAdapter {
public:
    explicit SyntaxJsonAdapter(std::set<std::string> identifier_kinds = {"identifier"})
        : identifier_kinds_(std::move(identifier_kinds)) {}
    SyntaxNode parse(std::string_view source) const override;
    std::set<std::string> identifier_kinds() const override { return identifier_kinds_; }

private:
    std::set<std::string> identifier_kinds_;
};

/// Runs an external command with the source on stdin and reads SyntaxNode
/// JSON from its stdout.
class CommandAdapter : public ParserAdapter {
public:
    CommandAdapter(std::string command, std::set<std::string> identifier_kinds)
        : command_(std::move(command)), identifier_kinds_(std::move(identifier_kinds)) {}
    SyntaxNode parse(std::string_view source) const override;
    std::set<std::string> identifier_kinds() const override { return identifier_kinds_; }

private:
    std::string command_;
    std::set<std::string> identifier_kinds_;
};

SyntaxNode parse_source(std::string_view source, std::string_view grammar,
                        const GrammarRegistry& registry = default_registry());

std::string read_text_file(const std::filesystem::path& path);

/// Adds an "id:<text>" child under every identifier leaf.
SyntaxNode postprocess_identifiers(SyntaxNode root, const std::set<std::string>& identifier_kinds);

/// parse_source followed by postprocess_identifiers.
SyntaxNode parse_and_postprocess(std::string_view source, std::string_view grammar,
                                 const GrammarRegistry& registry = default_registry());

/// Context subtree of a 0-based line: the maximal non-root nodes starting on
/// that line (with all descendants), under a synthetic LINE root when there
/// are several. None when no node starts on the line.
std::optional<LabeledTree> extract_line_context(const SyntaxNode& root, int line);

}  // namespace echo
