#include <doctest.h>

#include <functional>
#include <random>

#include "echo/ingest.hpp"

using namespace echo;

namespace {

const char* kJumpSource = "def jump(alpha, n):\n"
                       "    alpha_number = ord(alpha)\n"
                       "    adjusted = alpha_number + n\n"
                       "    return chr(adjusted)\n";

std::string debug_form(const LabeledTree& tree) {
    LabelTable table;
    return format_items(tree.intern_into(table), table);
}

// Maximal nodes starting on `line`, straight from the definition: every
// non-root node that starts there and whose parent does not (the root
// counts as starting elsewhere).
std::vector<const SyntaxNode*> brute_force_maximal(const SyntaxNode& root, int line) {
    std::vector<const SyntaxNode*> out;
    std::function<void(const SyntaxNode&, const SyntaxNode*)> walk = [&](const SyntaxNode& n, const SyntaxNode* parent) {
        if (parent && n.span.start_line == line && (parent == &root || parent->span.start_line != line))
            out.push_back(&n);
        for (const auto& c : n.children) walk(c, &n);
    };
    walk(root, nullptr);
    return out;
}

std::size_t count_nodes(const SyntaxNode& n) {
    std::size_t total = 1;
    for (const auto& c : n.children) total += count_nodes(c);
    return total;
}

void expect_labels_are_kinds(const LabeledTree& tree, const std::set<std::string>& kinds) {
    for (const auto& l : tree.labels) {
        const bool ok = kinds.count(l) || l.rfind(std::string(kIdentifierPrefix), 0) == 0 || l == kErrorKind ||
                        l == kLineRootKind;
        CHECK_MESSAGE(ok, l);
    }
}

void collect_kinds(const SyntaxNode& n, std::set<std::string>& kinds) {
    kinds.insert(n.kind);
    for (const auto& c : n.children) collect_kinds(c, kinds);
}

}  // namespace

TEST_CASE("parsing the listing") {
    auto root = parse_source(kJumpSource, "python");
    CHECK(root.kind == "module");
    REQUIRE(root.children.size() == 1);
    const auto& def = root.children[0];
    CHECK(def.kind == "function_definition");
    const auto& block = def.children.back();
    CHECK(block.kind == "block");
    CHECK(block.children.size() == 3);
    CHECK(root.span == Span{0, 0, 4, 0});
    CHECK_FALSE(find_span_violation(root));
}

TEST_CASE("empty and broken sources") {
    auto empty = parse_source("", "python");
    CHECK(empty.kind == "module");
    CHECK(empty.children.empty());

    auto broken = parse_source("x = (", "python");
    REQUIRE(broken.children.size() == 1);
    CHECK(broken.children[0].kind == kErrorKind);
    CHECK_FALSE(find_span_violation(broken));

    CHECK_THROWS_AS(parse_source("x", "cobol"), UnknownGrammar);
}

TEST_CASE("identifier post-processing adds name children") {
    auto root = parse_and_postprocess(kJumpSource, "python");
    std::set<std::string> kinds;
    collect_kinds(root, kinds);
    CHECK(kinds.count("id:adjusted"));
    CHECK(kinds.count("id:n"));
    CHECK(kinds.count("id:alpha"));
    CHECK(kinds.count("identifier"));
    // The identifier node keeps its kind and gains one name child.
    std::function<void(const SyntaxNode&)> check = [&](const SyntaxNode& n) {
        if (n.kind == "identifier") {
            REQUIRE(n.children.size() == 1);
            CHECK(n.children[0].kind == "id:" + n.text);
            CHECK(n.children[0].span == n.span);
        }
        for (const auto& c : n.children) check(c);
    };
    check(root);
}

TEST_CASE("line context of the listing") {
    auto root = parse_and_postprocess(kJumpSource, "python");
    auto line2 = extract_line_context(root, 2);
    REQUIRE(line2);
    CHECK(debug_form(*line2) ==
          "expression_statement assignment identifier id:adjusted UP UP binary_operator identifier id:alpha_number "
          "UP UP + UP identifier id:n UP UP UP UP");
    auto line1 = extract_line_context(root, 1);
    REQUIRE(line1);
    CHECK(line1->labels.front() == "expression_statement");
    auto line0 = extract_line_context(root, 0);
    REQUIRE(line0);
    CHECK(line0->labels.front() == "function_definition");
    CHECK_FALSE(extract_line_context(root, 4));
    CHECK_FALSE(extract_line_context(root, 99));
}

TEST_CASE("blank line has no context") {
    auto root = parse_and_postprocess("a = 1\n\nb = 2\n", "python");
    CHECK_FALSE(extract_line_context(root, 1));
    CHECK(extract_line_context(root, 0));
    CHECK(extract_line_context(root, 2));
}

TEST_CASE("two statements on one line give a LINE root") {
    const char* source = "def f(x):\n"
                         "    y = x\n"
                         "    a = 1; b = 2\n";
    auto root = parse_and_postprocess(source, "python");
    auto m = brute_force_maximal(root, 2);
    REQUIRE(m.size() == 2);
    CHECK(m[0]->kind == "expression_statement");
    CHECK(m[1]->kind == "expression_statement");
    auto context = extract_line_context(root, 2);
    REQUIRE(context);
    CHECK(context->labels.front() == kLineRootKind);
    LabelTable table;
    auto tree = validate(context->intern_into(table));
    CHECK(tree.node_count() == 1 + count_nodes(*m[0]) + count_nodes(*m[1]));
}

TEST_CASE("line context matches the brute-force definition on every line") {
    const char* source = "import os\n"
                         "class Shape(object):\n"
                         "    def __init__(self, w, h):\n"
                         "        self.w = w; self.h = h\n"
                         "\n"
                         "    def area(self):\n"
                         "        if self.w > 0 and self.h > 0:\n"
                         "            return self.w * self.h\n"
                         "        else: return 0\n"
                         "for s in [Shape(1, 2), Shape(3,\n"
                         "          4)]:\n"
                         "    print(s.area())  # trailing\n"
                         "total = sum(x for x in range(10) if x % 2)\n"
                         "x = (\n";
    auto root = parse_and_postprocess(source, "python");
    CHECK_FALSE(find_span_violation(root));
    std::set<std::string> kinds;
    collect_kinds(root, kinds);
    for (int line = 0; line < 16; ++line) {
        CAPTURE(line);
        auto m = brute_force_maximal(root, line);
        auto context = extract_line_context(root, line);
        REQUIRE(context.has_value() == !m.empty());
        if (!context) continue;
        LabelTable table;
        auto tree = validate(context->intern_into(table));
        std::size_t expected_nodes = m.size() > 1 ? 1 : 0;
        for (auto* n : m) expected_nodes += count_nodes(*n);
        CHECK(tree.node_count() == expected_nodes);
        if (m.size() == 1) CHECK(context->labels.front() == m[0]->kind);
        expect_labels_are_kinds(*context, kinds);
        // Deterministic.
        CHECK(*extract_line_context(parse_and_postprocess(source, "python"), line) == *context);
    }
}

TEST_CASE("syntax-json adapter and interchange round trip") {
    auto root = parse_and_postprocess(kJumpSource, "python");
    auto j = to_json(root);
    CHECK(j["kind"] == "module");
    CHECK(j["span"] == nlohmann::json::array({0, 0, 4, 0}));
    auto back = syntax_node_from_json(j);
    CHECK(to_json(back) == j);

    auto raw = parse_source(kJumpSource, "python");
    auto via_json = parse_and_postprocess(to_json(raw).dump(), "syntax-json");
    CHECK(extract_line_context(via_json, 2) == extract_line_context(root, 2));

    CHECK_THROWS_AS(syntax_node_from_json(nlohmann::json::parse(R"({"kind": 3})")), Error);
}

TEST_CASE("span violations are reported") {
    SyntaxNode bad{"module", {0, 0, 2, 0}, {}, {}};
    bad.children.push_back(SyntaxNode{"a", {1, 0, 1, 5}, {}, {}});
    bad.children.push_back(SyntaxNode{"b", {0, 0, 0, 3}, {}, {}});
    CHECK(find_span_violation(bad));
    SyntaxNode outside{"module", {0, 0, 1, 0}, {}, {}};
    outside.children.push_back(SyntaxNode{"a", {0, 0, 3, 0}, {}, {}});
    CHECK(find_span_violation(outside));
}

TEST_CASE("random line soup never throws and always yields valid contexts") {
    const std::vector<std::string> pieces = {"x = 1", "def f(a):", "    return a", "if x:", "  y(", ")", "'''doc",
                                             "class C:", "    pass", "", "# c", "z = [1, 2", "for i in x: print(i)",
                                             "\tq", "@", "lambda: 0", "a[1:2] += b.c", "else:", "\"unterminated"};
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1), lines(1, 12);
    for (int round = 0; round < 300; ++round) {
        std::string source;
        const std::size_t n = lines(rng);
        for (std::size_t i = 0; i < n; ++i) source += pieces[pick(rng)] + "\n";
        CAPTURE(source);
        SyntaxNode root;
        REQUIRE_NOTHROW(root = parse_and_postprocess(source, "python"));
        CHECK_FALSE(find_span_violation(root));
        for (int line = 0; line <= static_cast<int>(n); ++line) {
            auto context = extract_line_context(root, line);
            if (context) {
                LabelTable table;
                REQUIRE_NOTHROW(validate(context->intern_into(table)));
            }
        }
    }
}
