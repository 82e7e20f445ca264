#include "echo/python_parser.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>
#include <utility>

namespace echo::python {

namespace {

bool is_name_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool is_name_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

// Longest first.
constexpr std::array<std::string_view, 47> kOperators = {
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=",
    ">=",  "==",  "!=",  "+=",  "-=",  "*=", "/=", "%=", "&=", "|=", "^=", "@=",
    "+",   "-",   "*",   "/",   "%",   "@",  "&",  "|",  "^",  "~",  "<",  ">",
    "(",   ")",   "[",   "]",   "{",   "}",  ",",  ":",  ";",  ".",  "="};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<Token> run() {
        while (pos_ < src_.size()) {
            if (at_line_start_ && paren_ == 0) {
                if (!indentation()) break;
                continue;
            }
            const char c = src_[pos_];
            if (c == ' ' || c == '\t' || c == '\f' || c == '\r') {
                ++pos_;
            } else if (c == '#') {
                skip_comment();
            } else if (c == '\\' && continuation()) {
                // joined physical lines
            } else if (c == '\n') {
                if (paren_ == 0) emit(TokenKind::Newline, "\n", line_, col(), line_, col() + 1);
                advance_newline();
                at_line_start_ = paren_ == 0;
            } else if (string_start()) {
                string_token();
            } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                       (c == '.' && pos_ + 1 < src_.size() &&
                        std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
                number_token();
            } else if (is_name_start(static_cast<unsigned char>(c))) {
                const std::size_t start = pos_;
                while (pos_ < src_.size() && is_name_char(static_cast<unsigned char>(src_[pos_]))) ++pos_;
                emit_range(TokenKind::Name, start);
            } else {
                operator_token();
            }
        }
        if (!out_.empty() && out_.back().kind != TokenKind::Newline && out_.back().kind != TokenKind::Dedent)
            emit(TokenKind::Newline, "", line_, col(), line_, col());
        while (indents_.size() > 1) {
            indents_.pop_back();
            emit(TokenKind::Dedent, "", line_, col(), line_, col());
        }
        emit(TokenKind::End, "", line_, col(), line_, col());
        return std::move(out_);
    }

private:
    int col() const { return static_cast<int>(pos_ - line_start_); }

    void advance_newline() {
        ++pos_;
        ++line_;
        line_start_ = pos_;
    }

    void emit(TokenKind kind, std::string text, int l, int c, int el, int ec) {
        out_.push_back(Token{kind, std::move(text), l, c, el, ec});
    }

    // Single-line token from `start` to pos_.
    void emit_range(TokenKind kind, std::size_t start) {
        const int start_col = static_cast<int>(start - line_start_);
        emit(kind, std::string(src_.substr(start, pos_ - start)), line_, start_col, line_, col());
    }

    // Returns false at end of input.
    bool indentation() {
        int width = 0;
        std::size_t p = pos_;
        while (p < src_.size() && (src_[p] == ' ' || src_[p] == '\t' || src_[p] == '\f' || src_[p] == '\r')) {
            width = src_[p] == '\t' ? (width / 8 + 1) * 8 : width + 1;
            ++p;
        }
        pos_ = p;
        if (p >= src_.size()) return false;
        if (src_[p] == '\n') {
            advance_newline();
            return true;
        }
        if (src_[p] == '#') {
            skip_comment();
            return true;
        }
        at_line_start_ = false;
        if (width > indents_.back()) {
            indents_.push_back(width);
            emit(TokenKind::Indent, "", line_, 0, line_, col());
        } else {
            // An inconsistent dedent stops at the nearest enclosing level.
            while (width < indents_.back() && indents_.size() > 1) {
                indents_.pop_back();
                emit(TokenKind::Dedent, "", line_, col(), line_, col());
            }
        }
        return true;
    }

    void skip_comment() {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
    }

    bool continuation() {
        std::size_t p = pos_ + 1;
        if (p < src_.size() && src_[p] == '\r') ++p;
        if (p < src_.size() && src_[p] == '\n') {
            pos_ = p;
            advance_newline();
            return true;
        }
        return false;
    }

    std::size_t prefix_length() const {
        std::size_t p = pos_;
        while (p < src_.size() && p - pos_ < 2 && std::string_view("rRbBuUfF").find(src_[p]) != std::string_view::npos)
            ++p;
        return p - pos_;
    }

    bool string_start() const {
        const std::size_t p = pos_ + prefix_length();
        return p < src_.size() && (src_[p] == '"' || src_[p] == '\'');
    }

    void string_token() {
        const std::size_t start = pos_;
        const int start_line = line_;
        const int start_col = col();
        pos_ += prefix_length();
        const char quote = src_[pos_];
        const bool triple = pos_ + 2 < src_.size() && src_[pos_ + 1] == quote && src_[pos_ + 2] == quote;
        pos_ += triple ? 3 : 1;
        bool closed = false;
        while (pos_ < src_.size()) {
            const char c = src_[pos_];
            if (c == '\\' && pos_ + 1 < src_.size()) {
                if (src_[pos_ + 1] == '\n') {
                    ++pos_;
                    advance_newline();
                } else {
                    pos_ += 2;
                }
                continue;
            }
            if (c == '\n') {
                if (!triple) break;
                advance_newline();
                continue;
            }
            if (c == quote) {
                if (!triple) {
                    ++pos_;
                    closed = true;
                    break;
                }
                if (pos_ + 2 < src_.size() && src_[pos_ + 1] == quote && src_[pos_ + 2] == quote) {
                    pos_ += 3;
                    closed = true;
                    break;
                }
            }
            ++pos_;
        }
        emit(closed ? TokenKind::String : TokenKind::Error, std::string(src_.substr(start, pos_ - start)),
             start_line, start_col, line_, col());
    }

    void number_token() {
        const std::size_t start = pos_;
        auto digits = [&](auto pred) {
            while (pos_ < src_.size() && (pred(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
        };
        auto is_dec = [](unsigned char c) { return std::isdigit(c) != 0; };
        if (src_[pos_] == '0' && pos_ + 1 < src_.size() &&
            std::string_view("xXoObB").find(src_[pos_ + 1]) != std::string_view::npos) {
            pos_ += 2;
            digits([](unsigned char c) { return std::isxdigit(c) != 0; });
        } else {
            digits(is_dec);
            if (pos_ < src_.size() && src_[pos_] == '.') {
                ++pos_;
                digits(is_dec);
            }
            if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
                std::size_t p = pos_ + 1;
                if (p < src_.size() && (src_[p] == '+' || src_[p] == '-')) ++p;
                if (p < src_.size() && std::isdigit(static_cast<unsigned char>(src_[p]))) {
                    pos_ = p;
                    digits(is_dec);
                }
            }
            if (pos_ < src_.size() && (src_[pos_] == 'j' || src_[pos_] == 'J')) ++pos_;
        }
        emit_range(TokenKind::Number, start);
    }

    void operator_token() {
        const std::size_t start = pos_;
        for (auto op : kOperators) {
            if (src_.substr(pos_, op.size()) == op) {
                pos_ += op.size();
                if (op == "(" || op == "[" || op == "{") ++paren_;
                if ((op == ")" || op == "]" || op == "}") && paren_ > 0) --paren_;
                emit_range(TokenKind::Op, start);
                return;
            }
        }
        ++pos_;
        emit_range(TokenKind::Error, start);
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    std::size_t line_start_ = 0;
    int line_ = 0;
    int paren_ = 0;
    bool at_line_start_ = true;
    std::vector<int> indents_{0};
    std::vector<Token> out_;
};

const std::set<std::string_view> kKeywords = {
    "False", "None",   "True",    "and",      "as",   "assert", "async", "await",
    "break", "class",  "continue", "def",     "del",  "elif",   "else",  "except",
    "finally", "for",  "from",    "global",   "if",   "import", "in",    "is",
    "lambda", "nonlocal", "not",  "or",       "pass", "raise",  "return", "try",
    "while", "with",   "yield"};

const std::set<std::string_view> kAugmentedOps = {"+=", "-=", "*=", "/=", "//=", "%=", "@=",
                                                  "&=", "|=", "^=", ">>=", "<<=", "**="};

struct ParseFailure {};

class Parser {
public:
    Parser(const std::vector<Token>& tokens, std::string_view source) : toks_(tokens) {
        // Root spans the whole source, including a trailing partial line.
        int lines = 0;
        std::size_t last_start = 0;
        for (std::size_t k = 0; k < source.size(); ++k) {
            if (source[k] == '\n') {
                ++lines;
                last_start = k + 1;
            }
        }
        end_line_ = lines;
        end_col_ = static_cast<int>(source.size() - last_start);
    }

    SyntaxNode module() {
        SyntaxNode root{"module", {0, 0, end_line_, end_col_}, {}, {}};
        statements_into(root.children, false);
        return root;
    }

private:
    const Token& peek(std::size_t ahead = 0) const {
        return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
    }
    bool at_op(std::string_view op, std::size_t ahead = 0) const {
        const auto& t = peek(ahead);
        return t.kind == TokenKind::Op && t.text == op;
    }
    bool at_kw(std::string_view kw, std::size_t ahead = 0) const {
        const auto& t = peek(ahead);
        return t.kind == TokenKind::Name && t.text == kw;
    }
    bool at(TokenKind kind) const { return peek().kind == kind; }
    bool at_name() const { return at(TokenKind::Name) && !kKeywords.count(peek().text); }

    const Token& advance() {
        const Token& t = toks_[pos_];
        if (pos_ + 1 < toks_.size()) ++pos_;
        if (t.kind != TokenKind::Newline && t.kind != TokenKind::Indent && t.kind != TokenKind::Dedent &&
            t.kind != TokenKind::End) {
            last_line_ = t.end_line;
            last_col_ = t.end_col;
        }
        return t;
    }
    const Token& expect_op(std::string_view op) {
        if (!at_op(op)) throw ParseFailure{};
        return advance();
    }
    const Token& expect_kw(std::string_view kw) {
        if (!at_kw(kw)) throw ParseFailure{};
        return advance();
    }

    SyntaxNode finish(std::string kind, int line, int col, std::vector<SyntaxNode> children) {
        return SyntaxNode{std::move(kind), {line, col, last_line_, last_col_}, std::move(children), {}};
    }
    SyntaxNode finish_at(std::string kind, const Token& start, std::vector<SyntaxNode> children) {
        return finish(std::move(kind), start.line, start.col, std::move(children));
    }
    SyntaxNode finish_from(std::string kind, const SyntaxNode& first, std::vector<SyntaxNode> children) {
        const int l = first.span.start_line, c = first.span.start_col;
        return finish(std::move(kind), l, c, std::move(children));
    }
    SyntaxNode finish_first(std::string kind, std::vector<SyntaxNode> children) {
        const int l = children.front().span.start_line, c = children.front().span.start_col;
        return finish(std::move(kind), l, c, std::move(children));
    }
    static SyntaxNode leaf(const Token& t, std::string kind) {
        return SyntaxNode{std::move(kind), {t.line, t.col, t.end_line, t.end_col}, {}, {}};
    }
    SyntaxNode identifier() {
        if (!at_name()) throw ParseFailure{};
        const Token& t = advance();
        auto n = leaf(t, "identifier");
        n.text = t.text;
        return n;
    }
    SyntaxNode op_leaf() {
        const Token& t = advance();
        return leaf(t, t.text);
    }

    // ---- statements ------------------------------------------------------

    void statements_into(std::vector<SyntaxNode>& out, bool in_block) {
        while (true) {
            const Token& t = peek();
            if (t.kind == TokenKind::End) return;
            if (t.kind == TokenKind::Dedent) {
                if (in_block) return;
                advance();
                continue;
            }
            if (t.kind == TokenKind::Newline) {
                advance();
                continue;
            }
            if (t.kind == TokenKind::Indent) {
                advance();
                statements_into(out, true);
                if (at(TokenKind::Dedent)) advance();
                continue;
            }
            statement(out);
        }
    }

    void statement(std::vector<SyntaxNode>& out) {
        const std::size_t start = pos_;
        const int saved_line = last_line_, saved_col = last_col_;
        try {
            std::vector<SyntaxNode> parsed;
            statement_inner(parsed);
            for (auto& n : parsed) out.push_back(std::move(n));
        } catch (const ParseFailure&) {
            pos_ = start;
            last_line_ = saved_line;
            last_col_ = saved_col;
            out.push_back(recover());
        }
    }

    SyntaxNode recover() {
        const Token& first = peek();
        std::vector<SyntaxNode> children;
        while (!at(TokenKind::Newline) && !at(TokenKind::End)) {
            const Token& t = advance();
            if (t.kind == TokenKind::Name && !kKeywords.count(t.text)) {
                auto n = leaf(t, "identifier");
                n.text = t.text;
                children.push_back(std::move(n));
            } else if (t.kind == TokenKind::Number) {
                children.push_back(leaf(t, number_kind(t.text)));
            } else if (t.kind == TokenKind::String) {
                children.push_back(leaf(t, "string"));
            }
        }
        auto node = finish_at(std::string(kErrorKind), first, std::move(children));
        if (at(TokenKind::Newline)) advance();
        if (at(TokenKind::Indent)) {
            advance();
            std::vector<SyntaxNode> body;
            statements_into(body, true);
            if (at(TokenKind::Dedent)) advance();
            if (!body.empty()) {
                auto block = finish("block", node.span.end_line, node.span.end_col, std::move(body));
                node.children.push_back(std::move(block));
                node.span.end_line = last_line_;
                node.span.end_col = last_col_;
            }
        }
        return node;
    }

    void statement_inner(std::vector<SyntaxNode>& out) {
        const Token& t = peek();
        if (t.kind == TokenKind::Name) {
            if (t.text == "def") return out.push_back(function_definition(t));
            if (t.text == "class") return out.push_back(class_definition(t));
            if (t.text == "if") return out.push_back(if_statement());
            if (t.text == "while") return out.push_back(while_statement());
            if (t.text == "for") return out.push_back(for_statement(t));
            if (t.text == "try") return out.push_back(try_statement());
            if (t.text == "with") return out.push_back(with_statement(t));
            if (t.text == "async" && (at_kw("def", 1) || at_kw("for", 1) || at_kw("with", 1))) {
                const Token& start = advance();
                if (at_kw("def")) return out.push_back(function_definition(start));
                if (at_kw("for")) return out.push_back(for_statement(start));
                return out.push_back(with_statement(start));
            }
        }
        if (t.kind == TokenKind::Op && t.text == "@") return out.push_back(decorated_definition());
        simple_statements(out);
    }

    void simple_statements(std::vector<SyntaxNode>& out) {
        out.push_back(simple_statement());
        while (at_op(";")) {
            advance();
            if (at(TokenKind::Newline) || at(TokenKind::End)) break;
            out.push_back(simple_statement());
        }
        if (at(TokenKind::Newline)) {
            advance();
        } else if (!at(TokenKind::End)) {
            throw ParseFailure{};
        }
    }

    SyntaxNode simple_statement() {
        const Token& t = peek();
        if (t.kind == TokenKind::Name) {
            if (t.text == "pass") return finish_at("pass_statement", advance(), {});
            if (t.text == "break") return finish_at("break_statement", advance(), {});
            if (t.text == "continue") return finish_at("continue_statement", advance(), {});
            if (t.text == "return") {
                advance();
                std::vector<SyntaxNode> c;
                if (!ends_statement()) c.push_back(star_expressions());
                return finish_at("return_statement", t, std::move(c));
            }
            if (t.text == "raise") {
                advance();
                std::vector<SyntaxNode> c;
                if (!ends_statement()) {
                    c.push_back(expression());
                    if (at_kw("from")) {
                        advance();
                        c.push_back(expression());
                    }
                }
                return finish_at("raise_statement", t, std::move(c));
            }
            if (t.text == "global" || t.text == "nonlocal") {
                advance();
                std::vector<SyntaxNode> c{identifier()};
                while (at_op(",")) {
                    advance();
                    c.push_back(identifier());
                }
                return finish_at(t.text + "_statement", t, std::move(c));
            }
            if (t.text == "del") {
                advance();
                return finish_at("delete_statement", t, {star_expressions()});
            }
            if (t.text == "assert") {
                advance();
                std::vector<SyntaxNode> c{expression()};
                if (at_op(",")) {
                    advance();
                    c.push_back(expression());
                }
                return finish_at("assert_statement", t, std::move(c));
            }
            if (t.text == "import") return import_statement();
            if (t.text == "from") return import_from_statement();
        }
        return expression_statement();
    }

    bool ends_statement() const { return at(TokenKind::Newline) || at(TokenKind::End) || at_op(";"); }

    SyntaxNode dotted_name() {
        std::vector<SyntaxNode> c{identifier()};
        while (at_op(".")) {
            advance();
            c.push_back(identifier());
        }
        auto& first = c.front();
        const int l = first.span.start_line, col = first.span.start_col;
        return finish("dotted_name", l, col, std::move(c));
    }

    SyntaxNode maybe_aliased(SyntaxNode name) {
        if (!at_kw("as")) return name;
        advance();
        auto alias = identifier();
        return finish_from("aliased_import", name, {std::move(name), std::move(alias)});
    }

    SyntaxNode import_statement() {
        const Token& t = advance();
        std::vector<SyntaxNode> c{maybe_aliased(dotted_name())};
        while (at_op(",")) {
            advance();
            c.push_back(maybe_aliased(dotted_name()));
        }
        return finish_at("import_statement", t, std::move(c));
    }

    SyntaxNode import_from_statement() {
        const Token& t = advance();
        std::vector<SyntaxNode> c;
        if (at_op(".") || at_op("...")) {
            const Token& start = peek();
            std::vector<SyntaxNode> rel;
            while (at_op(".") || at_op("...")) advance();
            rel.push_back(finish_at("import_prefix", start, {}));
            if (at_name()) rel.push_back(dotted_name());
            c.push_back(finish_at("relative_import", start, std::move(rel)));
        } else {
            c.push_back(dotted_name());
        }
        expect_kw("import");
        if (at_op("*")) {
            c.push_back(finish_at("wildcard_import", advance(), {}));
        } else {
            const bool paren = at_op("(");
            if (paren) advance();
            c.push_back(maybe_aliased(dotted_name()));
            while (at_op(",")) {
                advance();
                if (paren && at_op(")")) break;
                c.push_back(maybe_aliased(dotted_name()));
            }
            if (paren) expect_op(")");
        }
        return finish_at("import_from_statement", t, std::move(c));
    }

    SyntaxNode rhs() {
        if (at_kw("yield")) return yield_expression();
        return star_expressions();
    }

    SyntaxNode expression_statement() {
        auto first = star_expressions();
        if (at_op("=")) {
            std::vector<SyntaxNode> parts{as_target(std::move(first))};
            while (at_op("=")) {
                advance();
                parts.push_back(rhs());
            }
            // a = b = c nests to the right: assignment(a, assignment(b, c)).
            SyntaxNode value = std::move(parts.back());
            parts.pop_back();
            while (!parts.empty()) {
                SyntaxNode target = std::move(parts.back());
                parts.pop_back();
                if (!parts.empty()) target = as_target(std::move(target));
                value = finish_from("assignment", target, {std::move(target), std::move(value)});
            }
            return finish_from("expression_statement", value, {std::move(value)});
        }
        if (at_op(":")) {
            advance();
            auto annotation = expression();
            std::vector<SyntaxNode> c{std::move(first), finish_from("type", annotation, {annotation})};
            if (at_op("=")) {
                advance();
                c.push_back(rhs());
            }
            auto assign = finish_first("assignment", std::move(c));
            return finish_from("expression_statement", assign, {std::move(assign)});
        }
        if (peek().kind == TokenKind::Op && kAugmentedOps.count(peek().text)) {
            auto op = op_leaf();
            auto value = rhs();
            auto assign = finish_from("augmented_assignment", first, {std::move(first), std::move(op), std::move(value)});
            return finish_from("expression_statement", assign, {std::move(assign)});
        }
        return finish_from("expression_statement", first, {std::move(first)});
    }

    static SyntaxNode as_target(SyntaxNode node) {
        if (node.kind == "expression_list") node.kind = "pattern_list";
        return node;
    }

    // The block opens right after the header colon, so its first statement
    // is not the first node starting on that statement's line.
    SyntaxNode block() {
        const Token& colon = expect_op(":");
        const int l = colon.end_line, c = colon.end_col;
        std::vector<SyntaxNode> body;
        if (at(TokenKind::Newline)) {
            advance();
            if (!at(TokenKind::Indent)) throw ParseFailure{};
            advance();
            statements_into(body, true);
            if (at(TokenKind::Dedent)) advance();
        } else {
            simple_statements(body);
        }
        if (body.empty()) throw ParseFailure{};
        return finish("block", l, c, std::move(body));
    }

    SyntaxNode function_definition(const Token& start) {
        expect_kw("def");
        std::vector<SyntaxNode> c{identifier(), parameters()};
        if (at_op("->")) {
            advance();
            auto ret = expression();
            c.push_back(finish_from("type", ret, {ret}));
        }
        c.push_back(block());
        return finish_at("function_definition", start, std::move(c));
    }

    SyntaxNode parameters() {
        const Token& open = expect_op("(");
        std::vector<SyntaxNode> c;
        while (!at_op(")")) {
            c.push_back(parameter(true));
            if (!at_op(",")) break;
            advance();
        }
        expect_op(")");
        return finish_at("parameters", open, std::move(c));
    }

    SyntaxNode parameter(bool annotations) {
        const Token& t = peek();
        if (at_op("*") || at_op("**")) {
            advance();
            if (t.text == "*" && (at_op(",") || at_op(")") || at_op(":")))
                return finish_at("keyword_separator", t, {});
            auto name = identifier();
            return finish_at(t.text == "*" ? "list_splat_pattern" : "dictionary_splat_pattern", t, {name});
        }
        if (at_op("/")) return finish_at("positional_separator", advance(), {});
        auto name = identifier();
        std::vector<SyntaxNode> c{std::move(name)};
        bool typed = false;
        if (annotations && at_op(":")) {
            advance();
            auto type = expression();
            c.push_back(finish_from("type", type, {type}));
            typed = true;
        }
        if (at_op("=")) {
            advance();
            c.push_back(expression());
            return finish_at(typed ? "typed_default_parameter" : "default_parameter", t, std::move(c));
        }
        if (typed) return finish_at("typed_parameter", t, std::move(c));
        return std::move(c.front());
    }

    SyntaxNode class_definition(const Token& start) {
        expect_kw("class");
        std::vector<SyntaxNode> c{identifier()};
        if (at_op("(")) c.push_back(argument_list());
        c.push_back(block());
        return finish_at("class_definition", start, std::move(c));
    }

    SyntaxNode decorated_definition() {
        const Token& start = peek();
        std::vector<SyntaxNode> c;
        while (at_op("@")) {
            const Token& at_tok = advance();
            auto e = expression();
            c.push_back(finish_at("decorator", at_tok, {std::move(e)}));
            if (!at(TokenKind::Newline)) throw ParseFailure{};
            advance();
        }
        if (at_kw("def")) {
            c.push_back(function_definition(peek()));
        } else if (at_kw("class")) {
            c.push_back(class_definition(peek()));
        } else if (at_kw("async") && at_kw("def", 1)) {
            const Token& a = advance();
            c.push_back(function_definition(a));
        } else {
            throw ParseFailure{};
        }
        return finish_at("decorated_definition", start, std::move(c));
    }

    SyntaxNode if_statement() {
        const Token& t = advance();
        std::vector<SyntaxNode> c{named_expression(), block()};
        while (at_kw("elif")) {
            const Token& e = advance();
            auto cond = named_expression();
            auto body = block();
            c.push_back(finish_at("elif_clause", e, {std::move(cond), std::move(body)}));
        }
        if (at_kw("else")) c.push_back(else_clause());
        return finish_at("if_statement", t, std::move(c));
    }

    SyntaxNode else_clause() {
        const Token& e = advance();
        return finish_at("else_clause", e, {block()});
    }

    SyntaxNode while_statement() {
        const Token& t = advance();
        std::vector<SyntaxNode> c{named_expression(), block()};
        if (at_kw("else")) c.push_back(else_clause());
        return finish_at("while_statement", t, std::move(c));
    }

    SyntaxNode for_statement(const Token& start) {
        expect_kw("for");
        std::vector<SyntaxNode> c{target_list()};
        expect_kw("in");
        c.push_back(star_expressions());
        c.push_back(block());
        if (at_kw("else")) c.push_back(else_clause());
        return finish_at("for_statement", start, std::move(c));
    }

    SyntaxNode try_statement() {
        const Token& t = advance();
        std::vector<SyntaxNode> c{block()};
        while (at_kw("except")) {
            const Token& e = advance();
            if (at_op("*")) advance();
            std::vector<SyntaxNode> ec;
            if (!at_op(":")) {
                ec.push_back(expression());
                if (at_kw("as")) {
                    advance();
                    ec.push_back(identifier());
                } else if (at_op(",")) {
                    advance();
                    ec.push_back(expression());
                }
            }
            ec.push_back(block());
            c.push_back(finish_at("except_clause", e, std::move(ec)));
        }
        if (at_kw("else")) c.push_back(else_clause());
        if (at_kw("finally")) {
            const Token& f = advance();
            c.push_back(finish_at("finally_clause", f, {block()}));
        }
        if (c.size() == 1) throw ParseFailure{};
        return finish_at("try_statement", t, std::move(c));
    }

    SyntaxNode with_statement(const Token& start) {
        expect_kw("with");
        const Token& first = peek();
        std::vector<SyntaxNode> items;
        do {
            if (!items.empty()) advance();
            const Token& it = peek();
            std::vector<SyntaxNode> ic{expression()};
            if (at_kw("as")) {
                advance();
                ic.push_back(star_target());
            }
            items.push_back(finish_at("with_item", it, std::move(ic)));
        } while (at_op(","));
        auto clause = finish_at("with_clause", first, std::move(items));
        auto body = block();
        return finish_at("with_statement", start, {std::move(clause), std::move(body)});
    }

    // ---- expressions -----------------------------------------------------

    SyntaxNode yield_expression() {
        const Token& t = advance();
        std::vector<SyntaxNode> c;
        if (at_kw("from")) {
            advance();
            c.push_back(expression());
        } else if (!ends_statement() && !at_op(")") && !at_op("=")) {
            c.push_back(star_expressions());
        }
        return finish_at("yield", t, std::move(c));
    }

    SyntaxNode star_expressions() {
        auto first = star_expression();
        if (!at_op(",")) return first;
        std::vector<SyntaxNode> c{std::move(first)};
        while (at_op(",")) {
            advance();
            if (!starts_expression()) break;
            c.push_back(star_expression());
        }
        return finish_first("expression_list", std::move(c));
    }

    bool starts_expression() const {
        const Token& t = peek();
        switch (t.kind) {
        case TokenKind::Name:
            return !kKeywords.count(t.text) || t.text == "not" || t.text == "lambda" || t.text == "await" ||
                   t.text == "None" || t.text == "True" || t.text == "False" || t.text == "yield";
        case TokenKind::Number:
        case TokenKind::String:
            return true;
        case TokenKind::Op:
            return t.text == "(" || t.text == "[" || t.text == "{" || t.text == "-" || t.text == "+" ||
                   t.text == "~" || t.text == "*" || t.text == "**" || t.text == "...";
        default:
            return false;
        }
    }

    SyntaxNode star_expression() {
        if (at_op("*")) {
            const Token& t = advance();
            return finish_at("list_splat", t, {bitwise_or()});
        }
        return named_expression();
    }

    SyntaxNode named_expression() {
        if (at_name() && at_op(":=", 1)) {
            auto name = identifier();
            advance();
            auto value = expression();
            return finish_from("named_expression", name, {std::move(name), std::move(value)});
        }
        return expression();
    }

    SyntaxNode expression() {
        if (at_kw("lambda")) return lambda();
        auto body = disjunction();
        if (at_kw("if")) {
            advance();
            auto cond = disjunction();
            expect_kw("else");
            auto alt = expression();
            return finish_from("conditional_expression", body, {std::move(body), std::move(cond), std::move(alt)});
        }
        return body;
    }

    SyntaxNode lambda() {
        const Token& t = advance();
        std::vector<SyntaxNode> c;
        if (!at_op(":")) {
            const Token& first = peek();
            std::vector<SyntaxNode> params;
            while (!at_op(":")) {
                params.push_back(parameter(false));
                if (!at_op(",")) break;
                advance();
            }
            c.push_back(finish_at("lambda_parameters", first, std::move(params)));
        }
        expect_op(":");
        c.push_back(expression());
        return finish_at("lambda", t, std::move(c));
    }

    SyntaxNode disjunction() {
        auto left = conjunction();
        while (at_kw("or")) {
            auto op = op_leaf();
            auto right = conjunction();
            left = finish_from("boolean_operator", left, {std::move(left), std::move(op), std::move(right)});
        }
        return left;
    }

    SyntaxNode conjunction() {
        auto left = inversion();
        while (at_kw("and")) {
            auto op = op_leaf();
            auto right = inversion();
            left = finish_from("boolean_operator", left, {std::move(left), std::move(op), std::move(right)});
        }
        return left;
    }

    SyntaxNode inversion() {
        if (at_kw("not")) {
            const Token& t = advance();
            return finish_at("not_operator", t, {inversion()});
        }
        return comparison();
    }

    std::optional<std::string> comparison_op() const {
        const Token& t = peek();
        if (t.kind == TokenKind::Op &&
            (t.text == "<" || t.text == ">" || t.text == "==" || t.text == ">=" || t.text == "<=" || t.text == "!="))
            return t.text;
        if (at_kw("in")) return "in";
        if (at_kw("not") && at_kw("in", 1)) return "not in";
        if (at_kw("is")) return at_kw("not", 1) ? "is not" : "is";
        return std::nullopt;
    }

    SyntaxNode comparison() {
        auto left = bitwise_or();
        if (!comparison_op()) return left;
        std::vector<SyntaxNode> c{std::move(left)};
        while (auto op = comparison_op()) {
            const Token& t = advance();
            if (*op == "not in" || *op == "is not") advance();
            auto leaf_node = finish_at(*op, t, {});
            c.push_back(std::move(leaf_node));
            c.push_back(bitwise_or());
        }
        return finish_first("comparison_operator", std::move(c));
    }

    template <typename Next>
    SyntaxNode binary_level(std::initializer_list<std::string_view> ops, Next next) {
        auto left = (this->*next)();
        while (peek().kind == TokenKind::Op &&
               std::find(ops.begin(), ops.end(), std::string_view(peek().text)) != ops.end()) {
            auto op = op_leaf();
            auto right = (this->*next)();
            left = finish_from("binary_operator", left, {std::move(left), std::move(op), std::move(right)});
        }
        return left;
    }

    SyntaxNode bitwise_or() { return binary_level({"|"}, &Parser::bitwise_xor); }
    SyntaxNode bitwise_xor() { return binary_level({"^"}, &Parser::bitwise_and); }
    SyntaxNode bitwise_and() { return binary_level({"&"}, &Parser::shift_expr); }
    SyntaxNode shift_expr() { return binary_level({"<<", ">>"}, &Parser::sum); }
    SyntaxNode sum() { return binary_level({"+", "-"}, &Parser::term); }
    SyntaxNode term() { return binary_level({"*", "/", "//", "%", "@"}, &Parser::factor); }

    SyntaxNode factor() {
        if (at_op("+") || at_op("-") || at_op("~")) {
            const Token& t = peek();
            auto op = op_leaf();
            auto operand = factor();
            return finish_at("unary_operator", t, {std::move(op), std::move(operand)});
        }
        return power();
    }

    SyntaxNode power() {
        auto base = await_primary();
        if (at_op("**")) {
            auto op = op_leaf();
            auto exponent = factor();
            return finish_from("binary_operator", base, {std::move(base), std::move(op), std::move(exponent)});
        }
        return base;
    }

    SyntaxNode await_primary() {
        if (at_kw("await")) {
            const Token& t = advance();
            return finish_at("await", t, {primary()});
        }
        return primary();
    }

    SyntaxNode primary() {
        auto node = atom();
        while (true) {
            if (at_op(".")) {
                advance();
                auto attr = identifier();
                node = finish_from("attribute", node, {std::move(node), std::move(attr)});
            } else if (at_op("(")) {
                auto args = argument_list();
                node = finish_from("call", node, {std::move(node), std::move(args)});
            } else if (at_op("[")) {
                advance();
                std::vector<SyntaxNode> c{std::move(node)};
                c.push_back(subscript_item());
                while (at_op(",")) {
                    advance();
                    if (at_op("]")) break;
                    c.push_back(subscript_item());
                }
                expect_op("]");
                node = finish_first("subscript", std::move(c));
            } else {
                return node;
            }
        }
    }

    SyntaxNode subscript_item() {
        const Token& t = peek();
        std::vector<SyntaxNode> parts;
        bool is_slice = false;
        if (!at_op(":")) parts.push_back(star_expression());
        while (at_op(":")) {
            is_slice = true;
            advance();
            if (!at_op(":") && !at_op("]") && !at_op(",")) parts.push_back(expression());
        }
        if (!is_slice) return std::move(parts.front());
        return finish_at("slice", t, std::move(parts));
    }

    SyntaxNode argument_list() {
        const Token& open = expect_op("(");
        std::vector<SyntaxNode> c;
        while (!at_op(")")) {
            const Token& t = peek();
            if (at_op("*") || at_op("**")) {
                advance();
                c.push_back(finish_at(t.text == "*" ? "list_splat" : "dictionary_splat", t, {expression()}));
            } else if (at_name() && at_op("=", 1)) {
                auto name = identifier();
                advance();
                auto value = expression();
                c.push_back(finish_from("keyword_argument", name, {std::move(name), std::move(value)}));
            } else {
                auto e = named_expression();
                if (at_kw("for") || at_kw("async")) {
                    auto gen = comprehension("generator_expression", std::move(e), open);
                    expect_op(")");
                    // f(x for x in y): the generator replaces the argument list.
                    gen.span.end_line = last_line_;
                    gen.span.end_col = last_col_;
                    return gen;
                }
                c.push_back(std::move(e));
            }
            if (!at_op(",")) break;
            advance();
        }
        expect_op(")");
        return finish_at("argument_list", open, std::move(c));
    }

    SyntaxNode comprehension(std::string kind, SyntaxNode body, const Token& open) {
        std::vector<SyntaxNode> c{std::move(body)};
        while (at_kw("for") || at_kw("async") || at_kw("if")) {
            const Token& t = advance();
            if (t.text == "if") {
                c.push_back(finish_at("if_clause", t, {disjunction()}));
                continue;
            }
            if (t.text == "async") expect_kw("for");
            auto target = target_list();
            expect_kw("in");
            auto iter = disjunction();
            c.push_back(finish_at("for_in_clause", t, {std::move(target), std::move(iter)}));
        }
        return finish_at(std::move(kind), open, std::move(c));
    }

    SyntaxNode star_target() {
        if (at_op("*")) {
            const Token& t = advance();
            return finish_at("list_splat_pattern", t, {bitwise_or()});
        }
        return bitwise_or();
    }

    SyntaxNode target_list() {
        auto first = star_target();
        if (!at_op(",")) return first;
        std::vector<SyntaxNode> c{std::move(first)};
        while (at_op(",")) {
            advance();
            if (at_kw("in") || at_op("=")) break;
            c.push_back(star_target());
        }
        return finish_first("pattern_list", std::move(c));
    }

    static std::string number_kind(const std::string& text) {
        const bool hex = text.size() > 1 && (text[1] == 'x' || text[1] == 'X');
        if (text.find('.') != std::string::npos || text.back() == 'j' || text.back() == 'J' ||
            (!hex && text.find_first_of("eE") != std::string::npos))
            return "float";
        return "integer";
    }

    SyntaxNode atom() {
        const Token& t = peek();
        switch (t.kind) {
        case TokenKind::Name:
            if (t.text == "True") return leaf(advance(), "true");
            if (t.text == "False") return leaf(advance(), "false");
            if (t.text == "None") return leaf(advance(), "none");
            return identifier();
        case TokenKind::Number:
            return leaf(advance(), number_kind(t.text));
        case TokenKind::String: {
            auto first = leaf(advance(), "string");
            if (!at(TokenKind::String)) return first;
            std::vector<SyntaxNode> parts{std::move(first)};
            while (at(TokenKind::String)) parts.push_back(leaf(advance(), "string"));
            return finish_at("concatenated_string", t, std::move(parts));
        }
        case TokenKind::Op:
            if (t.text == "(") return parenthesized();
            if (t.text == "[") return list_display();
            if (t.text == "{") return brace_display();
            if (t.text == "...") return leaf(advance(), "ellipsis");
            break;
        default:
            break;
        }
        throw ParseFailure{};
    }

    SyntaxNode parenthesized() {
        const Token& open = advance();
        if (at_op(")")) {
            advance();
            return finish_at("tuple", open, {});
        }
        if (at_kw("yield")) {
            auto y = yield_expression();
            expect_op(")");
            return finish_at("parenthesized_expression", open, {std::move(y)});
        }
        auto first = star_expression();
        if (at_kw("for") || at_kw("async")) {
            auto gen = comprehension("generator_expression", std::move(first), open);
            expect_op(")");
            gen.span.end_line = last_line_;
            gen.span.end_col = last_col_;
            return gen;
        }
        if (at_op(",")) {
            std::vector<SyntaxNode> c{std::move(first)};
            while (at_op(",")) {
                advance();
                if (at_op(")")) break;
                c.push_back(star_expression());
            }
            expect_op(")");
            return finish_at("tuple", open, std::move(c));
        }
        expect_op(")");
        return finish_at("parenthesized_expression", open, {std::move(first)});
    }

    SyntaxNode list_display() {
        const Token& open = advance();
        std::vector<SyntaxNode> c;
        if (!at_op("]")) {
            auto first = star_expression();
            if (at_kw("for") || at_kw("async")) {
                auto comp = comprehension("list_comprehension", std::move(first), open);
                expect_op("]");
                comp.span.end_line = last_line_;
                comp.span.end_col = last_col_;
                return comp;
            }
            c.push_back(std::move(first));
            while (at_op(",")) {
                advance();
                if (at_op("]")) break;
                c.push_back(star_expression());
            }
        }
        expect_op("]");
        return finish_at("list", open, std::move(c));
    }

    SyntaxNode dict_entry() {
        if (at_op("**")) {
            const Token& t = advance();
            return finish_at("dictionary_splat", t, {bitwise_or()});
        }
        auto key = expression();
        expect_op(":");
        auto value = expression();
        return finish_from("pair", key, {std::move(key), std::move(value)});
    }

    SyntaxNode brace_display() {
        const Token& open = advance();
        if (at_op("}")) {
            advance();
            return finish_at("dictionary", open, {});
        }
        bool is_dict = at_op("**");
        SyntaxNode first;
        if (is_dict) {
            first = dict_entry();
        } else {
            first = star_expression();
            if (at_op(":")) {
                advance();
                auto value = expression();
                first = finish_from("pair", first, {std::move(first), std::move(value)});
                is_dict = true;
            }
        }
        if (at_kw("for") || at_kw("async")) {
            auto comp = comprehension(is_dict ? "dictionary_comprehension" : "set_comprehension", std::move(first), open);
            expect_op("}");
            comp.span.end_line = last_line_;
            comp.span.end_col = last_col_;
            return comp;
        }
        std::vector<SyntaxNode> c{std::move(first)};
        while (at_op(",")) {
            advance();
            if (at_op("}")) break;
            c.push_back(is_dict ? dict_entry() : star_expression());
        }
        expect_op("}");
        return finish_at(is_dict ? "dictionary" : "set", open, std::move(c));
    }

    const std::vector<Token>& toks_;
    std::size_t pos_ = 0;
    int last_line_ = 0;
    int last_col_ = 0;
    int end_line_ = 0;
    int end_col_ = 0;
};

}  // namespace

std::vector<Token> tokenize(std::string_view source) { return Lexer(source).run(); }

SyntaxNode parse(std::string_view source) {
    const auto tokens = tokenize(source);
    return Parser(tokens, source).module();
}

}  // namespace echo::python
