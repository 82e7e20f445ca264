#pragma once

// Built-in Python front end. Produces tree-sitter style node kinds
// (module, function_definition, expression_statement, assignment, ...);
// anonymous punctuation is dropped, operator tokens are kept as leaves.

#include <string>
#include <string_view>
#include <vector>

#include "echo/ingest.hpp"

namespace echo::python {

enum class TokenKind { Name, Number, String, Op, Newline, Indent, Dedent, End, Error };

struct Token {
    TokenKind kind;
    std::string text;
    int line = 0;
    int col = 0;
    int end_line = 0;
    int end_col = 0;
};

/// Never throws; unterminated strings and stray characters become Error tokens.
std::vector<Token> tokenize(std::string_view source);

SyntaxNode parse(std::string_view source);

}  // namespace echo::python
