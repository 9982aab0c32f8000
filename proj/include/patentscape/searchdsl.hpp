#pragma once

// Boolean keyword search formulas: the parenthesized and/or/wildcard
// expressions used to retrieve patent candidates. The module parses
// formulas, evaluates them against local document text, pretty-prints
// them, and emits the equivalent BigQuery-dialect SQL predicate.

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "patentscape/detail/text.hpp"
#include "patentscape/error.hpp"

namespace patentscape::searchdsl {

enum class TargetField { description, abstract, title };

inline std::string_view field_name(TargetField f) {
    switch (f) {
        case TargetField::description: return "description";
        case TargetField::abstract: return "abstract";
        case TargetField::title: return "title";
    }
    throw InternalError("unknown target field");
}

inline TargetField parse_field(std::string_view name) {
    if (name == "description") return TargetField::description;
    if (name == "abstract") return TargetField::abstract;
    if (name == "title") return TargetField::title;
    throw DataError("unknown search field: " + std::string(name));
}

struct QueryAst {
    enum class Kind { term, conj, disj };

    Kind kind = Kind::term;
    std::string text;            // term only; lowercase, no operators
    bool prefix_wildcard = false;  // term only; trailing '*' in the formula
    std::vector<QueryAst> children;  // conj/disj only, always >= 2

    static QueryAst term(std::string t, bool prefix) {
        QueryAst n;
        n.kind = Kind::term;
        n.text = std::move(t);
        n.prefix_wildcard = prefix;
        return n;
    }
    static QueryAst conj(std::vector<QueryAst> cs) {
        QueryAst n;
        n.kind = Kind::conj;
        n.children = std::move(cs);
        return n;
    }
    static QueryAst disj(std::vector<QueryAst> cs) {
        QueryAst n;
        n.kind = Kind::disj;
        n.children = std::move(cs);
        return n;
    }

    bool operator==(const QueryAst& other) const {
        return kind == other.kind && text == other.text &&
               prefix_wildcard == other.prefix_wildcard && children == other.children;
    }
};

namespace detail_parse {

struct Token {
    enum class Kind { lparen, rparen, kw_and, kw_or, word, end };
    Kind kind;
    std::string text;
    bool wildcard = false;
    std::size_t pos = 0;
};

inline bool is_term_char(char c) {
    return patentscape::detail::is_alnum(c) || c == '-';
}

inline std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < src.size()) {
        char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '(') {
            out.push_back({Token::Kind::lparen, "(", false, i});
            ++i;
            continue;
        }
        if (c == ')') {
            out.push_back({Token::Kind::rparen, ")", false, i});
            ++i;
            continue;
        }
        if (is_term_char(c)) {
            std::size_t start = i;
            while (i < src.size() && is_term_char(src[i])) ++i;
            std::string word = patentscape::detail::lowercase(src.substr(start, i - start));
            bool wildcard = false;
            if (i < src.size() && src[i] == '*') {
                wildcard = true;
                ++i;
                if (i < src.size() && is_term_char(src[i]))
                    throw QueryParseError("wildcard '*' is only allowed at the end of a term", i);
            }
            if (word == "and" && !wildcard)
                out.push_back({Token::Kind::kw_and, word, false, start});
            else if (word == "or" && !wildcard)
                out.push_back({Token::Kind::kw_or, word, false, start});
            else
                out.push_back({Token::Kind::word, std::move(word), wildcard, start});
            continue;
        }
        if (c == '*') throw QueryParseError("empty term before wildcard", i);
        throw QueryParseError(std::string("unexpected character '") + c + "'", i);
    }
    out.push_back({Token::Kind::end, "", false, src.size()});
    return out;
}

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

    QueryAst parse() {
        QueryAst root = parse_or();
        const Token& t = peek();
        if (t.kind == Token::Kind::rparen)
            throw QueryParseError("unbalanced parenthesis: unmatched ')'", t.pos);
        if (t.kind != Token::Kind::end)
            throw QueryParseError("unexpected token '" + t.text + "'", t.pos);
        return root;
    }

private:
    const Token& peek() const { return tokens_[cursor_]; }
    const Token& advance() { return tokens_[cursor_++]; }

    // or_expr := and_expr ('or' and_expr)* ; 'and' binds tighter than 'or'.
    QueryAst parse_or() {
        std::vector<QueryAst> children;
        children.push_back(parse_and());
        while (peek().kind == Token::Kind::kw_or) {
            const Token& op = advance();
            if (peek().kind == Token::Kind::end || peek().kind == Token::Kind::rparen)
                throw QueryParseError("trailing operator 'or'", op.pos);
            children.push_back(parse_and());
        }
        if (children.size() == 1) return std::move(children.front());
        return QueryAst::disj(std::move(children));
    }

    QueryAst parse_and() {
        std::vector<QueryAst> children;
        children.push_back(parse_primary());
        while (peek().kind == Token::Kind::kw_and) {
            const Token& op = advance();
            if (peek().kind == Token::Kind::end || peek().kind == Token::Kind::rparen)
                throw QueryParseError("trailing operator 'and'", op.pos);
            children.push_back(parse_primary());
        }
        if (children.size() == 1) return std::move(children.front());
        return QueryAst::conj(std::move(children));
    }

    QueryAst parse_primary() {
        const Token& t = advance();
        switch (t.kind) {
            case Token::Kind::word:
                return QueryAst::term(t.text, t.wildcard);
            case Token::Kind::lparen: {
                QueryAst inner = parse_or();
                const Token& close = advance();
                if (close.kind != Token::Kind::rparen)
                    throw QueryParseError("unbalanced parenthesis: expected ')'", close.pos);
                return inner;
            }
            case Token::Kind::end:
                throw QueryParseError("expected a term, got end of input", t.pos);
            default:
                throw QueryParseError("expected a term, got '" + t.text + "'", t.pos);
        }
    }

    std::vector<Token> tokens_;
    std::size_t cursor_ = 0;
};

}  // namespace detail_parse

inline QueryAst parse_query(std::string_view formula) {
    return detail_parse::Parser(detail_parse::lex(formula)).parse();
}

// Canonical formula text. parse_query(print_query(ast)) == ast.
inline std::string print_query(const QueryAst& ast) {
    switch (ast.kind) {
        case QueryAst::Kind::term:
            return ast.prefix_wildcard ? ast.text + "*" : ast.text;
        case QueryAst::Kind::conj:
        case QueryAst::Kind::disj: {
            const char* op = ast.kind == QueryAst::Kind::conj ? " and " : " or ";
            std::string out = "(";
            for (std::size_t i = 0; i < ast.children.size(); ++i) {
                if (i > 0) out += op;
                out += print_query(ast.children[i]);
            }
            out += ")";
            return out;
        }
    }
    throw InternalError("unknown query node kind");
}

// Local documents are matched on token boundaries: the text is lowercased
// and split on non-alphanumerics (keeping '-' inside tokens, so hyphenated
// query terms stay matchable). A prefix term matches any token starting
// with it; an exact term must equal a token.
inline std::vector<std::string> tokenize_document(std::string_view text) {
    return patentscape::detail::split_words(text, /*keep_hyphen=*/true);
}

inline bool eval_on_tokens(const QueryAst& ast, const std::vector<std::string>& tokens) {
    switch (ast.kind) {
        case QueryAst::Kind::term:
            if (ast.prefix_wildcard) {
                return std::any_of(tokens.begin(), tokens.end(), [&](const std::string& t) {
                    return t.size() >= ast.text.size() &&
                           t.compare(0, ast.text.size(), ast.text) == 0;
                });
            }
            return std::find(tokens.begin(), tokens.end(), ast.text) != tokens.end();
        case QueryAst::Kind::conj:
            return std::all_of(ast.children.begin(), ast.children.end(),
                               [&](const QueryAst& c) { return eval_on_tokens(c, tokens); });
        case QueryAst::Kind::disj:
            return std::any_of(ast.children.begin(), ast.children.end(),
                               [&](const QueryAst& c) { return eval_on_tokens(c, tokens); });
    }
    throw InternalError("unknown query node kind");
}

inline bool eval_query(const QueryAst& ast, std::string_view document_text) {
    return eval_on_tokens(ast, tokenize_document(document_text));
}

// BigQuery predicate in the dialect used for patent retrieval. Prefix
// terms render as REGEXP_CONTAINS(<field>.text, " term%"), exact terms as
// " term " -- the leading/trailing spaces are part of the dialect and are
// reproduced verbatim. Local evaluation intentionally uses token-boundary
// semantics instead of this space padding.
inline std::string emit_sql(const QueryAst& ast, TargetField field) {
    switch (ast.kind) {
        case QueryAst::Kind::term: {
            std::string out = "REGEXP_CONTAINS(";
            out += field_name(field);
            out += ".text, \" ";
            out += ast.text;
            out += ast.prefix_wildcard ? "%\")" : " \")";
            return out;
        }
        case QueryAst::Kind::conj:
        case QueryAst::Kind::disj: {
            const char* op = ast.kind == QueryAst::Kind::conj ? " and " : " or ";
            std::string out = "(";
            for (std::size_t i = 0; i < ast.children.size(); ++i) {
                if (i > 0) out += op;
                out += emit_sql(ast.children[i], field);
            }
            out += ")";
            return out;
        }
    }
    throw InternalError("unknown query node kind");
}

}  // namespace patentscape::searchdsl
