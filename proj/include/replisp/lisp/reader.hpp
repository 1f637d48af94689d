#pragma once

#include <replisp/lisp/value.hpp>

#include <cctype>
#include <charconv>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace replisp::lisp {

struct ReaderError : std::runtime_error {
    std::size_t offset;
    std::size_t line;
    std::size_t column;
    ReaderError(std::string msg, std::size_t off, std::size_t ln, std::size_t col)
        : std::runtime_error(std::move(msg)), offset(off), line(ln), column(col) {}
};

// A top-level form with its exact byte span in the source text. The span is
// what FUNCTION-SOURCE reports for definitions read at top level.
struct ReadForm {
    Value form;
    std::size_t begin = 0;
    std::size_t end = 0;
};

// S-expression reader for the supported subset: lists, dotted pairs,
// integers, floats, strings with \" and \\ escapes, symbols (upcased),
// quote/quasiquote/unquote/unquote-splicing shorthand, ; line comments.
class Reader {
public:
    explicit Reader(std::string_view src) : src_(src) {}

    std::vector<ReadForm> read_all() {
        std::vector<ReadForm> forms;
        for (;;) {
            skip_space();
            if (at_end()) break;
            std::size_t begin = pos_;
            Value v = read_form();
            forms.push_back({v, begin, pos_});
        }
        return forms;
    }

private:
    [[noreturn]] void fail(const std::string& msg, std::size_t at) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i < at && i < src_.size(); ++i) {
            if (src_[i] == '\n') { ++line; col = 1; } else ++col;
        }
        throw ReaderError(msg + " at line " + std::to_string(line) + ", column " +
                              std::to_string(col),
                          at, line, col);
    }

    bool at_end() const { return pos_ >= src_.size(); }
    char peek() const { return src_[pos_]; }
    char next() { return src_[pos_++]; }

    static bool is_delimiter(char c) {
        return std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')' ||
               c == '"' || c == ';' || c == '\'' || c == '`' || c == ',';
    }

    void skip_space() {
        while (!at_end()) {
            char c = peek();
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else if (c == ';') {
                while (!at_end() && peek() != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    Value read_form() {
        skip_space();
        if (at_end()) fail("unexpected end of input", pos_);
        char c = peek();
        switch (c) {
        case '(':
            ++pos_;
            return read_list();
        case ')':
            fail("unmatched ')'", pos_);
        case '\'':
            ++pos_;
            return shorthand("QUOTE");
        case '`':
            ++pos_;
            return shorthand("QUASIQUOTE");
        case ',':
            ++pos_;
            if (!at_end() && peek() == '@') {
                ++pos_;
                return shorthand("UNQUOTE-SPLICING");
            }
            return shorthand("UNQUOTE");
        case '"':
            return read_string();
        default:
            return read_atom();
        }
    }

    Value shorthand(const char* sym) {
        std::size_t at = pos_;
        skip_space();
        if (at_end()) fail("dangling quote", at);
        Value inner = read_form();
        return list_of({Value::symbol(sym), inner});
    }

    Value read_list() {
        std::size_t open = pos_ - 1;
        std::vector<Value> items;
        Value tail = Value::nil();
        for (;;) {
            skip_space();
            if (at_end()) fail("unbalanced parenthesis", open);
            if (peek() == ')') {
                ++pos_;
                break;
            }
            // dotted tail: "." followed by a delimiter
            if (peek() == '.' &&
                (pos_ + 1 >= src_.size() || is_delimiter(src_[pos_ + 1]))) {
                if (items.empty()) fail("dotted pair without car", pos_);
                ++pos_;
                tail = read_form();
                skip_space();
                if (at_end() || peek() != ')') fail("malformed dotted pair", pos_);
                ++pos_;
                break;
            }
            items.push_back(read_form());
        }
        Value acc = tail;
        for (auto it = items.rbegin(); it != items.rend(); ++it)
            acc = Value(Value::Repr(std::make_shared<Cons>(Cons{*it, acc})));
        return acc;
    }

    Value read_string() {
        std::size_t open = pos_;
        ++pos_; // opening quote
        std::string out;
        for (;;) {
            if (at_end()) fail("unterminated string", open);
            char c = next();
            if (c == '"') break;
            if (c == '\\') {
                if (at_end()) fail("unterminated string", open);
                char e = next();
                if (e != '"' && e != '\\') fail("invalid string escape", pos_ - 1);
                out += e;
            } else {
                out += c;
            }
        }
        return Value::string(std::move(out));
    }

    Value read_atom() {
        std::size_t begin = pos_;
        while (!at_end() && !is_delimiter(peek())) ++pos_;
        std::string_view tok = src_.substr(begin, pos_ - begin);
        if (tok.empty()) fail("empty token", begin);

        bool number_like = std::isdigit(static_cast<unsigned char>(tok[0])) ||
                           ((tok[0] == '+' || tok[0] == '-' || tok[0] == '.') &&
                            tok.size() > 1 &&
                            (std::isdigit(static_cast<unsigned char>(tok[1])) ||
                             (tok[1] == '.' && tok.size() > 2 &&
                              std::isdigit(static_cast<unsigned char>(tok[2])))));
        if (number_like) {
            std::string_view digits = tok;
            if (digits[0] == '+') digits.remove_prefix(1); // from_chars rejects '+'
            std::int64_t i;
            auto ri = std::from_chars(digits.data(), digits.data() + digits.size(), i);
            if (ri.ec == std::errc() && ri.ptr == digits.data() + digits.size())
                return Value::integer(i);
            double d;
            auto rd = std::from_chars(digits.data(), digits.data() + digits.size(), d);
            if (rd.ec == std::errc() && rd.ptr == digits.data() + digits.size())
                return Value::real(d);
            fail("invalid number '" + std::string(tok) + "'", begin);
        }

        std::string name(tok);
        for (char& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        if (name == "NIL") return Value::nil();
        if (name == "T") return Value::truth();
        return Value::symbol(name);
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

inline std::vector<ReadForm> read_forms(std::string_view src) {
    return Reader(src).read_all();
}

// Convenience used throughout the tests: parse exactly one form.
inline Value read_one(std::string_view src) {
    auto forms = read_forms(src);
    if (forms.size() != 1)
        throw ReaderError("expected exactly one form", 0, 1, 1);
    return forms[0].form;
}

} // namespace replisp::lisp
