#pragma once

#include <charconv>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace replisp::lisp {

class Value;

using SymbolId = std::uint32_t;

// Process-wide symbol interner. Two symbols with the same name share one id.
class SymbolTable {
public:
    static SymbolTable& instance() {
        static SymbolTable t;
        return t;
    }

    SymbolId intern(std::string_view name) {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = ids_.find(std::string(name));
        if (it != ids_.end()) return it->second;
        SymbolId id = static_cast<SymbolId>(names_.size());
        names_.emplace_back(name);
        ids_.emplace(names_.back(), id);
        return id;
    }

    const std::string& name(SymbolId id) {
        std::lock_guard<std::mutex> lk(mu_);
        return names_[id];
    }

private:
    std::mutex mu_;
    std::deque<std::string> names_; // deque: name references stay valid as it grows
    std::unordered_map<std::string, SymbolId> ids_;
};

inline SymbolId intern(std::string_view name) { return SymbolTable::instance().intern(name); }
inline const std::string& symbol_name(SymbolId id) { return SymbolTable::instance().name(id); }

struct Cons;
struct Closure;
struct MacroDef;
struct BuiltinDef;

using ConsPtr = std::shared_ptr<Cons>;
using ClosurePtr = std::shared_ptr<Closure>;
using MacroPtr = std::shared_ptr<MacroDef>;
using BuiltinPtr = std::shared_ptr<const BuiltinDef>;
using StringPtr = std::shared_ptr<const std::string>;

struct NilT {
    bool operator==(const NilT&) const { return true; }
};
struct TrueT {
    bool operator==(const TrueT&) const { return true; }
};

struct Symbol {
    SymbolId id;
    bool operator==(const Symbol& o) const { return id == o.id; }
};

class Value {
public:
    using Repr = std::variant<NilT, TrueT, std::int64_t, double, Symbol, StringPtr,
                              ConsPtr, BuiltinPtr, ClosurePtr, MacroPtr>;

    Value() : v_(NilT{}) {}
    Value(Repr v) : v_(std::move(v)) {}

    static Value nil() { return Value(NilT{}); }
    static Value truth() { return Value(TrueT{}); }
    static Value boolean(bool b) { return b ? truth() : nil(); }
    static Value integer(std::int64_t i) { return Value(Repr(i)); }
    static Value real(double d) { return Value(Repr(d)); }
    static Value symbol(SymbolId id) { return Value(Repr(Symbol{id})); }
    static Value symbol(std::string_view name) { return symbol(intern(name)); }
    static Value string(std::string s) { return Value(Repr(std::make_shared<const std::string>(std::move(s)))); }

    bool is_nil() const { return std::holds_alternative<NilT>(v_); }
    bool is_true_constant() const { return std::holds_alternative<TrueT>(v_); }
    bool is_integer() const { return std::holds_alternative<std::int64_t>(v_); }
    bool is_real() const { return std::holds_alternative<double>(v_); }
    bool is_number() const { return is_integer() || is_real(); }
    bool is_symbol() const { return std::holds_alternative<Symbol>(v_); }
    bool is_string() const { return std::holds_alternative<StringPtr>(v_); }
    bool is_cons() const { return std::holds_alternative<ConsPtr>(v_); }
    bool is_builtin() const { return std::holds_alternative<BuiltinPtr>(v_); }
    bool is_closure() const { return std::holds_alternative<ClosurePtr>(v_); }
    bool is_macro() const { return std::holds_alternative<MacroPtr>(v_); }
    bool is_function() const { return is_builtin() || is_closure(); }

    // Lisp truth: everything except NIL
    bool truthy() const { return !is_nil(); }

    std::int64_t as_integer() const { return std::get<std::int64_t>(v_); }
    double as_real() const { return std::get<double>(v_); }
    double number_as_double() const { return is_integer() ? double(as_integer()) : as_real(); }
    SymbolId symbol_id() const { return std::get<Symbol>(v_).id; }
    const std::string& string_value() const { return *std::get<StringPtr>(v_); }
    const StringPtr& string_ptr() const { return std::get<StringPtr>(v_); }
    const ConsPtr& cons() const { return std::get<ConsPtr>(v_); }
    const BuiltinPtr& builtin() const { return std::get<BuiltinPtr>(v_); }
    const ClosurePtr& closure() const { return std::get<ClosurePtr>(v_); }
    const MacroPtr& macro() const { return std::get<MacroPtr>(v_); }

    const Repr& repr() const { return v_; }

private:
    Repr v_;
};

struct Cons {
    Value car;
    Value cdr;
};

struct Frame {
    std::unordered_map<SymbolId, Value> vars;
    std::shared_ptr<Frame> parent;
};
using FramePtr = std::shared_ptr<Frame>;

struct Closure {
    std::vector<SymbolId> params;
    std::vector<Value> body;   // forms, evaluated as an implicit PROGN
    FramePtr captured;         // lexical frame at definition time, may be null
    std::string name;          // empty for anonymous lambdas
};

struct MacroDef {
    std::vector<SymbolId> params;
    std::vector<Value> body;
    FramePtr captured;
    std::string name;
};

class Interp;

struct BuiltinDef {
    std::string name;
    int min_args;
    int max_args; // -1 for unbounded
    std::function<Value(Interp&, std::vector<Value>&)> fn;
};

inline Value car(const Value& v) { return v.cons()->car; }
inline Value cdr(const Value& v) { return v.cons()->cdr; }

// Identity/shallow equality: symbols by id, integers by value, compounds by
// pointer (the EQ builtin).
inline bool eq(const Value& a, const Value& b) {
    if (a.is_nil() && b.is_nil()) return true;
    if (a.is_true_constant() && b.is_true_constant()) return true;
    if (a.is_symbol() && b.is_symbol()) return a.symbol_id() == b.symbol_id();
    if (a.is_integer() && b.is_integer()) return a.as_integer() == b.as_integer();
    if (a.is_cons() && b.is_cons()) return a.cons() == b.cons();
    if (a.is_string() && b.is_string()) return a.string_ptr() == b.string_ptr();
    if (a.is_builtin() && b.is_builtin()) return a.builtin() == b.builtin();
    if (a.is_closure() && b.is_closure()) return a.closure() == b.closure();
    if (a.is_macro() && b.is_macro()) return a.macro() == b.macro();
    return false;
}

// EQL: EQ plus same-type numeric equality (covers floats).
inline bool eql(const Value& a, const Value& b) {
    if (a.is_real() && b.is_real()) return a.as_real() == b.as_real();
    return eq(a, b);
}

// EQUAL: structural equality on conses and strings, EQL elsewhere.
inline bool equal(const Value& a, const Value& b) {
    if (a.is_cons() && b.is_cons())
        return equal(car(a), car(b)) && equal(cdr(a), cdr(b));
    if (a.is_string() && b.is_string()) return a.string_value() == b.string_value();
    return eql(a, b);
}

// --- printing ---------------------------------------------------------

inline std::string format_double(double d) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), d);
    std::string s(buf, res.ptr);
    // keep floats readable as floats
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos) {
        s += ".0";
    }
    return s;
}

inline std::string quote_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    out += '"';
    return out;
}

// Readable representation: data round-trips through the reader.
inline std::string print_value(const Value& v) {
    struct Visitor {
        std::string operator()(const NilT&) const { return "NIL"; }
        std::string operator()(const TrueT&) const { return "T"; }
        std::string operator()(std::int64_t i) const { return std::to_string(i); }
        std::string operator()(double d) const { return format_double(d); }
        std::string operator()(const Symbol& s) const { return symbol_name(s.id); }
        std::string operator()(const StringPtr& s) const { return quote_string(*s); }
        std::string operator()(const ConsPtr& c) const {
            std::string out = "(";
            Value cur = Value(Value::Repr(c));
            bool first = true;
            while (cur.is_cons()) {
                if (!first) out += ' ';
                first = false;
                out += print_value(car(cur));
                cur = cdr(cur);
            }
            if (!cur.is_nil()) {
                out += " . ";
                out += print_value(cur);
            }
            out += ')';
            return out;
        }
        std::string operator()(const BuiltinPtr& b) const { return "#<FUNCTION " + b->name + ">"; }
        std::string operator()(const ClosurePtr& c) const {
            return "#<FUNCTION " + (c->name.empty() ? std::string("ANONYMOUS") : c->name) + ">";
        }
        std::string operator()(const MacroPtr& m) const { return "#<MACRO " + m->name + ">"; }
    };
    return std::visit(Visitor{}, v.repr());
}

// Aesthetic representation (PRINC): strings unquoted, everything else as
// print_value.
inline std::string princ_value(const Value& v) {
    if (v.is_string()) return v.string_value();
    return print_value(v);
}

// Build a proper list (untracked by any budget; helper for builtins that
// account cells themselves and for test fixtures).
inline Value list_of(std::vector<Value> items) {
    Value acc = Value::nil();
    for (auto it = items.rbegin(); it != items.rend(); ++it)
        acc = Value(Value::Repr(std::make_shared<Cons>(Cons{*it, acc})));
    return acc;
}

inline bool list_to_vector(Value v, std::vector<Value>& out) {
    while (v.is_cons()) {
        out.push_back(car(v));
        v = cdr(v);
    }
    return v.is_nil(); // false: improper (dotted) list
}

} // namespace replisp::lisp
