#pragma once

#include <replisp/clock.hpp>
#include <replisp/lisp/reader.hpp>
#include <replisp/lisp/value.hpp>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace replisp::lisp {

// --- budgets, errors, outcomes -----------------------------------------

struct EvalBudget {
    std::int64_t max_steps = 1'000'000;
    std::int64_t max_depth = 512;
    std::int64_t max_cells = 1'000'000;
    std::int64_t max_output_bytes = 64 * 1024;
    std::int64_t max_wall_ms = 2000;

    void validate() const {
        if (max_steps <= 0 || max_depth <= 0 || max_cells <= 0 ||
            max_output_bytes <= 0 || max_wall_ms <= 0)
            throw std::invalid_argument("all budget limits must be positive");
    }

    EvalBudget scaled(std::int64_t factor) const {
        auto mul = [factor](std::int64_t v) {
            return v > std::numeric_limits<std::int64_t>::max() / factor ? std::numeric_limits<std::int64_t>::max()
                                                                         : v * factor;
        };
        return {mul(max_steps), max_depth, mul(max_cells), mul(max_output_bytes), mul(max_wall_ms)};
    }

    bool operator==(const EvalBudget&) const = default;
};

enum class ErrorKind {
    UnboundSymbol,
    UnboundFunction,
    WrongArity,
    TypeError,
    DivisionByZero,
    IntegerOverflow,
    BudgetExhausted,
    ReaderError,
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
    case ErrorKind::UnboundSymbol: return "UnboundSymbol";
    case ErrorKind::UnboundFunction: return "UnboundFunction";
    case ErrorKind::WrongArity: return "WrongArity";
    case ErrorKind::TypeError: return "TypeError";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
    case ErrorKind::IntegerOverflow: return "IntegerOverflow";
    case ErrorKind::BudgetExhausted: return "BudgetExhausted";
    case ErrorKind::ReaderError: return "ReaderError";
    }
    return "UnknownError";
}

struct LispError {
    ErrorKind kind;
    std::string message;
    std::string form; // offending-form snippet, filled at top level when empty
};

struct EvalOutcome {
    bool ok = false;
    std::string value;  // printed representation of the last form's value
    std::string output; // captured print-family output, emission order
    ErrorKind error_kind = ErrorKind::TypeError;
    std::string error_message;
    std::string error_form;
    std::int64_t steps_used = 0;
    std::int64_t cells_used = 0;
    std::int64_t wall_ms = 0;

    // The unreadable-object error text spliced into the stream.
    std::string error_text() const {
        return std::string("#<error: ") + error_kind_name(error_kind) + " " + error_message + ">";
    }

    // Value-or-error text with captured output prepended, newline-separated
    // when both are non-empty.
    std::string splice_text() const {
        std::string tail = ok ? value : error_text();
        if (output.empty()) return tail;
        if (tail.empty()) return output;
        return output + "\n" + tail;
    }
};

// Optional builtin groups; all off means evaluation is closed over pure
// computation plus output capture.
struct CapabilityPolicy {
    bool filesystem = false;
    bool network = false;
    bool subprocess = false;
    bool time = false;

    bool all_off() const { return !filesystem && !network && !subprocess && !time; }
    bool operator==(const CapabilityPolicy&) const = default;
};

// --- environment --------------------------------------------------------

class Env {
public:
    std::unordered_map<SymbolId, Value> globals;
    std::unordered_map<SymbolId, Value> macros;   // symbol -> MacroPtr value
    std::unordered_map<SymbolId, std::string> sources;
    std::vector<SymbolId> user_defs;              // definition order, no duplicates
    std::uint64_t gensym_counter = 0;
    CapabilityPolicy policy;
    Clock clock = system_clock();
    std::vector<std::string> installed_builtins;  // audit trail

    void note_user_def(SymbolId id) {
        if (std::find(user_defs.begin(), user_defs.end(), id) == user_defs.end())
            user_defs.push_back(id);
    }
};

void install_builtins(Env& env); // defined after Interp

inline Env make_env(CapabilityPolicy policy = {}, Clock clock = system_clock()) {
    Env env;
    env.policy = policy;
    env.clock = std::move(clock);
    install_builtins(env);
    return env;
}

// --- the evaluator -------------------------------------------------------

namespace sym {
inline SymbolId QUOTE() { static SymbolId s = intern("QUOTE"); return s; }
inline SymbolId IF() { static SymbolId s = intern("IF"); return s; }
inline SymbolId PROGN() { static SymbolId s = intern("PROGN"); return s; }
inline SymbolId LET() { static SymbolId s = intern("LET"); return s; }
inline SymbolId LETSTAR() { static SymbolId s = intern("LET*"); return s; }
inline SymbolId LAMBDA() { static SymbolId s = intern("LAMBDA"); return s; }
inline SymbolId DEFUN() { static SymbolId s = intern("DEFUN"); return s; }
inline SymbolId DEFMACRO() { static SymbolId s = intern("DEFMACRO"); return s; }
inline SymbolId DEFPARAMETER() { static SymbolId s = intern("DEFPARAMETER"); return s; }
inline SymbolId SETQ() { static SymbolId s = intern("SETQ"); return s; }
inline SymbolId COND() { static SymbolId s = intern("COND"); return s; }
inline SymbolId AND() { static SymbolId s = intern("AND"); return s; }
inline SymbolId OR() { static SymbolId s = intern("OR"); return s; }
inline SymbolId QUASIQUOTE() { static SymbolId s = intern("QUASIQUOTE"); return s; }
inline SymbolId UNQUOTE() { static SymbolId s = intern("UNQUOTE"); return s; }
inline SymbolId UNQUOTE_SPLICING() { static SymbolId s = intern("UNQUOTE-SPLICING"); return s; }
inline SymbolId WHILE() { static SymbolId s = intern("WHILE"); return s; }
inline SymbolId NIL() { static SymbolId s = intern("NIL"); return s; }
inline SymbolId T() { static SymbolId s = intern("T"); return s; }
} // namespace sym

inline std::string form_snippet(const Value& v, std::size_t limit = 80) {
    std::string s = print_value(v);
    if (s.size() > limit) s = s.substr(0, limit - 3) + "...";
    return s;
}

// One evaluation: owns the budget counters and the captured output buffer.
class Interp {
public:
    Interp(Env& env, EvalBudget budget)
        : env_(env), budget_(budget), start_ms_(env.clock()) {
        budget_.validate();
    }

    Env& env() { return env_; }
    const std::string& output() const { return output_; }
    std::int64_t steps_used() const { return steps_; }
    std::int64_t cells_used() const { return cells_; }

    // read + eval each form under the shared budget; value of the LAST form.
    EvalOutcome eval_top_level(std::string_view source) {
        EvalOutcome out;
        try {
            auto forms = read_forms(source);
            Value last = Value::nil();
            for (const auto& f : forms) {
                current_top_ = f.form;
                current_top_source_ = std::string(source.substr(f.begin, f.end - f.begin));
                last = eval(f.form, nullptr);
            }
            out.ok = true;
            out.value = print_value(last);
        } catch (const ReaderError& e) {
            out.ok = false;
            out.error_kind = ErrorKind::ReaderError;
            out.error_message = e.what();
        } catch (const LispError& e) {
            out.ok = false;
            out.error_kind = e.kind;
            out.error_message = e.message;
            out.error_form = e.form.empty() && current_top_.is_cons() ? form_snippet(current_top_) : e.form;
        }
        out.output = output_;
        out.steps_used = steps_;
        out.cells_used = cells_;
        out.wall_ms = env_.clock() - start_ms_;
        return out;
    }

    Value eval(const Value& expr, const FramePtr& frame) {
        tick(expr);
        DepthGuard guard(*this, expr);

        if (expr.is_symbol()) return lookup_value(expr.symbol_id(), frame, expr);
        if (!expr.is_cons()) return expr; // numbers, strings, nil, t, functions

        Value op = car(expr);
        if (op.is_symbol()) {
            SymbolId id = op.symbol_id();
            if (id == sym::QUOTE()) return nth_arg(expr, 1, 1);
            if (id == sym::IF()) return eval_if(expr, frame);
            if (id == sym::PROGN()) return eval_body(cdr(expr), frame);
            if (id == sym::LET()) return eval_let(expr, frame, false);
            if (id == sym::LETSTAR()) return eval_let(expr, frame, true);
            if (id == sym::LAMBDA()) return make_closure(expr, frame, "");
            if (id == sym::DEFUN()) return eval_defun(expr, frame);
            if (id == sym::DEFMACRO()) return eval_defmacro(expr, frame);
            if (id == sym::DEFPARAMETER()) return eval_defparameter(expr, frame);
            if (id == sym::SETQ()) return eval_setq(expr, frame);
            if (id == sym::COND()) return eval_cond(expr, frame);
            if (id == sym::AND()) return eval_and(expr, frame);
            if (id == sym::OR()) return eval_or(expr, frame);
            if (id == sym::QUASIQUOTE()) return quasiquote(nth_arg_raw(expr, 1, 1), 1, frame);
            if (id == sym::WHILE()) return eval_while(expr, frame);
            if (id == sym::UNQUOTE() || id == sym::UNQUOTE_SPLICING())
                throw LispError{ErrorKind::TypeError, "comma outside quasiquote", form_snippet(expr)};

            auto mit = env_.macros.find(id);
            if (mit != env_.macros.end()) {
                Value expansion = expand_macro(mit->second.macro(), expr);
                return eval(expansion, frame);
            }

            Value fn = lookup_function(id, frame, expr);
            std::vector<Value> args = eval_args(cdr(expr), frame);
            return apply(fn, std::move(args), expr);
        }

        Value fn = eval(op, frame);
        std::vector<Value> args = eval_args(cdr(expr), frame);
        return apply(fn, std::move(args), expr);
    }

    Value apply(const Value& fn_in, std::vector<Value> args, const Value& call_form = Value::nil()) {
        tick(call_form);
        DepthGuard guard(*this, call_form);

        Value fn = fn_in;
        if (fn.is_symbol()) { // function designator: late-bound global lookup
            auto it = env_.globals.find(fn.symbol_id());
            if (it == env_.globals.end())
                throw LispError{ErrorKind::UnboundFunction, symbol_name(fn.symbol_id()),
                                form_snippet(call_form)};
            fn = it->second;
        }
        if (fn.is_builtin()) {
            const auto& b = *fn.builtin();
            int n = static_cast<int>(args.size());
            if (n < b.min_args || (b.max_args >= 0 && n > b.max_args))
                throw LispError{ErrorKind::WrongArity,
                                b.name + " called with " + std::to_string(n) + " argument(s)",
                                form_snippet(call_form)};
            return b.fn(*this, args);
        }
        if (fn.is_closure()) {
            const auto& c = *fn.closure();
            if (args.size() != c.params.size())
                throw LispError{ErrorKind::WrongArity,
                                (c.name.empty() ? std::string("anonymous function") : c.name) +
                                    " expects " + std::to_string(c.params.size()) +
                                    " argument(s), got " + std::to_string(args.size()),
                                form_snippet(call_form)};
            auto frame = std::make_shared<Frame>();
            frame->parent = c.captured;
            for (std::size_t i = 0; i < args.size(); ++i)
                frame->vars[c.params[i]] = std::move(args[i]);
            return eval_body_vec(c.body, frame);
        }
        throw LispError{ErrorKind::TypeError, print_value(fn) + " is not a function",
                        form_snippet(call_form)};
    }

    // Repeatedly expand head-position macros until the head is not a macro.
    Value macroexpand(Value expr) {
        for (;;) {
            if (!expr.is_cons() || !car(expr).is_symbol()) return expr;
            auto mit = env_.macros.find(car(expr).symbol_id());
            if (mit == env_.macros.end()) return expr;
            expr = expand_macro(mit->second.macro(), expr);
        }
    }

    Value cons_cell(Value a, Value d) {
        if (++cells_ > budget_.max_cells)
            throw LispError{ErrorKind::BudgetExhausted, "max_cells", ""};
        return Value(Value::Repr(std::make_shared<Cons>(Cons{std::move(a), std::move(d)})));
    }

    Value make_list(const std::vector<Value>& items) {
        Value acc = Value::nil();
        for (auto it = items.rbegin(); it != items.rend(); ++it) acc = cons_cell(*it, acc);
        return acc;
    }

    void emit(std::string_view text) {
        if (static_cast<std::int64_t>(output_.size() + text.size()) > budget_.max_output_bytes)
            throw LispError{ErrorKind::BudgetExhausted, "max_output_bytes", ""};
        output_ += text;
    }

private:
    struct DepthGuard {
        Interp& in;
        DepthGuard(Interp& i, const Value& at) : in(i) {
            if (++in.depth_ > in.budget_.max_depth)
                throw LispError{ErrorKind::BudgetExhausted, "max_depth", form_snippet(at)};
        }
        ~DepthGuard() { --in.depth_; }
    };

    void tick(const Value& at) {
        if (++steps_ > budget_.max_steps)
            throw LispError{ErrorKind::BudgetExhausted, "max_steps", form_snippet(at)};
        if ((steps_ & 0x3FF) == 0 && env_.clock() - start_ms_ > budget_.max_wall_ms)
            throw LispError{ErrorKind::BudgetExhausted, "max_wall_ms", form_snippet(at)};
    }

    // --- structural helpers ---

    static std::vector<Value> proper_list(const Value& v, const char* what) {
        std::vector<Value> items;
        if (!list_to_vector(v, items))
            throw LispError{ErrorKind::TypeError, std::string(what) + " must be a proper list",
                            form_snippet(v)};
        return items;
    }

    Value nth_arg(const Value& form, int index, int exact_args) {
        return nth_arg_raw(form, index, exact_args);
    }

    static Value nth_arg_raw(const Value& form, int index, int exact_args) {
        auto items = proper_list(form, "special form");
        if (exact_args >= 0 && static_cast<int>(items.size()) != exact_args + 1)
            throw LispError{ErrorKind::WrongArity,
                            print_value(car(form)) + " takes " + std::to_string(exact_args) +
                                " argument(s)",
                            form_snippet(form)};
        return items[static_cast<std::size_t>(index)];
    }

    std::vector<Value> eval_args(const Value& arglist, const FramePtr& frame) {
        auto items = proper_list(arglist, "argument list");
        std::vector<Value> out;
        out.reserve(items.size());
        for (const auto& a : items) out.push_back(eval(a, frame));
        return out;
    }

    Value eval_body(const Value& body, const FramePtr& frame) {
        auto forms = proper_list(body, "body");
        return eval_body_vec(forms, frame);
    }

    Value eval_body_vec(const std::vector<Value>& forms, const FramePtr& frame) {
        Value last = Value::nil();
        for (const auto& f : forms) last = eval(f, frame);
        return last;
    }

    static std::vector<SymbolId> param_list(const Value& v, const Value& context) {
        auto items = proper_list(v, "parameter list");
        std::vector<SymbolId> params;
        params.reserve(items.size());
        for (const auto& p : items) {
            if (!p.is_symbol())
                throw LispError{ErrorKind::TypeError, "parameter is not a symbol",
                                form_snippet(context)};
            params.push_back(p.symbol_id());
        }
        return params;
    }

    // --- variable lookup ---

    Value lookup_value(SymbolId id, const FramePtr& frame, const Value& at) {
        if (id == sym::NIL()) return Value::nil();
        if (id == sym::T()) return Value::truth();
        for (Frame* f = frame.get(); f != nullptr; f = f->parent.get()) {
            auto it = f->vars.find(id);
            if (it != f->vars.end()) return it->second;
        }
        auto it = env_.globals.find(id);
        if (it != env_.globals.end()) return it->second;
        throw LispError{ErrorKind::UnboundSymbol, symbol_name(id), form_snippet(at)};
    }

    Value lookup_function(SymbolId id, const FramePtr& frame, const Value& at) {
        for (Frame* f = frame.get(); f != nullptr; f = f->parent.get()) {
            auto it = f->vars.find(id);
            if (it != f->vars.end()) return it->second;
        }
        auto it = env_.globals.find(id);
        if (it != env_.globals.end()) {
            if (!it->second.is_function())
                throw LispError{ErrorKind::TypeError, symbol_name(id) + " is not a function",
                                form_snippet(at)};
            return it->second;
        }
        throw LispError{ErrorKind::UnboundFunction, symbol_name(id), form_snippet(at)};
    }

    // --- special forms ---

    Value eval_if(const Value& form, const FramePtr& frame) {
        auto items = proper_list(form, "IF");
        if (items.size() < 3 || items.size() > 4)
            throw LispError{ErrorKind::WrongArity, "IF takes 2 or 3 arguments", form_snippet(form)};
        if (eval(items[1], frame).truthy()) return eval(items[2], frame);
        return items.size() == 4 ? eval(items[3], frame) : Value::nil();
    }

    Value eval_let(const Value& form, const FramePtr& frame, bool sequential) {
        auto items = proper_list(form, "LET");
        if (items.size() < 2)
            throw LispError{ErrorKind::WrongArity, "LET needs a binding list", form_snippet(form)};
        auto bindings = proper_list(items[1], "binding list");
        auto inner = std::make_shared<Frame>();
        inner->parent = frame;
        for (const auto& b : bindings) {
            SymbolId name;
            Value init = Value::nil();
            if (b.is_symbol()) {
                name = b.symbol_id();
            } else {
                auto pair = proper_list(b, "binding");
                if (pair.empty() || pair.size() > 2 || !pair[0].is_symbol())
                    throw LispError{ErrorKind::TypeError, "malformed binding", form_snippet(b)};
                name = pair[0].symbol_id();
                if (pair.size() == 2) init = eval(pair[1], sequential ? inner : frame);
            }
            inner->vars[name] = init;
        }
        std::vector<Value> body(items.begin() + 2, items.end());
        return eval_body_vec(body, inner);
    }

    Value make_closure(const Value& form, const FramePtr& frame, std::string name) {
        auto items = proper_list(form, "LAMBDA");
        if (items.size() < 2)
            throw LispError{ErrorKind::WrongArity, "LAMBDA needs a parameter list",
                            form_snippet(form)};
        auto c = std::make_shared<Closure>();
        c->params = param_list(items[1], form);
        c->body.assign(items.begin() + 2, items.end());
        c->captured = frame;
        c->name = std::move(name);
        return Value(Value::Repr(std::move(c)));
    }

    void record_source(SymbolId name, const Value& form) {
        bool is_toplevel = current_top_.is_cons() && form.is_cons() &&
                           current_top_.cons() == form.cons();
        env_.sources[name] = is_toplevel ? current_top_source_ : print_value(form);
        env_.note_user_def(name);
    }

    Value eval_defun(const Value& form, const FramePtr& frame) {
        auto items = proper_list(form, "DEFUN");
        if (items.size() < 3 || !items[1].is_symbol())
            throw LispError{ErrorKind::TypeError, "DEFUN needs a name and parameter list",
                            form_snippet(form)};
        SymbolId name = items[1].symbol_id();
        auto c = std::make_shared<Closure>();
        c->params = param_list(items[2], form);
        c->body.assign(items.begin() + 3, items.end());
        c->captured = frame;
        c->name = symbol_name(name);
        env_.globals[name] = Value(Value::Repr(std::move(c)));
        record_source(name, form);
        return items[1];
    }

    Value eval_defmacro(const Value& form, const FramePtr& frame) {
        auto items = proper_list(form, "DEFMACRO");
        if (items.size() < 3 || !items[1].is_symbol())
            throw LispError{ErrorKind::TypeError, "DEFMACRO needs a name and parameter list",
                            form_snippet(form)};
        SymbolId name = items[1].symbol_id();
        auto m = std::make_shared<MacroDef>();
        m->params = param_list(items[2], form);
        m->body.assign(items.begin() + 3, items.end());
        m->captured = frame;
        m->name = symbol_name(name);
        env_.macros[name] = Value(Value::Repr(std::move(m)));
        record_source(name, form);
        return items[1];
    }

    Value eval_defparameter(const Value& form, const FramePtr& frame) {
        auto items = proper_list(form, "DEFPARAMETER");
        if (items.size() != 3 || !items[1].is_symbol())
            throw LispError{ErrorKind::TypeError, "DEFPARAMETER needs a name and a value",
                            form_snippet(form)};
        SymbolId name = items[1].symbol_id();
        env_.globals[name] = eval(items[2], frame);
        env_.note_user_def(name);
        return items[1];
    }

    Value eval_setq(const Value& form, const FramePtr& frame) {
        auto items = proper_list(form, "SETQ");
        if (items.size() != 3 || !items[1].is_symbol())
            throw LispError{ErrorKind::TypeError, "SETQ needs a symbol and a value",
                            form_snippet(form)};
        SymbolId name = items[1].symbol_id();
        Value val = eval(items[2], frame);
        for (Frame* f = frame.get(); f != nullptr; f = f->parent.get()) {
            auto it = f->vars.find(name);
            if (it != f->vars.end()) {
                it->second = val;
                return val;
            }
        }
        env_.globals[name] = val;
        env_.note_user_def(name);
        return val;
    }

    Value eval_cond(const Value& form, const FramePtr& frame) {
        auto clauses = proper_list(cdr(form), "COND");
        for (const auto& clause : clauses) {
            auto parts = proper_list(clause, "COND clause");
            if (parts.empty())
                throw LispError{ErrorKind::TypeError, "empty COND clause", form_snippet(form)};
            Value test = eval(parts[0], frame);
            if (test.truthy()) {
                if (parts.size() == 1) return test;
                std::vector<Value> body(parts.begin() + 1, parts.end());
                return eval_body_vec(body, frame);
            }
        }
        return Value::nil();
    }

    Value eval_and(const Value& form, const FramePtr& frame) {
        auto items = proper_list(cdr(form), "AND");
        Value last = Value::truth();
        for (const auto& f : items) {
            last = eval(f, frame);
            if (!last.truthy()) return Value::nil();
        }
        return last;
    }

    Value eval_or(const Value& form, const FramePtr& frame) {
        auto items = proper_list(cdr(form), "OR");
        for (const auto& f : items) {
            Value v = eval(f, frame);
            if (v.truthy()) return v;
        }
        return Value::nil();
    }

    Value eval_while(const Value& form, const FramePtr& frame) {
        auto items = proper_list(form, "WHILE");
        if (items.size() < 2)
            throw LispError{ErrorKind::WrongArity, "WHILE needs a test", form_snippet(form)};
        std::vector<Value> body(items.begin() + 2, items.end());
        while (eval(items[1], frame).truthy()) {
            tick(form);
            eval_body_vec(body, frame);
        }
        return Value::nil();
    }

    // --- macros and quasiquote ---

    Value expand_macro(const MacroPtr& m, const Value& call) {
        tick(call);
        auto args = proper_list(cdr(call), "macro call");
        if (args.size() != m->params.size())
            throw LispError{ErrorKind::WrongArity,
                            m->name + " expects " + std::to_string(m->params.size()) +
                                " argument(s), got " + std::to_string(args.size()),
                            form_snippet(call)};
        auto frame = std::make_shared<Frame>();
        frame->parent = m->captured;
        for (std::size_t i = 0; i < args.size(); ++i) frame->vars[m->params[i]] = args[i];
        return eval_body_vec(m->body, frame);
    }

    Value quasiquote(const Value& tmpl, int level, const FramePtr& frame) {
        if (!tmpl.is_cons()) return tmpl;
        Value head = car(tmpl);
        if (head.is_symbol()) {
            SymbolId id = head.symbol_id();
            if (id == sym::UNQUOTE()) {
                Value inner = nth_arg_raw(tmpl, 1, 1);
                if (level == 1) return eval(inner, frame);
                return make_list({head, quasiquote(inner, level - 1, frame)});
            }
            if (id == sym::UNQUOTE_SPLICING())
                throw LispError{ErrorKind::TypeError, ",@ not inside a list", form_snippet(tmpl)};
            if (id == sym::QUASIQUOTE()) {
                Value inner = nth_arg_raw(tmpl, 1, 1);
                return make_list({head, quasiquote(inner, level + 1, frame)});
            }
        }
        // element-wise walk, honoring splices at this level
        std::vector<Value> out;
        Value cur = tmpl;
        while (cur.is_cons()) {
            Value elem = car(cur);
            // (UNQUOTE x) in dotted-tail position: `(a . ,b) reads as (a UNQUOTE x)
            if (cur.cons() != tmpl.cons() && elem.is_symbol() &&
                elem.symbol_id() == sym::UNQUOTE()) {
                Value acc = quasiquote(cur, level, frame);
                for (auto it = out.rbegin(); it != out.rend(); ++it) acc = cons_cell(*it, acc);
                return acc;
            }
            if (elem.is_cons() && car(elem).is_symbol() &&
                car(elem).symbol_id() == sym::UNQUOTE_SPLICING()) {
                if (level == 1) {
                    Value spliced = eval(nth_arg_raw(elem, 1, 1), frame);
                    std::vector<Value> items;
                    if (!list_to_vector(spliced, items))
                        throw LispError{ErrorKind::TypeError, ",@ value is not a proper list",
                                        form_snippet(elem)};
                    for (auto& i : items) out.push_back(std::move(i));
                } else {
                    out.push_back(make_list({car(elem), quasiquote(nth_arg_raw(elem, 1, 1),
                                                                   level - 1, frame)}));
                }
            } else {
                out.push_back(quasiquote(elem, level, frame));
            }
            cur = cdr(cur);
        }
        Value acc = cur.is_nil() ? Value::nil() : quasiquote(cur, level, frame);
        for (auto it = out.rbegin(); it != out.rend(); ++it) acc = cons_cell(*it, acc);
        return acc;
    }

    Env& env_;
    EvalBudget budget_;
    std::int64_t start_ms_;
    std::int64_t steps_ = 0;
    std::int64_t cells_ = 0;
    std::int64_t depth_ = 0;
    std::string output_;
    Value current_top_;
    std::string current_top_source_;

    friend void install_builtins(Env&);
};

// Convenience wrappers matching the module operations.
inline EvalOutcome eval_top_level(std::string_view source, Env& env, EvalBudget budget) {
    return Interp(env, budget).eval_top_level(source);
}

inline Value macroexpand(const Value& expr, Env& env, EvalBudget budget) {
    return Interp(env, budget).macroexpand(expr);
}

} // namespace replisp::lisp

#include <replisp/lisp/builtins.hpp>
