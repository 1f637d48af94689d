#pragma once

#include <replisp/lisp/interp.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace replisp::lisp {

namespace detail {

[[noreturn]] inline void type_error(const std::string& msg) {
    throw LispError{ErrorKind::TypeError, msg, ""};
}

inline void require_number(const Value& v, const char* who) {
    if (!v.is_number()) type_error(std::string(who) + ": " + print_value(v) + " is not a number");
}

inline std::int64_t checked_add(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_add_overflow(a, b, &r)) throw LispError{ErrorKind::IntegerOverflow, "integer addition overflow", ""};
    return r;
}
inline std::int64_t checked_sub(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_sub_overflow(a, b, &r)) throw LispError{ErrorKind::IntegerOverflow, "integer subtraction overflow", ""};
    return r;
}
inline std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_mul_overflow(a, b, &r)) throw LispError{ErrorKind::IntegerOverflow, "integer multiplication overflow", ""};
    return r;
}

inline bool num_less(const Value& a, const Value& b) {
    if (a.is_integer() && b.is_integer()) return a.as_integer() < b.as_integer();
    return a.number_as_double() < b.number_as_double();
}
inline bool num_equal(const Value& a, const Value& b) {
    if (a.is_integer() && b.is_integer()) return a.as_integer() == b.as_integer();
    return a.number_as_double() == b.number_as_double();
}

template <typename Pred>
inline Value compare_chain(std::vector<Value>& args, const char* who, Pred pred) {
    for (auto& a : args) require_number(a, who);
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
        if (!pred(args[i], args[i + 1])) return Value::nil();
    return Value::truth();
}

inline const std::string& string_arg(const Value& v, const char* who) {
    if (!v.is_string()) type_error(std::string(who) + ": " + print_value(v) + " is not a string");
    return v.string_value();
}

inline std::vector<Value> list_arg(const Value& v, const char* who) {
    std::vector<Value> items;
    if (!list_to_vector(v, items))
        type_error(std::string(who) + ": " + print_value(v) + " is not a proper list");
    return items;
}

inline std::string string_designator(const Value& v, const char* who) {
    if (v.is_string()) return v.string_value();
    if (v.is_symbol()) return symbol_name(v.symbol_id());
    if (v.is_nil()) return "NIL";
    if (v.is_true_constant()) return "T";
    type_error(std::string(who) + ": " + print_value(v) + " is not a string or symbol");
}

inline SymbolId symbol_arg(const Value& v, const char* who) {
    if (v.is_symbol()) return v.symbol_id();
    if (v.is_nil()) return sym::NIL();
    if (v.is_true_constant()) return sym::T();
    type_error(std::string(who) + ": " + print_value(v) + " is not a symbol");
}

} // namespace detail

inline void install_builtins(Env& env) {
    using detail::list_arg;
    using detail::require_number;
    using detail::string_arg;
    using detail::type_error;

    auto reg = [&env](const char* name, int min_args, int max_args,
                      std::function<Value(Interp&, std::vector<Value>&)> fn) {
        auto b = std::make_shared<const BuiltinDef>(
            BuiltinDef{name, min_args, max_args, std::move(fn)});
        env.globals[intern(name)] = Value(Value::Repr(std::move(b)));
        env.installed_builtins.emplace_back(name);
    };

    // arithmetic ---------------------------------------------------------

    reg("+", 0, -1, [](Interp&, std::vector<Value>& args) {
        bool all_int = true;
        for (auto& a : args) {
            require_number(a, "+");
            all_int = all_int && a.is_integer();
        }
        if (all_int) {
            std::int64_t acc = 0;
            for (auto& a : args) acc = detail::checked_add(acc, a.as_integer());
            return Value::integer(acc);
        }
        double acc = 0;
        for (auto& a : args) acc += a.number_as_double();
        return Value::real(acc);
    });

    reg("-", 1, -1, [](Interp&, std::vector<Value>& args) {
        bool all_int = true;
        for (auto& a : args) {
            require_number(a, "-");
            all_int = all_int && a.is_integer();
        }
        if (all_int) {
            if (args.size() == 1) return Value::integer(detail::checked_sub(0, args[0].as_integer()));
            std::int64_t acc = args[0].as_integer();
            for (std::size_t i = 1; i < args.size(); ++i)
                acc = detail::checked_sub(acc, args[i].as_integer());
            return Value::integer(acc);
        }
        if (args.size() == 1) return Value::real(-args[0].number_as_double());
        double acc = args[0].number_as_double();
        for (std::size_t i = 1; i < args.size(); ++i) acc -= args[i].number_as_double();
        return Value::real(acc);
    });

    reg("*", 0, -1, [](Interp&, std::vector<Value>& args) {
        bool all_int = true;
        for (auto& a : args) {
            require_number(a, "*");
            all_int = all_int && a.is_integer();
        }
        if (all_int) {
            std::int64_t acc = 1;
            for (auto& a : args) acc = detail::checked_mul(acc, a.as_integer());
            return Value::integer(acc);
        }
        double acc = 1;
        for (auto& a : args) acc *= a.number_as_double();
        return Value::real(acc);
    });

    // Integer division yields an integer when exact, otherwise a float.
    // (Full CL would produce a rational; documented divergence.)
    reg("/", 2, -1, [](Interp&, std::vector<Value>& args) {
        bool all_int = true;
        for (auto& a : args) {
            require_number(a, "/");
            all_int = all_int && a.is_integer();
        }
        if (all_int) {
            std::int64_t acc = args[0].as_integer();
            bool exact = true;
            double facc = static_cast<double>(acc);
            for (std::size_t i = 1; i < args.size(); ++i) {
                std::int64_t d = args[i].as_integer();
                if (d == 0) throw LispError{ErrorKind::DivisionByZero, "division by zero", ""};
                if (exact && acc % d == 0 && !(acc == INT64_MIN && d == -1)) {
                    acc /= d;
                    facc = static_cast<double>(acc);
                } else {
                    exact = false;
                    facc /= static_cast<double>(d);
                }
            }
            return exact ? Value::integer(acc) : Value::real(facc);
        }
        double acc = args[0].number_as_double();
        for (std::size_t i = 1; i < args.size(); ++i) {
            double d = args[i].number_as_double();
            if (d == 0.0) throw LispError{ErrorKind::DivisionByZero, "division by zero", ""};
            acc /= d;
        }
        return Value::real(acc);
    });

    reg("MOD", 2, 2, [](Interp&, std::vector<Value>& args) {
        require_number(args[0], "MOD");
        require_number(args[1], "MOD");
        if (args[0].is_integer() && args[1].is_integer()) {
            std::int64_t a = args[0].as_integer(), b = args[1].as_integer();
            if (b == 0) throw LispError{ErrorKind::DivisionByZero, "MOD by zero", ""};
            std::int64_t r = a % b;
            if (r != 0 && ((r < 0) != (b < 0))) r += b; // floor semantics
            return Value::integer(r);
        }
        double a = args[0].number_as_double(), b = args[1].number_as_double();
        if (b == 0.0) throw LispError{ErrorKind::DivisionByZero, "MOD by zero", ""};
        double r = std::fmod(a, b);
        if (r != 0.0 && ((r < 0) != (b < 0))) r += b;
        return Value::real(r);
    });

    reg("ABS", 1, 1, [](Interp&, std::vector<Value>& args) {
        require_number(args[0], "ABS");
        if (args[0].is_integer()) {
            std::int64_t v = args[0].as_integer();
            if (v == INT64_MIN)
                throw LispError{ErrorKind::IntegerOverflow, "ABS of most-negative integer", ""};
            return Value::integer(v < 0 ? -v : v);
        }
        return Value::real(std::fabs(args[0].as_real()));
    });

    reg("MIN", 1, -1, [](Interp&, std::vector<Value>& args) {
        Value best = args[0];
        require_number(best, "MIN");
        for (std::size_t i = 1; i < args.size(); ++i) {
            require_number(args[i], "MIN");
            if (detail::num_less(args[i], best)) best = args[i];
        }
        return best;
    });

    reg("MAX", 1, -1, [](Interp&, std::vector<Value>& args) {
        Value best = args[0];
        require_number(best, "MAX");
        for (std::size_t i = 1; i < args.size(); ++i) {
            require_number(args[i], "MAX");
            if (detail::num_less(best, args[i])) best = args[i];
        }
        return best;
    });

    // comparison ----------------------------------------------------------

    reg("<", 1, -1, [](Interp&, std::vector<Value>& args) {
        return detail::compare_chain(args, "<", [](const Value& a, const Value& b) {
            return detail::num_less(a, b);
        });
    });
    reg("<=", 1, -1, [](Interp&, std::vector<Value>& args) {
        return detail::compare_chain(args, "<=", [](const Value& a, const Value& b) {
            return !detail::num_less(b, a);
        });
    });
    reg(">", 1, -1, [](Interp&, std::vector<Value>& args) {
        return detail::compare_chain(args, ">", [](const Value& a, const Value& b) {
            return detail::num_less(b, a);
        });
    });
    reg(">=", 1, -1, [](Interp&, std::vector<Value>& args) {
        return detail::compare_chain(args, ">=", [](const Value& a, const Value& b) {
            return !detail::num_less(a, b);
        });
    });
    reg("=", 1, -1, [](Interp&, std::vector<Value>& args) {
        return detail::compare_chain(args, "=", [](const Value& a, const Value& b) {
            return detail::num_equal(a, b);
        });
    });
    reg("/=", 1, -1, [](Interp&, std::vector<Value>& args) {
        for (auto& a : args) require_number(a, "/=");
        for (std::size_t i = 0; i < args.size(); ++i)
            for (std::size_t j = i + 1; j < args.size(); ++j)
                if (detail::num_equal(args[i], args[j])) return Value::nil();
        return Value::truth();
    });

    // equality --------------------------------------------------------------

    reg("EQ", 2, 2, [](Interp&, std::vector<Value>& args) { return Value::boolean(eq(args[0], args[1])); });
    reg("EQL", 2, 2, [](Interp&, std::vector<Value>& args) { return Value::boolean(eql(args[0], args[1])); });
    reg("EQUAL", 2, 2, [](Interp&, std::vector<Value>& args) { return Value::boolean(equal(args[0], args[1])); });

    // lists -------------------------------------------------------------------

    reg("CONS", 2, 2, [](Interp& in, std::vector<Value>& args) {
        return in.cons_cell(args[0], args[1]);
    });
    reg("CAR", 1, 1, [](Interp&, std::vector<Value>& args) {
        if (args[0].is_nil()) return Value::nil();
        if (!args[0].is_cons()) type_error("CAR: " + print_value(args[0]) + " is not a list");
        return car(args[0]);
    });
    reg("CDR", 1, 1, [](Interp&, std::vector<Value>& args) {
        if (args[0].is_nil()) return Value::nil();
        if (!args[0].is_cons()) type_error("CDR: " + print_value(args[0]) + " is not a list");
        return cdr(args[0]);
    });
    reg("LIST", 0, -1, [](Interp& in, std::vector<Value>& args) { return in.make_list(args); });
    reg("APPEND", 0, -1, [](Interp& in, std::vector<Value>& args) {
        if (args.empty()) return Value::nil();
        Value acc = args.back(); // last argument is shared, not copied
        for (std::size_t i = args.size() - 1; i-- > 0;) {
            auto items = list_arg(args[i], "APPEND");
            for (auto it = items.rbegin(); it != items.rend(); ++it)
                acc = in.cons_cell(*it, acc);
        }
        return acc;
    });
    reg("LENGTH", 1, 1, [](Interp&, std::vector<Value>& args) {
        return Value::integer(static_cast<std::int64_t>(list_arg(args[0], "LENGTH").size()));
    });
    reg("REVERSE", 1, 1, [](Interp& in, std::vector<Value>& args) {
        auto items = list_arg(args[0], "REVERSE");
        Value acc = Value::nil();
        for (const auto& i : items) acc = in.cons_cell(i, acc);
        return acc;
    });
    reg("NTH", 2, 2, [](Interp&, std::vector<Value>& args) {
        if (!args[0].is_integer() || args[0].as_integer() < 0)
            type_error("NTH: index must be a non-negative integer");
        Value cur = args[1];
        for (std::int64_t i = args[0].as_integer(); i > 0 && cur.is_cons(); --i) cur = cdr(cur);
        if (cur.is_nil()) return Value::nil();
        if (!cur.is_cons()) type_error("NTH: " + print_value(args[1]) + " is not a proper list");
        return car(cur);
    });
    reg("NULL", 1, 1, [](Interp&, std::vector<Value>& args) { return Value::boolean(args[0].is_nil()); });
    reg("NOT", 1, 1, [](Interp&, std::vector<Value>& args) { return Value::boolean(args[0].is_nil()); });
    reg("ATOM", 1, 1, [](Interp&, std::vector<Value>& args) { return Value::boolean(!args[0].is_cons()); });
    reg("CONSP", 1, 1, [](Interp&, std::vector<Value>& args) { return Value::boolean(args[0].is_cons()); });
    reg("SYMBOLP", 1, 1, [](Interp&, std::vector<Value>& args) {
        return Value::boolean(args[0].is_symbol() || args[0].is_nil() || args[0].is_true_constant());
    });
    reg("STRINGP", 1, 1, [](Interp&, std::vector<Value>& args) { return Value::boolean(args[0].is_string()); });
    reg("NUMBERP", 1, 1, [](Interp&, std::vector<Value>& args) { return Value::boolean(args[0].is_number()); });
    reg("FUNCTIONP", 1, 1, [](Interp&, std::vector<Value>& args) { return Value::boolean(args[0].is_function()); });

    reg("MAPCAR", 2, -1, [](Interp& in, std::vector<Value>& args) {
        std::vector<std::vector<Value>> lists;
        std::size_t shortest = SIZE_MAX;
        for (std::size_t i = 1; i < args.size(); ++i) {
            lists.push_back(list_arg(args[i], "MAPCAR"));
            shortest = std::min(shortest, lists.back().size());
        }
        std::vector<Value> out;
        for (std::size_t i = 0; i < shortest; ++i) {
            std::vector<Value> call;
            call.reserve(lists.size());
            for (auto& l : lists) call.push_back(l[i]);
            out.push_back(in.apply(args[0], std::move(call)));
        }
        return in.make_list(out);
    });

    reg("REDUCE", 2, 3, [](Interp& in, std::vector<Value>& args) {
        auto items = list_arg(args[1], "REDUCE");
        Value acc;
        std::size_t start = 0;
        if (args.size() == 3) {
            acc = args[2];
        } else if (items.empty()) {
            return in.apply(args[0], {});
        } else {
            acc = items[0];
            start = 1;
        }
        for (std::size_t i = start; i < items.size(); ++i)
            acc = in.apply(args[0], {acc, items[i]});
        return acc;
    });

    reg("ASSOC", 2, 2, [](Interp&, std::vector<Value>& args) {
        Value cur = args[1];
        while (cur.is_cons()) {
            Value entry = car(cur);
            if (entry.is_cons() && eql(args[0], car(entry))) return entry;
            cur = cdr(cur);
        }
        return Value::nil();
    });

    reg("MEMBER", 2, 2, [](Interp&, std::vector<Value>& args) {
        Value cur = args[1];
        while (cur.is_cons()) {
            if (eql(args[0], car(cur))) return cur;
            cur = cdr(cur);
        }
        return Value::nil();
    });

    // strings -----------------------------------------------------------------

    reg("STRING=", 2, 2, [](Interp&, std::vector<Value>& args) {
        return Value::boolean(detail::string_designator(args[0], "STRING=") ==
                              detail::string_designator(args[1], "STRING="));
    });
    reg("STRING-APPEND", 0, -1, [](Interp&, std::vector<Value>& args) {
        std::string out;
        for (auto& a : args) out += string_arg(a, "STRING-APPEND");
        return Value::string(std::move(out));
    });
    reg("SUBSEQ", 2, 3, [](Interp&, std::vector<Value>& args) {
        const std::string& s = string_arg(args[0], "SUBSEQ");
        if (!args[1].is_integer()) type_error("SUBSEQ: start must be an integer");
        std::int64_t start = args[1].as_integer();
        std::int64_t end = static_cast<std::int64_t>(s.size());
        if (args.size() == 3) {
            if (!args[2].is_integer()) type_error("SUBSEQ: end must be an integer");
            end = args[2].as_integer();
        }
        if (start < 0 || end > static_cast<std::int64_t>(s.size()) || start > end)
            type_error("SUBSEQ: bounds out of range");
        return Value::string(s.substr(static_cast<std::size_t>(start),
                                      static_cast<std::size_t>(end - start)));
    });
    reg("STRING-LENGTH", 1, 1, [](Interp&, std::vector<Value>& args) {
        return Value::integer(static_cast<std::int64_t>(string_arg(args[0], "STRING-LENGTH").size()));
    });
    reg("SYMBOL-NAME", 1, 1, [](Interp&, std::vector<Value>& args) {
        return Value::string(symbol_name(detail::symbol_arg(args[0], "SYMBOL-NAME")));
    });
    reg("INTERN", 1, 1, [](Interp&, std::vector<Value>& args) {
        return Value::symbol(intern(string_arg(args[0], "INTERN")));
    });

    // application ---------------------------------------------------------------

    reg("FUNCALL", 1, -1, [](Interp& in, std::vector<Value>& args) {
        Value fn = args[0];
        std::vector<Value> rest(args.begin() + 1, args.end());
        return in.apply(fn, std::move(rest));
    });
    reg("APPLY", 2, -1, [](Interp& in, std::vector<Value>& args) {
        Value fn = args[0];
        std::vector<Value> call(args.begin() + 1, args.end() - 1);
        auto tail = list_arg(args.back(), "APPLY");
        call.insert(call.end(), tail.begin(), tail.end());
        return in.apply(fn, std::move(call));
    });

    // output (captured only) ------------------------------------------------------

    reg("PRINC", 1, 1, [](Interp& in, std::vector<Value>& args) {
        in.emit(princ_value(args[0]));
        return args[0];
    });
    reg("PRINT", 1, 1, [](Interp& in, std::vector<Value>& args) {
        in.emit("\n" + print_value(args[0]) + " ");
        return args[0];
    });
    reg("TERPRI", 0, 0, [](Interp& in, std::vector<Value>&) {
        in.emit("\n");
        return Value::nil();
    });

    // symbols ------------------------------------------------------------------

    reg("GENSYM", 0, 1, [](Interp& in, std::vector<Value>& args) {
        std::string prefix = "G";
        if (!args.empty()) prefix = string_arg(args[0], "GENSYM");
        std::uint64_t n = in.env().gensym_counter++;
        return Value::symbol(intern("#:" + prefix + std::to_string(n)));
    });

    // introspection ---------------------------------------------------------------

    reg("LIST-DEFINITIONS", 0, 0, [](Interp& in, std::vector<Value>&) {
        std::vector<Value> names;
        for (SymbolId id : in.env().user_defs) names.push_back(Value::symbol(id));
        return in.make_list(names);
    });

    reg("FUNCTION-SOURCE", 1, 1, [](Interp& in, std::vector<Value>& args) {
        SymbolId id = detail::symbol_arg(args[0], "FUNCTION-SOURCE");
        auto it = in.env().sources.find(id);
        if (it == in.env().sources.end())
            throw LispError{ErrorKind::UnboundFunction,
                            symbol_name(id) + " has no recorded source", ""};
        return Value::string(it->second);
    });

    reg("DESCRIBE", 1, 1, [](Interp& in, std::vector<Value>& args) {
        SymbolId id = detail::symbol_arg(args[0], "DESCRIBE");
        const std::string& name = symbol_name(id);
        auto mit = in.env().macros.find(id);
        if (mit != in.env().macros.end()) {
            const auto& m = *mit->second.macro();
            return Value::string(name + ": macro taking " + std::to_string(m.params.size()) +
                                 " argument(s)");
        }
        auto git = in.env().globals.find(id);
        if (git == in.env().globals.end())
            throw LispError{ErrorKind::UnboundSymbol, name, ""};
        const Value& v = git->second;
        if (v.is_closure()) {
            return Value::string(name + ": function taking " +
                                 std::to_string(v.closure()->params.size()) + " argument(s)");
        }
        if (v.is_builtin()) {
            const auto& b = *v.builtin();
            std::string arity = std::to_string(b.min_args);
            if (b.max_args < 0)
                arity += " or more";
            else if (b.max_args != b.min_args)
                arity += " to " + std::to_string(b.max_args);
            return Value::string(name + ": builtin function taking " + arity + " argument(s)");
        }
        return Value::string(name + ": variable, value " + print_value(v));
    });

    // capability-gated groups; names stay unbound when the flag is off ------------

    if (env.policy.time) {
        reg("CURRENT-TIME-MS", 0, 0, [](Interp& in, std::vector<Value>&) {
            return Value::integer(in.env().clock());
        });
    }
    // filesystem / network / subprocess groups are reserved: no builtins ship
    // for them, so enabling those flags currently installs nothing.
}

// The enumerated pure builtin set; the sandbox audit diffs the installed
// table against this list.
inline const std::vector<std::string>& pure_builtin_names() {
    static const std::vector<std::string> names = {
        "+", "-", "*", "/", "MOD", "ABS", "MIN", "MAX",
        "<", "<=", ">", ">=", "=", "/=",
        "EQ", "EQL", "EQUAL",
        "CONS", "CAR", "CDR", "LIST", "APPEND", "LENGTH", "REVERSE", "NTH",
        "NULL", "NOT", "ATOM", "CONSP", "SYMBOLP", "STRINGP", "NUMBERP",
        "FUNCTIONP", "MAPCAR", "REDUCE", "ASSOC", "MEMBER",
        "STRING=", "STRING-APPEND", "SUBSEQ", "STRING-LENGTH", "SYMBOL-NAME", "INTERN",
        "FUNCALL", "APPLY",
        "PRINC", "PRINT", "TERPRI",
        "GENSYM",
        "LIST-DEFINITIONS", "FUNCTION-SOURCE", "DESCRIBE",
    };
    return names;
}

} // namespace replisp::lisp
