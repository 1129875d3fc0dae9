#include "mfbdsde/expr.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace mfbdsde {

namespace {

constexpr std::array<std::string_view, var_count> kVarNames = {
    "t", "x", "xp", "y", "z", "yp", "zp", "v", "vp", "p", "q"};

struct FuncEntry {
    std::string_view name;
    Func fn;
};
constexpr std::array<FuncEntry, 7> kFuncs = {{{"exp", Func::exp},
                                              {"sin", Func::sin},
                                              {"cos", Func::cos},
                                              {"tanh", Func::tanh},
                                              {"sqrt", Func::sqrt},
                                              {"abs", Func::abs},
                                              {"sign", Func::sign}}};

double ipow(double base, int expo) {
    // 0^0 follows the x^0 = 1 convention.
    double acc = 1.0;
    double b = base;
    int e = expo;
    while (e > 0) {
        if (e & 1) acc *= b;
        b *= b;
        e >>= 1;
    }
    return acc;
}

double apply_func(Func f, double a) {
    switch (f) {
        case Func::exp: return std::exp(a);
        case Func::sin: return std::sin(a);
        case Func::cos: return std::cos(a);
        case Func::tanh: return std::tanh(a);
        case Func::sqrt:
            if (a < 0.0) throw EvalDomainError("sqrt of a negative value");
            return std::sqrt(a);
        case Func::abs: return std::fabs(a);
        case Func::sign: return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
    }
    throw InvalidArgumentError("unknown function");
}

std::string_view func_name(Func f) {
    for (const auto& e : kFuncs)
        if (e.fn == f) return e.name;
    return "?";
}

/// Shortest decimal form that reparses to the same double.
std::string format_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        double back = 0.0;
        const char* end = buf + std::strlen(buf);
        auto [ptr, ec] = std::from_chars(buf, end, back);
        if (ec == std::errc() && ptr == end && back == v) break;
    }
    return buf;
}

} // namespace

std::string_view var_name(Var v) { return kVarNames[static_cast<int>(v)]; }

std::optional<Var> var_from_name(std::string_view name) {
    for (int i = 0; i < var_count; ++i)
        if (kVarNames[i] == name) return static_cast<Var>(i);
    return std::nullopt;
}

struct Expr::Node {
    ExprKind kind = ExprKind::constant;
    double value = 0.0;
    Var var = Var::t;
    Func fn = Func::exp;
    int expo = 0;
    unsigned mask = 0;
    std::shared_ptr<const Node> a, b;
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;

NodePtr make_constant_node(double c) {
    auto n = std::make_shared<Expr::Node>();
    n->kind = ExprKind::constant;
    n->value = c;
    return n;
}

} // namespace

Expr::Expr() : node_(make_constant_node(0.0)) {}

Expr Expr::constant(double c) { return Expr(make_constant_node(c)); }

Expr Expr::variable(Var v) {
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::variable;
    n->var = v;
    n->mask = var_bit(v);
    return Expr(std::move(n));
}

bool Expr::is_constant() const { return node_->kind == ExprKind::constant; }
double Expr::constant_value() const { return node_->value; }

namespace {
bool is_const_val(const Expr& e, double v) { return e.is_constant() && e.constant_value() == v; }
} // namespace

Expr Expr::add(Expr a, Expr b) {
    if (a.is_constant() && b.is_constant())
        return constant(a.constant_value() + b.constant_value());
    if (is_const_val(a, 0.0)) return b;
    if (is_const_val(b, 0.0)) return a;
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::add;
    n->mask = a.var_mask() | b.var_mask();
    n->a = a.node_;
    n->b = b.node_;
    return Expr(std::move(n));
}

Expr Expr::sub(Expr a, Expr b) {
    if (a.is_constant() && b.is_constant())
        return constant(a.constant_value() - b.constant_value());
    if (is_const_val(b, 0.0)) return a;
    if (is_const_val(a, 0.0)) return neg(b);
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::sub;
    n->mask = a.var_mask() | b.var_mask();
    n->a = a.node_;
    n->b = b.node_;
    return Expr(std::move(n));
}

Expr Expr::mul(Expr a, Expr b) {
    if (a.is_constant() && b.is_constant())
        return constant(a.constant_value() * b.constant_value());
    if (is_const_val(a, 0.0) || is_const_val(b, 0.0)) return constant(0.0);
    if (is_const_val(a, 1.0)) return b;
    if (is_const_val(b, 1.0)) return a;
    if (is_const_val(a, -1.0)) return neg(b);
    if (is_const_val(b, -1.0)) return neg(a);
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::mul;
    n->mask = a.var_mask() | b.var_mask();
    n->a = a.node_;
    n->b = b.node_;
    return Expr(std::move(n));
}

Expr Expr::div(Expr a, Expr b) {
    if (b.is_constant() && b.constant_value() != 0.0) {
        if (a.is_constant()) return constant(a.constant_value() / b.constant_value());
        if (b.constant_value() == 1.0) return a;
        if (is_const_val(a, 0.0)) return constant(0.0);
    }
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::div;
    n->mask = a.var_mask() | b.var_mask();
    n->a = a.node_;
    n->b = b.node_;
    return Expr(std::move(n));
}

Expr Expr::neg(Expr a) {
    if (a.is_constant()) return constant(-a.constant_value());
    if (a.kind() == ExprKind::neg) return a.operand(0);
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::neg;
    n->mask = a.var_mask();
    n->a = a.node_;
    return Expr(std::move(n));
}

Expr Expr::pow(Expr base, int exponent) {
    if (exponent < 0) throw InvalidArgumentError("exponent must be >= 0");
    if (exponent == 0) return constant(1.0);
    if (exponent == 1) return base;
    if (base.is_constant()) return constant(ipow(base.constant_value(), exponent));
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::pow;
    n->mask = base.var_mask();
    n->expo = exponent;
    n->a = base.node_;
    return Expr(std::move(n));
}

Expr Expr::call(Func f, Expr arg) {
    if (arg.is_constant() && !(f == Func::sqrt && arg.constant_value() < 0.0))
        return constant(apply_func(f, arg.constant_value()));
    auto n = std::make_shared<Node>();
    n->kind = ExprKind::call;
    n->mask = arg.var_mask();
    n->fn = f;
    n->a = arg.node_;
    return Expr(std::move(n));
}

namespace {

double eval_node(const Expr::Node& n, const Bindings& b);

} // namespace

double Expr::eval(const Bindings& b) const { return eval_node(*node_, b); }

namespace {

double eval_node(const Expr::Node& n, const Bindings& b) {
    switch (n.kind) {
        case ExprKind::constant: return n.value;
        case ExprKind::variable:
            if (!b.has(n.var))
                throw InvalidArgumentError("unbound variable '" +
                                           std::string(var_name(n.var)) + "'");
            return b.get(n.var);
        case ExprKind::add: return eval_node(*n.a, b) + eval_node(*n.b, b);
        case ExprKind::sub: return eval_node(*n.a, b) - eval_node(*n.b, b);
        case ExprKind::mul: return eval_node(*n.a, b) * eval_node(*n.b, b);
        case ExprKind::div: {
            const double den = eval_node(*n.b, b);
            if (den == 0.0) throw EvalDomainError("division by zero");
            return eval_node(*n.a, b) / den;
        }
        case ExprKind::neg: return -eval_node(*n.a, b);
        case ExprKind::pow: return ipow(eval_node(*n.a, b), n.expo);
        case ExprKind::call: return apply_func(n.fn, eval_node(*n.a, b));
    }
    throw InvalidArgumentError("corrupt expression node");
}

} // namespace

Expr Expr::diff(Var v) const {
    const Node& n = *node_;
    switch (n.kind) {
        case ExprKind::constant: return constant(0.0);
        case ExprKind::variable: return constant(n.var == v ? 1.0 : 0.0);
        case ExprKind::add: return add(Expr(n.a).diff(v), Expr(n.b).diff(v));
        case ExprKind::sub: return sub(Expr(n.a).diff(v), Expr(n.b).diff(v));
        case ExprKind::mul: {
            Expr a(n.a), b(n.b);
            return add(mul(a.diff(v), b), mul(a, b.diff(v)));
        }
        case ExprKind::div: {
            Expr a(n.a), b(n.b);
            Expr db = b.diff(v);
            if (db.is_constant() && db.constant_value() == 0.0) return div(a.diff(v), b);
            return div(sub(mul(a.diff(v), b), mul(a, db)), pow(b, 2));
        }
        case ExprKind::neg: return neg(Expr(n.a).diff(v));
        case ExprKind::pow: {
            Expr base(n.a);
            return mul(mul(constant(static_cast<double>(n.expo)), pow(base, n.expo - 1)),
                       base.diff(v));
        }
        case ExprKind::call: {
            Expr u(n.a);
            Expr du = u.diff(v);
            switch (n.fn) {
                case Func::exp: return mul(call(Func::exp, u), du);
                case Func::sin: return mul(call(Func::cos, u), du);
                case Func::cos: return mul(neg(call(Func::sin, u)), du);
                case Func::tanh:
                    return mul(sub(constant(1.0), pow(call(Func::tanh, u), 2)), du);
                case Func::sqrt:
                    return div(du, mul(constant(2.0), call(Func::sqrt, u)));
                case Func::abs: return mul(call(Func::sign, u), du);
                case Func::sign: return constant(0.0);
            }
            throw InvalidArgumentError("unknown function");
        }
    }
    throw InvalidArgumentError("corrupt expression node");
}

unsigned Expr::var_mask() const { return node_->mask; }

Expr Expr::swap_primed() const {
    const Node& n = *node_;
    switch (n.kind) {
        case ExprKind::constant: return *this;
        case ExprKind::variable: {
            switch (n.var) {
                case Var::x: return variable(Var::xp);
                case Var::xp: return variable(Var::x);
                case Var::y: return variable(Var::yp);
                case Var::yp: return variable(Var::y);
                case Var::z: return variable(Var::zp);
                case Var::zp: return variable(Var::z);
                case Var::v: return variable(Var::vp);
                case Var::vp: return variable(Var::v);
                default: return *this;
            }
        }
        case ExprKind::add: return add(Expr(n.a).swap_primed(), Expr(n.b).swap_primed());
        case ExprKind::sub: return sub(Expr(n.a).swap_primed(), Expr(n.b).swap_primed());
        case ExprKind::mul: return mul(Expr(n.a).swap_primed(), Expr(n.b).swap_primed());
        case ExprKind::div: return div(Expr(n.a).swap_primed(), Expr(n.b).swap_primed());
        case ExprKind::neg: return neg(Expr(n.a).swap_primed());
        case ExprKind::pow: return pow(Expr(n.a).swap_primed(), n.expo);
        case ExprKind::call: return call(n.fn, Expr(n.a).swap_primed());
    }
    throw InvalidArgumentError("corrupt expression node");
}

bool Expr::same(const Expr& other) const {
    const Node& a = *node_;
    const Node& b = *other.node_;
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case ExprKind::constant: return a.value == b.value;
        case ExprKind::variable: return a.var == b.var;
        case ExprKind::neg:
        case ExprKind::call:
            return (a.kind != ExprKind::call || a.fn == b.fn) &&
                   Expr(a.a).same(Expr(b.a));
        case ExprKind::pow: return a.expo == b.expo && Expr(a.a).same(Expr(b.a));
        case ExprKind::add:
        case ExprKind::sub:
        case ExprKind::mul:
        case ExprKind::div:
            return Expr(a.a).same(Expr(b.a)) && Expr(a.b).same(Expr(b.b));
    }
    return false;
}

ExprKind Expr::kind() const { return node_->kind; }
Expr Expr::operand(int i) const { return Expr(i == 0 ? node_->a : node_->b); }
Var Expr::variable_id() const { return node_->var; }
Func Expr::func() const { return node_->fn; }
int Expr::exponent() const { return node_->expo; }

namespace {

int precedence(ExprKind k) {
    switch (k) {
        case ExprKind::add:
        case ExprKind::sub: return 1;
        case ExprKind::mul:
        case ExprKind::div: return 2;
        case ExprKind::neg: return 3;
        case ExprKind::pow: return 4;
        default: return 5;
    }
}

void print_node(const Expr& e, std::string& out, int min_prec) {
    const int prec = precedence(e.kind());
    const bool parens = prec < min_prec;
    if (parens) out += '(';
    switch (e.kind()) {
        case ExprKind::constant: out += format_double(e.constant_value()); break;
        case ExprKind::variable: out += var_name(e.variable_id()); break;
        case ExprKind::add:
            print_node(e.operand(0), out, 1);
            out += " + ";
            print_node(e.operand(1), out, 2);
            break;
        case ExprKind::sub:
            print_node(e.operand(0), out, 1);
            out += " - ";
            print_node(e.operand(1), out, 2);
            break;
        case ExprKind::mul:
            print_node(e.operand(0), out, 2);
            out += '*';
            print_node(e.operand(1), out, 3);
            break;
        case ExprKind::div:
            print_node(e.operand(0), out, 2);
            out += '/';
            print_node(e.operand(1), out, 3);
            break;
        case ExprKind::neg:
            out += '-';
            print_node(e.operand(0), out, 4);
            break;
        case ExprKind::pow:
            print_node(e.operand(0), out, 5);
            out += '^';
            out += std::to_string(e.exponent());
            break;
        case ExprKind::call:
            out += func_name(e.func());
            out += '(';
            print_node(e.operand(0), out, 0);
            out += ')';
            break;
    }
    if (parens) out += ')';
}

} // namespace

std::string Expr::str() const {
    std::string out;
    print_node(*this, out, 0);
    return out;
}

namespace {

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    Expr run() {
        Expr e = parse_sum();
        skip_ws();
        if (pos_ != text_.size()) throw ParseError("trailing characters", pos_);
        return e;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < text_.size() &&
               (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' ||
                text_[pos_] == '\r'))
            ++pos_;
    }

    bool peek(char c) {
        skip_ws();
        return pos_ < text_.size() && text_[pos_] == c;
    }

    bool accept(char c) {
        if (!peek(c)) return false;
        ++pos_;
        return true;
    }

    Expr parse_sum() {
        Expr e = parse_term();
        for (;;) {
            if (accept('+'))
                e = Expr::add(e, parse_term());
            else if (accept('-'))
                e = Expr::sub(e, parse_term());
            else
                return e;
        }
    }

    Expr parse_term() {
        Expr e = parse_unary();
        for (;;) {
            if (accept('*'))
                e = Expr::mul(e, parse_unary());
            else if (accept('/'))
                e = Expr::div(e, parse_unary());
            else
                return e;
        }
    }

    Expr parse_unary() {
        if (accept('-')) return Expr::neg(parse_unary());
        return parse_power();
    }

    Expr parse_power() {
        Expr base = parse_atom();
        if (!accept('^')) return base;
        const std::size_t at = pos_;
        Expr expo = parse_unary();
        if (!expo.is_constant())
            throw ParseError("exponent must reduce to a constant", at);
        const double val = expo.constant_value();
        const double rounded = std::nearbyint(val);
        if (std::fabs(val - rounded) > 1e-9 || rounded < 0.0 || rounded > 64.0)
            throw ParseError("exponent must be an integer in [0, 64]", at);
        return Expr::pow(base, static_cast<int>(rounded));
    }

    Expr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = parse_sum();
            if (!accept(')')) throw ParseError("expected ')'", pos_);
            return e;
        }
        if ((c >= '0' && c <= '9') || c == '.') return parse_number();
        if (c >= 'a' && c <= 'z') return parse_identifier();
        throw ParseError("unexpected character", pos_);
    }

    Expr parse_number() {
        const char* begin = text_.data() + pos_;
        const char* end = text_.data() + text_.size();
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(begin, end, value);
        if (ec != std::errc()) throw ParseError("bad numeric literal", pos_);
        pos_ += static_cast<std::size_t>(ptr - begin);
        return Expr::constant(value);
    }

    Expr parse_identifier() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               ((text_[pos_] >= 'a' && text_[pos_] <= 'z') ||
                (text_[pos_] >= '0' && text_[pos_] <= '9')))
            ++pos_;
        const std::string_view name = text_.substr(start, pos_ - start);
        for (const auto& f : kFuncs) {
            if (f.name == name) {
                if (!accept('(')) throw ParseError("expected '(' after function name", pos_);
                Expr arg = parse_sum();
                if (!accept(')')) throw ParseError("expected ')'", pos_);
                return Expr::call(f.fn, arg);
            }
        }
        if (auto v = var_from_name(name)) return Expr::variable(*v);
        throw ParseError("unknown identifier '" + std::string(name) + "'", start);
    }
};

} // namespace

Expr parse_expr(std::string_view text) { return Parser(text).run(); }

} // namespace mfbdsde
