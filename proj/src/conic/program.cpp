#include "mgrid/conic/program.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mg::conic {

namespace {

double eval_lin(const LinExpr& a, const Eigen::VectorXd& x) {
    double s = 0.0;
    for (const LinTerm& t : a) s += t.coeff * x(t.var);
    return s;
}

double eval_aff(const AffExpr& e, const Eigen::VectorXd& x) {
    return eval_lin(e.terms, x) + e.constant;
}

void check_terms(const LinExpr& a, int n, const char* ctx) {
    for (const LinTerm& t : a) {
        if (t.var < 0 || t.var >= n)
            throw std::invalid_argument(std::string(ctx) + ": variable index out of range");
        if (!std::isfinite(t.coeff))
            throw std::invalid_argument(std::string(ctx) + ": non-finite coefficient");
    }
}

}  // namespace

int ConicProgram::add_var(std::string name, double lb, double ub, VarType type) {
    if (lb > ub) throw std::invalid_argument("add_var: lb > ub for " + name);
    Variable v;
    v.name = std::move(name);
    v.lb = lb;
    v.ub = ub;
    v.type = type;
    vars_.push_back(std::move(v));
    return static_cast<int>(vars_.size()) - 1;
}

void ConicProgram::set_obj(int var, double coeff) { vars_.at(var).obj = coeff; }
void ConicProgram::add_obj(int var, double coeff) { vars_.at(var).obj += coeff; }

int ConicProgram::add_row(ConvexConstraint c) {
    const int n = num_vars();
    check_terms(c.a, n, "add_row");
    switch (c.kind) {
        case RowKind::LinearEq:
        case RowKind::LinearIneq:
            break;
        case RowKind::Quadratic:
            for (const QuadTerm& t : c.P) {
                if (t.i > t.j || t.i < 0 || t.j >= n)
                    throw std::invalid_argument("add_row: bad quadratic term indices");
            }
            break;
        case RowKind::Soc:
            if (c.cone.size() < 2)
                throw std::invalid_argument("add_row: SOC needs at least two members");
            for (const AffExpr& e : c.cone) check_terms(e.terms, n, "add_row");
            break;
    }
    rows_.push_back(std::move(c));
    return static_cast<int>(rows_.size()) - 1;
}

int ConicProgram::add_eq(LinExpr a, double rhs, std::string block) {
    ConvexConstraint c;
    c.kind = RowKind::LinearEq;
    c.a = std::move(a);
    c.rhs = rhs;
    c.block = std::move(block);
    return add_row(std::move(c));
}

int ConicProgram::add_le(LinExpr a, double rhs, std::string block) {
    ConvexConstraint c;
    c.kind = RowKind::LinearIneq;
    c.a = std::move(a);
    c.rhs = rhs;
    c.block = std::move(block);
    return add_row(std::move(c));
}

int ConicProgram::add_quad(std::vector<QuadTerm> P, LinExpr a, double constant,
                           std::string block) {
    ConvexConstraint c;
    c.kind = RowKind::Quadratic;
    c.P = std::move(P);
    c.a = std::move(a);
    c.constant = constant;
    c.block = std::move(block);
    return add_row(std::move(c));
}

int ConicProgram::add_soc(std::vector<AffExpr> cone, std::string block) {
    ConvexConstraint c;
    c.kind = RowKind::Soc;
    c.cone = std::move(cone);
    c.block = std::move(block);
    return add_row(std::move(c));
}

void ConicProgram::set_bounds(int var, double lb, double ub) {
    if (lb > ub) throw std::invalid_argument("set_bounds: lb > ub");
    vars_.at(var).lb = lb;
    vars_.at(var).ub = ub;
}

std::vector<int> ConicProgram::integer_vars() const {
    std::vector<int> idx;
    for (int j = 0; j < num_vars(); ++j)
        if (vars_[j].type != VarType::Continuous) idx.push_back(j);
    return idx;
}

double ConicProgram::objective_value(const Eigen::VectorXd& x) const {
    double s = obj_offset_;
    for (int j = 0; j < num_vars(); ++j) s += vars_[j].obj * x(j);
    return s;
}

double ConicProgram::row_violation(int k, const Eigen::VectorXd& x) const {
    const ConvexConstraint& c = rows_.at(k);
    switch (c.kind) {
        case RowKind::LinearEq:
            return std::abs(eval_lin(c.a, x) - c.rhs);
        case RowKind::LinearIneq:
            return eval_lin(c.a, x) - c.rhs;
        case RowKind::Quadratic: {
            double s = eval_lin(c.a, x) + c.constant;
            for (const QuadTerm& t : c.P)
                s += (t.i == t.j ? t.coeff * x(t.i) * x(t.i)
                                 : 2.0 * t.coeff * x(t.i) * x(t.j));
            return s;
        }
        case RowKind::Soc: {
            double nrm = 0.0;
            for (size_t i = 1; i < c.cone.size(); ++i) {
                const double e = eval_aff(c.cone[i], x);
                nrm += e * e;
            }
            return std::sqrt(nrm) - eval_aff(c.cone[0], x);
        }
    }
    return 0.0;
}

double ConicProgram::max_violation(const Eigen::VectorXd& x) const {
    double worst = 0.0;
    for (int k = 0; k < num_rows(); ++k)
        worst = std::max(worst, row_violation(k, x));
    for (int j = 0; j < num_vars(); ++j) {
        worst = std::max(worst, vars_[j].lb - x(j));
        worst = std::max(worst, x(j) - vars_[j].ub);
    }
    return worst;
}

namespace {

void put_num(std::ostream& os, double v) {
    if (v == kInf)
        os << "inf";
    else if (v == -kInf)
        os << "-inf";
    else
        os << v;
}

double get_num(std::istream& is) {
    std::string tok;
    if (!(is >> tok)) throw std::runtime_error("conic load: truncated stream");
    if (tok == "inf") return kInf;
    if (tok == "-inf") return -kInf;
    return std::stod(tok);
}

void put_lin(std::ostream& os, const LinExpr& a) {
    os << a.size();
    for (const LinTerm& t : a) os << ' ' << t.var << ':' << t.coeff;
}

LinExpr get_lin(std::istream& is) {
    size_t n;
    if (!(is >> n)) throw std::runtime_error("conic load: bad term count");
    LinExpr a(n);
    for (size_t i = 0; i < n; ++i) {
        std::string tok;
        is >> tok;
        const auto colon = tok.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("conic load: malformed term " + tok);
        a[i].var = std::stoi(tok.substr(0, colon));
        a[i].coeff = std::stod(tok.substr(colon + 1));
    }
    return a;
}

}  // namespace

void ConicProgram::dump(std::ostream& os) const {
    os.precision(17);
    os << "mgrid-conic 1\n";
    os << "offset " << obj_offset_ << '\n';
    os << "vars " << num_vars() << '\n';
    for (const Variable& v : vars_) {
        const char t = v.type == VarType::Continuous ? 'C'
                     : v.type == VarType::Binary     ? 'B'
                                                     : 'I';
        os << "v ";
        put_num(os, v.lb);
        os << ' ';
        put_num(os, v.ub);
        os << ' ' << t << ' ' << v.obj << ' '
           << (v.name.empty() ? "_" : v.name) << '\n';
    }
    os << "rows " << num_rows() << '\n';
    for (const ConvexConstraint& c : rows_) {
        switch (c.kind) {
            case RowKind::LinearEq:
            case RowKind::LinearIneq:
                os << (c.kind == RowKind::LinearEq ? "e " : "l ");
                put_lin(os, c.a);
                os << ' ' << c.rhs;
                break;
            case RowKind::Quadratic:
                os << "q " << c.P.size();
                for (const QuadTerm& t : c.P)
                    os << ' ' << t.i << ',' << t.j << ':' << t.coeff;
                os << ' ';
                put_lin(os, c.a);
                os << ' ' << c.constant;
                break;
            case RowKind::Soc:
                os << "s " << c.cone.size();
                for (const AffExpr& e : c.cone) {
                    os << ' ';
                    put_lin(os, e.terms);
                    os << ' ' << e.constant;
                }
                break;
        }
        os << ' ' << (c.block.empty() ? "_" : c.block) << '\n';
    }
}

ConicProgram ConicProgram::load(std::istream& is) {
    std::string magic;
    int version;
    is >> magic >> version;
    if (magic != "mgrid-conic" || version != 1)
        throw std::runtime_error("conic load: unrecognized header");
    ConicProgram prog;
    std::string tok;
    is >> tok;
    if (tok != "offset") throw std::runtime_error("conic load: expected offset");
    prog.obj_offset_ = get_num(is);
    int nv;
    is >> tok >> nv;
    if (tok != "vars") throw std::runtime_error("conic load: expected vars");
    for (int j = 0; j < nv; ++j) {
        is >> tok;
        if (tok != "v") throw std::runtime_error("conic load: expected var line");
        const double lb = get_num(is);
        const double ub = get_num(is);
        char tc;
        double obj;
        std::string name;
        is >> tc >> obj >> name;
        const VarType type = tc == 'C'   ? VarType::Continuous
                             : tc == 'B' ? VarType::Binary
                                         : VarType::Integer;
        const int idx = prog.add_var(name == "_" ? "" : name, lb, ub, type);
        prog.set_obj(idx, obj);
    }
    int nr;
    is >> tok >> nr;
    if (tok != "rows") throw std::runtime_error("conic load: expected rows");
    for (int k = 0; k < nr; ++k) {
        is >> tok;
        ConvexConstraint c;
        if (tok == "e" || tok == "l") {
            c.kind = tok == "e" ? RowKind::LinearEq : RowKind::LinearIneq;
            c.a = get_lin(is);
            c.rhs = get_num(is);
        } else if (tok == "q") {
            c.kind = RowKind::Quadratic;
            size_t np;
            is >> np;
            c.P.resize(np);
            for (size_t i = 0; i < np; ++i) {
                std::string term;
                is >> term;
                const auto comma = term.find(',');
                const auto colon = term.find(':');
                if (comma == std::string::npos || colon == std::string::npos)
                    throw std::runtime_error("conic load: malformed quad term");
                c.P[i].i = std::stoi(term.substr(0, comma));
                c.P[i].j = std::stoi(term.substr(comma + 1, colon - comma - 1));
                c.P[i].coeff = std::stod(term.substr(colon + 1));
            }
            c.a = get_lin(is);
            c.constant = get_num(is);
        } else if (tok == "s") {
            c.kind = RowKind::Soc;
            size_t d;
            is >> d;
            c.cone.resize(d);
            for (size_t i = 0; i < d; ++i) {
                c.cone[i].terms = get_lin(is);
                c.cone[i].constant = get_num(is);
            }
        } else {
            throw std::runtime_error("conic load: unknown row tag " + tok);
        }
        std::string block;
        is >> block;
        c.block = block == "_" ? "" : block;
        prog.add_row(std::move(c));
    }
    return prog;
}

namespace {

/// Box supremum of a'x over the variable boxes; +inf if any support is open.
double activity_sup(const ConicProgram& prog, const LinExpr& a) {
    double s = 0.0;
    for (const LinTerm& t : a) {
        const Variable& v = prog.var(t.var);
        const double edge = t.coeff > 0 ? v.ub : v.lb;
        if (!std::isfinite(edge)) return kInf;
        s += t.coeff * edge;
    }
    return s;
}

}  // namespace

void big_m_indicator(ConicProgram& prog, int S, const RowFamily& family0,
                     const RowFamily& family1, const std::vector<double>& M0,
                     const std::vector<double>& M1, std::string block) {
    if (prog.var(S).type == VarType::Continuous)
        throw std::invalid_argument("big_m_indicator: S must be an integer variable");
    if (family0.size() != M0.size() || family1.size() != M1.size())
        throw std::invalid_argument("big_m_indicator: family/M size mismatch");
    auto validate = [&](const LinExpr& a, double rhs, double M) {
        if (M < 0)
            throw std::invalid_argument("big_m_indicator: negative M");
        const double sup = activity_sup(prog, a);
        if (std::isfinite(sup) && M < sup - rhs - 1e-12)
            throw std::invalid_argument(
                "big_m_indicator: M smaller than box supremum, reformulation "
                "would cut feasible points");
    };
    for (size_t k = 0; k < family0.size(); ++k) {
        validate(family0[k].first, family0[k].second, M0[k]);
        LinExpr a = family0[k].first;
        a.push_back({S, -M0[k]});  // a'x - M0 S <= b
        prog.add_le(std::move(a), family0[k].second, block);
    }
    for (size_t k = 0; k < family1.size(); ++k) {
        validate(family1[k].first, family1[k].second, M1[k]);
        LinExpr a = family1[k].first;
        a.push_back({S, M1[k]});  // a'x + M1 S <= d + M1
        prog.add_le(std::move(a), family1[k].second + M1[k], block);
    }
}

int abs_value_epigraph(ConicProgram& prog, int x, std::string block) {
    const Variable& v = prog.var(x);
    const double hi = std::max(std::abs(v.lb), std::abs(v.ub));
    const int t = prog.add_var(v.name.empty() ? "abs" : "abs_" + v.name, 0.0, hi);
    prog.add_le({{x, 1.0}, {t, -1.0}}, 0.0, block);
    prog.add_le({{x, -1.0}, {t, -1.0}}, 0.0, block);
    return t;
}

}  // namespace mg::conic
