#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace mg::conic {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarType { Continuous, Binary, Integer };

struct LinTerm {
    int var;
    double coeff;
};
using LinExpr = std::vector<LinTerm>;

/// An affine expression terms + constant, used for cone members.
struct AffExpr {
    LinExpr terms;
    double constant = 0.0;
};

enum class RowKind {
    LinearEq,    // a'x == rhs
    LinearIneq,  // a'x <= rhs
    Quadratic,   // x'Px + a'x + constant <= 0, P positive semidefinite
    Soc,         // ||(e_1,...,e_{d-1})||_2 <= e_0 over affine expressions e_k
};

struct QuadTerm {
    int i, j;      // i <= j; coefficient of x_i * x_j
    double coeff;
};

struct ConvexConstraint {
    RowKind kind = RowKind::LinearIneq;
    LinExpr a;
    double rhs = 0.0;
    std::vector<QuadTerm> P;
    double constant = 0.0;
    std::vector<AffExpr> cone;
    std::string block;  // diagnostic tag, groups rows into named blocks
};

struct Variable {
    std::string name;
    double lb = -kInf;
    double ub = kInf;
    VarType type = VarType::Continuous;
    double obj = 0.0;
};

/// LP + convex-quadratic + SOC program with integrality marks and a strictly
/// linear objective (minimization).
class ConicProgram {
  public:
    int add_var(std::string name, double lb, double ub,
                VarType type = VarType::Continuous);
    void set_obj(int var, double coeff);
    void add_obj(int var, double coeff);
    void set_obj_offset(double c) { obj_offset_ = c; }
    double obj_offset() const { return obj_offset_; }

    int add_row(ConvexConstraint c);
    int add_eq(LinExpr a, double rhs, std::string block = {});
    int add_le(LinExpr a, double rhs, std::string block = {});
    int add_quad(std::vector<QuadTerm> P, LinExpr a, double constant,
                 std::string block = {});
    int add_soc(std::vector<AffExpr> cone, std::string block = {});

    int num_vars() const { return static_cast<int>(vars_.size()); }
    int num_rows() const { return static_cast<int>(rows_.size()); }
    const Variable& var(int j) const { return vars_[j]; }
    const ConvexConstraint& row(int k) const { return rows_[k]; }
    const std::vector<Variable>& vars() const { return vars_; }
    const std::vector<ConvexConstraint>& rows() const { return rows_; }

    void set_bounds(int var, double lb, double ub);
    void set_type(int var, VarType t) { vars_[var].type = t; }

    std::vector<int> integer_vars() const;  // Binary and Integer marks

    double objective_value(const Eigen::VectorXd& x) const;
    /// Signed violation of one row at x (<= 0 means satisfied).
    double row_violation(int k, const Eigen::VectorXd& x) const;
    /// Largest constraint violation over all rows and variable bounds.
    double max_violation(const Eigen::VectorXd& x) const;

    void dump(std::ostream& os) const;
    static ConicProgram load(std::istream& is);

  private:
    std::vector<Variable> vars_;
    std::vector<ConvexConstraint> rows_;
    double obj_offset_ = 0.0;
};

/// Appends the big-M reformulation of the indicator pair
///   S=0 => A x <= b   and   S=1 => C x <= d
/// as  A x <= b + M0 S  and  C x <= d + M1 (1 - S).
/// Each family row carries its own M. When every variable in a row is boxed,
/// the supplied M is validated against the box supremum of the row activity
/// and rejected if it would cut feasible points.
using RowFamily = std::vector<std::pair<LinExpr, double>>;
void big_m_indicator(ConicProgram& prog, int S, const RowFamily& family0,
                     const RowFamily& family1, const std::vector<double>& M0,
                     const std::vector<double>& M1, std::string block = {});

/// Adds the epigraph variable t with rows -t <= x <= t and returns its index.
/// t equals |x| at any optimum where increasing t is never beneficial.
int abs_value_epigraph(ConicProgram& prog, int x, std::string block = {});

}  // namespace mg::conic
