#pragma once

#include "mgrid/conic/program.hpp"

namespace mg::conic {

enum class SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
    NumericalFailure,
    GapLimit,    // mixed-integer search hit its node/time budget with incumbent
    NoIncumbent  // budget exhausted before any integer-feasible point
};

const char* to_string(SolveStatus s);

struct IpmOptions {
    double feastol = 1e-8;
    double abstol = 1e-8;
    double reltol = 1e-8;
    double feastol_relaxed = 1e-4;
    double abstol_relaxed = 5e-5;
    double reltol_relaxed = 5e-5;
    int max_iter = 60;
};

/// Scaled primal/dual residuals and complementarity gap at termination.
struct KktResiduals {
    double primal = kInf;
    double dual = kInf;
    double gap = kInf;
};

struct Solution {
    SolveStatus status = SolveStatus::NumericalFailure;
    Eigen::VectorXd x;
    double objective = kInf;
    double bound = -kInf;   // proven lower bound (mixed-integer search)
    double gap = kInf;      // relative optimality gap (mixed-integer search)
    long nodes = 0;
    int iterations = 0;
    KktResiduals kkt;
};

/// Solves the continuous relaxation (integrality marks ignored) with a
/// homogeneous self-dual primal-dual interior point method.
Solution solve_continuous(const ConicProgram& prog, const IpmOptions& opts = {});

}  // namespace mg::conic
