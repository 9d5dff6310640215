#pragma once

#include <optional>

#include "mgrid/conic/solver.hpp"

namespace mg::conic {

enum class NodeOrder { BestFirst, DepthFirst };

struct BnBOptions {
    IpmOptions ipm;
    double gap_tol = 1e-4;   // relative incumbent/bound gap at termination
    double feas_tol = 1e-6;
    double int_tol = 1e-6;
    long node_limit = 500000;
    double time_limit = kInf;  // seconds
    NodeOrder order = NodeOrder::BestFirst;
    int threads = 1;  // relaxations solved per batch; 0 = hardware default
    bool propagate = true;
    int heuristic_period = 8;  // rounding dive every k-th node, 0 disables
    std::optional<Eigen::VectorXd> incumbent_hint;  // full-length assignment
};

/// Branch-and-bound over the integer variables with conic interior-point
/// relaxations. Branches on the lowest-index fractional binary first (staged
/// encodings resolve chronologically), then on the most fractional general
/// integer. Deterministic for fixed options including the thread count: nodes
/// are evaluated in batches and their results folded in queue order.
Solution solve_miqcp(const ConicProgram& prog, const BnBOptions& opts = {});

/// Interval propagation over the linear rows: repeatedly tightens variable
/// bounds implied by single-row activity bounds, rounding integer bounds
/// inward. Returns false if some box empties (node infeasible).
bool propagate_bounds(ConicProgram& prog, double int_tol = 1e-6, int passes = 3);

}  // namespace mg::conic
