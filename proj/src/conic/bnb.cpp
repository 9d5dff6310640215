#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mgrid/conic/bnb.hpp"

namespace mg::conic {

namespace {

using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

bool propagate_row(ConicProgram& prog, const LinExpr& a, double rhs,
                   double int_tol, bool* infeasible) {
    double minact = 0.0;
    int open = 0;          // terms with an unbounded minimal contribution
    int open_idx = -1;
    for (const LinTerm& t : a) {
        const Variable& v = prog.var(t.var);
        const double edge = t.coeff > 0 ? v.lb : v.ub;
        if (!std::isfinite(edge)) {
            if (++open > 1) return false;
            open_idx = t.var;
        } else {
            minact += t.coeff * edge;
        }
    }
    if (open == 0 && minact > rhs + 1e-7 * (1.0 + std::abs(rhs))) {
        *infeasible = true;
        return false;
    }
    bool changed = false;
    for (const LinTerm& t : a) {
        if (t.coeff == 0.0) continue;
        if (open > 0 && t.var != open_idx) continue;
        const Variable& v = prog.var(t.var);
        double residual;
        if (open > 0) {
            residual = minact;  // this term is the single open one
        } else {
            const double edge = t.coeff > 0 ? v.lb : v.ub;
            residual = minact - t.coeff * edge;
        }
        const double limit = (rhs - residual) / t.coeff;
        double lb = v.lb, ub = v.ub;
        bool tightened = false;
        if (t.coeff > 0) {
            double nb = limit;
            if (v.type != VarType::Continuous) nb = std::floor(nb + int_tol);
            if (nb < ub - 1e-9) {
                ub = nb;
                tightened = true;
            }
        } else {
            double nb = limit;
            if (v.type != VarType::Continuous) nb = std::ceil(nb - int_tol);
            if (nb > lb + 1e-9) {
                lb = nb;
                tightened = true;
            }
        }
        if (lb > ub + 1e-9) {
            *infeasible = true;
            return false;
        }
        if (tightened) {
            prog.set_bounds(t.var, std::min(lb, ub), std::max(lb, ub));
            changed = true;
        }
    }
    return changed;
}

}  // namespace

bool propagate_bounds(ConicProgram& prog, double int_tol, int passes) {
    bool infeasible = false;
    for (int j = 0; j < prog.num_vars(); ++j) {
        const Variable& v = prog.var(j);
        if (v.type == VarType::Continuous) continue;
        const double lb = std::ceil(v.lb - int_tol);
        const double ub = std::floor(v.ub + int_tol);
        if (lb > ub) return false;
        if (lb != v.lb || ub != v.ub) prog.set_bounds(j, lb, ub);
    }
    for (int pass = 0; pass < passes; ++pass) {
        bool changed = false;
        for (int k = 0; k < prog.num_rows(); ++k) {
            const ConvexConstraint& c = prog.row(k);
            if (c.kind == RowKind::LinearIneq) {
                changed |= propagate_row(prog, c.a, c.rhs, int_tol, &infeasible);
            } else if (c.kind == RowKind::LinearEq) {
                changed |= propagate_row(prog, c.a, c.rhs, int_tol, &infeasible);
                if (infeasible) return false;
                LinExpr neg = c.a;
                for (LinTerm& t : neg) t.coeff = -t.coeff;
                changed |= propagate_row(prog, neg, -c.rhs, int_tol, &infeasible);
            }
            if (infeasible) return false;
        }
        if (!changed) break;
    }
    return true;
}

namespace {

struct Node {
    long id = 0;
    int depth = 0;
    double bound = -kInf;
    std::vector<std::pair<double, double>> int_bounds;  // per integer var
};

struct NodeResult {
    SolveStatus status = SolveStatus::NumericalFailure;
    double obj = kInf;
    VectorXd x;
    bool propagation_cut = false;
    // Rounding-dive candidate found while evaluating this node.
    bool heur_found = false;
    double heur_obj = kInf;
    VectorXd heur_x;
};

struct BestFirstLess {
    bool operator()(const Node& a, const Node& b) const {
        if (a.bound != b.bound) return a.bound < b.bound;
        return a.id < b.id;
    }
};

class Scratch {
  public:
    explicit Scratch(const ConicProgram& base) : prog_(base) {
        for (int j = 0; j < prog_.num_vars(); ++j)
            saved_.emplace_back(prog_.var(j).lb, prog_.var(j).ub);
    }

    ConicProgram& apply(const std::vector<int>& int_vars,
                        const std::vector<std::pair<double, double>>& nb) {
        restore();
        for (size_t k = 0; k < int_vars.size(); ++k)
            prog_.set_bounds(int_vars[k], nb[k].first, nb[k].second);
        return prog_;
    }

    void restore() {
        for (int j = 0; j < prog_.num_vars(); ++j)
            prog_.set_bounds(j, saved_[j].first, saved_[j].second);
    }

  private:
    ConicProgram prog_;
    std::vector<std::pair<double, double>> saved_;
};

class BnB {
  public:
    BnB(const ConicProgram& prog, const BnBOptions& opts)
        : prog_(prog), opts_(opts), int_vars_(prog.integer_vars()) {
        threads_ = opts_.threads;
#ifdef _OPENMP
        if (threads_ <= 0) threads_ = omp_get_max_threads();
#else
        if (threads_ <= 0) threads_ = 1;
#endif
        for (int i = 0; i < threads_; ++i) scratch_.emplace_back(prog_);
    }

    Solution run();

  private:
    NodeResult evaluate(const Node& node, Scratch& scratch) const;
    void try_incumbent(double obj, const VectorXd& x);
    void push(Node n);
    Node pop();
    bool open_empty() const {
        return opts_.order == NodeOrder::BestFirst ? best_.empty() : stack_.empty();
    }
    double open_bound() const;
    double gap(double lo) const {
        if (upper_ == kInf) return kInf;
        return (upper_ - lo) / std::max(1.0, std::abs(upper_));
    }

    const ConicProgram& prog_;
    BnBOptions opts_;
    std::vector<int> int_vars_;
    int threads_ = 1;
    std::vector<Scratch> scratch_;

    std::multiset<Node, BestFirstLess> best_;
    std::vector<Node> stack_;
    double upper_ = kInf;
    VectorXd incumbent_;
    long next_id_ = 0;
    long nodes_done_ = 0;
    bool saw_numerics_ = false;
};

void BnB::push(Node n) {
    n.id = next_id_++;
    if (opts_.order == NodeOrder::BestFirst)
        best_.insert(std::move(n));
    else
        stack_.push_back(std::move(n));
}

Node BnB::pop() {
    if (opts_.order == NodeOrder::BestFirst) {
        Node n = *best_.begin();
        best_.erase(best_.begin());
        return n;
    }
    Node n = std::move(stack_.back());
    stack_.pop_back();
    return n;
}

double BnB::open_bound() const {
    double lo = kInf;
    if (opts_.order == NodeOrder::BestFirst) {
        if (!best_.empty()) lo = best_.begin()->bound;
    } else {
        for (const Node& n : stack_) lo = std::min(lo, n.bound);
    }
    return std::min(lo, upper_);
}

void BnB::try_incumbent(double obj, const VectorXd& x) {
    if (obj < upper_ - 1e-12) {
        upper_ = obj;
        incumbent_ = x;
        for (int j : int_vars_) incumbent_(j) = std::round(incumbent_(j));
    }
}

NodeResult BnB::evaluate(const Node& node, Scratch& scratch) const {
    NodeResult res;
    ConicProgram& p = scratch.apply(int_vars_, node.int_bounds);
    if (opts_.propagate && !propagate_bounds(p, opts_.int_tol)) {
        res.propagation_cut = true;
        res.status = SolveStatus::Infeasible;
        return res;
    }
    Solution rel = solve_continuous(p, opts_.ipm);
    res.status = rel.status;
    res.obj = rel.objective;
    res.x = rel.x;

    const bool want_heur = opts_.heuristic_period > 0 &&
                           node.id % opts_.heuristic_period == 0 &&
                           rel.status == SolveStatus::Optimal;
    if (want_heur) {
        bool fractional = false;
        for (int j : int_vars_)
            if (std::abs(rel.x(j) - std::round(rel.x(j))) > opts_.int_tol) {
                fractional = true;
                break;
            }
        if (fractional) {
            // Fix-and-propagate dive: pin the most decided free binary, let
            // propagation force its dependents, and re-solve periodically.
            // On a propagation conflict the assignment is rebuilt with that
            // binary flipped; a second conflict kills the dive.
            Solution cur = rel;
            bool alive = true;
            std::vector<std::pair<int, double>> fixes;
            int since_solve = 0;
            while (alive) {
                // free binaries first; the general integers (counters) are
                // mostly forced once the binaries are down
                int pick = -1;
                bool pick_binary = false;
                double best_frac = 2.0;
                for (int j : int_vars_) {
                    if (p.var(j).lb == p.var(j).ub) continue;
                    const bool bin = prog_.var(j).type == VarType::Binary;
                    if (pick_binary && !bin) continue;
                    const double frac = std::abs(cur.x(j) - std::round(cur.x(j)));
                    if ((bin && !pick_binary) || frac < best_frac) {
                        best_frac = frac;
                        pick = j;
                        pick_binary = bin;
                    }
                }
                if (pick < 0) break;
                double v = std::clamp(std::round(cur.x(pick)), p.var(pick).lb,
                                      p.var(pick).ub);
                p.set_bounds(pick, v, v);
                if (!propagate_bounds(p, opts_.int_tol)) {
                    // rebuild the partial assignment and try the other branch
                    scratch.apply(int_vars_, node.int_bounds);
                    for (const auto& f : fixes) p.set_bounds(f.first, f.second, f.second);
                    const double other =
                        pick_binary ? 1.0 - v
                                    : (v >= cur.x(pick) ? v - 1.0 : v + 1.0);
                    v = std::clamp(other, prog_.var(pick).lb, prog_.var(pick).ub);
                    p.set_bounds(pick, v, v);
                    if (!propagate_bounds(p, opts_.int_tol)) {
                        alive = false;
                        break;
                    }
                }
                fixes.emplace_back(pick, v);
                if (pick_binary && ++since_solve >= 12) {
                    since_solve = 0;
                    cur = solve_continuous(p, opts_.ipm);
                    if (cur.status != SolveStatus::Optimal) {
                        alive = false;
                        break;
                    }
                }
            }
            if (alive) {
                cur = solve_continuous(p, opts_.ipm);
                if (cur.status != SolveStatus::Optimal) alive = false;
            }
            if (std::getenv("MG_BNB_DEBUG"))
                std::fprintf(stderr, "dive node %ld alive %d status %s obj %g viol %g\n",
                             node.id, (int)alive, to_string(cur.status), cur.objective,
                             alive ? prog_.max_violation(cur.x) : -1.0);
            if (alive && cur.status == SolveStatus::Optimal) {
                bool integral = true;
                for (int j : int_vars_)
                    if (std::abs(cur.x(j) - std::round(cur.x(j))) >
                        opts_.int_tol) {
                        integral = false;
                        break;
                    }
                if (std::getenv("MG_BNB_DEBUG"))
                    std::fprintf(stderr, "dive node %ld integral %d\n", node.id,
                                 (int)integral);
                if (integral && prog_.max_violation(cur.x) <= opts_.feas_tol) {
                    res.heur_found = true;
                    res.heur_obj = cur.objective;
                    res.heur_x = cur.x;
                }
            }
        }
    }
    return res;
}

Solution BnB::run() {
    Solution sol;
    const auto t0 = Clock::now();

    if (int_vars_.empty()) {
        sol = solve_continuous(prog_, opts_.ipm);
        sol.nodes = 1;
        sol.bound = sol.objective;
        sol.gap = sol.status == SolveStatus::Optimal ? 0.0 : kInf;
        return sol;
    }

    if (opts_.incumbent_hint.has_value()) {
        Scratch& s = scratch_[0];
        s.restore();
        ConicProgram& p = s.apply(int_vars_, [&] {
            std::vector<std::pair<double, double>> fix;
            for (int j : int_vars_) {
                double v = std::round((*opts_.incumbent_hint)(j));
                v = std::clamp(v, prog_.var(j).lb, prog_.var(j).ub);
                fix.emplace_back(v, v);
            }
            return fix;
        }());
        if (!opts_.propagate || propagate_bounds(p, opts_.int_tol)) {
            Solution hint = solve_continuous(p, opts_.ipm);
            if (hint.status == SolveStatus::Optimal &&
                prog_.max_violation(hint.x) <= opts_.feas_tol)
                try_incumbent(hint.objective, hint.x);
        }
    }

    Node root;
    root.bound = -kInf;
    for (int j : int_vars_)
        root.int_bounds.emplace_back(prog_.var(j).lb, prog_.var(j).ub);
    push(std::move(root));

    while (!open_empty()) {
        const double lo = open_bound();
        if (gap(lo) <= opts_.gap_tol) break;
        if (nodes_done_ >= opts_.node_limit) break;
        if (std::chrono::duration<double>(Clock::now() - t0).count() >
            opts_.time_limit)
            break;

        std::vector<Node> batch;
        while (!open_empty() && static_cast<int>(batch.size()) < threads_)
            batch.push_back(pop());
        std::vector<NodeResult> results(batch.size());

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads_) if (threads_ > 1)
#endif
        for (int i = 0; i < static_cast<int>(batch.size()); ++i) {
#ifdef _OPENMP
            Scratch& s = scratch_[threads_ > 1 ? omp_get_thread_num() : 0];
#else
            Scratch& s = scratch_[0];
#endif
            results[i] = evaluate(batch[i], s);
        }

        for (size_t i = 0; i < batch.size(); ++i) {
            const Node& node = batch[i];
            NodeResult& res = results[i];
            ++nodes_done_;
            if (std::getenv("MG_BNB_DEBUG"))
                std::fprintf(stderr, "node %ld depth %d status %s obj %g cut %d\n",
                             node.id, node.depth, to_string(res.status), res.obj,
                             (int)res.propagation_cut);
            if (res.heur_found) try_incumbent(res.heur_obj, res.heur_x);

            if (res.status == SolveStatus::Infeasible) continue;
            if (res.status == SolveStatus::Unbounded) {
                sol.status = SolveStatus::Unbounded;
                sol.nodes = nodes_done_;
                return sol;
            }
            if (res.status != SolveStatus::Optimal &&
                res.status != SolveStatus::IterLimit) {
                // Relaxation failed; split on the widest integer box so the
                // subtree is not lost, and remember the degraded solve.
                saw_numerics_ = true;
                int widest = -1;
                double width = opts_.int_tol;
                for (size_t k = 0; k < int_vars_.size(); ++k) {
                    const double w =
                        node.int_bounds[k].second - node.int_bounds[k].first;
                    if (w > width) {
                        width = w;
                        widest = static_cast<int>(k);
                    }
                }
                if (widest < 0) continue;  // fully fixed yet unsolvable
                const double mid = std::floor(
                    0.5 * (node.int_bounds[widest].first +
                           node.int_bounds[widest].second));
                Node left = node, right = node;
                left.depth = right.depth = node.depth + 1;
                left.int_bounds[widest].second = mid;
                right.int_bounds[widest].first = mid + 1.0;
                push(std::move(left));
                push(std::move(right));
                continue;
            }
            // An iteration-limited relaxation objective is not a certified
            // lower bound; fall back to the inherited one.
            const double bound = res.status == SolveStatus::Optimal
                                     ? std::max(node.bound, res.obj)
                                     : node.bound;
            if (res.status == SolveStatus::IterLimit) saw_numerics_ = true;
            if (upper_ < kInf &&
                upper_ - bound <= opts_.gap_tol * std::max(1.0, std::abs(upper_)))
                continue;

            // Branch binaries before general integers: fixing the unit-range
            // decisions collapses the wide counter boxes via propagation,
            // while branching a counter first barely moves the relaxation.
            int branch_k = -1;
            double most_frac = opts_.int_tol;
            bool branch_is_binary = false;
            for (size_t k = 0; k < int_vars_.size(); ++k) {
                const double v = res.x(int_vars_[k]);
                const double frac = std::abs(v - std::round(v));
                if (frac <= opts_.int_tol) continue;
                const bool bin =
                    prog_.var(int_vars_[k]).type == VarType::Binary;
                if (bin) {
                    // lowest-index fractional binary: in staged encodings this
                    // is the earliest undecided stage, which propagation
                    // exploits the most
                    branch_k = static_cast<int>(k);
                    branch_is_binary = true;
                    break;
                }
                if (!branch_is_binary && frac > most_frac) {
                    most_frac = frac;
                    branch_k = static_cast<int>(k);
                }
            }
            if (branch_k < 0) {
                if (res.status == SolveStatus::Optimal &&
                    prog_.max_violation(res.x) <= 10.0 * opts_.feas_tol)
                    try_incumbent(res.obj, res.x);
                else
                    saw_numerics_ = true;
                continue;
            }
            const double v = res.x(int_vars_[branch_k]);
            Node left = node, right = node;
            left.depth = right.depth = node.depth + 1;
            left.bound = right.bound = bound;
            left.int_bounds[branch_k].second = std::floor(v);
            right.int_bounds[branch_k].first = std::floor(v) + 1.0;
            push(std::move(left));
            push(std::move(right));
        }
    }

    sol.nodes = nodes_done_;
    const double lo = open_empty() ? upper_ : open_bound();
    sol.bound = lo;
    sol.gap = gap(lo);
    if (upper_ < kInf) {
        sol.x = incumbent_;
        sol.objective = upper_;
        sol.status = sol.gap <= opts_.gap_tol ? SolveStatus::Optimal
                                              : SolveStatus::GapLimit;
    } else if (open_empty()) {
        sol.status = saw_numerics_ ? SolveStatus::NumericalFailure
                                   : SolveStatus::Infeasible;
    } else {
        sol.status = SolveStatus::NoIncumbent;
    }
    return sol;
}

}  // namespace

Solution solve_miqcp(const ConicProgram& prog, const BnBOptions& opts) {
    return BnB(prog, opts).run();
}

}  // namespace mg::conic
