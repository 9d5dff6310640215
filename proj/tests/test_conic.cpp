#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mgrid/conic/bnb.hpp"
#include "mgrid/conic/solver.hpp"

using namespace mg::conic;

TEST_CASE("lp: axis-aligned box minimum") {
    ConicProgram p;
    int x = p.add_var("x", -1.0, 4.0);
    int y = p.add_var("y", 0.0, 2.0);
    p.set_obj(x, 1.0);
    p.set_obj(y, -3.0);
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.x(x) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(s.x(y) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(s.objective == doctest::Approx(-7.0).epsilon(1e-7));
}

TEST_CASE("lp: constrained vertex") {
    // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x,y >= 0.
    // Vertex at the row intersection: x = 8/5, y = 6/5.
    ConicProgram p;
    int x = p.add_var("x", 0.0, kInf);
    int y = p.add_var("y", 0.0, kInf);
    p.set_obj(x, -1.0);
    p.set_obj(y, -1.0);
    p.add_le({{x, 1.0}, {y, 2.0}}, 4.0);
    p.add_le({{x, 3.0}, {y, 1.0}}, 6.0);
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.x(x) == doctest::Approx(1.6).epsilon(1e-6));
    CHECK(s.x(y) == doctest::Approx(1.2).epsilon(1e-6));
}

TEST_CASE("lp: equality restriction") {
    ConicProgram p;
    int x = p.add_var("x", -10.0, 10.0);
    int y = p.add_var("y", -10.0, 10.0);
    p.set_obj(x, 1.0);
    p.add_eq({{x, 1.0}, {y, 1.0}}, 3.0);
    p.add_le({{y, 1.0}}, 2.0);
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.x(x) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s.x(y) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("lp: infeasible rows are certified") {
    ConicProgram p;
    int x = p.add_var("x", 0.0, 1.0);
    p.add_le({{x, 1.0}}, -0.5);
    Solution s = solve_continuous(p);
    CHECK(s.status == SolveStatus::Infeasible);
}

TEST_CASE("lp: unbounded direction is certified") {
    ConicProgram p;
    int x = p.add_var("x", -kInf, kInf);
    int y = p.add_var("y", 0.0, 1.0);
    p.set_obj(x, 1.0);
    p.add_le({{x, 1.0}, {y, -1.0}}, 5.0);  // x bounded above only
    Solution s = solve_continuous(p);
    CHECK(s.status == SolveStatus::Unbounded);
}

TEST_CASE("quadratic row: projection onto a disc") {
    // min -x - y  s.t. x^2 + y^2 <= 2  ->  x = y = 1.
    ConicProgram p;
    int x = p.add_var("x", -5.0, 5.0);
    int y = p.add_var("y", -5.0, 5.0);
    p.set_obj(x, -1.0);
    p.set_obj(y, -1.0);
    p.add_quad({{x, x, 1.0}, {y, y, 1.0}}, {}, -2.0);
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.x(x) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(s.x(y) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("quadratic row: cross terms and linear part") {
    // min y  s.t. (x - y)^2 + x <= 0 over x in [-4, 4].
    // y ranges over [x - sqrt(-x), x + sqrt(-x)], smallest at x = -4: y = -6.
    ConicProgram p;
    int x = p.add_var("x", -4.0, 4.0);
    int y = p.add_var("y", -10.0, 10.0);
    p.set_obj(y, 1.0);
    p.add_quad({{x, x, 1.0}, {x, y, -1.0}, {y, y, 1.0}}, {{x, 1.0}}, 0.0);
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.x(x) == doctest::Approx(-4.0).epsilon(1e-5));
    CHECK(s.x(y) == doctest::Approx(-6.0).epsilon(1e-4));
}

TEST_CASE("quadratic row: non-PSD is rejected") {
    ConicProgram p;
    int x = p.add_var("x", -1.0, 1.0);
    int y = p.add_var("y", -1.0, 1.0);
    p.add_quad({{x, y, 1.0}}, {}, -1.0);  // indefinite bilinear form
    CHECK_THROWS_AS(solve_continuous(p), std::invalid_argument);
}

TEST_CASE("soc row: closest point to a shifted origin") {
    // min z  s.t. ||(x - 3, y - 4)|| <= z  ->  z = 0 at x=3, y=4 is not
    // reachable with x <= 2: distance from (2, 4) line is 1.
    ConicProgram p;
    int x = p.add_var("x", -10.0, 2.0);
    int y = p.add_var("y", -10.0, 10.0);
    int z = p.add_var("z", 0.0, kInf);
    p.set_obj(z, 1.0);
    p.add_soc({{{{z, 1.0}}, 0.0}, {{{x, 1.0}}, -3.0}, {{{y, 1.0}}, -4.0}});
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.objective == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(s.x(x) == doctest::Approx(2.0).epsilon(1e-5));
    CHECK(s.x(y) == doctest::Approx(4.0).epsilon(1e-4));
}

TEST_CASE("fixed variables are substituted before the cone solve") {
    ConicProgram p;
    int x = p.add_var("x", 2.0, 2.0);  // pinned
    int y = p.add_var("y", -10.0, 10.0);
    p.set_obj(y, 1.0);
    p.add_eq({{x, 1.0}, {y, -1.0}}, 0.0);  // y == x
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.x(x) == doctest::Approx(2.0));
    CHECK(s.x(y) == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("fully pinned infeasible equality short-circuits") {
    ConicProgram p;
    int x = p.add_var("x", 1.0, 1.0);
    p.add_eq({{x, 1.0}}, 3.0);
    Solution s = solve_continuous(p);
    CHECK(s.status == SolveStatus::Infeasible);
}

TEST_CASE("kkt residuals are reported and small") {
    ConicProgram p;
    int x = p.add_var("x", 0.0, 10.0);
    int y = p.add_var("y", 0.0, 10.0);
    int t = p.add_var("t", 0.0, kInf);
    p.set_obj(t, 1.0);
    p.add_eq({{x, 1.0}, {y, 1.0}}, 4.0);
    p.add_soc({{{{t, 1.0}}, 0.0}, {{{x, 1.0}}, -1.0}, {{{y, 1.0}}, 0.0}});
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.kkt.primal <= 1e-7);
    CHECK(s.kkt.dual <= 1e-7);
    CHECK(s.kkt.gap <= 1e-6);
}

TEST_CASE("dump/load round trip preserves the model") {
    ConicProgram p;
    int x = p.add_var("x", -1.0, 4.0, VarType::Integer);
    int y = p.add_var("y", 0.0, kInf);
    p.set_obj(x, 2.5);
    p.set_obj(y, -1.0);
    p.set_obj_offset(0.75);
    p.add_eq({{x, 1.0}, {y, 2.0}}, 3.0, "link");
    p.add_le({{y, 1.0}}, 2.0);
    p.add_quad({{x, x, 1.0}, {x, y, 0.5}, {y, y, 1.0}}, {{x, -1.0}}, -9.0, "ball");
    p.add_soc({{{{y, 1.0}}, 1.0}, {{{x, 1.0}, {y, -1.0}}, 0.0}});

    std::stringstream ss;
    p.dump(ss);
    ConicProgram q = ConicProgram::load(ss);

    REQUIRE(q.num_vars() == p.num_vars());
    REQUIRE(q.num_rows() == p.num_rows());
    CHECK(q.var(x).type == VarType::Integer);
    CHECK(q.var(y).ub == kInf);
    CHECK(q.obj_offset() == doctest::Approx(0.75));
    Eigen::VectorXd probe(2);
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        probe << u(rng), u(rng);
        CHECK(q.objective_value(probe) ==
              doctest::Approx(p.objective_value(probe)).epsilon(1e-12));
        for (int k = 0; k < p.num_rows(); ++k)
            CHECK(q.row_violation(k, probe) ==
                  doctest::Approx(p.row_violation(k, probe)).epsilon(1e-12));
    }
}

TEST_CASE("big-M helper validates against the box supremum") {
    ConicProgram p;
    int x = p.add_var("x", 0.0, 10.0);
    int S = p.add_var("S", 0.0, 1.0, VarType::Binary);
    // x <= 2 when S = 0; sup(x) - 2 = 8, so M = 8 is tight and M = 5 cuts.
    CHECK_THROWS_AS(
        big_m_indicator(p, S, {{{{x, 1.0}}, 2.0}}, {}, {5.0}, {}),
        std::invalid_argument);
    big_m_indicator(p, S, {{{{x, 1.0}}, 2.0}}, {}, {8.0}, {});
    REQUIRE(p.num_rows() == 1);
    Eigen::VectorXd pt(2);
    pt << 10.0, 1.0;  // S = 1 releases the row
    CHECK(p.row_violation(0, pt) <= 0.0);
    pt << 2.5, 0.0;  // S = 0 enforces x <= 2
    CHECK(p.row_violation(0, pt) > 0.0);
}

TEST_CASE("absolute value epigraph matches |x| at the optimum") {
    ConicProgram p;
    int x = p.add_var("x", -3.0, 3.0);
    int t = abs_value_epigraph(p, x);
    p.set_obj(t, 1.0);
    p.add_eq({{x, 1.0}}, -2.0);
    Solution s = solve_continuous(p);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.x(t) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("bound propagation fixes chained binaries") {
    ConicProgram p;
    int a = p.add_var("a", 0.0, 1.0, VarType::Binary);
    int b = p.add_var("b", 0.0, 1.0, VarType::Binary);
    int c = p.add_var("c", 0.0, 1.0, VarType::Binary);
    p.add_eq({{a, 1.0}}, 1.0);
    p.add_le({{a, 1.0}, {b, 1.0}}, 1.0);   // forces b = 0
    p.add_eq({{b, 1.0}, {c, -1.0}}, 0.0);  // forces c = b
    REQUIRE(propagate_bounds(p));
    CHECK(p.var(a).lb == 1.0);
    CHECK(p.var(b).ub == 0.0);
    CHECK(p.var(c).ub == 0.0);
}

TEST_CASE("bound propagation detects an empty box") {
    ConicProgram p;
    int a = p.add_var("a", 0.0, 1.0, VarType::Binary);
    int b = p.add_var("b", 0.0, 1.0, VarType::Binary);
    p.add_eq({{a, 1.0}}, 1.0);
    p.add_eq({{b, 1.0}}, 1.0);
    p.add_le({{a, 1.0}, {b, 1.0}}, 1.0);
    CHECK_FALSE(propagate_bounds(p));
}

namespace {

/// Brute-force reference: enumerate all integer assignments, solve the
/// continuous remainder for each, keep the best.
double enumerate_best(const ConicProgram& prog) {
    std::vector<int> ints = prog.integer_vars();
    ConicProgram scratch = prog;
    double best = kInf;
    const size_t combos = size_t{1} << ints.size();
    for (size_t mask = 0; mask < combos; ++mask) {
        for (size_t k = 0; k < ints.size(); ++k) {
            const double v = (mask >> k) & 1 ? 1.0 : 0.0;
            scratch.set_bounds(ints[k], v, v);
        }
        Solution s = solve_continuous(scratch);
        if (s.status == SolveStatus::Optimal) best = std::min(best, s.objective);
    }
    return best;
}

}  // namespace

TEST_CASE("miqcp: knapsack-style binary program matches enumeration") {
    ConicProgram p;
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    std::vector<int> items;
    for (int i = 0; i < 6; ++i)
        items.push_back(p.add_var("b" + std::to_string(i), 0.0, 1.0, VarType::Binary));
    LinExpr weight;
    for (int i = 0; i < 6; ++i) {
        p.set_obj(items[i], -u(rng));  // maximize value
        weight.push_back({items[i], u(rng)});
    }
    p.add_le(weight, 4.0);
    BnBOptions opts;
    Solution s = solve_miqcp(p, opts);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.objective == doctest::Approx(enumerate_best(p)).epsilon(1e-6));
    for (int j : items)
        CHECK(std::abs(s.x(j) - std::round(s.x(j))) <= 1e-9);
}

TEST_CASE("miqcp: binary choice inside a quadratic region") {
    // Pick one of two centers and pay squared distance to it.
    ConicProgram p;
    int x = p.add_var("x", -5.0, 5.0);
    int S = p.add_var("S", 0.0, 1.0, VarType::Binary);
    int t = p.add_var("t", 0.0, kInf);
    p.set_obj(t, 1.0);
    p.set_obj(S, 0.3);
    // (x - 3 + 4S)^2 <= t  : center 3 for S=0, center -1 for S=1.
    p.add_quad({{x, x, 1.0}, {x, S, 4.0}, {S, S, 16.0}},
               {{x, -6.0}, {S, -24.0}, {t, -1.0}}, 9.0);
    p.add_le({{x, 1.0}}, 1.0);  // center 3 unreachable exactly
    BnBOptions opts;
    Solution s = solve_miqcp(p, opts);
    REQUIRE(s.status == SolveStatus::Optimal);
    // S=0 costs (1-3)^2 = 4; S=1 costs 0 + 0.3.
    CHECK(s.x(S) == doctest::Approx(1.0));
    CHECK(s.objective == doctest::Approx(0.3).epsilon(1e-4));
}

TEST_CASE("miqcp: infeasible integer program reported as such") {
    ConicProgram p;
    int a = p.add_var("a", 0.0, 1.0, VarType::Binary);
    int b = p.add_var("b", 0.0, 1.0, VarType::Binary);
    p.add_eq({{a, 1.0}, {b, 1.0}}, 1.0);
    p.add_le({{a, -1.0}, {b, -1.0}}, -2.0);  // a + b >= 2
    Solution s = solve_miqcp(p, {});
    CHECK(s.status == SolveStatus::Infeasible);
}

TEST_CASE("miqcp: incumbent hint is validated and used") {
    ConicProgram p;
    std::vector<int> b;
    for (int i = 0; i < 4; ++i)
        b.push_back(p.add_var("b" + std::to_string(i), 0.0, 1.0, VarType::Binary));
    LinExpr sum;
    for (int j : b) {
        p.set_obj(j, -1.0);
        sum.push_back({j, 1.0});
    }
    p.add_le(sum, 2.0);
    BnBOptions opts;
    Eigen::VectorXd hint = Eigen::VectorXd::Zero(4);
    hint(0) = 1.0;
    hint(1) = 1.0;
    opts.incumbent_hint = hint;
    Solution s = solve_miqcp(p, opts);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.objective == doctest::Approx(-2.0).epsilon(1e-6));
}

TEST_CASE("miqcp: depth-first order reaches the same optimum") {
    ConicProgram p;
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<int> b;
    for (int i = 0; i < 5; ++i)
        b.push_back(p.add_var("b" + std::to_string(i), 0.0, 1.0, VarType::Binary));
    int x = p.add_var("x", -1.0, 1.0);
    p.set_obj(x, 0.5);
    LinExpr link{{x, 1.0}};
    for (int j : b) {
        p.set_obj(j, u(rng));
        link.push_back({j, u(rng)});
    }
    p.add_le(link, 1.0);
    BnBOptions best, dfs;
    dfs.order = NodeOrder::DepthFirst;
    Solution s1 = solve_miqcp(p, best);
    Solution s2 = solve_miqcp(p, dfs);
    REQUIRE(s1.status == SolveStatus::Optimal);
    REQUIRE(s2.status == SolveStatus::Optimal);
    CHECK(s1.objective == doctest::Approx(s2.objective).epsilon(1e-6));
}

TEST_CASE("miqcp: multi-thread batches reproduce the single-thread answer") {
    ConicProgram p;
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> u(0.2, 1.5);
    std::vector<int> b;
    LinExpr cap;
    for (int i = 0; i < 8; ++i) {
        b.push_back(p.add_var("b" + std::to_string(i), 0.0, 1.0, VarType::Binary));
        p.set_obj(b[i], -u(rng));
        cap.push_back({b[i], u(rng)});
    }
    p.add_le(cap, 3.0);
    BnBOptions serial, parallel;
    parallel.threads = 4;
    Solution s1 = solve_miqcp(p, serial);
    Solution s2 = solve_miqcp(p, parallel);
    REQUIRE(s1.status == SolveStatus::Optimal);
    REQUIRE(s2.status == SolveStatus::Optimal);
    CHECK(s1.objective == doctest::Approx(s2.objective).epsilon(1e-8));
    CHECK((s1.x - s2.x).lpNorm<Eigen::Infinity>() <= 1e-7);
}

TEST_CASE("miqcp: general integers branch on floor and ceiling") {
    ConicProgram p;
    int n = p.add_var("n", 0.0, 10.0, VarType::Integer);
    int x = p.add_var("x", 0.0, 10.0);
    p.set_obj(x, 1.0);
    p.add_eq({{x, 1.0}, {n, -1.0}}, 0.0);  // x == n
    p.add_le({{n, -1.0}}, -3.4);           // n >= 3.4 -> n >= 4
    Solution s = solve_miqcp(p, {});
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK(s.x(n) == doctest::Approx(4.0));
}
