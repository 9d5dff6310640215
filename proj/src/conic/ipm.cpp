#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "mgrid/conic/solver.hpp"

namespace mg::conic {

const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::Unbounded: return "unbounded";
        case SolveStatus::IterLimit: return "iter_limit";
        case SolveStatus::NumericalFailure: return "numerical_failure";
        case SolveStatus::GapLimit: return "gap_limit";
        case SolveStatus::NoIncumbent: return "no_incumbent";
    }
    return "?";
}

namespace {

using Eigen::SparseMatrix;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

/// min c'x s.t. Ax = b, Gx + s = h, s in (R+^n_lp) x SOC(dims...).
/// Variables with lb == ub are substituted out before translation so the
/// inequality system keeps a nonempty interior.
struct StandardForm {
    int n = 0, p = 0, m = 0, n_lp = 0;
    std::vector<int> soc_dims;
    SparseMatrix<double> A, G;
    VectorXd c, b, h;
    double obj_const = 0.0;
    std::vector<int> free_of;  // original var -> compact index, -1 if fixed
    VectorXd fixed_val;        // original-space values of fixed vars
    int num_orig = 0;
    bool trivially_infeasible = false;

    VectorXd restore(const VectorXd& x_free) const {
        VectorXd x(num_orig);
        for (int j = 0; j < num_orig; ++j)
            x(j) = free_of[j] >= 0 ? x_free(free_of[j]) : fixed_val(j);
        return x;
    }
};

constexpr double kFixTol = 1e-12;
constexpr double kConstRowTol = 1e-8;

StandardForm translate(const ConicProgram& prog) {
    StandardForm sf;
    sf.num_orig = prog.num_vars();
    sf.free_of.assign(sf.num_orig, -1);
    sf.fixed_val = VectorXd::Zero(sf.num_orig);
    sf.obj_const = prog.obj_offset();

    for (int j = 0; j < sf.num_orig; ++j) {
        const Variable& v = prog.var(j);
        if (std::isfinite(v.lb) && v.ub - v.lb <= kFixTol) {
            sf.fixed_val(j) = v.lb;
            sf.obj_const += v.obj * v.lb;
        } else {
            sf.free_of[j] = sf.n++;
        }
    }

    sf.c = VectorXd::Zero(sf.n);
    for (int j = 0; j < sf.num_orig; ++j)
        if (sf.free_of[j] >= 0) sf.c(sf.free_of[j]) = prog.var(j).obj;

    // Split a linear expression into the free part and the fixed constant.
    auto split = [&](const LinExpr& a) {
        std::vector<std::pair<int, double>> terms;
        double cst = 0.0;
        for (const LinTerm& t : a) {
            if (sf.free_of[t.var] >= 0)
                terms.emplace_back(sf.free_of[t.var], t.coeff);
            else
                cst += t.coeff * sf.fixed_val(t.var);
        }
        return std::make_pair(std::move(terms), cst);
    };

    struct SparseRow {
        std::vector<std::pair<int, double>> terms;
        double rhs;
    };
    std::vector<SparseRow> eq_rows, lp_rows;
    struct SocBlock {
        std::vector<SparseRow> rows;  // Gx + s = h member rows
    };
    std::vector<SocBlock> soc_blocks;

    auto note_const_row = [&](double lhs, double rhs, bool equality) {
        const double slack = equality ? std::abs(lhs - rhs) : lhs - rhs;
        if (slack > kConstRowTol * (1.0 + std::abs(rhs)))
            sf.trivially_infeasible = true;
    };

    // Variable boxes first so bound rows come in a predictable order.
    for (int j = 0; j < sf.num_orig; ++j) {
        const int f = sf.free_of[j];
        if (f < 0) continue;
        const Variable& v = prog.var(j);
        if (std::isfinite(v.ub)) lp_rows.push_back({{{f, 1.0}}, v.ub});
        if (std::isfinite(v.lb)) lp_rows.push_back({{{f, -1.0}}, -v.lb});
    }

    for (int k = 0; k < prog.num_rows(); ++k) {
        const ConvexConstraint& c = prog.row(k);
        switch (c.kind) {
            case RowKind::LinearEq: {
                auto [terms, cst] = split(c.a);
                if (terms.empty())
                    note_const_row(cst, c.rhs, true);
                else
                    eq_rows.push_back({std::move(terms), c.rhs - cst});
                break;
            }
            case RowKind::LinearIneq: {
                auto [terms, cst] = split(c.a);
                if (terms.empty())
                    note_const_row(cst, c.rhs, false);
                else
                    lp_rows.push_back({std::move(terms), c.rhs - cst});
                break;
            }
            case RowKind::Quadratic: {
                // Gather the free support of P and reduce to dense.
                std::vector<int> sup;
                std::vector<int> pos(sf.n, -1);
                auto touch = [&](int f) {
                    if (pos[f] < 0) {
                        pos[f] = static_cast<int>(sup.size());
                        sup.push_back(f);
                    }
                };
                double cst = c.constant;
                std::vector<std::pair<int, double>> lin;
                for (const QuadTerm& t : c.P) {
                    const int fi = sf.free_of[t.i], fj = sf.free_of[t.j];
                    if (fi >= 0 && fj >= 0) {
                        touch(fi);
                        touch(fj);
                    } else if (fi < 0 && fj < 0) {
                        const double prod = sf.fixed_val(t.i) * sf.fixed_val(t.j);
                        cst += (t.i == t.j ? 1.0 : 2.0) * t.coeff * prod;
                    } else {
                        const int f = fi >= 0 ? fi : fj;
                        const double val = fi >= 0 ? sf.fixed_val(t.j) : sf.fixed_val(t.i);
                        lin.emplace_back(f, 2.0 * t.coeff * val);
                    }
                }
                Eigen::MatrixXd S = Eigen::MatrixXd::Zero(sup.size(), sup.size());
                for (const QuadTerm& t : c.P) {
                    const int fi = sf.free_of[t.i], fj = sf.free_of[t.j];
                    if (fi < 0 || fj < 0) continue;
                    if (t.i == t.j) {
                        S(pos[fi], pos[fi]) += t.coeff;
                    } else {
                        S(pos[fi], pos[fj]) += t.coeff;
                        S(pos[fj], pos[fi]) += t.coeff;
                    }
                }
                auto [aterms, acst] = split(c.a);
                for (auto& [f, co] : lin) aterms.emplace_back(f, co);
                cst += acst;

                std::vector<int> keep;
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
                if (!sup.empty()) {
                    es.compute(S);
                    const double lmax = std::max(1.0, es.eigenvalues().maxCoeff());
                    if (es.eigenvalues().minCoeff() < -1e-8 * lmax)
                        throw std::invalid_argument(
                            "solve: quadratic row is not positive semidefinite");
                    for (int i = 0; i < S.rows(); ++i)
                        if (es.eigenvalues()(i) > 1e-12 * lmax) keep.push_back(i);
                }

                if (keep.empty()) {
                    // P vanished after substitution: plain linear inequality.
                    if (aterms.empty())
                        note_const_row(cst, 0.0, false);
                    else
                        lp_rows.push_back({std::move(aterms), -cst});
                    break;
                }
                // x'Px <= t with t = -a'x - cst, as ||(2Lx, t-1)|| <= t+1.
                SocBlock blk;
                SparseRow top;
                for (auto& [f, co] : aterms) top.terms.emplace_back(f, co);
                top.rhs = 1.0 - cst;
                blk.rows.push_back(top);
                for (int i : keep) {
                    const double s = std::sqrt(es.eigenvalues()(i));
                    SparseRow r;
                    for (size_t u = 0; u < sup.size(); ++u) {
                        const double coeff = -2.0 * s * es.eigenvectors()(u, i);
                        if (coeff != 0.0) r.terms.emplace_back(sup[u], coeff);
                    }
                    r.rhs = 0.0;
                    blk.rows.push_back(std::move(r));
                }
                SparseRow bot = top;
                bot.rhs = -1.0 - cst;
                blk.rows.push_back(std::move(bot));
                soc_blocks.push_back(std::move(blk));
                break;
            }
            case RowKind::Soc: {
                SocBlock blk;
                for (const AffExpr& e : c.cone) {
                    auto [terms, cst] = split(e.terms);
                    SparseRow r;
                    for (auto& [f, co] : terms) r.terms.emplace_back(f, -co);
                    r.rhs = e.constant + cst;
                    blk.rows.push_back(std::move(r));
                }
                soc_blocks.push_back(std::move(blk));
                break;
            }
        }
    }

    if (lp_rows.empty() && soc_blocks.empty())
        lp_rows.push_back({{}, 1.0});  // keep the cone block nonempty

    sf.p = static_cast<int>(eq_rows.size());
    sf.n_lp = static_cast<int>(lp_rows.size());
    sf.m = sf.n_lp;
    for (const SocBlock& blk : soc_blocks) {
        sf.soc_dims.push_back(static_cast<int>(blk.rows.size()));
        sf.m += static_cast<int>(blk.rows.size());
    }

    std::vector<Triplet> ta, tg;
    sf.b = VectorXd::Zero(sf.p);
    sf.h = VectorXd::Zero(sf.m);
    for (int r = 0; r < sf.p; ++r) {
        for (auto& [f, co] : eq_rows[r].terms) ta.emplace_back(r, f, co);
        sf.b(r) = eq_rows[r].rhs;
    }
    int r = 0;
    auto push_g = [&](const SparseRow& row) {
        for (auto& [f, co] : row.terms) tg.emplace_back(r, f, co);
        sf.h(r) = row.rhs;
        ++r;
    };
    for (const SparseRow& row : lp_rows) push_g(row);
    for (const SocBlock& blk : soc_blocks)
        for (const SparseRow& row : blk.rows) push_g(row);

    sf.A.resize(sf.p, sf.n);
    sf.A.setFromTriplets(ta.begin(), ta.end());
    sf.G.resize(sf.m, sf.n);
    sf.G.setFromTriplets(tg.begin(), tg.end());
    return sf;
}

struct IpmSettings {
    double gamma = 0.99;
    double stepmin = 1e-6;
    double stepmax = 0.999;
    double sigmamin = 1e-4;
    double sigmamax = 1.0;
    double deltastat = 7e-8;
    int nitref = 9;
    double irerrfact = 30.0;
    double linsysacc = 1e-14;
    double safeguard = 500.0;
    int equil_iters = 3;
};

enum class IpmCode { Optimal, CloseToOptimal, PrimalInfeasible, DualInfeasible,
                     MaxIter, Numerics, NotYet };

struct IterStats {
    double gap = kInf, relgap = kInf, mu = kInf;
    bool has_relgap = false;
    double pres = kInf, dres = kInf, kapovert = kInf;
    double pcost = kInf, dcost = -kInf;
    std::optional<double> pinfres, dinfres;
    int iter = 0;

    bool better_than(const IterStats& o) const {
        if (pinfres.has_value() && kapovert > 1.0) {
            return gap > 0.0 && o.gap > 0.0 && gap < o.gap && mu > 0.0 && mu < o.mu;
        }
        return gap > 0.0 && o.gap > 0.0 && gap < o.gap && pres > 0.0 &&
               pres < o.pres && dres > 0.0 && dres < o.dres && kapovert > 0.0 &&
               kapovert < o.kapovert && mu > 0.0 && mu < o.mu;
    }
};

struct IpmState {
    VectorXd x, y, z, s, lambda;
    double tau = 1.0, kap = 1.0;
    IterStats i;
};

/// Homogeneous self-dual embedding with Nesterov-Todd scaling and Mehrotra
/// predictor-corrector. The (3,3) KKT block carries small dense W^2 cone
/// blocks; the factorization is a quasidefinite sparse LDLT with static
/// regularization and iterative refinement.
class Ipm {
  public:
    Ipm(StandardForm sf, const IpmOptions& opts) : sf_(std::move(sf)), opts_(opts) {
        n_ = sf_.n;
        p_ = sf_.p;
        m_ = sf_.m;
        dim_ = n_ + p_ + m_;
        equilibrate();
        At_ = sf_.A.transpose();
        Gt_ = sf_.G.transpose();
        lp_v_ = VectorXd::Ones(sf_.n_lp);
        for (int d : sf_.soc_dims) w2_.push_back(Eigen::MatrixXd::Identity(d, d));
        soc_a_.resize(sf_.soc_dims.size());
        soc_eta_.resize(sf_.soc_dims.size());
        soc_q_.resize(sf_.soc_dims.size());
        resx0_ = std::max(1.0, sf_.c.norm());
        resy0_ = std::max(1.0, sf_.b.norm());
        resz0_ = std::max(1.0, sf_.h.norm());
    }

    IpmCode run();

    const IpmState& state() const { return w_; }
    VectorXd solution() const {
        VectorXd xs = w_.x.cwiseQuotient(x_equil_) / w_.tau;
        return sf_.restore(xs);
    }
    KktResiduals kkt() const {
        return {w_.i.pres, w_.i.dres,
                w_.i.has_relgap ? w_.i.relgap : w_.i.gap};
    }
    double objective() const {
        return sf_.c.dot(w_.x) / w_.tau + sf_.obj_const;
    }
    int iterations() const { return w_.i.iter; }

  private:
    void equilibrate();
    bool update_scalings();
    void scale(const VectorXd& z, VectorXd& lam) const;  // lam = W z
    void scale2add(const VectorXd& x, VectorXd& y) const;  // y += W^2 x
    double conic_product(const VectorXd& u, const VectorXd& v, VectorXd& w) const;
    void conic_division(const VectorXd& u, const VectorXd& w, VectorXd& v) const;
    void bring_to_cone(const VectorXd& r, VectorXd& s) const;
    double line_search(const VectorXd& lambda, const VectorXd& ds,
                       const VectorXd& dz, double tau, double dtau, double kap,
                       double dkap) const;
    void build_kkt(bool init);
    bool factorize(bool init);
    int solve_kkt(const VectorXd& rhs, VectorXd& dx, VectorXd& dy, VectorXd& dz,
                  bool init) const;
    void compute_residuals();
    void update_statistics();
    IpmCode check_exit(bool reduced) const;

    StandardForm sf_;
    IpmOptions opts_;
    IpmSettings set_;
    int n_, p_, m_, dim_;
    SparseMatrix<double> At_, Gt_, K_;
    Eigen::SimplicialLDLT<SparseMatrix<double>> ldlt_;
    bool analyzed_ = false;
    VectorXd x_equil_, a_equil_, g_equil_;

    VectorXd lp_v_;                       // LP block of W^2
    std::vector<Eigen::MatrixXd> w2_;     // dense SOC blocks of W^2
    std::vector<double> soc_a_, soc_eta_;
    std::vector<VectorXd> soc_q_;

    IpmState w_, w_best_;
    VectorXd rx_, ry_, rz_;
    double hresx_ = 0, hresy_ = 0, hresz_ = 0, rt_ = 0;
    double nx_ = 0, ny_ = 0, nz_ = 0, ns_ = 0;
    double cx_ = 0, by_ = 0, hz_ = 0;
    double resx0_, resy0_, resz0_;
    double delta_ = 7e-8;
};

void Ipm::equilibrate() {
    x_equil_ = VectorXd::Ones(n_);
    a_equil_ = VectorXd::Ones(p_);
    g_equil_ = VectorXd::Ones(m_);
    auto max_cols = [](VectorXd& e, const SparseMatrix<double>& mtx) {
        for (int j = 0; j < mtx.outerSize(); ++j)
            for (SparseMatrix<double>::InnerIterator it(mtx, j); it; ++it)
                e(j) = std::max(e(j), std::abs(it.value()));
    };
    auto max_rows = [](VectorXd& e, const SparseMatrix<double>& mtx) {
        for (int j = 0; j < mtx.outerSize(); ++j)
            for (SparseMatrix<double>::InnerIterator it(mtx, j); it; ++it)
                e(it.row()) = std::max(e(it.row()), std::abs(it.value()));
    };
    auto div_rows = [](const VectorXd& e, SparseMatrix<double>& mtx) {
        for (int j = 0; j < mtx.outerSize(); ++j)
            for (SparseMatrix<double>::InnerIterator it(mtx, j); it; ++it)
                it.valueRef() /= e(it.row());
    };
    auto div_cols = [](const VectorXd& e, SparseMatrix<double>& mtx) {
        for (int j = 0; j < mtx.outerSize(); ++j)
            for (SparseMatrix<double>::InnerIterator it(mtx, j); it; ++it)
                it.valueRef() /= e(j);
    };
    for (int iter = 0; iter < set_.equil_iters; ++iter) {
        VectorXd xt = VectorXd::Zero(n_), at = VectorXd::Zero(p_),
                 gt = VectorXd::Zero(m_);
        max_cols(xt, sf_.A);
        max_cols(xt, sf_.G);
        max_rows(at, sf_.A);
        max_rows(gt, sf_.G);
        int ind = sf_.n_lp;
        for (int d : sf_.soc_dims) {
            gt.segment(ind, d).setConstant(gt.segment(ind, d).sum());
            ind += d;
        }
        auto root = [](double a) { return std::abs(a) < 1e-6 ? 1.0 : std::sqrt(a); };
        xt = xt.unaryExpr(root);
        at = at.unaryExpr(root);
        gt = gt.unaryExpr(root);
        div_rows(at, sf_.A);
        div_rows(gt, sf_.G);
        div_cols(xt, sf_.A);
        div_cols(xt, sf_.G);
        x_equil_ = x_equil_.cwiseProduct(xt);
        a_equil_ = a_equil_.cwiseProduct(at);
        g_equil_ = g_equil_.cwiseProduct(gt);
    }
    sf_.c = sf_.c.cwiseQuotient(x_equil_);
    sf_.b = sf_.b.cwiseQuotient(a_equil_);
    sf_.h = sf_.h.cwiseQuotient(g_equil_);
}

bool Ipm::update_scalings() {
    lp_v_ = w_.s.head(sf_.n_lp).cwiseQuotient(w_.z.head(sf_.n_lp));
    if (!(lp_v_.array() > 0.0).all()) return false;
    int start = sf_.n_lp;
    for (size_t k = 0; k < sf_.soc_dims.size(); ++k) {
        const int d = sf_.soc_dims[k];
        const double sres = w_.s(start) * w_.s(start) -
                            w_.s.segment(start + 1, d - 1).squaredNorm();
        const double zres = w_.z(start) * w_.z(start) -
                            w_.z.segment(start + 1, d - 1).squaredNorm();
        if (sres <= 0.0 || zres <= 0.0) return false;
        const double snorm = std::sqrt(sres), znorm = std::sqrt(zres);
        VectorXd sbar = w_.s.segment(start, d) / snorm;
        VectorXd zbar = w_.z.segment(start, d) / znorm;
        const double eta_sq = snorm / znorm;
        double gamma = std::sqrt(0.5 * (1.0 + sbar.dot(zbar)));
        const double a = (0.5 / gamma) * (sbar(0) + zbar(0));
        VectorXd q = (0.5 / gamma) * (sbar.tail(d - 1) - zbar.tail(d - 1));
        soc_a_[k] = a;
        soc_eta_[k] = eta_sq;
        soc_q_[k] = q;
        // W^2 = eta^2 (2 wb wb' - J) with wb = (a; q), a^2 - |q|^2 = 1.
        VectorXd wb(d);
        wb(0) = a;
        wb.tail(d - 1) = q;
        Eigen::MatrixXd W2 = 2.0 * eta_sq * wb * wb.transpose();
        W2(0, 0) -= eta_sq;
        W2.bottomRightCorner(d - 1, d - 1) +=
            eta_sq * Eigen::MatrixXd::Identity(d - 1, d - 1);
        w2_[k] = std::move(W2);
        start += d;
    }
    scale(w_.z, w_.lambda);
    return true;
}

void Ipm::scale(const VectorXd& z, VectorXd& lam) const {
    lam.resize(m_);
    lam.head(sf_.n_lp) = lp_v_.cwiseSqrt().cwiseProduct(z.head(sf_.n_lp));
    int start = sf_.n_lp;
    for (size_t k = 0; k < sf_.soc_dims.size(); ++k) {
        const int d = sf_.soc_dims[k];
        const double eta = std::sqrt(soc_eta_[k]);
        const double zeta = soc_q_[k].dot(z.segment(start + 1, d - 1));
        const double factor = z(start) + zeta / (1.0 + soc_a_[k]);
        lam(start) = eta * (soc_a_[k] * z(start) + zeta);
        lam.segment(start + 1, d - 1) =
            eta * (z.segment(start + 1, d - 1) + factor * soc_q_[k]);
        start += d;
    }
}

void Ipm::scale2add(const VectorXd& x, VectorXd& y) const {
    y.head(sf_.n_lp) += lp_v_.cwiseProduct(x.head(sf_.n_lp));
    int start = sf_.n_lp;
    for (size_t k = 0; k < sf_.soc_dims.size(); ++k) {
        const int d = sf_.soc_dims[k];
        y.segment(start, d) += w2_[k] * x.segment(start, d);
        start += d;
    }
}

double Ipm::conic_product(const VectorXd& u, const VectorXd& v, VectorXd& w) const {
    w.resize(m_);
    w.head(sf_.n_lp) = u.head(sf_.n_lp).cwiseProduct(v.head(sf_.n_lp));
    double mu = w.head(sf_.n_lp).lpNorm<1>();
    int start = sf_.n_lp;
    for (int d : sf_.soc_dims) {
        const double u0 = u(start), v0 = v(start);
        w(start) = u.segment(start, d).dot(v.segment(start, d));
        mu += std::abs(w(start));
        w.segment(start + 1, d - 1) = u0 * v.segment(start + 1, d - 1) +
                                      v0 * u.segment(start + 1, d - 1);
        start += d;
    }
    return mu;
}

void Ipm::conic_division(const VectorXd& u, const VectorXd& w, VectorXd& v) const {
    v.resize(m_);
    v.head(sf_.n_lp) = w.head(sf_.n_lp).cwiseQuotient(u.head(sf_.n_lp));
    int start = sf_.n_lp;
    for (int d : sf_.soc_dims) {
        const double u0 = u(start), w0 = w(start);
        const double rho = u0 * u0 - u.segment(start + 1, d - 1).squaredNorm();
        const double zeta =
            u.segment(start + 1, d - 1).dot(w.segment(start + 1, d - 1));
        const double factor = (zeta / u0 - w0) / rho;
        v(start) = (u0 * w0 - zeta) / rho;
        v.segment(start + 1, d - 1) = factor * u.segment(start + 1, d - 1) +
                                      w.segment(start + 1, d - 1) / u0;
        start += d;
    }
}

void Ipm::bring_to_cone(const VectorXd& r, VectorXd& s) const {
    double alpha = -set_.gamma;
    for (int i = 0; i < sf_.n_lp; ++i)
        if (r(i) <= 0.0 && -r(i) > alpha) alpha = -r(i);
    int start = sf_.n_lp;
    for (int d : sf_.soc_dims) {
        const double cres = r(start) - r.segment(start + 1, d - 1).norm();
        if (cres <= 0.0 && -cres > alpha) alpha = -cres;
        start += d;
    }
    alpha += 1.0;
    s = r;
    s.head(sf_.n_lp).array() += alpha;
    start = sf_.n_lp;
    for (int d : sf_.soc_dims) {
        s(start) += alpha;
        start += d;
    }
}

double Ipm::line_search(const VectorXd& lambda, const VectorXd& ds,
                        const VectorXd& dz, double tau, double dtau, double kap,
                        double dkap) const {
    double alpha;
    if (sf_.n_lp > 0) {
        const double rhomin =
            ds.head(sf_.n_lp).cwiseQuotient(lambda.head(sf_.n_lp)).minCoeff();
        const double sigmin =
            dz.head(sf_.n_lp).cwiseQuotient(lambda.head(sf_.n_lp)).minCoeff();
        const double eps = 1e-13;
        if (-sigmin > -rhomin)
            alpha = sigmin < 0.0 ? 1.0 / -sigmin : 1.0 / eps;
        else
            alpha = rhomin < 0.0 ? 1.0 / -rhomin : 1.0 / eps;
    } else {
        alpha = 10.0;
    }
    const double mtau = -tau / dtau, mkap = -kap / dkap;
    if (mtau > 0.0 && mtau < alpha) alpha = mtau;
    if (mkap > 0.0 && mkap < alpha) alpha = mkap;

    int start = sf_.n_lp;
    for (int d : sf_.soc_dims) {
        const double lk2 = lambda(start) * lambda(start) -
                           lambda.segment(start + 1, d - 1).squaredNorm();
        if (lk2 <= 0.0) {
            start += d;
            continue;
        }
        const double lknorm = std::sqrt(lk2);
        const VectorXd lkbar = lambda.segment(start, d) / lknorm;
        const double inv = 1.0 / lknorm;
        const double lds = lkbar(0) * ds(start) -
                           lkbar.tail(d - 1).dot(ds.segment(start + 1, d - 1));
        const double ldz = lkbar(0) * dz(start) -
                           lkbar.tail(d - 1).dot(dz.segment(start + 1, d - 1));
        VectorXd rho(d);
        rho(0) = inv * lds;
        double factor = (lds + ds(start)) / (lkbar(0) + 1.0);
        rho.tail(d - 1) = inv * (ds.segment(start + 1, d - 1) -
                                 factor * lkbar.tail(d - 1));
        const double rhonorm = rho.tail(d - 1).norm() - rho(0);
        VectorXd sig(d);
        sig(0) = inv * ldz;
        factor = (ldz + dz(start)) / (lkbar(0) + 1.0);
        sig.tail(d - 1) = inv * (dz.segment(start + 1, d - 1) -
                                 factor * lkbar.tail(d - 1));
        const double signorm = sig.tail(d - 1).norm() - sig(0);
        const double step = std::max({0.0, signorm, rhonorm});
        if (step != 0.0) alpha = std::min(1.0 / step, alpha);
        start += d;
    }
    return std::clamp(alpha, set_.stepmin, set_.stepmax);
}

void Ipm::build_kkt(bool init) {
    std::vector<Triplet> t;
    t.reserve(dim_ + 2 * (sf_.A.nonZeros() + sf_.G.nonZeros()) + m_ * 8);
    for (int j = 0; j < n_; ++j) t.emplace_back(j, j, delta_);
    for (int j = 0; j < sf_.A.outerSize(); ++j)
        for (SparseMatrix<double>::InnerIterator it(sf_.A, j); it; ++it) {
            t.emplace_back(n_ + it.row(), it.col(), it.value());
            t.emplace_back(it.col(), n_ + it.row(), it.value());
        }
    for (int r = 0; r < p_; ++r) t.emplace_back(n_ + r, n_ + r, -delta_);
    for (int j = 0; j < sf_.G.outerSize(); ++j)
        for (SparseMatrix<double>::InnerIterator it(sf_.G, j); it; ++it) {
            t.emplace_back(n_ + p_ + it.row(), it.col(), it.value());
            t.emplace_back(it.col(), n_ + p_ + it.row(), it.value());
        }
    const int off = n_ + p_;
    for (int i = 0; i < sf_.n_lp; ++i)
        t.emplace_back(off + i, off + i, -(init ? 1.0 : lp_v_(i)) - delta_);
    int start = sf_.n_lp;
    for (size_t k = 0; k < sf_.soc_dims.size(); ++k) {
        const int d = sf_.soc_dims[k];
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                const double wij = init ? (i == j ? 1.0 : 0.0) : w2_[k](i, j);
                t.emplace_back(off + start + i, off + start + j,
                               -wij - (i == j ? delta_ : 0.0));
            }
        start += d;
    }
    K_.resize(dim_, dim_);
    K_.setFromTriplets(t.begin(), t.end());
}

bool Ipm::factorize(bool init) {
    for (int attempt = 0; attempt < 4; ++attempt) {
        build_kkt(init);
        if (!analyzed_) {
            ldlt_.analyzePattern(K_);
            analyzed_ = true;
        }
        ldlt_.factorize(K_);
        if (ldlt_.info() == Eigen::Success) return true;
        delta_ *= 100.0;
    }
    return false;
}

int Ipm::solve_kkt(const VectorXd& rhs, VectorXd& dx, VectorXd& dy, VectorXd& dz,
                   bool init) const {
    VectorXd x = ldlt_.solve(rhs);
    const double threshold = (1.0 + rhs.lpNorm<Eigen::Infinity>()) * set_.linsysacc;
    double nerr_prev = std::numeric_limits<double>::max();
    VectorXd dref;
    int k_ref;
    for (k_ref = 0; k_ref <= set_.nitref; ++k_ref) {
        const auto xh = x.head(n_);
        const auto yh = x.segment(n_, p_);
        const auto zh = x.tail(m_);
        VectorXd ex = rhs.head(n_) - Gt_ * zh - delta_ * xh;
        if (p_ > 0) ex -= At_ * yh;
        VectorXd ey = rhs.segment(n_, p_);
        if (p_ > 0) ey -= sf_.A * xh - delta_ * yh;
        VectorXd ez = rhs.tail(m_) - sf_.G * xh + delta_ * zh;
        if (init)
            ez += zh;
        else
            scale2add(zh, ez);
        double nerr = std::max(ex.lpNorm<Eigen::Infinity>(),
                               ez.lpNorm<Eigen::Infinity>());
        if (p_ > 0) nerr = std::max(nerr, ey.lpNorm<Eigen::Infinity>());
        if (k_ref > 0 && nerr > nerr_prev) {
            x -= dref;
            --k_ref;
            break;
        }
        if (k_ref == set_.nitref || nerr < threshold ||
            (k_ref > 0 && nerr_prev < set_.irerrfact * nerr))
            break;
        nerr_prev = nerr;
        VectorXd e(dim_);
        e << ex, ey, ez;
        dref = ldlt_.solve(e);
        x += dref;
    }
    dx = x.head(n_);
    dy = x.segment(n_, p_);
    dz = x.tail(m_);
    return k_ref;
}

void Ipm::compute_residuals() {
    rx_ = -Gt_ * w_.z;
    if (p_ > 0) rx_ -= At_ * w_.y;
    hresx_ = rx_.norm();
    rx_ -= w_.tau * sf_.c;

    if (p_ > 0) {
        ry_ = sf_.A * w_.x;
        hresy_ = ry_.norm();
        ry_ -= w_.tau * sf_.b;
    } else {
        ry_.resize(0);
        hresy_ = 0.0;
    }

    rz_ = w_.s + sf_.G * w_.x;
    hresz_ = rz_.norm();
    rz_ -= w_.tau * sf_.h;

    cx_ = sf_.c.dot(w_.x);
    by_ = p_ > 0 ? sf_.b.dot(w_.y) : 0.0;
    hz_ = sf_.h.dot(w_.z);
    rt_ = w_.kap + cx_ + by_ + hz_;

    nx_ = w_.x.norm();
    ny_ = w_.y.norm();
    nz_ = w_.z.norm();
    ns_ = w_.s.norm();
}

void Ipm::update_statistics() {
    IterStats& i = w_.i;
    i.gap = w_.s.dot(w_.z);
    i.mu = (i.gap + w_.kap * w_.tau) /
           (sf_.n_lp + static_cast<int>(sf_.soc_dims.size()) + 1);
    i.kapovert = w_.kap / w_.tau;
    i.pcost = cx_ / w_.tau;
    i.dcost = -(hz_ + by_) / w_.tau;
    if (i.pcost < 0.0) {
        i.relgap = i.gap / -i.pcost;
        i.has_relgap = true;
    } else if (i.dcost > 0.0) {
        i.relgap = i.gap / i.dcost;
        i.has_relgap = true;
    } else {
        i.has_relgap = false;
    }
    const double nry = p_ > 0 ? ry_.norm() / std::max(resy0_ + nx_, 1.0) : 0.0;
    const double nrz = rz_.norm() / std::max(resz0_ + nx_ + ns_, 1.0);
    i.pres = std::max(nry, nrz) / w_.tau;
    i.dres = rx_.norm() / std::max(resx0_ + ny_ + nz_, 1.0) / w_.tau;
    i.pinfres.reset();
    i.dinfres.reset();
    if ((hz_ + by_) / std::max(ny_ + nz_, 1.0) < -opts_.reltol)
        i.pinfres = hresx_ / std::max(ny_ + nz_, 1.0);
    if (cx_ / std::max(nx_, 1.0) < -opts_.reltol)
        i.dinfres = std::max(hresy_ / std::max(nx_, 1.0),
                             hresz_ / std::max(nx_ + ns_, 1.0));
}

IpmCode Ipm::check_exit(bool reduced) const {
    const double feastol = reduced ? opts_.feastol_relaxed : opts_.feastol;
    const double abstol = reduced ? opts_.abstol_relaxed : opts_.abstol;
    const double reltol = reduced ? opts_.reltol_relaxed : opts_.reltol;
    const IterStats& i = w_.i;
    if ((-cx_ > 0.0 || -by_ - hz_ >= -abstol) && i.pres < feastol &&
        i.dres < feastol &&
        (i.gap < abstol || (i.has_relgap && i.relgap < reltol))) {
        return reduced ? IpmCode::CloseToOptimal : IpmCode::Optimal;
    }
    if (i.dinfres.has_value() && *i.dinfres < feastol && w_.tau < w_.kap)
        return IpmCode::DualInfeasible;
    if ((i.pinfres.has_value() && *i.pinfres < feastol && w_.tau < w_.kap) ||
        (w_.tau < feastol && w_.kap < feastol && i.pinfres.has_value() &&
         *i.pinfres < feastol))
        return IpmCode::PrimalInfeasible;
    return IpmCode::NotYet;
}

IpmCode Ipm::run() {
    VectorXd rhs1 = VectorXd::Zero(dim_);
    rhs1.segment(n_, p_) = sf_.b;
    rhs1.tail(m_) = sf_.h;
    VectorXd rhs2 = VectorXd::Zero(dim_);
    rhs2.head(n_) = -sf_.c;

    if (!factorize(true)) return IpmCode::Numerics;

    VectorXd dx1(n_), dy1(p_), dz1(m_);
    VectorXd dx2(n_), dy2(p_), dz2(m_);
    solve_kkt(rhs1, dx1, dy1, dz1, true);
    w_.x = dx1;
    bring_to_cone(-dz1, w_.s);
    solve_kkt(rhs2, dx2, dy2, dz2, true);
    w_.y = dy2;
    bring_to_cone(dz2, w_.z);

    rhs1.head(n_) = -sf_.c;
    w_.kap = 1.0;
    w_.tau = 1.0;
    w_.lambda = VectorXd::Zero(m_);

    VectorXd W_dz(m_), ds_by_W(m_), ds_final(m_);
    double pres_prev = std::numeric_limits<double>::max();
    double step = 0.0;
    IpmCode code = IpmCode::Numerics;

    for (int iter = 0; iter <= opts_.max_iter; ++iter) {
        w_.i.iter = iter;
        compute_residuals();
        update_statistics();

        if (iter > 0 && (w_.i.pres > set_.safeguard * pres_prev || w_.i.gap < 0.0)) {
            w_ = w_best_;
            code = check_exit(true);
            if (code == IpmCode::NotYet) code = IpmCode::Numerics;
            break;
        }
        pres_prev = w_.i.pres;

        code = check_exit(false);
        if (code != IpmCode::NotYet) break;

        if (iter > 0 && step == set_.stepmin * set_.gamma) {
            w_ = w_best_;
            code = check_exit(true);
            if (code == IpmCode::NotYet) code = IpmCode::Numerics;
            break;
        }
        if (iter == opts_.max_iter) {
            if (!w_.i.better_than(w_best_.i)) w_ = w_best_;
            code = check_exit(true);
            if (code == IpmCode::NotYet) code = IpmCode::MaxIter;
            break;
        }
        if (std::isnan(w_.i.pcost)) {
            if (iter > 0 && !w_.i.better_than(w_best_.i)) {
                w_ = w_best_;
                code = check_exit(true);
                if (code == IpmCode::NotYet) code = IpmCode::Numerics;
            } else {
                code = IpmCode::Numerics;
            }
            break;
        }

        if (iter == 0 || w_.i.better_than(w_best_.i)) w_best_ = w_;

        if (!update_scalings()) {
            w_ = w_best_;
            code = check_exit(true);
            if (code == IpmCode::NotYet) code = IpmCode::Numerics;
            break;
        }
        if (!factorize(false)) {
            code = IpmCode::Numerics;
            break;
        }

        solve_kkt(rhs1, dx1, dy1, dz1, false);

        // Affine (predictor) direction.
        rhs2.head(n_) = rx_;
        rhs2.segment(n_, p_) = -ry_;
        rhs2.tail(m_) = w_.s - rz_;
        solve_kkt(rhs2, dx2, dy2, dz2, false);

        const double dtau_denom = w_.kap / w_.tau - sf_.c.dot(dx1) -
                                  (p_ > 0 ? sf_.b.dot(dy1) : 0.0) - sf_.h.dot(dz1);
        const double dtauaff =
            (rt_ - w_.kap + sf_.c.dot(dx2) + (p_ > 0 ? sf_.b.dot(dy2) : 0.0) +
             sf_.h.dot(dz2)) /
            dtau_denom;
        dz2 += dtauaff * dz1;
        scale(dz2, W_dz);
        ds_by_W = -W_dz - w_.lambda;
        const double dkapaff = -w_.kap - w_.kap / w_.tau * dtauaff;

        const double step_aff =
            line_search(w_.lambda, ds_by_W, W_dz, w_.tau, dtauaff, w_.kap, dkapaff);
        const double sigma =
            std::clamp(std::pow(1.0 - step_aff, 3), set_.sigmamin, set_.sigmamax);

        // Combined (corrector) direction.
        VectorXd ds1(m_), ds2(m_);
        conic_product(w_.lambda, w_.lambda, ds1);
        conic_product(ds_by_W, W_dz, ds2);
        const double sigmamu = sigma * w_.i.mu;
        ds1 += ds2;
        ds1.head(sf_.n_lp).array() -= sigmamu;
        int start = sf_.n_lp;
        for (int d : sf_.soc_dims) {
            ds1(start) -= sigmamu;
            start += d;
        }
        conic_division(w_.lambda, ds1, ds_by_W);
        scale(ds_by_W, ds1);
        const double oms = 1.0 - sigma;
        rhs2.head(n_) = oms * rx_;
        rhs2.segment(n_, p_) = -oms * ry_;
        rhs2.tail(m_) = -oms * rz_ + ds1;
        solve_kkt(rhs2, dx2, dy2, dz2, false);

        const double bkap = w_.kap * w_.tau + dkapaff * dtauaff - sigmamu;
        const double dtau =
            (oms * rt_ - bkap / w_.tau + sf_.c.dot(dx2) +
             (p_ > 0 ? sf_.b.dot(dy2) : 0.0) + sf_.h.dot(dz2)) /
            dtau_denom;
        dx2 += dtau * dx1;
        dy2 += dtau * dy1;
        dz2 += dtau * dz1;
        scale(dz2, W_dz);
        ds_by_W = -(ds_by_W + W_dz);
        const double dkap = -(bkap + w_.kap * dtau) / w_.tau;
        step = set_.gamma *
               line_search(w_.lambda, ds_by_W, W_dz, w_.tau, dtau, w_.kap, dkap);
        scale(ds_by_W, ds_final);

        w_.x += step * dx2;
        w_.y += step * dy2;
        w_.z += step * dz2;
        w_.s += step * ds_final;
        w_.kap += step * dkap;
        w_.tau += step * dtau;
    }
    return code;
}

}  // namespace

Solution solve_continuous(const ConicProgram& prog, const IpmOptions& opts) {
    Solution sol;
    StandardForm sf = translate(prog);
    if (sf.trivially_infeasible) {
        sol.status = SolveStatus::Infeasible;
        return sol;
    }
    if (sf.n == 0) {
        sol.x = sf.restore(VectorXd());
        if (prog.max_violation(sol.x) <= 1e-8) {
            sol.status = SolveStatus::Optimal;
            sol.objective = prog.objective_value(sol.x);
            sol.kkt = {0.0, 0.0, 0.0};
        } else {
            sol.status = SolveStatus::Infeasible;
        }
        return sol;
    }

    Ipm ipm(std::move(sf), opts);
    const IpmCode code = ipm.run();
    sol.iterations = ipm.iterations();
    switch (code) {
        case IpmCode::Optimal:
        case IpmCode::CloseToOptimal:
            sol.status = SolveStatus::Optimal;
            sol.x = ipm.solution();
            sol.objective = ipm.objective();
            sol.kkt = ipm.kkt();
            break;
        case IpmCode::PrimalInfeasible:
            sol.status = SolveStatus::Infeasible;
            break;
        case IpmCode::DualInfeasible:
            sol.status = SolveStatus::Unbounded;
            break;
        case IpmCode::MaxIter:
            sol.status = SolveStatus::IterLimit;
            sol.x = ipm.solution();
            sol.objective = ipm.objective();
            sol.kkt = ipm.kkt();
            break;
        default:
            sol.status = SolveStatus::NumericalFailure;
            break;
    }
    return sol;
}

}  // namespace mg::conic
