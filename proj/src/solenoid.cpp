#include <algorithm>
#include <cmath>
#include <memory>

#include "skewresp/inducing.hpp"
#include "skewresp/measure.hpp"
#include "skewresp/response.hpp"
#include "skewresp/section.hpp"
#include "skewresp/systems.hpp"
#include "skewresp/transfer.hpp"
#include "skewresp/util.hpp"

namespace skewresp {

namespace {

void check_solenoid_params(double alpha, double lambda_fib) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw argument_error("intermittent_solenoid: alpha must lie in (0,1)");
    if (!(lambda_fib > 0.0 && lambda_fib < 1.0))
        throw argument_error("intermittent_solenoid: lambda_fib must lie in (0,1)");
}

Vec2 circle_point(double u) {
    return Vec2{0.5 * std::cos(2.0 * M_PI * u), 0.5 * std::sin(2.0 * M_PI * u)};
}

Vec2 circle_tangent(double u) {
    return Vec2{-M_PI * std::sin(2.0 * M_PI * u), M_PI * std::cos(2.0 * M_PI * u)};
}

// branch weights are density quotients; both branches share these tables so
// the two weights sum to one exactly at every point
struct WeightTables {
    double alpha = 0.0;
    BaseDensity density;
    std::vector<double> slope;  // d rho / d omega at the grid nodes

    double rho(double w) const { return density.value(w); }

    double rho_prime(double w) const {
        const auto& nodes = density.grid.nodes;
        if (w <= nodes.front()) {
            // the density continues below the grid as a power law; its slope
            // follows from the local exponent
            double s = std::log(density.rho[1] / density.rho[0]) /
                       std::log(nodes[1] / nodes[0]);
            return s * density.value(w) / w;
        }
        if (w >= nodes.back()) return slope.back();
        double lam = 0.0;
        std::size_t j = density.grid.bracket(w, &lam);
        return lam * slope[j] + (1.0 - lam) * slope[j + 1];
    }

    // left-branch pull weight rho(theta_L)/f'(theta_L) and its w-derivative
    void left_quotient(double w, double* q, double* qp) const {
        double u = lsv_left_inverse(alpha, w);
        double p = std::pow(2.0 * u, alpha);
        double fp = 1.0 + (1.0 + alpha) * p;
        *q = rho(u) / fp;
        if (qp) {
            double fpp = u > 0.0 ? (1.0 + alpha) * alpha * p / u : 0.0;
            *qp = (rho_prime(u) - rho(u) * fpp / fp) / (fp * fp);
        }
    }

    void right_quotient(double w, double* q, double* qp) const {
        double th = 0.5 * (w + 1.0);
        *q = 0.5 * rho(th);
        if (qp) *qp = 0.25 * rho_prime(th);
    }
};

std::vector<double> density_slopes(const BaseDensity& d) {
    const auto& x = d.grid.nodes;
    const auto& r = d.rho;
    std::size_t M = x.size();
    std::vector<double> s(M);
    if (M < 2) throw argument_error("density_slopes: need at least two nodes");
    s[0] = (r[1] - r[0]) / (x[1] - x[0]);
    s[M - 1] = (r[M - 1] - r[M - 2]) / (x[M - 1] - x[M - 2]);
    for (std::size_t j = 1; j + 1 < M; ++j)
        s[j] = (r[j + 1] - r[j - 1]) / (x[j + 1] - x[j - 1]);
    return s;
}

SkewSystem solenoid_on_grid(double alpha, double lambda_fib, const OmegaGrid& grid,
                            int density_words) {
    check_solenoid_params(alpha, lambda_fib);
    UnfoldedDensity ud = unfolded_density(alpha, grid, density_words);

    SkewSystem sys;
    sys.name = "solenoid";
    sys.param_name = "alpha";
    sys.alpha = alpha;
    sys.descr_alpha = alpha;
    sys.descr_lambda_fib = lambda_fib;
    sys.grid_M = (int)grid.size();
    sys.omega_lo = 0.0;
    sys.omega_hi = 1.0;
    double r = 0.5 / (1.0 - lambda_fib);
    sys.fibre_box = DomainBox::rectangle(-r, r, -r, r);
    sys.grid = grid;
    sys.constant_mode = false;
    sys.branches_move = true;
    sys.region_cuts = {0.5};
    sys.density = ud.density;

    auto tab = std::make_shared<WeightTables>();
    tab->alpha = alpha;
    tab->density = ud.density;
    tab->slope = density_slopes(ud.density);

    double lam = lambda_fib;
    double a = alpha;
    sys.f_forward = [a](double w) { return lsv_forward(a, w); };
    sys.g_forward = [lam](double w, const Vec2& x) {
        Vec2 c = circle_point(w);
        return Vec2{lam * x.x + c.x, lam * x.y + c.y};
    };

    {
        Branch b;
        b.index = 0;
        b.theta = [a](double w) { return lsv_left_inverse(a, w); };
        b.theta_prime = [a](double w) {
            return 1.0 / lsv_forward_prime(a, lsv_left_inverse(a, w));
        };
        b.theta_dot = [a](double w) {
            double u = lsv_left_inverse(a, w);
            double p = std::pow(2.0 * u, a);
            double l = u > 0.0 ? std::log(2.0 * u) : 0.0;
            return -(u * p * l) / (1.0 + (1.0 + a) * p);
        };
        b.weight = [tab](double w) {
            double ql, qr;
            tab->left_quotient(w, &ql, nullptr);
            tab->right_quotient(w, &qr, nullptr);
            return ql / (ql + qr);
        };
        b.weight_prime = [tab](double w) {
            double ql, qr, qlp, qrp;
            tab->left_quotient(w, &ql, &qlp);
            tab->right_quotient(w, &qr, &qrp);
            double s = ql + qr;
            return (qlp * qr - ql * qrp) / (s * s);
        };
        b.fibre = [a, lam](double w) {
            return SmoothMap::affine(Mat2{lam, 0.0, 0.0, lam},
                                     circle_point(lsv_left_inverse(a, w)));
        };
        b.dg_domega = [a](double w, const Vec2&) {
            return circle_tangent(lsv_left_inverse(a, w));
        };
        b.dg_dparam = [](double, const Vec2&) { return Vec2{0.0, 0.0}; };
        b.region_forward = [a](double w) { return lsv_forward(a, w); };
        b.region_lo = 0.0;
        b.region_hi = 0.5;
        b.lip1 = lam;
        sys.branches.push_back(b);
    }
    {
        Branch b;
        b.index = 1;
        b.theta = [](double w) { return 0.5 * (w + 1.0); };
        b.theta_prime = [](double) { return 0.5; };
        b.theta_dot = [](double) { return 0.0; };
        b.weight = [tab](double w) {
            double ql, qr;
            tab->left_quotient(w, &ql, nullptr);
            tab->right_quotient(w, &qr, nullptr);
            return qr / (ql + qr);
        };
        b.weight_prime = [tab](double w) {
            double ql, qr, qlp, qrp;
            tab->left_quotient(w, &ql, &qlp);
            tab->right_quotient(w, &qr, &qrp);
            double s = ql + qr;
            return (qrp * ql - qr * qlp) / (s * s);
        };
        b.fibre = [lam](double w) {
            return SmoothMap::affine(Mat2{lam, 0.0, 0.0, lam},
                                     circle_point(0.5 * (w + 1.0)));
        };
        b.dg_domega = [](double w, const Vec2&) {
            return circle_tangent(0.5 * (w + 1.0));
        };
        b.dg_dparam = [](double, const Vec2&) { return Vec2{0.0, 0.0}; };
        b.region_forward = [](double w) { return 2.0 * w - 1.0; };
        b.region_lo = 0.5;
        b.region_hi = 1.0;
        b.lip1 = lam;
        sys.branches.push_back(b);
    }

    sys.lambda_certificate = contraction_certificate(sys);
    sys.validate();
    return sys;
}

// cylinder depth needed for the retained return words to reach the lower
// grid cutoff; the deficit at the smallest node grows quickly with alpha
int unfold_depth(double alpha) {
    double k = 8.0 * std::pow(10.0, 3.0 * alpha);
    return std::clamp((int)std::ceil(k), 256, 2400);
}

}  // namespace

SkewSystem intermittent_solenoid(double alpha, double lambda_fib, int n_max, int grid_M) {
    if (n_max < 1) throw argument_error("intermittent_solenoid: n_max must be positive");
    // n_max only shapes the induced representation used by the family hooks;
    // the direct assembly resolves the density by word summation
    return solenoid_on_grid(alpha, lambda_fib, solenoid_grid(grid_M), 4000);
}

SystemFamily solenoid_family(double alpha, double lambda_fib, int n_max, int grid_M) {
    check_solenoid_params(alpha, lambda_fib);
    if (n_max < 1) throw argument_error("solenoid_family: n_max must be positive");
    SystemFamily fam;
    fam.name = "solenoid";
    fam.param_name = "alpha";
    fam.param_lo = 0.05;
    fam.param_hi = 0.95;
    fam.moves_branches = true;
    fam.moves_weights = true;
    fam.moves_density = true;
    fam.make = [lambda_fib, n_max, grid_M](double a) {
        return intermittent_solenoid(a, lambda_fib, n_max, grid_M);
    };
    // the direct operator has no spectral gap at the neutral fixed point, so
    // the invariant section and the sample derivative are both produced on
    // the induced return system and unfolded back to the full base
    fam.fixed_section = [lambda_fib, n_max, grid_M](double a, double tol, int budget) {
        InducingScheme scheme = make_inducing_scheme(a, lambda_fib, n_max, 257, 2000);
        SkewSystem isys = induced_system(scheme, 257, false);
        FixedPointResult fp = fixed_point(isys, tol, 300, budget);
        return unfold(scheme, fp.sigma, solenoid_grid(grid_M), unfold_depth(a), budget);
    };
    fam.nu_dot_path = [lambda_fib, n_max, grid_M](double a0, double tol, double eps,
                                                  int budget, int* N_out, double* tail_out) {
        if (!(eps > 0.0)) throw argument_error("solenoid nu_dot: eps must be positive");
        SystemFamily ifam = induced_family(lambda_fib, n_max, 257);
        InducingScheme s0 = make_inducing_scheme(a0, lambda_fib, n_max, 257, 2000);
        InducingScheme s1 = make_inducing_scheme(a0 + eps, lambda_fib, n_max, 257, 2000);
        SkewSystem isys = induced_system(s0, 257, true);
        FixedPointResult fp = fixed_point(isys, tol, 300, budget);
        ResponseSeed seed = response_seed(ifam, a0, eps, fp.sigma, budget);
        SampleDerivative sd = neumann_resolvent(isys, seed.tau, tol, budget);

        OmegaGrid grid = solenoid_grid(grid_M);
        int k_max = unfold_depth(a0 + eps);
        UnfoldReport rep0, rep1, rep_dot;
        Section u0 = unfold(s0, fp.sigma, grid, k_max, budget, &rep0);
        Section u1 = unfold(s1, fp.sigma, grid, k_max, budget, &rep1);
        SignedSection du = scale_signed_section(section_difference(u1, u0), 1.0 / eps);
        SignedSection t2 = unfold_signed(s0, sd.nu_dot, grid, k_max, budget, &rep_dot);

        SignedSection out;
        out.grid = grid;
        out.vanishes_on_constants = true;
        out.values.resize(grid.size());
        for (std::size_t j = 0; j < grid.size(); ++j) {
            SignedAtomicMeasure m =
                mix_signed({{1.0, du.values[j]}, {1.0, t2.values[j]}});
            if (m.vanishes_on_constants && !m.atoms.empty()) m.fix_mass_zero();
            out.values[j] =
                compact(m, budget > 0 ? budget : 1024, CompactMode::grid).measure;
        }
        if (N_out) *N_out = sd.N;
        if (tail_out)
            *tail_out = sd.tail_bound +
                        (rep0.deficit_max + rep1.deficit_max) / eps + rep_dot.deficit_max;
        return out;
    };
    return fam;
}

double induced_operator_identity_check(double alpha, double lambda_fib, const Section& nubar,
                                       int k_cap, int budget) {
    check_solenoid_params(alpha, lambda_fib);
    if (k_cap < 1) throw argument_error("identity check: k_cap must be positive");
    nubar.validate();
    if (nubar.constant_flag)
        throw argument_error("identity check: section must be node resolved");
    if (std::abs(nubar.grid.lo - 0.5) > 1e-12 || std::abs(nubar.grid.hi - 1.0) > 1e-12)
        throw argument_error("identity check: section must cover the reference interval");
    const DomainBox& box = nubar.node(0).box;
    if (budget <= 0) budget = box.dim == 1 ? 256 : 1024;

    InducingScheme scheme = make_inducing_scheme(alpha, lambda_fib, 60, 257, 2000);
    SkewSystem isys = induced_system(scheme, (int)nubar.grid.size(), false);
    if (!isys.grid.same_as(nubar.grid))
        throw argument_error("identity check: section grid must be uniform");
    Section lhs = apply_K(isys, nubar, budget);

    // full-system grid: graded fill below the reference interval, then the
    // reference nodes verbatim so the restriction is exact
    OmegaGrid low = solenoid_grid(257);
    OmegaGrid merged;
    merged.hi = 1.0;
    for (double w : low.nodes)
        if (w < 0.5 - 1e-9) merged.nodes.push_back(w);
    std::size_t offset = merged.nodes.size();
    for (double w : nubar.grid.nodes) merged.nodes.push_back(w);
    merged.lo = merged.nodes.front();
    merged.validate();
    SkewSystem fsys = solenoid_on_grid(alpha, lambda_fib, merged, 4000);

    std::size_t M = nubar.grid.size();
    std::vector<int> tau(M);
    for (std::size_t i = 0; i < M; ++i) tau[i] = return_time(alpha, nubar.grid.nodes[i]);

    std::vector<SignedAtomicMeasure> acc(M);
    for (auto& m : acc) {
        m.box = box;
        m.vanishes_on_constants = false;
    }
    for (int k = 1; k <= k_cap; ++k) {
        SignedSection piece;
        piece.grid = merged;
        piece.vanishes_on_constants = false;
        piece.values.resize(merged.size());
        for (auto& m : piece.values) {
            m.box = box;
            m.vanishes_on_constants = false;
        }
        bool any = false;
        for (std::size_t i = 0; i < M; ++i) {
            if (tau[i] != k) continue;
            for (const Atom& atm : nubar.node(i).atoms)
                piece.values[offset + i].atoms.push_back(atm);
            any = true;
        }
        if (!any) continue;
        SignedSection img = apply_K_power(fsys, piece, k, budget);
        for (std::size_t i = 0; i < M; ++i)
            for (const Atom& atm : img.values[offset + i].atoms)
                acc[i].atoms.push_back(atm);
    }

    Section rhs;
    rhs.grid = nubar.grid;
    rhs.values.resize(M);
    for (std::size_t i = 0; i < M; ++i) {
        AtomicMeasure m;
        m.box = box;
        for (const Atom& atm : acc[i].atoms)
            if (atm.w > 0.0) m.atoms.push_back(atm);
        if (m.total_weight() < 0.05)
            throw solver_error("identity check: truncation dropped the mass at a node");
        m.renormalize();
        rhs.values[i] =
            compact(m, budget, box.dim == 2 ? CompactMode::grid : CompactMode::quantile)
                .measure;
    }
    rhs.validate();
    return sup_metric(lhs, rhs);
}

}  // namespace skewresp
