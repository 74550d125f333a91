#include "skewresp/systems.hpp"

#include <algorithm>
#include <cmath>

#include "skewresp/util.hpp"
#include "json.hpp"

namespace skewresp {

double BaseDensity::value(double w) const {
    if (rho.empty()) throw argument_error("BaseDensity: empty");
    const auto& nodes = grid.nodes;
    if (w <= nodes.front()) {
        if (loglog_interp && nodes.front() > 0.0 && w > 0.0 && rho[0] > 0.0 && rho[1] > 0.0) {
            // power-law continuation from the first two nodes
            double s = std::log(rho[1] / rho[0]) / std::log(nodes[1] / nodes[0]);
            return rho[0] * std::pow(w / nodes[0], s);
        }
        return rho.front();
    }
    if (w >= nodes.back()) return rho.back();
    double lam = 0.0;
    std::size_t j = grid.bracket(w, &lam);
    if (loglog_interp && nodes[j] > 0.0 && rho[j] > 0.0 && rho[j + 1] > 0.0) {
        double t = std::log(w / nodes[j]) / std::log(nodes[j + 1] / nodes[j]);
        return rho[j] * std::pow(rho[j + 1] / rho[j], t);
    }
    return lam * rho[j] + (1.0 - lam) * rho[j + 1];
}

double BaseDensity::value_dot(double w) const {
    if (!has_derivative()) throw argument_error("BaseDensity: derivative not available");
    const auto& nodes = grid.nodes;
    if (w <= nodes.front()) return rho_dot.front();
    if (w >= nodes.back()) return rho_dot.back();
    double lam = 0.0;
    std::size_t j = grid.bracket(w, &lam);
    return lam * rho_dot[j] + (1.0 - lam) * rho_dot[j + 1];
}

double BaseDensity::integral() const {
    NeumaierSum acc;
    for (std::size_t j = 0; j + 1 < grid.nodes.size(); ++j)
        acc.add(0.5 * (grid.nodes[j + 1] - grid.nodes[j]) * (rho[j] + rho[j + 1]));
    return acc.value();
}

void BaseDensity::validate(double tol) const {
    grid.validate();
    if (rho.size() != grid.size()) throw argument_error("BaseDensity: value count mismatch");
    for (double v : rho) {
        if (!std::isfinite(v)) throw argument_error("BaseDensity: non-finite value");
        if (v < 0.0) throw argument_error("BaseDensity: negative value");
    }
    if (std::abs(integral() - 1.0) > tol)
        throw argument_error("BaseDensity: trapezoid mass differs from 1 beyond tolerance");
    if (!rho_dot.empty() && rho_dot.size() != rho.size())
        throw argument_error("BaseDensity: derivative length mismatch");
}

void SkewSystem::validate(double weight_tol, double inverse_tol) const {
    grid.validate();
    fibre_box.validate();
    if (branches.empty()) throw argument_error("SkewSystem: no branches");
    // regions tile Omega
    std::vector<std::pair<double, double>> regions;
    for (const auto& b : branches) regions.push_back({b.region_lo, b.region_hi});
    std::sort(regions.begin(), regions.end());
    if (std::abs(regions.front().first - omega_lo) > 1e-9 ||
        std::abs(regions.back().second - omega_hi) > 1e-9)
        throw argument_error("SkewSystem: branch regions do not cover the base interval");
    for (std::size_t i = 1; i < regions.size(); ++i)
        if (std::abs(regions[i].first - regions[i - 1].second) > 1e-9)
            throw argument_error("SkewSystem: branch regions do not tile the base interval");

    for (double w : grid.nodes) {
        NeumaierSum mass;
        for (const auto& b : branches) {
            double th = b.theta(w);
            double p = b.weight(w);
            double dth = b.theta_prime(w);
            if (p < -weight_tol) throw argument_error("SkewSystem: negative branch weight");
            if (!(th >= b.region_lo - 1e-9 && th <= b.region_hi + 1e-9))
                throw argument_error("SkewSystem: inverse branch leaves its region");
            if (std::abs(dth) > 1.0 + 1e-12)
                throw argument_error("SkewSystem: inverse branch derivative exceeds 1");
            if (f_forward && std::abs(f_forward(th) - w) > inverse_tol) {
                // at a region cut the forward map may pick the neighbouring branch
                double cut_dist = 1.0;
                for (double c : region_cuts) cut_dist = std::min(cut_dist, std::abs(th - c));
                if (cut_dist > 1e-12)
                    throw argument_error("SkewSystem: forward map does not invert the branch");
            }
            mass.add(p);
        }
        if (std::abs(mass.value() - 1.0) > weight_tol)
            throw argument_error("SkewSystem: branch weights do not sum to 1");
    }
}

double contraction_certificate(const SkewSystem& sys) {
    double lam = 0.0;
    for (const auto& b : sys.branches) {
        double l1 = b.lip1, l2 = b.lip2, l3 = b.lip3;
        double c = std::max({l1 + l2 + l3, l1 * l1 + 3.0 * l1 * l2, l1 * l1 * l1});
        lam = std::max(lam, c);
    }
    if (lam >= 1.0)
        throw solver_error("contraction_certificate: fibre maps are not uniformly contracting (" +
                           format_double(lam) + ")");
    return lam;
}

SkewSystem bernoulli_convolution(double alpha, double beta, BernoulliVary vary, int grid_M) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw argument_error("bernoulli_convolution: alpha in (0,1)");
    if (!(beta > 0.0 && beta < 1.0)) throw argument_error("bernoulli_convolution: beta in (0,1)");
    SkewSystem sys;
    sys.name = "bernoulli";
    sys.param_name = vary == BernoulliVary::alpha ? "alpha" : "beta";
    sys.alpha = vary == BernoulliVary::alpha ? alpha : beta;
    sys.descr_alpha = alpha;
    sys.descr_beta = beta;
    sys.grid_M = grid_M;
    sys.omega_lo = -1.0;
    sys.omega_hi = 1.0;
    sys.fibre_box = DomainBox::interval(-1.0, 1.0);
    sys.grid = OmegaGrid::uniform(-1.0, 1.0, grid_M);
    sys.constant_mode = true;
    sys.branches_move = vary == BernoulliVary::beta;
    sys.region_cuts = {2.0 * beta - 1.0};

    sys.density.grid = sys.grid;
    sys.density.rho.assign(sys.grid.size(), 0.5);
    sys.density.rho_dot.assign(sys.grid.size(), 0.0);

    double cut = 2.0 * beta - 1.0;
    sys.f_forward = [beta, cut](double w) {
        return w < cut ? (w + 1.0) / beta - 1.0 : (w - beta) / (1.0 - beta);
    };
    double a = alpha, c = 1.0 - alpha;
    sys.g_forward = [a, c, cut](double w, const Vec2& x) {
        return Vec2{a * x.x + (w < cut ? c : -c), 0.0};
    };

    auto make_branch = [&](int side) {
        // side +1: weight-beta branch, fibre shift +(1-alpha); side -1: the other
        Branch b;
        b.index = side > 0 ? 0 : 1;
        double slope = side > 0 ? beta : 1.0 - beta;
        double intercept = side > 0 ? beta - 1.0 : beta;
        b.theta = [slope, intercept](double w) { return slope * w + intercept; };
        b.theta_prime = [slope](double) { return slope; };
        b.weight = [slope](double) { return slope; };
        b.region_forward = [slope, intercept](double w) { return (w - intercept) / slope; };
        double shift = side > 0 ? c : -c;
        SmoothMap g = SmoothMap::affine(Mat2{a, 0.0, 0.0, a}, Vec2{shift, 0.0});
        b.fibre = [g](double) { return g; };
        b.region_lo = side > 0 ? -1.0 : cut;
        b.region_hi = side > 0 ? cut : 1.0;
        b.lip1 = a;
        b.weight_prime = [](double) { return 0.0; };
        if (vary == BernoulliVary::alpha) {
            b.theta_dot = [](double) { return 0.0; };
            b.weight_dot = [](double) { return 0.0; };
            double dshift = side > 0 ? -1.0 : 1.0;
            b.dg_dparam = [dshift](double, const Vec2& x) { return Vec2{x.x + dshift, 0.0}; };
        } else {
            double sgn = side > 0 ? 1.0 : -1.0;
            b.theta_dot = [sgn](double w) { return sgn > 0 ? w + 1.0 : 1.0 - w; };
            b.weight_dot = [sgn](double) { return sgn; };
            b.dg_dparam = [](double, const Vec2&) { return Vec2{0.0, 0.0}; };
        }
        b.dg_domega = [](double, const Vec2&) { return Vec2{0.0, 0.0}; };
        return b;
    };
    sys.branches.push_back(make_branch(+1));
    sys.branches.push_back(make_branch(-1));
    sys.lambda_certificate = contraction_certificate(sys);
    sys.validate();
    return sys;
}

SystemFamily bernoulli_family(double alpha, double beta, BernoulliVary vary) {
    SystemFamily fam;
    fam.name = "bernoulli";
    fam.param_name = vary == BernoulliVary::alpha ? "alpha" : "beta";
    fam.param_lo = 0.0;
    fam.param_hi = 1.0;
    fam.moves_branches = vary == BernoulliVary::beta;
    fam.moves_weights = vary == BernoulliVary::beta;
    fam.moves_fibres = vary == BernoulliVary::alpha;
    fam.make = [alpha, beta, vary](double p) {
        return vary == BernoulliVary::alpha ? bernoulli_convolution(p, beta, vary)
                                            : bernoulli_convolution(alpha, p, vary);
    };
    return fam;
}

SkewSystem affine_doubling_test(double lambda_fib, int grid_M) {
    if (!(lambda_fib > 0.0 && lambda_fib < 1.0))
        throw argument_error("affine_doubling_test: lambda_fib in (0,1)");
    SkewSystem sys;
    sys.name = "doubling";
    sys.param_name = "lambda_fib";
    sys.alpha = lambda_fib;
    sys.descr_lambda_fib = lambda_fib;
    sys.grid_M = grid_M;
    sys.omega_lo = 0.0;
    sys.omega_hi = 1.0;
    sys.fibre_box = DomainBox::interval(-1.0, 1.0);
    sys.grid = OmegaGrid::uniform(0.0, 1.0, grid_M);
    sys.constant_mode = false;
    sys.region_cuts = {0.5};

    sys.density.grid = sys.grid;
    sys.density.rho.assign(sys.grid.size(), 1.0);
    sys.density.rho_dot.assign(sys.grid.size(), 0.0);

    double lam = lambda_fib;
    sys.f_forward = [](double w) { return w < 0.5 ? 2.0 * w : 2.0 * w - 1.0; };
    sys.g_forward = [lam](double w, const Vec2& x) {
        return Vec2{lam * x.x + 0.5 * std::cos(2.0 * M_PI * w), 0.0};
    };

    for (int i = 0; i < 2; ++i) {
        Branch b;
        b.index = i;
        double off = 0.5 * i;
        b.theta = [off](double w) { return 0.5 * w + off; };
        b.theta_prime = [](double) { return 0.5; };
        b.weight = [](double) { return 0.5; };
        b.weight_prime = [](double) { return 0.0; };
        b.region_forward = [off](double w) { return 2.0 * (w - off); };
        b.fibre = [lam, off](double w) {
            double th = 0.5 * w + off;
            return SmoothMap::affine(Mat2{lam, 0.0, 0.0, lam},
                                     Vec2{0.5 * std::cos(2.0 * M_PI * th), 0.0});
        };
        b.theta_dot = [](double) { return 0.0; };
        b.weight_dot = [](double) { return 0.0; };
        b.dg_dparam = [](double, const Vec2& x) { return Vec2{x.x, 0.0}; };
        b.dg_domega = [off](double w, const Vec2&) {
            double th = 0.5 * w + off;
            return Vec2{-M_PI * std::sin(2.0 * M_PI * th), 0.0};
        };
        b.region_lo = off;
        b.region_hi = off + 0.5;
        b.lip1 = lam;
        sys.branches.push_back(b);
    }
    sys.lambda_certificate = contraction_certificate(sys);
    sys.validate();
    return sys;
}

SystemFamily doubling_family(double lambda_fib) {
    SystemFamily fam;
    fam.name = "doubling";
    fam.param_name = "lambda_fib";
    fam.param_lo = 0.0;
    fam.param_hi = 1.0;
    fam.moves_fibres = true;
    fam.make = [](double p) { return affine_doubling_test(p); };
    (void)lambda_fib;
    return fam;
}

BaseDensity ulam_density(const BaseMap& map, const OmegaGrid& grid, double tol, int max_sweeps) {
    if (map.branches.empty()) throw argument_error("ulam_density: no branches");
    grid.validate();
    BaseDensity d;
    d.grid = grid;
    std::size_t M = grid.size();
    double len = map.hi - map.lo;
    d.rho.assign(M, 1.0 / len);

    // the branch images and slopes do not change between sweeps, so the
    // interpolation stencil is cached once; flat clamps outside the grid
    // reuse the interior formula with lam pinned to 0 or 1
    struct Stencil {
        std::size_t j;
        double lam, slope;
    };
    std::vector<Stencil> cells(M * map.branches.size());
    parallel_for(M, [&](std::size_t j) {
        double w = grid.nodes[j];
        for (std::size_t b = 0; b < map.branches.size(); ++b) {
            double t = map.branches[b].theta(w);
            Stencil& c = cells[j * map.branches.size() + b];
            c.slope = std::abs(map.branches[b].theta_prime(w));
            if (t <= grid.nodes.front()) {
                c.j = 0;
                c.lam = 1.0;
            } else if (t >= grid.nodes.back()) {
                c.j = M - 2;
                c.lam = 0.0;
            } else {
                c.j = grid.bracket(t, &c.lam);
            }
        }
    });

    auto sweep_once = [&](const BaseDensity& cur, std::vector<double>& out) {
        out.resize(M);
        parallel_for(M, [&](std::size_t j) {
            NeumaierSum s;
            const Stencil* row = cells.data() + j * map.branches.size();
            for (std::size_t b = 0; b < map.branches.size(); ++b) {
                const Stencil& c = row[b];
                s.add((c.lam * cur.rho[c.j] + (1.0 - c.lam) * cur.rho[c.j + 1]) * c.slope);
            }
            out[j] = s.value();
        });
    };

    std::vector<double> next;
    double residual = 0.0;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        sweep_once(d, next);
        residual = 0.0;
        for (std::size_t j = 0; j < M; ++j)
            residual = std::max(residual, std::abs(next[j] - d.rho[j]));
        d.rho = next;
        double mass = d.integral();
        if (!(mass > 0.0)) throw solver_error("ulam_density: density mass collapsed");
        for (double& v : d.rho) v /= mass;
        if (residual <= tol) {
            d.validate();
            return d;
        }
    }
    throw solver_error("ulam_density: collocation residual " + format_double(residual) +
                       " did not reach tolerance");
}

BaseDensity density_derivative_fd(const SystemFamily& family, double alpha0, double eps) {
    if (!(eps > 0.0)) throw argument_error("density_derivative_fd: eps must be positive");
    SkewSystem lo = family.make(alpha0 - eps);
    SkewSystem mid = family.make(alpha0);
    SkewSystem hi = family.make(alpha0 + eps);
    BaseDensity d = mid.density;
    d.rho_dot.resize(d.rho.size());
    for (std::size_t j = 0; j < d.rho.size(); ++j) {
        double w = d.grid.nodes[j];
        d.rho_dot[j] = (hi.density.value(w) - lo.density.value(w)) / (2.0 * eps);
    }
    return d;
}

std::string system_descriptor_json(const SkewSystem& sys, int atoms_N) {
    nlohmann::json j;
    j["system"] = sys.name;
    j["alpha"] = sys.descr_alpha;
    j["beta"] = sys.descr_beta;
    j["lambda_fib"] = sys.descr_lambda_fib;
    j["grid_M"] = sys.grid_M;
    j["atoms_N"] = atoms_N;
    return j.dump();
}

}  // namespace skewresp
