#include "skewresp/response.hpp"

#include <algorithm>
#include <cmath>

#include "skewresp/util.hpp"
#include "json.hpp"

namespace skewresp {

namespace {

TestBank response_bank(const DomainBox& box) { return standard_bank(box, 3, 64); }

// append term atoms into acc, node by node; densifies acc if needed
void add_signed_inplace(SignedSection& acc, const SignedSection& term) {
    if (!acc.grid.same_as(term.grid))
        throw argument_error("neumann_resolvent: term grid drifted");
    if (acc.constant_flag && !term.constant_flag) {
        SignedAtomicMeasure proto = acc.values[0];
        acc.values.assign(acc.grid.size(), proto);
        acc.constant_flag = false;
    }
    std::size_t M = acc.constant_flag ? 1 : acc.grid.size();
    for (std::size_t j = 0; j < M; ++j) {
        const SignedAtomicMeasure& t = term.node(j);
        SignedAtomicMeasure& a = acc.values[j];
        a.atoms.insert(a.atoms.end(), t.atoms.begin(), t.atoms.end());
        a.fix_mass_zero();
    }
}

void compact_signed_nodes(SignedSection& s, int budget) {
    for (auto& m : s.values) {
        if ((int)m.atoms.size() > budget) {
            m = compact(m, budget, CompactMode::grid).measure;
            m.fix_mass_zero();
        }
    }
}

double pair_with_observable(const AtomicMeasure& mu, double omega, const SkewObservable& phi) {
    NeumaierSum s;
    for (const Atom& a : mu.atoms) s.add(a.w * phi.value(omega, a.x));
    return s.value();
}

double pair_with_observable(const SignedAtomicMeasure& mu, double omega,
                            const SkewObservable& phi) {
    NeumaierSum s;
    for (const Atom& a : mu.atoms) s.add(a.w * phi.value(omega, a.x));
    return s.value();
}

template <class Sec>
double integral_impl(const Sec& sigma, const SkewObservable& phi,
                     const std::vector<double>& weight_at_nodes) {
    if (!phi.value) throw argument_error("observable_integral: observable has no value");
    const auto& nodes = sigma.grid.nodes;
    if (weight_at_nodes.size() != nodes.size())
        throw argument_error("observable_integral: weight vector does not match the grid");
    std::vector<double> h(nodes.size());
    parallel_for(nodes.size(), [&](std::size_t j) {
        h[j] = pair_with_observable(sigma.node(sigma.constant_flag ? 0 : j), nodes[j], phi) *
               weight_at_nodes[j];
    });
    NeumaierSum s;
    for (std::size_t j = 0; j + 1 < nodes.size(); ++j)
        s.add(0.5 * (nodes[j + 1] - nodes[j]) * (h[j] + h[j + 1]));
    return s.value();
}

Section family_fixed_section(const SystemFamily& family, const SkewSystem& sys, double a,
                             double tol, int max_iter, int budget) {
    if (family.fixed_section) return family.fixed_section(a, tol, budget);
    return fixed_point(sys, tol, max_iter, budget).sigma;
}

}  // namespace

SignedSection scale_signed_section(const SignedSection& s, double c) {
    SignedSection out = s;
    for (auto& m : out.values)
        for (auto& a : m.atoms) a.w *= c;
    return out;
}

SignedSection signed_section_gap(const SignedSection& a, const SignedSection& b) {
    if (!a.grid.same_as(b.grid))
        throw argument_error("signed_section_gap: sections live on different grids");
    SignedSection out;
    out.grid = a.grid;
    out.vanishes_on_constants = a.vanishes_on_constants && b.vanishes_on_constants;
    out.constant_flag = a.constant_flag && b.constant_flag;
    std::size_t M = out.constant_flag ? 1 : a.grid.size();
    out.values.resize(M);
    for (std::size_t j = 0; j < M; ++j) {
        SignedAtomicMeasure d;
        d.box = a.node(j).box;
        d.vanishes_on_constants = out.vanishes_on_constants;
        for (const Atom& atm : a.node(j).atoms) d.atoms.push_back(atm);
        for (const Atom& atm : b.node(j).atoms) d.atoms.push_back({atm.x, -atm.w});
        out.values[j] = std::move(d);
    }
    return out;
}

FirstOrderSection first_order_section_gap(const FirstOrderSection& a,
                                          const FirstOrderSection& b) {
    if (!a.grid.same_as(b.grid))
        throw argument_error("first_order_section_gap: sections live on different grids");
    FirstOrderSection out;
    out.grid = a.grid;
    out.vanishes_on_constants = a.vanishes_on_constants && b.vanishes_on_constants;
    out.constant_flag = a.constant_flag && b.constant_flag;
    std::size_t M = out.constant_flag ? 1 : a.grid.size();
    out.values.resize(M);
    for (std::size_t j = 0; j < M; ++j) {
        FirstOrderDistribution d;
        d.box = a.node(j).box;
        d.vanishes_on_constants = out.vanishes_on_constants;
        for (const FoAtom& atm : a.node(j).atoms) d.atoms.push_back(atm);
        for (const FoAtom& atm : b.node(j).atoms)
            d.atoms.push_back({atm.x, -atm.w, -1.0 * atm.v});
        out.values[j] = std::move(d);
    }
    return out;
}

double observable_integral(const Section& sigma, const SkewObservable& phi,
                           const std::vector<double>& weight_at_nodes) {
    return integral_impl(sigma, phi, weight_at_nodes);
}

double observable_integral(const SignedSection& sigma, const SkewObservable& phi,
                           const std::vector<double>& weight_at_nodes) {
    return integral_impl(sigma, phi, weight_at_nodes);
}

ResponseSeed response_seed(const SystemFamily& family, double alpha0, double eps,
                           const Section& sigma_star, int budget) {
    if (eps == 0.0) throw argument_error("response_seed: eps must be nonzero");
    if (!family.make) throw argument_error("response_seed: family has no constructor");
    SkewSystem sys0 = family.make(alpha0);
    SkewSystem sys1 = family.make(alpha0 + eps);
    if (!sys0.grid.same_as(sigma_star.grid))
        throw argument_error("response_seed: section grid does not match the system");
    if (!sys0.grid.same_as(sys1.grid))
        throw argument_error("response_seed: family changes the grid with the parameter");
    // difference quotient of the operator applied to the same section; the
    // doubled budget keeps both images uncompacted until the subtraction
    int wide = 2 * budget;
    Section a = apply_K(sys1, sigma_star, wide);
    Section b = apply_K(sys0, sigma_star, wide);
    ResponseSeed out;
    out.tau = scale_signed_section(section_difference(a, b), 1.0 / eps);
    compact_signed_nodes(out.tau, wide);
    out.eps = eps;
    out.alpha0 = alpha0;
    return out;
}

double kdot_pair(const SkewSystem& sys, const Section& sigma_star, double omega,
                 const TestFunction& phi, const FirstOrderSection* nu_prime) {
    if (!phi.value || !phi.gradient)
        throw argument_error("kdot_pair: test function needs value and gradient");
    bool need_transport = sys.branches_move && !sigma_star.constant_flag;
    if (need_transport && !nu_prime)
        throw argument_error(
            "kdot_pair: branches move and the section varies over the base; "
            "the spatial tangent nu_prime is required");
    NeumaierSum total;
    for (const Branch& b : sys.branches) {
        if (!b.theta_dot || !b.weight_dot || !b.dg_dparam || !b.dg_domega)
            throw argument_error("kdot_pair: branch lacks parameter variation data");
        double th = b.theta(omega);
        double p = b.weight(omega);
        double pdot = b.weight_dot(omega);
        double thdot = b.theta_dot(omega);
        AtomicMeasure nu = interpolate(sigma_star, th);
        SmoothMap g = b.fibre(omega);
        NeumaierSum t1, t3, t4;
        for (const Atom& atm : nu.atoms) {
            Vec2 gx = g.value(atm.x);
            Vec2 grad = phi.gradient(gx);
            t1.add(atm.w * phi.value(gx));
            t3.add(atm.w * dot(grad, b.dg_dparam(omega, atm.x)));
            if (thdot != 0.0) t4.add(atm.w * dot(grad, b.dg_domega(omega, atm.x)));
        }
        total.add(pdot * t1.value());
        total.add(p * t3.value());
        total.add(p * thdot * t4.value());
        if (need_transport && thdot != 0.0) {
            FirstOrderDistribution nup = interpolate(*nu_prime, th);
            NeumaierSum t2;
            for (const FoAtom& atm : nup.atoms) {
                Vec2 gx = g.value(atm.x);
                t2.add(atm.w * phi.value(gx));
                t2.add(dot(g.jac(atm.x) * atm.v, phi.gradient(gx)));
            }
            total.add(p * thdot * t2.value());
        }
    }
    return total.value();
}

SampleDerivative neumann_resolvent(const SkewSystem& sys, const SignedSection& tau, double tol,
                                   int budget) {
    if (!(tol > 0.0)) throw argument_error("neumann_resolvent: tol must be positive");
    double lambda = contraction_certificate(sys);
    if (!sys.grid.same_as(tau.grid))
        throw argument_error("neumann_resolvent: seed grid does not match the system");
    TestBank bank = response_bank(sys.fibre_box);
    SampleDerivative out;
    out.tau_norm = sup_dual_norm(tau, bank, 3);
    if (!(out.tau_norm > 0.0)) {
        out.nu_dot = tau;
        return out;
    }
    double raw = std::log(tol * (1.0 - lambda) / out.tau_norm) / std::log(lambda);
    out.N = std::max(0, (int)std::ceil(raw - 1e-12));
    SignedSection sum = tau;
    SignedSection term = tau;
    for (int n = 1; n <= out.N; ++n) {
        term = apply_K(sys, term, budget);
        add_signed_inplace(sum, term);
    }
    out.nu_dot = std::move(sum);
    out.tail_bound = std::pow(lambda, out.N) * out.tau_norm / (1.0 - lambda);
    return out;
}

SampleDerivative sample_derivative(const SystemFamily& family, double alpha0, double tol,
                                   double eps, int budget) {
    if (family.nu_dot_path) {
        SampleDerivative out;
        out.nu_dot = family.nu_dot_path(alpha0, tol, eps, budget, &out.N, &out.tail_bound);
        return out;
    }
    SkewSystem sys = family.make(alpha0);
    FixedPointResult fp = fixed_point(sys, tol, 200, budget);
    ResponseSeed seed = response_seed(family, alpha0, eps, fp.sigma, budget);
    return neumann_resolvent(sys, seed.tau, tol, budget);
}

double skew_response(const SystemFamily& family, double alpha0, const SkewObservable& phi,
                     double tol, double eps, int budget) {
    if (!phi.value) throw argument_error("skew_response: observable has no value");
    SkewSystem sys = family.make(alpha0);
    std::vector<double> rho(sys.grid.size()), rho_dot(sys.grid.size(), 0.0);
    for (std::size_t j = 0; j < sys.grid.size(); ++j)
        rho[j] = sys.density.value(sys.grid.nodes[j]);
    if (sys.density.has_derivative()) {
        for (std::size_t j = 0; j < sys.grid.size(); ++j)
            rho_dot[j] = sys.density.value_dot(sys.grid.nodes[j]);
    } else if (family.moves_density) {
        if (!family.make)
            throw argument_error(
                "skew_response: base density varies with the parameter "
                "but no derivative is available");
        BaseDensity dd = density_derivative_fd(family, alpha0, std::min(std::abs(eps), 1e-3));
        for (std::size_t j = 0; j < sys.grid.size(); ++j)
            rho_dot[j] = dd.value(sys.grid.nodes[j]);
    }
    SampleDerivative sd = sample_derivative(family, alpha0, tol, eps, budget);
    if (!sd.nu_dot.grid.same_as(sys.grid))
        throw argument_error("skew_response: sample derivative grid mismatch");
    double term_sample = observable_integral(sd.nu_dot, phi, rho);
    Section sigma = family_fixed_section(family, sys, alpha0, tol, 200, budget);
    double term_density = observable_integral(sigma, phi, rho_dot);
    return term_sample + term_density;
}

double finite_difference_response(const SystemFamily& family, double alpha0, double eps,
                                  const SkewObservable& phi, double tol, int max_iter,
                                  int budget) {
    if (!(eps > 0.0)) throw argument_error("finite_difference_response: eps must be positive");
    auto assembled = [&](double a) {
        SkewSystem sys = family.make(a);
        Section sigma = family_fixed_section(family, sys, a, tol, max_iter, budget);
        std::vector<double> rho(sys.grid.size());
        for (std::size_t j = 0; j < sys.grid.size(); ++j)
            rho[j] = sys.density.value(sys.grid.nodes[j]);
        return observable_integral(sigma, phi, rho);
    };
    return (assembled(alpha0 + eps) - assembled(alpha0 - eps)) / (2.0 * eps);
}

FirstOrderSection apply_tangent(const SkewSystem& sys, const Section& sigma_star,
                                const FirstOrderSection& xi, int budget) {
    for (const Branch& b : sys.branches)
        if (!b.weight_prime || !b.dg_domega)
            throw argument_error("apply_tangent: branch lacks base-direction derivatives");
    if (!sys.grid.same_as(sigma_star.grid))
        throw argument_error("apply_tangent: section grid does not match the system");
    if (!sys.grid.same_as(xi.grid))
        throw argument_error("apply_tangent: input grid does not match the system");
    FirstOrderSection out;
    out.grid = sys.grid;
    out.vanishes_on_constants = true;
    out.values.resize(sys.grid.size());
    parallel_for(sys.grid.size(), [&](std::size_t j) {
        double w = sys.grid.nodes[j];
        std::vector<std::pair<double, FirstOrderDistribution>> terms;
        FirstOrderDistribution extra;
        extra.box = sys.fibre_box;
        for (const Branch& b : sys.branches) {
            double th = b.theta(w);
            double p = b.weight(w);
            double thp = b.theta_prime(w);
            SmoothMap g = b.fibre(w);
            terms.push_back({p * thp, push_forward(interpolate(xi, th), g)});
            double pprime = b.weight_prime(w);
            AtomicMeasure nu = interpolate(sigma_star, th);
            for (const Atom& atm : nu.atoms)
                extra.atoms.push_back(
                    {g.value(atm.x), pprime * atm.w, (p * atm.w * thp) * b.dg_domega(w, atm.x)});
        }
        terms.push_back({1.0, std::move(extra)});
        FirstOrderDistribution node = mix_first_order(terms);
        node.fix_mass_zero();
        if ((int)node.atoms.size() > budget) {
            node = compact(node, budget, CompactMode::grid).measure;
            node.fix_mass_zero();
        }
        out.values[j] = std::move(node);
    });
    return out;
}

TangentSection tangent_fixed_point(const SkewSystem& sys, const Section& sigma_star, double tol,
                                   int budget) {
    if (!(tol > 0.0)) throw argument_error("tangent_fixed_point: tol must be positive");
    double lambda = contraction_certificate(sys);
    TestBank bank = response_bank(sys.fibre_box);
    FirstOrderSection xi;
    xi.grid = sys.grid;
    xi.values.resize(sys.grid.size());
    for (auto& v : xi.values) v.box = sys.fibre_box;
    double threshold = tol * (1.0 - lambda) / std::max(lambda, 1e-12);
    const int max_iter = 200;
    for (int it = 0; it < max_iter; ++it) {
        FirstOrderSection next = apply_tangent(sys, sigma_star, xi, budget);
        double d = sup_dual_norm(first_order_section_gap(next, xi), bank, 3);
        xi = std::move(next);
        if (d <= threshold) {
            TangentSection out;
            FirstOrderSection probe = apply_tangent(sys, sigma_star, xi, budget);
            out.residual = sup_dual_norm(first_order_section_gap(probe, xi), bank, 3);
            out.xi = std::move(xi);
            return out;
        }
    }
    throw solver_error("tangent_fixed_point: no convergence within iteration cap");
}

std::string response_report_json(const ResponseReport& r) {
    nlohmann::json j;
    j["observable"] = r.observable;
    j["alpha0"] = r.alpha0;
    j["epsilon"] = r.epsilon;
    j["value_resolvent"] = r.value_resolvent;
    j["value_fd"] = r.value_fd;
    if (!std::isnan(r.value_analytic)) j["value_analytic"] = r.value_analytic;
    j["tail_bound"] = r.tail_bound;
    j["N_neumann"] = r.N_neumann;
    return j.dump(2);
}

}  // namespace skewresp
