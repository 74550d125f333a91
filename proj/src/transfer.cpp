#include "skewresp/transfer.hpp"

#include <algorithm>
#include <cmath>

#include "skewresp/util.hpp"

namespace skewresp {

namespace {

struct NodeStats {
    std::size_t before = 0, after = 0;
    double drift = 0.0;
    double bound = 0.0;
};

void fold_stats(OperatorDiagnostics* diag, const std::vector<NodeStats>& stats,
                std::size_t branch_count) {
    if (!diag) return;
    diag->nodes = stats.size();
    diag->branch_contributions = branch_count;
    for (const auto& s : stats) {
        diag->atoms_before_max = std::max(diag->atoms_before_max, s.before);
        diag->atoms_after_max = std::max(diag->atoms_after_max, s.after);
        diag->weight_drift_max = std::max(diag->weight_drift_max, s.drift);
        diag->compaction_bound_max = std::max(diag->compaction_bound_max, s.bound);
        diag->compaction_bound_sum += s.bound;
    }
}

void check_preconditions(const SkewSystem& sys, const OmegaGrid& grid, int budget) {
    if (!grid.same_as(sys.grid))
        throw argument_error("apply_K: section does not live on the system grid");
    if (budget < static_cast<int>(sys.branches.size()))
        throw capacity_error("apply_K: budget below the branch count");
}

// one output node; `interp` reads the input section at a base point
template <typename M, typename Interp, typename Mixer, typename Compactor>
M node_image(const SkewSystem& sys, double w, const Interp& interp, const Mixer& mixer,
             const Compactor& compactor, int budget, NodeStats& st) {
    std::vector<std::pair<double, M>> terms;
    terms.reserve(sys.branches.size());
    for (const auto& b : sys.branches) {
        double th = b.theta(w);
        if (th < sys.omega_lo - 1e-12 || th > sys.omega_hi + 1e-12)
            throw domain_violation("apply_K: branch image leaves the base interval");
        M pulled = interp(th);
        terms.emplace_back(b.weight(w), push_forward(pulled, b.fibre(w)));
    }
    M mixed = mixer(terms);
    st.before = mixed.atoms.size();
    if (static_cast<int>(mixed.atoms.size()) > budget) {
        auto c = compactor(mixed, budget);
        st.bound = c.bound;
        mixed = std::move(c.measure);
    }
    st.after = mixed.atoms.size();
    return mixed;
}

}  // namespace

int default_budget(const SkewSystem& sys) { return sys.fibre_box.dim == 1 ? 256 : 1024; }

Section apply_K(const SkewSystem& sys, const Section& sigma, int budget,
                OperatorDiagnostics* diag) {
    check_preconditions(sys, sigma.grid, budget);
    Section out;
    out.grid = sigma.grid;
    out.constant_flag = sys.constant_mode && sigma.constant_flag;
    std::size_t M = out.constant_flag ? 1 : sigma.grid.size();
    out.values.resize(M);
    std::vector<NodeStats> stats(M);
    auto mixer = [](const std::vector<std::pair<double, AtomicMeasure>>& t) { return mix(t); };
    auto compactor = [](const AtomicMeasure& m, int b) {
        return compact(m, b, m.box.dim == 1 ? CompactMode::quantile : CompactMode::grid);
    };
    parallel_for(M, [&](std::size_t j) {
        double w = sigma.grid.nodes[out.constant_flag ? 0 : j];
        auto interp = [&](double th) { return interpolate(sigma, th); };
        AtomicMeasure m =
            node_image<AtomicMeasure>(sys, w, interp, mixer, compactor, budget, stats[j]);
        stats[j].drift = std::abs(m.total_weight() - 1.0);
        m.renormalize();
        out.values[j] = std::move(m);
    });
    fold_stats(diag, stats, sys.branches.size());
    return out;
}

SignedSection apply_K(const SkewSystem& sys, const SignedSection& sigma, int budget,
                      OperatorDiagnostics* diag) {
    check_preconditions(sys, sigma.grid, budget);
    SignedSection out;
    out.grid = sigma.grid;
    out.constant_flag = sys.constant_mode && sigma.constant_flag;
    out.vanishes_on_constants = sigma.vanishes_on_constants;
    std::size_t M = out.constant_flag ? 1 : sigma.grid.size();
    out.values.resize(M);
    std::vector<NodeStats> stats(M);
    auto mixer = [](const std::vector<std::pair<double, SignedAtomicMeasure>>& t) {
        return mix_signed(t);
    };
    auto compactor = [](const SignedAtomicMeasure& m, int b) {
        return compact(m, b, CompactMode::grid);
    };
    parallel_for(M, [&](std::size_t j) {
        double w = sigma.grid.nodes[out.constant_flag ? 0 : j];
        auto interp = [&](double th) { return interpolate(sigma, th); };
        SignedAtomicMeasure m =
            node_image<SignedAtomicMeasure>(sys, w, interp, mixer, compactor, budget, stats[j]);
        stats[j].drift = std::abs(m.total_weight());
        if (m.vanishes_on_constants) m.fix_mass_zero();
        out.values[j] = std::move(m);
    });
    fold_stats(diag, stats, sys.branches.size());
    return out;
}

FirstOrderSection apply_K(const SkewSystem& sys, const FirstOrderSection& xi, int budget,
                          OperatorDiagnostics* diag) {
    check_preconditions(sys, xi.grid, budget);
    FirstOrderSection out;
    out.grid = xi.grid;
    out.constant_flag = sys.constant_mode && xi.constant_flag;
    out.vanishes_on_constants = xi.vanishes_on_constants;
    std::size_t M = out.constant_flag ? 1 : xi.grid.size();
    out.values.resize(M);
    std::vector<NodeStats> stats(M);
    auto mixer = [](const std::vector<std::pair<double, FirstOrderDistribution>>& t) {
        return mix_first_order(t);
    };
    auto compactor = [](const FirstOrderDistribution& m, int b) {
        return compact(m, b, CompactMode::grid);
    };
    parallel_for(M, [&](std::size_t j) {
        double w = xi.grid.nodes[out.constant_flag ? 0 : j];
        auto interp = [&](double th) { return interpolate(xi, th); };
        FirstOrderDistribution m =
            node_image<FirstOrderDistribution>(sys, w, interp, mixer, compactor, budget, stats[j]);
        stats[j].drift = std::abs(m.total_weight());
        if (m.vanishes_on_constants) m.fix_mass_zero();
        out.values[j] = std::move(m);
    });
    fold_stats(diag, stats, sys.branches.size());
    return out;
}

Section apply_K_power(const SkewSystem& sys, const Section& sigma, int k, int budget) {
    if (k < 0) throw argument_error("apply_K_power: negative power");
    Section cur = sigma;
    for (int i = 0; i < k; ++i) cur = apply_K(sys, cur, budget);
    return cur;
}

SignedSection apply_K_power(const SkewSystem& sys, const SignedSection& sigma, int k,
                            int budget) {
    if (k < 0) throw argument_error("apply_K_power: negative power");
    SignedSection cur = sigma;
    for (int i = 0; i < k; ++i) cur = apply_K(sys, cur, budget);
    return cur;
}

FixedPointResult fixed_point(const SkewSystem& sys, double tol, int max_iter, int budget,
                             const Section* init) {
    double lambda = contraction_certificate(sys);
    if (!(tol > 0.0)) throw argument_error("fixed_point: tol must be positive");
    Section cur;
    if (init) {
        cur = *init;
        if (!cur.grid.same_as(sys.grid))
            throw argument_error("fixed_point: init section grid mismatch");
    } else {
        AtomicMeasure d0;
        d0.box = sys.fibre_box;
        d0.atoms.push_back({sys.fibre_box.x0, 1.0});
        cur = constant_section(sys.grid, d0);
    }
    double threshold = tol * (1.0 - lambda) / lambda;
    ConvergenceReport report;
    for (int n = 0; n < max_iter; ++n) {
        Section next = apply_K(sys, cur, budget);
        double d = sup_metric(next, cur);
        report.distances.push_back(d);
        cur = std::move(next);
        if (d <= threshold) {
            report.finalize();
            return {std::move(cur), std::move(report)};
        }
    }
    report.finalize();
    throw solver_error("fixed_point: max_iter exceeded, terminal distance " +
                       format_double(report.terminal_distance));
}

double duality_residual(const SkewSystem& sys, const Section& sigma, const SkewObservable& phi,
                        int quad_M) {
    if (!phi.value) throw argument_error("duality_residual: observable lacks a value closure");
    // region-split composite trapezoid.  The forward-composed integrand jumps at
    // region cuts, so each region is integrated with its own one-sided branch
    // data; both sides share nodes and weights, so constants cancel exactly.
    std::vector<const Branch*> order;
    for (const auto& b : sys.branches) order.push_back(&b);
    std::sort(order.begin(), order.end(),
              [](const Branch* a, const Branch* b) { return a->region_lo < b->region_lo; });

    std::size_t base_cells = std::max<std::size_t>(1, sys.grid.size() - 1);
    int refine = std::max(1, static_cast<int>(quad_M / base_cells));

    NeumaierSum diff;
    for (const Branch* reg : order) {
        if (!reg->region_forward)
            throw argument_error("duality_residual: branch lacks a forward map");
        std::vector<double> nodes;
        nodes.push_back(reg->region_lo);
        for (double w : sys.grid.nodes)
            if (w > reg->region_lo + 1e-14 && w < reg->region_hi - 1e-14) nodes.push_back(w);
        nodes.push_back(reg->region_hi);
        std::vector<double> fine;
        for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
            for (int r = 0; r < refine; ++r)
                fine.push_back(nodes[i] + (nodes[i + 1] - nodes[i]) * r / refine);
        fine.push_back(nodes.back());

        std::vector<double> integrand(fine.size(), 0.0);
        parallel_for(fine.size(), [&](std::size_t q) {
            double w = fine[q];
            double rho = sys.density.value(w);
            // operator image at w paired with Phi(w, .)
            NeumaierSum left;
            for (const auto& b : sys.branches) {
                double th = b.theta(w);
                AtomicMeasure pulled = interpolate(sigma, th);
                SmoothMap g = b.fibre(w);
                double p = b.weight(w);
                for (const auto& a : pulled.atoms) left.add(p * a.w * phi.value(w, g.value(a.x)));
            }
            // Phi composed with the forward map of this region
            double fw = reg->region_forward(w);
            SmoothMap g_here = reg->fibre(fw);  // fibre at theta(f(w)) = w
            AtomicMeasure here = interpolate(sigma, w);
            NeumaierSum right;
            for (const auto& a : here.atoms) right.add(a.w * phi.value(fw, g_here.value(a.x)));
            integrand[q] = (left.value() - right.value()) * rho;
        });
        for (std::size_t i = 0; i + 1 < fine.size(); ++i)
            diff.add(0.5 * (fine[i + 1] - fine[i]) * (integrand[i] + integrand[i + 1]));
    }
    return std::abs(diff.value());
}

}  // namespace skewresp
