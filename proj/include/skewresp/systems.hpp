#pragma once

#include <functional>
#include <string>
#include <vector>

#include "skewresp/measure.hpp"
#include "skewresp/section.hpp"

namespace skewresp {

// inverse branch of the base map together with the fibre data riding on it.
// theta/theta_prime/weight take the output point w; fibre(w) is the fibre map
// applied at the preimage theta(w).  *_dot closures are derivatives in the
// system's varying parameter, weight_prime is d/dw of the weight; a missing
// closure means "not available", a zero derivative must be an explicit closure.
struct Branch {
    int index = 0;
    std::function<double(double)> theta;
    std::function<double(double)> theta_prime;
    std::function<double(double)> weight;
    std::function<SmoothMap(double)> fibre;
    // forward base map restricted to this branch's region (one-sided at cuts)
    std::function<double(double)> region_forward;

    std::function<double(double)> theta_dot;
    std::function<double(double)> weight_dot;
    std::function<double(double)> weight_prime;
    // evaluated at (w, x) with the base point taken as theta(w)
    std::function<Vec2(double, const Vec2&)> dg_dparam;
    std::function<Vec2(double, const Vec2&)> dg_domega;

    double region_lo = 0.0, region_hi = 0.0;  // theta(Omega), tiles Omega
    double lip1 = 0.0, lip2 = 0.0, lip3 = 0.0;
};

// base interval density on a grid; rho_dot optional (empty when unknown)
struct BaseDensity {
    OmegaGrid grid;
    std::vector<double> rho;
    std::vector<double> rho_dot;
    bool loglog_interp = false;

    double value(double w) const;
    double value_dot(double w) const;
    bool has_derivative() const { return rho_dot.size() == rho.size() && !rho.empty(); }
    double integral() const;
    void validate(double tol = 1e-8) const;
};

struct SkewSystem {
    std::string name;
    double alpha = 0.0;        // value of the varying parameter
    std::string param_name;    // which parameter alpha refers to

    double omega_lo = 0.0, omega_hi = 1.0;
    DomainBox fibre_box;
    OmegaGrid grid;
    std::vector<Branch> branches;
    std::vector<double> region_cuts;  // interior region boundaries, sorted
    BaseDensity density;

    double lambda_certificate = 0.0;
    bool constant_mode = false;
    bool branches_move = false;  // varying parameter moves theta

    // descriptor fields (not all apply to every system)
    double descr_alpha = 0.0, descr_beta = 0.0, descr_lambda_fib = 0.0;
    int grid_M = 0;

    std::function<double(double)> f_forward;
    std::function<Vec2(double, const Vec2&)> g_forward;

    void validate(double weight_tol = 1e-10, double inverse_tol = 1e-9) const;
};

struct SystemFamily {
    std::string name;
    std::string param_name;
    double param_lo = 0.0, param_hi = 1.0;
    std::function<SkewSystem(double)> make;
    bool moves_branches = false;
    bool moves_weights = false;
    bool moves_fibres = false;
    bool moves_density = false;

    // set when the direct operator is not contracting and the fixed section /
    // sample derivative must be routed through the induced representation
    std::function<Section(double alpha, double tol, int budget)> fixed_section;
    std::function<SignedSection(double alpha0, double tol, double eps, int budget, int* N_out,
                                double* tail_out)> nu_dot_path;
};

enum class BernoulliVary { alpha, beta };

SkewSystem bernoulli_convolution(double alpha, double beta,
                                 BernoulliVary vary = BernoulliVary::alpha,
                                 int grid_M = 33);
SystemFamily bernoulli_family(double alpha, double beta, BernoulliVary vary);

SkewSystem affine_doubling_test(double lambda_fib, int grid_M = 129);
SystemFamily doubling_family(double lambda_fib);

// built from the induced return system; see the inducing module
SkewSystem intermittent_solenoid(double alpha, double lambda_fib, int n_max = 60,
                                 int grid_M = 257);
SystemFamily solenoid_family(double alpha, double lambda_fib, int n_max = 60,
                             int grid_M = 257);

double contraction_certificate(const SkewSystem& sys);

// piecewise-expanding interval map described by its inverse branches
struct BaseMap {
    double lo = 0.0, hi = 1.0;
    struct InvBranch {
        std::function<double(double)> theta;
        std::function<double(double)> theta_prime;
    };
    std::vector<InvBranch> branches;
};

// invariant density by collocation of the transfer operator on the grid;
// residual max_j |rho - sum_i rho(theta_i)|theta_i'|| must reach tol
BaseDensity ulam_density(const BaseMap& map, const OmegaGrid& grid, double tol = 1e-12,
                         int max_sweeps = 20000);

// central finite difference of the family's base density at alpha0
BaseDensity density_derivative_fd(const SystemFamily& family, double alpha0,
                                  double eps = 1e-3);

std::string system_descriptor_json(const SkewSystem& sys, int atoms_N = 0);

}  // namespace skewresp
