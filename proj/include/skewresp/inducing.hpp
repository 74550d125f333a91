#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skewresp/systems.hpp"
#include "skewresp/transfer.hpp"

namespace skewresp {

// Intermittent base map on [0,1] with polynomial tangency at 0:
//   w (1 + 2^alpha w^alpha) on [0,1/2],  2w - 1 on (1/2,1].
// The boundary point 1/2 belongs to the left branch, so "being in the
// reference interval" below always means w > 1/2 strictly.
double lsv_forward(double alpha, double w);
double lsv_forward_prime(double alpha, double w);

// Inverse of the left branch on [0,1]: solves y(1 + 2^alpha y^alpha) = v.
// Monotone bisection to 1e-12 followed by two Newton polish steps; an
// optional warm-start guess skips the bisection when it already brackets.
double lsv_left_inverse(double alpha, double v, double guess = -1.0);

// First return time of w in (1/2,1] to (1/2,1].  Throws solver_error if the
// orbit has not returned after 1e7 steps.
int return_time(double alpha, double w);

// Left-branch inverse orbit seeded at the target point:
//   y[0] = w,  y[j] = left inverse of y[j-1].
// The word-n inverse applies the right-branch inverse last,
//   theta(n) = (y[n] + 1) / 2,
// and carries the full derivative data along the chain:
//   dy   = d/dw,  d2y = d^2/dw^2,  da = d/dalpha,  db = d/dalpha of dy.
// Arrays grow on demand via extend(); entries never change once computed,
// so a chain can be cached per base point and reused across words.
class InverseChain {
public:
    InverseChain(double alpha, double w, bool with_second, bool with_alpha);

    // idempotent; accessors extend on demand, so the arrays only ever grow
    void extend(std::size_t depth) const;

    double theta(std::size_t n) const {
        extend(n);
        return 0.5 * (y_[n] + 1.0);
    }
    double theta_prime(std::size_t n) const {
        extend(n);
        return 0.5 * dy_[n];
    }
    double theta_second(std::size_t n) const;
    double theta_dot(std::size_t n) const;
    double theta_prime_dot(std::size_t n) const;
    std::size_t depth() const { return y_.empty() ? 0 : y_.size() - 1; }

    // forward orbit of theta(n): orbit_point(n, 0) = theta(n), then
    // orbit_point(n, m) = y[n + 1 - m] for m = 1..n (the left-branch tail);
    // one more forward step returns to the seed w.
    double orbit_point(std::size_t n, std::size_t m) const;
    double orbit_prime(std::size_t n, std::size_t m) const;
    double orbit_dot(std::size_t n, std::size_t m) const;

    double alpha() const { return alpha_; }
    double base_point() const { return w_; }
    bool with_second() const { return second_; }
    bool with_alpha() const { return alpha_terms_; }

private:
    double alpha_ = 0.5;
    double w_ = 0.0;
    bool second_ = false;
    bool alpha_terms_ = false;
    mutable std::vector<double> y_, dy_, d2y_, da_, db_;
};

// Single return-word branch of the induced map on (1/2,1].  The forward
// check iterates the base map length() times and reports the roundtrip gap.
struct InducedBranch {
    int word = 0;  // number of left-branch steps after the right-branch step
    double alpha = 0.5;
    int length() const { return word + 1; }
    double theta(double w) const;
    double theta_prime(double w) const;
    double region_lo = 0.5, region_hi = 1.0;  // cylinder of the word
    double forward(double th) const;          // base map iterated length() times
    double forward_check(double w) const;     // |forward(theta(w)) - w|
};

InducedBranch induced_branch(double alpha, int word, double tol = 1e-9);

// Collocation fixed-point density of the induced base map on a uniform grid
// over [1/2,1].  dense_words controls how many return words enter the sweep;
// the dropped words are completed by a closing power-law branch so the sweep
// stays stochastic within the collocation tolerance.  Unit trapezoid mass.
BaseDensity induced_base_density(double alpha, int grid_M = 257,
                                 int dense_words = 2000, double tol = 1e-6,
                                 int max_sweeps = 20000);

// Shared data for one inducing run: the induced invariant density, the mean
// return time E (Kac), and the word masses of the operator-level truncation.
struct InducingScheme {
    double alpha = 0.5;
    double lambda_fib = 0.2;
    int n_max = 60;         // words retained by the induced operator
    int dense_words = 2000; // words retained by the density sweep
    BaseDensity rho_bar;    // induced invariant density on [1/2,1]
    double E = 0.0;         // mean return time including the power-law tail
    double E_retained = 0.0;       // contribution of retained words only
    std::vector<double> word_mass; // rho_bar mass of words 0..dense_words-1
    double word_tail = 0.0;        // density mass beyond the retained words
};

InducingScheme make_inducing_scheme(double alpha, double lambda_fib,
                                    int n_max = 60, int grid_M = 257,
                                    int dense_words = 2000);

// Induced skew product over [1/2,1]: one branch per return word 0..n_max,
// fibre contraction composed along the return orbit.  Branch weights are
// renormalized node-wise so they sum to one; the dropped raw mass is the
// scheme's word_tail at operator depth.  Throws argument_error when that
// tail exceeds mass_tol.  with_alpha_derivatives adds theta_dot, weight_dot
// and dg_dparam closures (the density slope in alpha is a central
// difference of two density sweeps).
SkewSystem induced_system(const InducingScheme& scheme, int grid_M = 257,
                          bool with_alpha_derivatives = false,
                          double mass_tol = 1e-3);
SkewSystem induced_system(double alpha, double lambda_fib, int n_max = 60,
                          int grid_M = 257);

SystemFamily induced_family(double lambda_fib, int n_max = 60, int grid_M = 257);

// Residual of the identity that one induced transfer step equals the sum of
// full-map transfer powers restricted by the return time: the k-th term
// pushes nu restricted to {return time = k} through k full steps.  Words
// beyond k_cap are dropped, so the residual carries the tail mass of nubar
// over deep cylinders.  Reported as the sup over reference grid nodes of the
// node Wasserstein distance between the two sides.
double induced_operator_identity_check(double alpha, double lambda_fib,
                                       const Section& nubar, int k_cap,
                                       int budget = 0);

struct UnfoldReport {
    int k_max = 0;
    // raw mass the truncation dropped, per node: 1 - sum of level weights
    double deficit_max = 0.0;
    double deficit_mean = 0.0;
    double E = 0.0;                  // Kac normalizer of the scheme
    std::vector<double> level_mass;  // node-averaged raw weight of level k
};

// Unfolding: transports a section over the reference interval [1/2,1] to a
// section over the full base.  At a full-base node w < 1/2 the level-k term
// is the single return word reaching w in k left-branch steps; its raw
// weight is that word's density contribution at w divided by the total deep
// sum, so retained weights are renormalized per node and the dropped tail
// goes to the report.  Nodes in [1/2,1] copy nubar (level 0).
// tail_tol bounds the per-node dropped raw mass; the default never fires
// since deficits are below one by construction.
Section unfold(const InducingScheme& scheme, const Section& nubar,
               const OmegaGrid& grid, int k_max, int budget = 0,
               UnfoldReport* report = nullptr, double tail_tol = 1.0);

// Signed variant: raw truncated weights, no renormalization.  Each level
// term keeps fibre mass proportional to the node mass of nubar, so a
// mass-zero input stays mass-zero up to the truncation deficit.
SignedSection unfold_signed(const InducingScheme& scheme,
                            const SignedSection& nubar, const OmegaGrid& grid,
                            int k_max, int budget = 0,
                            UnfoldReport* report = nullptr,
                            double tail_tol = 1.0);

struct UnfoldedDensity {
    BaseDensity density;  // conditioned to the grid: unit trapezoid mass
    double E = 0.0;       // Kac mean return time with tail correction
    double pre_norm_integral = 0.0;  // grid mass before the final rescale
    int words = 0;                   // return words summed
};

// Invariant density of the full base map, assembled from the induced density
// by summing word contributions and dividing by E.  The grid sets where the
// density is represented; mass below grid.lo is excluded by the final
// normalization (the values keep the raw shape, so log-log slopes are
// unaffected).  Throws solver_error if the pre-normalization drift exceeds
// what the word truncation explains.
UnfoldedDensity unfolded_density(double alpha, const OmegaGrid& grid,
                                 int words = 4000);

// Graded full-base grid for the intermittent solenoid: geometric spacing
// ratio 1.1 from omega_min with steps capped at 1/grid_M.
OmegaGrid solenoid_grid(int grid_M = 257, double omega_min = 1e-4);

struct TailStatistics {
    double alpha = 0.5;
    long long samples = 0;
    std::uint64_t seed = 0;
    std::vector<long long> survivors;  // survivors[k] = #{return time > k}
    double slope = 0.0;                // log-log least squares over [10, k_star]
    int k_star = 0;                    // last k with at least 100 survivors
    std::string csv() const;           // header k,survival,count
};

// Monte Carlo survival function of the return time under uniform draws from
// (1/2,1].  samples must be at least 1e5.
TailStatistics tail_statistics(double alpha, long long samples,
                               std::uint64_t seed);

// CSV with header omega,rho or omega,rho,rho_dot when a derivative is stored.
std::string density_csv(const BaseDensity& density);

}  // namespace skewresp
