#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "skewresp/util.hpp"

namespace skewresp {

// Fibre-space domain. dim is 1 or 2; 1D data lives on the x axis with y == 0.
// x0 is the base point entering the norm normalizations; default: box center.
struct DomainBox {
    int dim = 1;
    Vec2 lo{-1.0, 0.0}, hi{1.0, 0.0};
    Vec2 x0{0.0, 0.0};

    static DomainBox interval(double a, double b);
    static DomainBox rectangle(double ax, double bx, double ay, double by);

    bool contains(Vec2 p, double tol = 1e-9) const;
    Vec2 clamp(Vec2 p) const;
    double diameter() const;
    void validate() const;
    bool same_as(const DomainBox& o) const;
};

struct Atom {
    Vec2 x;
    double w = 0.0;
};

// probability: weights >= 0, total 1 (within 1e-12)
struct AtomicMeasure {
    DomainBox box;
    std::vector<Atom> atoms;

    double total_weight() const;
    void renormalize();
    void validate(double tol = 1e-12) const;
};

struct SignedAtomicMeasure {
    DomainBox box;
    std::vector<Atom> atoms;
    bool vanishes_on_constants = true;

    double total_weight() const;
    double total_abs_weight() const;
    // removes additive drift by adjusting the dominant atom (keeps mass exactly 0)
    void fix_mass_zero();
    void validate(double tol = 1e-12) const;
};

struct FoAtom {
    Vec2 x;
    double w = 0.0;  // scalar weight
    Vec2 v;          // cotangent weight, pairs with the gradient
};

// functional phi -> sum w*phi(x) + v.grad phi(x)
struct FirstOrderDistribution {
    DomainBox box;
    std::vector<FoAtom> atoms;
    bool vanishes_on_constants = true;

    double total_weight() const;
    double total_abs_weight() const;
    void fix_mass_zero();
};

// map X -> X with Jacobian; lip is a certified bound on the Jacobian norm
struct SmoothMap {
    std::function<Vec2(const Vec2&)> value;
    std::function<Mat2(const Vec2&)> jac;
    double lip = 0.0;

    static SmoothMap affine(const Mat2& A, const Vec2& t);
    static SmoothMap identity();
};

// test function with certified derivative bounds d1 >= sup|Dphi|,
// d2 >= sup|D2phi|, d3 >= sup|D3phi| over the box
struct TestFunction {
    std::string name;
    std::function<double(const Vec2&)> value;
    std::function<Vec2(const Vec2&)> gradient;
    std::function<Mat2(const Vec2&)> hessian;
    double d1 = 0.0, d2 = 0.0, d3 = 0.0;
    double value_at_x0 = 0.0;

    double seminorm(int k) const;
};

// finite family, each member certified with seminorm(k) <= 1
struct TestBank {
    DomainBox box;
    int k = 3;
    std::vector<TestFunction> members;

    void validate() const;
};

// checks certified bounds against sampled derivatives on a probe grid
bool certify(const TestFunction& phi, const DomainBox& box, int probes_per_axis,
             double slack = 1e-9);

// ---- operations -----------------------------------------------------------

AtomicMeasure push_forward(const AtomicMeasure& mu, const SmoothMap& h);
SignedAtomicMeasure push_forward(const SignedAtomicMeasure& mu, const SmoothMap& h);
FirstOrderDistribution push_forward(const FirstOrderDistribution& xi, const SmoothMap& h);

double pair(const AtomicMeasure& mu, const TestFunction& phi);
double pair(const SignedAtomicMeasure& mu, const TestFunction& phi);
double pair(const FirstOrderDistribution& xi, const TestFunction& phi);

// exact W1; 1D by CDF quantile coupling, 2D by exact min-cost transport
// (supports up to 1024 atoms per side, larger inputs raise capacity_error)
double wasserstein1(const AtomicMeasure& mu, const AtomicMeasure& nu);

// certified lower bound of the dual C^k norm over the bank
double dual_norm_estimate(const SignedAtomicMeasure& xi, const TestBank& bank, int k);
double dual_norm_estimate(const FirstOrderDistribution& xi, const TestBank& bank, int k);

enum class CompactMode { merge, quantile, grid };

template <class M>
struct Compacted {
    M measure;
    double bound = 0.0;  // transport bound: W1(input, output) <= bound
};

Compacted<AtomicMeasure> compact(const AtomicMeasure& mu, int budget, CompactMode mode);
Compacted<SignedAtomicMeasure> compact(const SignedAtomicMeasure& mu, int budget,
                                       CompactMode mode);
Compacted<FirstOrderDistribution> compact(const FirstOrderDistribution& xi, int budget,
                                          CompactMode mode);

AtomicMeasure mix(const std::vector<std::pair<double, AtomicMeasure>>& terms);
SignedAtomicMeasure mix_signed(const std::vector<std::pair<double, SignedAtomicMeasure>>& terms);
FirstOrderDistribution mix_first_order(
    const std::vector<std::pair<double, FirstOrderDistribution>>& terms);

// N equal-weight atoms at the (j-1/2)/N quantiles (1D only)
AtomicMeasure quantile_discretization(const AtomicMeasure& mu, int N);

// trig + polynomial family, each rescaled to certified seminorm(k) <= 1;
// contains the coordinate functions (slope 1) and their rescaled squares
TestBank standard_bank(const DomainBox& box, int k, int size);

// single coordinate/monomial helpers used all over the tests
TestFunction coordinate_function(const DomainBox& box, int axis);  // x - x0 (slope 1)
TestFunction constant_function(const DomainBox& box, double c);

// ---- serialization ---------------------------------------------------------
// header: x[,y],w[,vx[,vy]]

std::string to_csv(const AtomicMeasure& mu);
std::string to_csv(const SignedAtomicMeasure& mu);
std::string to_csv(const FirstOrderDistribution& xi);

AtomicMeasure atomic_measure_from_csv(const std::string& text, const DomainBox& box);
SignedAtomicMeasure signed_measure_from_csv(const std::string& text, const DomainBox& box);
FirstOrderDistribution first_order_from_csv(const std::string& text, const DomainBox& box);

}  // namespace skewresp
