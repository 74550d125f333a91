#pragma once

#include "skewresp/transfer.hpp"

namespace skewresp {

struct ResponseSeed {
    SignedSection tau;
    double eps = 0.0;
    double alpha0 = 0.0;
};

struct SampleDerivative {
    SignedSection nu_dot;
    int N = 0;              // Neumann truncation order
    double tail_bound = 0.0;
    double tau_norm = 0.0;
};

struct TangentSection {
    FirstOrderSection xi;
    double residual = 0.0;  // ||T xi - xi|| estimate
};

// (K_{a0+eps} - K_{a0}) sigma* / eps, node-wise, compacted signed-grid
ResponseSeed response_seed(const SystemFamily& family, double alpha0, double eps,
                           const Section& sigma_star, int budget);

// analytic <(dK/dparam sigma*)_w, phi>; nu_prime is the spatial tangent of
// sigma*, only needed when branches move and the section is not constant
double kdot_pair(const SkewSystem& sys, const Section& sigma_star, double omega,
                 const TestFunction& phi, const FirstOrderSection* nu_prime = nullptr);

SampleDerivative neumann_resolvent(const SkewSystem& sys, const SignedSection& tau, double tol,
                                   int budget);

SampleDerivative sample_derivative(const SystemFamily& family, double alpha0, double tol,
                                   double eps, int budget);

// d/dparam of the skew integral: sample term + base-density term
double skew_response(const SystemFamily& family, double alpha0, const SkewObservable& phi,
                     double tol, double eps, int budget);

// central difference of the fully assembled integral; the independent oracle
double finite_difference_response(const SystemFamily& family, double alpha0, double eps,
                                  const SkewObservable& phi, double tol, int max_iter,
                                  int budget);

// one application of the tangent operator at sigma*
FirstOrderSection apply_tangent(const SkewSystem& sys, const Section& sigma_star,
                                const FirstOrderSection& xi, int budget);

TangentSection tangent_fixed_point(const SkewSystem& sys, const Section& sigma_star, double tol,
                                   int budget);

// node-wise gaps as sections of the same kind
SignedSection signed_section_gap(const SignedSection& a, const SignedSection& b);
FirstOrderSection first_order_section_gap(const FirstOrderSection& a, const FirstOrderSection& b);
SignedSection scale_signed_section(const SignedSection& s, double c);

// quadrature of <sigma_w, Phi(w,.)> (or a signed section) against weights(w) dw
double observable_integral(const Section& sigma, const SkewObservable& phi,
                           const std::vector<double>& weight_at_nodes);
double observable_integral(const SignedSection& sigma, const SkewObservable& phi,
                           const std::vector<double>& weight_at_nodes);

struct ResponseReport {
    std::string observable;
    double alpha0 = 0.0;
    double epsilon = 0.0;
    double value_resolvent = 0.0;
    double value_fd = 0.0;
    double value_analytic = std::numeric_limits<double>::quiet_NaN();
    double tail_bound = 0.0;
    int N_neumann = 0;
};

std::string response_report_json(const ResponseReport& r);

}  // namespace skewresp
