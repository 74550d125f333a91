#pragma once

#include "skewresp/section.hpp"
#include "skewresp/systems.hpp"

namespace skewresp {

struct OperatorDiagnostics {
    std::size_t nodes = 0;
    std::size_t branch_contributions = 0;  // per node
    std::size_t atoms_before_max = 0;
    std::size_t atoms_after_max = 0;
    double weight_drift_max = 0.0;       // |node mass - target| before renormalization
    double compaction_bound_max = 0.0;
    double compaction_bound_sum = 0.0;   // summed over nodes, feeds the contraction slack
};

// observable on Omega x X; grad_x optional unless a first-order pairing needs it
struct SkewObservable {
    std::string name;
    std::function<double(double, const Vec2&)> value;
    std::function<Vec2(double, const Vec2&)> grad_x;
};

Section apply_K(const SkewSystem& sys, const Section& sigma, int budget,
                OperatorDiagnostics* diag = nullptr);
SignedSection apply_K(const SkewSystem& sys, const SignedSection& sigma, int budget,
                      OperatorDiagnostics* diag = nullptr);
FirstOrderSection apply_K(const SkewSystem& sys, const FirstOrderSection& xi, int budget,
                          OperatorDiagnostics* diag = nullptr);

Section apply_K_power(const SkewSystem& sys, const Section& sigma, int k, int budget);
SignedSection apply_K_power(const SkewSystem& sys, const SignedSection& sigma, int k, int budget);

int default_budget(const SkewSystem& sys);

struct FixedPointResult {
    Section sigma;
    ConvergenceReport report;
};

// Banach iteration with the a-posteriori stop d_n <= tol*(1-lambda)/lambda
FixedPointResult fixed_point(const SkewSystem& sys, double tol, int max_iter, int budget,
                             const Section* init = nullptr);

// |<<K sigma, Phi>> - <<sigma, Phi o T>>|, both sides region-split trapezoid against rho
double duality_residual(const SkewSystem& sys, const Section& sigma, const SkewObservable& phi,
                        int quad_M);

}  // namespace skewresp
