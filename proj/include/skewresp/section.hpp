#pragma once

#include <string>
#include <vector>

#include "skewresp/measure.hpp"

namespace skewresp {

// discretized base interval with sorted interior nodes
struct OmegaGrid {
    double lo = 0.0, hi = 1.0;
    std::vector<double> nodes;

    static OmegaGrid uniform(double lo, double hi, int M);
    // geometric refinement toward lo (node spacing grows by `ratio` away from lo)
    static OmegaGrid graded(double lo, double hi, double first_step, double ratio,
                            double max_step);

    std::size_t size() const { return nodes.size(); }
    void validate() const;
    bool same_as(const OmegaGrid& o, double tol = 1e-12) const;
    // index j with nodes[j] <= w <= nodes[j+1]; clamps w into the node span
    std::size_t bracket(double w, double* lambda_left) const;
};

// probability-valued section over the grid
struct Section {
    OmegaGrid grid;
    std::vector<AtomicMeasure> values;  // size 1 when constant_flag
    bool constant_flag = false;

    const AtomicMeasure& node(std::size_t j) const;
    AtomicMeasure& node(std::size_t j);
    void validate(double tol = 1e-12) const;
};

struct SignedSection {
    OmegaGrid grid;
    std::vector<SignedAtomicMeasure> values;
    bool constant_flag = false;
    bool vanishes_on_constants = true;

    const SignedAtomicMeasure& node(std::size_t j) const;
    SignedAtomicMeasure& node(std::size_t j);
    void validate(double tol = 1e-12) const;
};

struct FirstOrderSection {
    OmegaGrid grid;
    std::vector<FirstOrderDistribution> values;
    bool constant_flag = false;
    bool vanishes_on_constants = true;

    const FirstOrderDistribution& node(std::size_t j) const;
    FirstOrderDistribution& node(std::size_t j);
};

struct ConvergenceReport {
    std::vector<double> distances;
    double lambda_hat = 0.0;
    bool lambda_valid = false;  // needs >= 4 usable tail ratios
    int iterations = 0;
    double terminal_distance = 0.0;

    void finalize();
    std::string to_csv() const;  // iter,dist,ratio
};

struct BaseDensity;  // systems module

double sup_metric(const Section& a, const Section& b);
double sup_dual_norm(const SignedSection& s, const TestBank& bank, int k);
double sup_dual_norm(const FirstOrderSection& s, const TestBank& bank, int k);
double l1_dual_norm(const SignedSection& s, const TestBank& bank, int k,
                    const BaseDensity& density);

AtomicMeasure interpolate(const Section& s, double omega);
SignedAtomicMeasure interpolate(const SignedSection& s, double omega);
FirstOrderDistribution interpolate(const FirstOrderSection& s, double omega);

Section constant_section(const OmegaGrid& grid, const AtomicMeasure& mu);
SignedSection constant_signed_section(const OmegaGrid& grid, const SignedAtomicMeasure& mu);

// node-wise difference (a - b) as a signed section
SignedSection section_difference(const Section& a, const Section& b);

// directory layout: grid.csv, node_<j>.csv, meta.json
void save_section(const std::string& dir, const Section& s);
void save_section(const std::string& dir, const SignedSection& s);
Section load_section(const std::string& dir);
SignedSection load_signed_section(const std::string& dir);

}  // namespace skewresp
