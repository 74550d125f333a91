#include "skewresp/inducing.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include "skewresp/measure.hpp"
#include "skewresp/section.hpp"
#include "skewresp/util.hpp"

namespace skewresp {

namespace {

constexpr std::size_t npos = (std::size_t)-1;

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw argument_error("intermittent base: alpha must lie in (0,1)");
}

// left branch u (1 + (2u)^alpha); the (2u)^alpha form keeps f(1/2) = 1 exact
double left_value(double alpha, double u) {
    return u * (1.0 + std::pow(2.0 * u, alpha));
}

double left_prime(double alpha, double u) {
    return 1.0 + (1.0 + alpha) * std::pow(2.0 * u, alpha);
}

}  // namespace

double lsv_forward(double alpha, double w) {
    check_alpha(alpha);
    if (w < -1e-12 || w > 1.0 + 1e-12)
        throw argument_error("lsv_forward: point outside [0,1]");
    w = std::clamp(w, 0.0, 1.0);
    if (w <= 0.5) return left_value(alpha, w);
    return 2.0 * w - 1.0;
}

double lsv_forward_prime(double alpha, double w) {
    check_alpha(alpha);
    if (w < -1e-12 || w > 1.0 + 1e-12)
        throw argument_error("lsv_forward_prime: point outside [0,1]");
    w = std::clamp(w, 0.0, 1.0);
    if (w <= 0.5) return left_prime(alpha, w);
    return 2.0;
}

double lsv_left_inverse(double alpha, double v, double guess) {
    check_alpha(alpha);
    if (v < -1e-12 || v > 1.0 + 1e-12)
        throw argument_error("lsv_left_inverse: value outside [0,1]");
    v = std::clamp(v, 0.0, 1.0);
    if (v == 0.0) return 0.0;
    // root of f(u) = v in [0,1/2]; u <= v and the gap v - u equals 2^a u^(1+a)
    double hi = std::min(v, 0.5);
    double lo = std::max(0.0, v - std::pow(2.0 * v, alpha) * v);
    if (guess > lo && guess < hi) {
        if (left_value(alpha, guess) >= v)
            hi = guess;
        else
            lo = guess;
    }
    while (hi - lo > 1e-12) {
        double mid = 0.5 * (lo + hi);
        if (left_value(alpha, mid) >= v)
            hi = mid;
        else
            lo = mid;
    }
    double u = 0.5 * (lo + hi);
    for (int it = 0; it < 2; ++it) {
        double p = std::pow(2.0 * u, alpha);
        double r = u * (1.0 + p) - v;
        u = std::clamp(u - r / (1.0 + (1.0 + alpha) * p), 0.0, 0.5);
    }
    return u;
}

int return_time(double alpha, double w) {
    check_alpha(alpha);
    if (!(w >= 0.5 - 1e-12 && w <= 1.0 + 1e-12))
        throw argument_error("return_time: point outside the reference interval");
    w = std::clamp(w, 0.5, 1.0);
    const long long cap = 10000000;
    double v = w > 0.5 ? 2.0 * w - 1.0 : left_value(alpha, w);
    for (long long k = 1; k <= cap; ++k) {
        if (v > 0.5) return (int)k;
        v = left_value(alpha, v);
    }
    throw solver_error("return_time: no return within 1e7 steps");
}

InverseChain::InverseChain(double alpha, double w, bool with_second, bool with_alpha)
    : alpha_(alpha), w_(w), second_(with_second), alpha_terms_(with_alpha) {
    check_alpha(alpha);
    if (!(w >= 0.0 && w <= 1.0 + 1e-12))
        throw argument_error("InverseChain: seed must lie in [0,1]");
    w_ = std::min(std::max(w_, 0.0), 1.0);
    y_.push_back(w_);
    dy_.push_back(1.0);
    if (second_) d2y_.push_back(0.0);
    if (alpha_terms_) {
        da_.push_back(0.0);
        db_.push_back(0.0);
    }
}

void InverseChain::extend(std::size_t depth) const {
    while (y_.size() <= depth) {
        std::size_t j = y_.size();
        double prev = y_[j - 1];
        // the gaps shrink monotonically, so extrapolating the last gap
        // brackets the root from below
        double guess = j >= 2 ? prev - (y_[j - 2] - prev) : -1.0;
        double u = lsv_left_inverse(alpha_, prev, guess);
        double p = std::pow(2.0 * u, alpha_);
        double fp = 1.0 + (1.0 + alpha_) * p;
        // at the neutral fixed point u = 0 the chain stays put; the limit
        // values below keep first-order and parameter terms exact there
        // (curvature is unbounded at 0 and is not tracked on that orbit)
        double fpp = u > 0.0 ? (1.0 + alpha_) * alpha_ * p / u : 0.0;
        y_.push_back(u);
        dy_.push_back(dy_[j - 1] / fp);
        if (second_) d2y_.push_back((d2y_[j - 1] - fpp * dy_[j] * dy_[j]) / fp);
        if (alpha_terms_) {
            double l = u > 0.0 ? std::log(2.0 * u) : 0.0;
            double fa = u * p * l;
            double fpa = u > 0.0 ? p * ((1.0 + alpha_) * l + 1.0) : 0.0;
            da_.push_back((da_[j - 1] - fa) / fp);
            db_.push_back((db_[j - 1] - dy_[j] * (fpa + fpp * da_[j])) / fp);
        }
    }
}

double InverseChain::theta_second(std::size_t n) const {
    if (!second_) throw argument_error("InverseChain: second derivatives not tracked");
    extend(n);
    return 0.5 * d2y_[n];
}

double InverseChain::theta_dot(std::size_t n) const {
    if (!alpha_terms_) throw argument_error("InverseChain: alpha derivatives not tracked");
    extend(n);
    return 0.5 * da_[n];
}

double InverseChain::theta_prime_dot(std::size_t n) const {
    if (!alpha_terms_) throw argument_error("InverseChain: alpha derivatives not tracked");
    extend(n);
    return 0.5 * db_[n];
}

double InverseChain::orbit_point(std::size_t n, std::size_t m) const {
    if (m > n) throw argument_error("InverseChain: orbit index beyond word length");
    extend(n);
    return m == 0 ? theta(n) : y_[n + 1 - m];
}

double InverseChain::orbit_prime(std::size_t n, std::size_t m) const {
    if (m > n) throw argument_error("InverseChain: orbit index beyond word length");
    extend(n);
    return m == 0 ? 0.5 * dy_[n] : dy_[n + 1 - m];
}

double InverseChain::orbit_dot(std::size_t n, std::size_t m) const {
    if (!alpha_terms_) throw argument_error("InverseChain: alpha derivatives not tracked");
    if (m > n) throw argument_error("InverseChain: orbit index beyond word length");
    extend(n);
    return m == 0 ? 0.5 * da_[n] : da_[n + 1 - m];
}

namespace {

// one chain per thread; consecutive branch evaluations at the same base
// point reuse it, which is the access pattern of the transfer sweep
InverseChain& chain_memo(double alpha, double w, bool with_second, bool with_alpha,
                         std::size_t depth) {
    thread_local std::optional<InverseChain> slot;
    w = std::min(w, 1.0);
    if (!slot || slot->alpha() != alpha || slot->base_point() != w ||
        (with_second && !slot->with_second()) || (with_alpha && !slot->with_alpha()))
        slot.emplace(alpha, w, with_second, with_alpha);
    slot->extend(depth);
    return *slot;
}

Vec2 circle_point(double u) {
    return Vec2{0.5 * std::cos(2.0 * M_PI * u), 0.5 * std::sin(2.0 * M_PI * u)};
}

Vec2 circle_tangent(double u) {
    return Vec2{-M_PI * std::sin(2.0 * M_PI * u), M_PI * std::cos(2.0 * M_PI * u)};
}

}  // namespace

double InducedBranch::theta(double w) const {
    InverseChain c(alpha, w, false, false);
    c.extend((std::size_t)word);
    return c.theta((std::size_t)word);
}

double InducedBranch::theta_prime(double w) const {
    InverseChain c(alpha, w, false, false);
    c.extend((std::size_t)word);
    return c.theta_prime((std::size_t)word);
}

double InducedBranch::forward(double th) const {
    // the word fixes the branch itinerary (one right step, then word left
    // steps); re-deciding branches by position would flip on orbits that
    // land exactly on the cut, e.g. every Theta_n(1) passes through 1/2
    double v = std::max(2.0 * std::min(th, 1.0) - 1.0, 0.0);
    for (int m = 0; m < word; ++m) v = v * (1.0 + std::pow(2.0 * v, alpha));
    return v;
}

double InducedBranch::forward_check(double w) const { return std::abs(forward(theta(w)) - w); }

InducedBranch induced_branch(double alpha, int word, double tol) {
    check_alpha(alpha);
    if (word < 0) throw argument_error("induced_branch: word must be nonnegative");
    if (!(tol > 0.0)) throw argument_error("induced_branch: tolerance must be positive");
    InducedBranch b;
    b.word = word;
    b.alpha = alpha;
    b.region_lo = b.theta(0.5);
    b.region_hi = b.theta(1.0);
    for (double w : {0.5, 0.8, 1.0})
        if (b.forward_check(w) > tol)
            throw solver_error("induced_branch: forward roundtrip check failed");
    return b;
}

namespace {

// chains at the collocation nodes, shared by every word branch
struct ChainTable {
    double alpha = 0.5;
    std::vector<double> nodes;
    std::vector<InverseChain> chains;

    std::size_t index_of(double w) const {
        auto it = std::lower_bound(nodes.begin(), nodes.end(), w);
        if (it != nodes.end() && *it == w) return (std::size_t)(it - nodes.begin());
        return npos;
    }
};

std::shared_ptr<ChainTable> build_chain_table(double alpha, const OmegaGrid& grid,
                                              std::size_t depth) {
    auto tab = std::make_shared<ChainTable>();
    tab->alpha = alpha;
    tab->nodes = grid.nodes;
    tab->chains.reserve(grid.size());
    for (double w : grid.nodes) {
        tab->chains.emplace_back(alpha, w, false, false);
        tab->chains.back().extend(depth);
    }
    return tab;
}

BaseMap induced_base_map(std::shared_ptr<ChainTable> tab, int words) {
    BaseMap map;
    map.lo = 0.5;
    map.hi = 1.0;
    map.branches.reserve((std::size_t)words);
    for (int n = 0; n < words; ++n) {
        BaseMap::InvBranch b;
        b.theta = [tab, n](double w) {
            std::size_t j = tab->index_of(w);
            if (j != npos) return tab->chains[j].theta((std::size_t)n);
            InverseChain c(tab->alpha, w, false, false);
            c.extend((std::size_t)n);
            return c.theta((std::size_t)n);
        };
        b.theta_prime = [tab, n](double w) {
            std::size_t j = tab->index_of(w);
            if (j != npos) return tab->chains[j].theta_prime((std::size_t)n);
            InverseChain c(tab->alpha, w, false, false);
            c.extend((std::size_t)n);
            return c.theta_prime((std::size_t)n);
        };
        map.branches.push_back(std::move(b));
    }
    // completion of the dropped words: their pull weights sum to
    // Theta_N'(w) * S(y_N(w)) where S(z) is the tail factor of the left
    // inverse orbit, S(z) = sum_m prod_{k<=m} 1/f0'(z_k).  On the tiny
    // z-range the nodes reach at depth N,
    //   S(z) = (alpha/A) z^-alpha - alpha(1+alpha)/2 log z + gamma + o(1),
    // A = alpha 2^alpha; gamma is fitted from one deep reference orbit by
    // the backward recursion T_k = (1 + T_{k+1}) / f0'(y_{k+1}).  The o(1)
    // mismatch cancels between fit and evaluation because both sit at the
    // same depth, so the closing branch keeps the sweep stochastic to well
    // below the collocation tolerance.
    {
        std::size_t N = (std::size_t)words - 1;
        BaseMap::InvBranch t;
        t.theta = [tab, N](double w) {
            std::size_t j = tab->index_of(w);
            if (j != npos) return tab->chains[j].theta(N);
            InverseChain c(tab->alpha, w, false, false);
            return c.theta(N);
        };
        double alpha = tab->alpha;
        double A = alpha * std::pow(2.0, alpha);
        auto base = [alpha, A](double z) {
            return alpha / (A * std::pow(z, alpha)) -
                   0.5 * alpha * (1.0 + alpha) * std::log(z);
        };
        std::size_t D = N + std::min<std::size_t>(std::max<std::size_t>(6 * N, 4000), 60000);
        InverseChain ref(alpha, 0.75, false, false);
        ref.extend(D);
        auto yref = [&ref](std::size_t k) { return 2.0 * ref.theta(k) - 1.0; };
        double T = 0.0, P = 1.0;
        for (std::size_t k = D; k > N; --k) {
            double fp = left_prime(alpha, yref(k));
            T = (1.0 + T) / fp;
            P /= fp;
        }
        double gamma = (T + P * base(yref(D)) - base(yref(N))) / (1.0 - P);
        t.theta_prime = [tab, N, base, gamma](double w) {
            std::size_t j = tab->index_of(w);
            if (j != npos) {
                double z = 2.0 * tab->chains[j].theta(N) - 1.0;
                return (base(z) + gamma) * tab->chains[j].theta_prime(N);
            }
            InverseChain c(tab->alpha, w, false, false);
            double z = 2.0 * c.theta(N) - 1.0;
            return (base(z) + gamma) * c.theta_prime(N);
        };
        map.branches.push_back(std::move(t));
    }
    return map;
}

struct BaseInduction {
    BaseDensity rho_bar;
    std::vector<double> word_mass;
    double word_tail = 0.0;
    double E = 0.0;
    double E_retained = 0.0;
};

BaseInduction induce_base(double alpha, int grid_M, int dense_words, double tol,
                          int max_sweeps) {
    if (grid_M < 9) throw argument_error("induced base: grid too coarse");
    if (dense_words < 64) throw argument_error("induced base: need more return words");
    // the sweep fixed point carries an O(h^2) stochasticity defect, so it
    // runs on a dyadic refinement to stay clear of the residual tolerance
    OmegaGrid grid = OmegaGrid::uniform(0.5, 1.0, 2 * (std::size_t)grid_M - 1);
    auto tab = build_chain_table(alpha, grid, (std::size_t)dense_words - 1);

    BaseInduction bi;
    bi.rho_bar = ulam_density(induced_base_map(tab, dense_words), grid, tol, max_sweeps);

    // cylinder masses of the word partition under rho_bar
    std::size_t M = grid.size();
    double h = (grid.hi - grid.lo) / (double)(M - 1);
    bi.word_mass.resize((std::size_t)dense_words);
    std::vector<double> g(M);
    for (int n = 0; n < dense_words; ++n) {
        for (std::size_t j = 0; j < M; ++j)
            g[j] = bi.rho_bar.value(tab->chains[j].theta((std::size_t)n)) *
                   tab->chains[j].theta_prime((std::size_t)n);
        NeumaierSum m;
        for (std::size_t j = 0; j + 1 < M; ++j) m.add(0.5 * h * (g[j] + g[j + 1]));
        bi.word_mass[(std::size_t)n] = m.value();
    }

    // power-law completion: mass_n ~ c n^(-1-1/alpha)
    std::size_t N = (std::size_t)dense_words - 1;
    double mu_N = bi.word_mass[N];
    bi.word_tail = alpha * mu_N * (double)N;
    NeumaierSum e;
    for (std::size_t n = 0; n <= N; ++n) e.add((double)(n + 1) * bi.word_mass[n]);
    bi.E_retained = e.value();
    bi.E = bi.E_retained + mu_N * (double)N * (double)N * alpha / (1.0 - alpha);
    return bi;
}

}  // namespace

BaseDensity induced_base_density(double alpha, int grid_M, int dense_words, double tol,
                                 int max_sweeps) {
    check_alpha(alpha);
    if (grid_M < 9) throw argument_error("induced_base_density: grid too coarse");
    if (dense_words < 2) throw argument_error("induced_base_density: need at least two words");
    OmegaGrid grid = OmegaGrid::uniform(0.5, 1.0, (std::size_t)grid_M);
    auto tab = build_chain_table(alpha, grid, (std::size_t)dense_words - 1);
    return ulam_density(induced_base_map(tab, dense_words), grid, tol, max_sweeps);
}

InducingScheme make_inducing_scheme(double alpha, double lambda_fib, int n_max, int grid_M,
                                    int dense_words) {
    check_alpha(alpha);
    if (!(lambda_fib > 0.0 && lambda_fib < 1.0))
        throw argument_error("make_inducing_scheme: fibre contraction must lie in (0,1)");
    if (n_max < 0 || n_max >= dense_words)
        throw argument_error("make_inducing_scheme: word cutoffs out of order");
    InducingScheme s;
    s.alpha = alpha;
    s.lambda_fib = lambda_fib;
    s.n_max = n_max;
    s.dense_words = dense_words;
    BaseInduction bi = induce_base(alpha, grid_M, dense_words, 1e-6, 20000);
    s.rho_bar = std::move(bi.rho_bar);
    s.word_mass = std::move(bi.word_mass);
    s.word_tail = bi.word_tail;
    s.E = bi.E;
    s.E_retained = bi.E_retained;
    return s;
}

namespace {

// node tables of the induced system; rho evaluations interpolate linearly
struct InducedTables {
    double alpha = 0.5;
    double lam = 0.2;
    int n_max = 0;
    bool with_alpha = false;
    BaseDensity rho_bar;
    std::vector<double> rb_slope;  // d rho_bar / dw at its grid nodes
    BaseDensity rho_dotted;        // rho_bar with rho_dot = central fd in alpha
    OmegaGrid grid;                // system grid
    std::vector<double> norm, norm_prime, norm_dot;

    double rb(double w) const { return rho_bar.value(w); }
    double rb_prime(double w) const { return lin(rho_bar.grid, rb_slope, w); }
    double rb_dot(double w) const { return rho_dotted.value_dot(w); }

    static double lin(const OmegaGrid& g, const std::vector<double>& v, double w) {
        if (w <= g.nodes.front()) return v.front();
        if (w >= g.nodes.back()) return v.back();
        double lam_left = 0.0;
        std::size_t j = g.bracket(w, &lam_left);
        return lam_left * v[j] + (1.0 - lam_left) * v[j + 1];
    }

    double norm_at(double w) const { return lin(grid, norm, w); }
    double norm_prime_at(double w) const { return lin(grid, norm_prime, w); }
    double norm_dot_at(double w) const { return lin(grid, norm_dot, w); }
};

std::vector<double> node_slopes(const BaseDensity& d) {
    const auto& nodes = d.grid.nodes;
    std::size_t M = nodes.size();
    std::vector<double> s(M);
    for (std::size_t j = 0; j < M; ++j) {
        std::size_t a = j == 0 ? 0 : j - 1;
        std::size_t b = j + 1 == M ? j : j + 1;
        s[j] = (d.rho[b] - d.rho[a]) / (nodes[b] - nodes[a]);
    }
    return s;
}

// raw branch weight rho_bar(theta_n) theta_n' / rho_bar(w) and its
// derivatives, all read off one chain
struct RawTerm {
    double value = 0.0, prime = 0.0, dot = 0.0;
};

RawTerm raw_term(const InducedTables& t, const InverseChain& c, std::size_t n, double w,
                 bool with_prime, bool with_dot) {
    RawTerm r;
    double th = c.theta(n);
    double tp = c.theta_prime(n);
    double rbw = t.rb(w);
    double rbt = t.rb(th);
    r.value = rbt * tp / rbw;
    if (with_prime) {
        double num = t.rb_prime(th) * tp * tp + rbt * c.theta_second(n);
        r.prime = num / rbw - r.value * t.rb_prime(w) / rbw;
    }
    if (with_dot) {
        double num = (t.rb_dot(th) + t.rb_prime(th) * c.theta_dot(n)) * tp +
                     rbt * c.theta_prime_dot(n);
        r.dot = num / rbw - r.value * t.rb_dot(w) / rbw;
    }
    return r;
}

}  // namespace

SkewSystem induced_system(const InducingScheme& scheme, int grid_M,
                          bool with_alpha_derivatives, double mass_tol) {
    check_alpha(scheme.alpha);
    if (grid_M < 9) throw argument_error("induced_system: grid too coarse");
    if (scheme.rho_bar.rho.empty()) throw argument_error("induced_system: scheme has no density");
    if (scheme.n_max + 1 > (int)scheme.word_mass.size())
        throw argument_error("induced_system: scheme retains fewer words than n_max");

    NeumaierSum dropped;
    for (std::size_t n = (std::size_t)scheme.n_max + 1; n < scheme.word_mass.size(); ++n)
        dropped.add(scheme.word_mass[n]);
    dropped.add(scheme.word_tail);
    if (dropped.value() > mass_tol)
        throw argument_error("induced_system: dropped word mass " +
                             format_double(dropped.value()) +
                             " exceeds tolerance; increase n_max");

    auto t = std::make_shared<InducedTables>();
    t->alpha = scheme.alpha;
    t->lam = scheme.lambda_fib;
    t->n_max = scheme.n_max;
    t->with_alpha = with_alpha_derivatives;
    t->rho_bar = scheme.rho_bar;
    t->rb_slope = node_slopes(scheme.rho_bar);
    t->grid = OmegaGrid::uniform(0.5, 1.0, (std::size_t)grid_M);

    if (with_alpha_derivatives) {
        const double da = 1e-3;
        int rbM = (int)scheme.rho_bar.grid.size();
        BaseDensity up = induced_base_density(scheme.alpha + da, rbM, scheme.dense_words);
        BaseDensity dn = induced_base_density(scheme.alpha - da, rbM, scheme.dense_words);
        t->rho_dotted = scheme.rho_bar;
        t->rho_dotted.rho_dot.resize(t->rho_dotted.rho.size());
        for (std::size_t j = 0; j < t->rho_dotted.rho.size(); ++j)
            t->rho_dotted.rho_dot[j] = (up.rho[j] - dn.rho[j]) / (2.0 * da);
    }

    // normalizer tables: sum of raw weights over the retained words
    std::size_t M = t->grid.size();
    std::size_t depth = (std::size_t)scheme.n_max;
    t->norm.resize(M);
    t->norm_prime.resize(M);
    t->norm_dot.assign(M, 0.0);
    for (std::size_t j = 0; j < M; ++j) {
        double w = t->grid.nodes[j];
        InverseChain c(scheme.alpha, w, true, with_alpha_derivatives);
        c.extend(depth);
        NeumaierSum sv, sp, sd;
        for (std::size_t n = 0; n <= depth; ++n) {
            RawTerm r = raw_term(*t, c, n, w, true, with_alpha_derivatives);
            sv.add(r.value);
            sp.add(r.prime);
            if (with_alpha_derivatives) sd.add(r.dot);
        }
        t->norm[j] = sv.value();
        t->norm_prime[j] = sp.value();
        if (with_alpha_derivatives) t->norm_dot[j] = sd.value();
    }

    SkewSystem sys;
    sys.name = "induced_lsv";
    sys.alpha = scheme.alpha;
    sys.param_name = "alpha";
    sys.omega_lo = 0.5;
    sys.omega_hi = 1.0;
    double r = 0.5 / (1.0 - scheme.lambda_fib);
    sys.fibre_box = DomainBox::rectangle(-r, r, -r, r);
    sys.grid = t->grid;
    sys.grid_M = grid_M;
    sys.density = scheme.rho_bar;
    sys.constant_mode = false;
    sys.branches_move = true;
    sys.descr_alpha = scheme.alpha;
    sys.descr_lambda_fib = scheme.lambda_fib;

    const double alpha = scheme.alpha;
    const double lam = scheme.lambda_fib;
    const bool wa = with_alpha_derivatives;

    InverseChain lo(alpha, 0.5, false, false), hi(alpha, 1.0, false, false);
    lo.extend(depth);
    hi.extend(depth);

    for (int n = 0; n <= scheme.n_max; ++n) {
        std::size_t un = (std::size_t)n;
        Branch b;
        b.index = n;
        // the deepest cylinder absorbs the sliver down to 1/2 so the
        // regions tile the reference interval
        b.region_lo = n == scheme.n_max ? 0.5 : lo.theta(un);
        b.region_hi = hi.theta(un);
        b.lip1 = std::pow(lam, n + 1);
        b.theta = [alpha, un, wa](double w) {
            return chain_memo(alpha, w, true, wa, un).theta(un);
        };
        b.theta_prime = [alpha, un, wa](double w) {
            return chain_memo(alpha, w, true, wa, un).theta_prime(un);
        };
        b.weight = [t, un, wa](double w) {
            const InverseChain& c = chain_memo(t->alpha, w, true, wa, un);
            return raw_term(*t, c, un, w, false, false).value / t->norm_at(w);
        };
        b.weight_prime = [t, un, wa](double w) {
            const InverseChain& c = chain_memo(t->alpha, w, true, wa, un);
            RawTerm r = raw_term(*t, c, un, w, true, false);
            double norm = t->norm_at(w);
            return (r.prime - r.value / norm * t->norm_prime_at(w)) / norm;
        };
        b.fibre = [alpha, lam, un, wa](double w) {
            InverseChain& c = chain_memo(alpha, w, true, wa, un);
            Vec2 tr{0.0, 0.0};
            double pw = 1.0;
            for (std::size_t p = 1; p <= un; ++p) {
                Vec2 cp = circle_point(c.orbit_point(un, un + 1 - p));
                tr.x += pw * cp.x;
                tr.y += pw * cp.y;
                pw *= lam;
            }
            Vec2 top = circle_point(c.theta(un));
            tr.x += pw * top.x;
            tr.y += pw * top.y;
            double contraction = pw * lam;
            return SmoothMap::affine(Mat2{contraction, 0.0, 0.0, contraction}, tr);
        };
        b.region_forward = [alpha, n](double th) {
            double v = th;
            for (int m = 0; m <= n; ++m) v = lsv_forward(alpha, v);
            return v;
        };
        b.dg_domega = [alpha, lam, un, wa](double w, const Vec2&) {
            const InverseChain& c = chain_memo(alpha, w, true, wa, un);
            double tp = c.theta_prime(un);
            Vec2 out{0.0, 0.0};
            double pw = std::pow(lam, (double)un);
            for (std::size_t m = 0; m <= un; ++m) {
                Vec2 ct = circle_tangent(c.orbit_point(un, m));
                double scale = c.orbit_prime(un, m) / tp;
                out.x += pw * ct.x * scale;
                out.y += pw * ct.y * scale;
                pw /= lam;
            }
            return out;
        };
        if (wa) {
            b.theta_dot = [alpha, un](double w) {
                return chain_memo(alpha, w, true, true, un).theta_dot(un);
            };
            b.weight_dot = [t, un](double w) {
                const InverseChain& c = chain_memo(t->alpha, w, true, true, un);
                RawTerm r = raw_term(*t, c, un, w, false, true);
                double norm = t->norm_at(w);
                return (r.dot - r.value / norm * t->norm_dot_at(w)) / norm;
            };
            // alpha-motion of the orbit with the branch point held fixed;
            // the branch-point motion is carried by theta_dot * dg_domega
            b.dg_dparam = [alpha, lam, un](double w, const Vec2&) {
                const InverseChain& c = chain_memo(alpha, w, true, true, un);
                double tp = c.theta_prime(un);
                double td = c.theta_dot(un);
                Vec2 out{0.0, 0.0};
                double pw = std::pow(lam, (double)un);
                for (std::size_t m = 0; m <= un; ++m) {
                    Vec2 ct = circle_tangent(c.orbit_point(un, m));
                    double motion = c.orbit_dot(un, m) - c.orbit_prime(un, m) / tp * td;
                    out.x += pw * ct.x * motion;
                    out.y += pw * ct.y * motion;
                    pw /= lam;
                }
                return out;
            };
        }
        sys.branches.push_back(std::move(b));
    }

    for (int n = 0; n < scheme.n_max; ++n) sys.region_cuts.push_back(lo.theta((std::size_t)n));
    std::sort(sys.region_cuts.begin(), sys.region_cuts.end());

    sys.lambda_certificate = contraction_certificate(sys);
    sys.validate();
    return sys;
}

SkewSystem induced_system(double alpha, double lambda_fib, int n_max, int grid_M) {
    return induced_system(make_inducing_scheme(alpha, lambda_fib, n_max, grid_M), grid_M);
}

SystemFamily induced_family(double lambda_fib, int n_max, int grid_M) {
    SystemFamily fam;
    fam.name = "induced_lsv";
    fam.param_name = "alpha";
    fam.param_lo = 0.05;
    fam.param_hi = 0.95;
    fam.moves_branches = true;
    fam.moves_weights = true;
    fam.moves_fibres = true;
    fam.moves_density = true;
    fam.make = [lambda_fib, n_max, grid_M](double a) {
        return induced_system(make_inducing_scheme(a, lambda_fib, n_max, grid_M), grid_M,
                              true);
    };
    return fam;
}

namespace {

struct NodeWeights {
    std::vector<double> raw;  // word weights, indices 0..k_max-1
    double total = 0.0;       // retained sum plus power-law completion
    double retained = 0.0;
};

NodeWeights word_weights(const InducingScheme& s, InverseChain& c, int k_max) {
    const int extra = 16;
    std::size_t deep = (std::size_t)(k_max - 1 + extra);
    c.extend(deep);
    NodeWeights nw;
    nw.raw.resize((std::size_t)k_max);
    NeumaierSum all;
    double last = 0.0;
    for (std::size_t n = 0; n <= deep; ++n) {
        double a = s.rho_bar.value(c.theta(n)) * c.theta_prime(n);
        if (n < (std::size_t)k_max) nw.raw[n] = a;
        all.add(a);
        last = a;
    }
    NeumaierSum ret;
    for (double a : nw.raw) ret.add(a);
    nw.retained = ret.value();
    nw.total = all.value() + s.alpha * last * (double)deep;
    return nw;
}

void finish_report(UnfoldReport* report, int k_max, double E,
                   const std::vector<double>& deficits,
                   const std::vector<NeumaierSum>& level_acc, std::size_t low_nodes) {
    if (!report) return;
    report->k_max = k_max;
    report->E = E;
    report->deficit_max = 0.0;
    NeumaierSum mean;
    for (double d : deficits) {
        report->deficit_max = std::max(report->deficit_max, d);
        mean.add(d);
    }
    report->deficit_mean = deficits.empty() ? 0.0 : mean.value() / (double)deficits.size();
    report->level_mass.resize(level_acc.size());
    for (std::size_t n = 0; n < level_acc.size(); ++n)
        report->level_mass[n] =
            low_nodes == 0 ? 0.0 : level_acc[n].value() / (double)low_nodes;
}

int budget_for(const DomainBox& box) { return box.dim == 1 ? 256 : 1024; }

void check_unfold_args(const OmegaGrid& grid, const OmegaGrid& bar_grid, int k_max) {
    grid.validate();
    if (!(grid.lo > 0.0)) throw argument_error("unfold: grid must start above 0");
    if (std::abs(grid.hi - 1.0) > 1e-9) throw argument_error("unfold: grid must end at 1");
    if (std::abs(bar_grid.lo - 0.5) > 1e-12 || std::abs(bar_grid.hi - 1.0) > 1e-12)
        throw argument_error("unfold: input section must cover the reference interval");
    if (k_max < 1) throw argument_error("unfold: k_max must be at least 1");
}

}  // namespace

Section unfold(const InducingScheme& scheme, const Section& nubar, const OmegaGrid& grid,
               int k_max, int budget, UnfoldReport* report, double tail_tol) {
    nubar.validate();
    check_unfold_args(grid, nubar.grid, k_max);
    const DomainBox& box = nubar.node(0).box;
    if (budget <= 0) budget = budget_for(box);

    Section out;
    out.grid = grid;
    out.values.resize(grid.size());
    std::vector<double> deficits;
    std::vector<NeumaierSum> level_acc((std::size_t)k_max);
    std::size_t low_nodes = 0;

    for (std::size_t j = 0; j < grid.size(); ++j) {
        double w = grid.nodes[j];
        if (w >= 0.5) {
            AtomicMeasure m = interpolate(nubar, w);
            if ((int)m.atoms.size() > budget)
                m = compact(m, budget, box.dim == 2 ? CompactMode::grid : CompactMode::quantile)
                        .measure;
            out.values[j] = std::move(m);
            continue;
        }
        ++low_nodes;
        InverseChain c(scheme.alpha, w, false, false);
        NodeWeights nw = word_weights(scheme, c, k_max);
        deficits.push_back(1.0 - nw.retained / nw.total);
        if (deficits.back() > tail_tol)
            throw solver_error("unfold: k_max too small for requested tail tolerance");

        AtomicMeasure acc;
        acc.box = box;
        Vec2 run{0.0, 0.0};
        double pw = 1.0;
        for (int n = 0; n < k_max; ++n) {
            std::size_t un = (std::size_t)n;
            level_acc[un].add(nw.raw[un] / nw.total);
            double weight = nw.raw[un] / nw.retained;
            Vec2 top = circle_point(c.theta(un));
            Vec2 tr{run.x + pw * top.x, run.y + pw * top.y};
            double contraction = pw * scheme.lambda_fib;
            SmoothMap g = SmoothMap::affine(Mat2{contraction, 0.0, 0.0, contraction}, tr);
            AtomicMeasure piece = push_forward(interpolate(nubar, c.theta(un)), g);
            for (const Atom& a : piece.atoms) acc.atoms.push_back({a.x, weight * a.w});
            Vec2 cy = circle_point(c.orbit_point(un + 1, 1));
            run.x += pw * cy.x;
            run.y += pw * cy.y;
            pw *= scheme.lambda_fib;
            if ((int)acc.atoms.size() > 6 * budget)
                acc = compact(acc, 4 * budget,
                              box.dim == 2 ? CompactMode::grid : CompactMode::merge)
                          .measure;
        }
        acc.renormalize();
        out.values[j] =
            compact(acc, budget, box.dim == 2 ? CompactMode::grid : CompactMode::quantile)
                .measure;
    }
    finish_report(report, k_max, scheme.E, deficits, level_acc, low_nodes);
    out.validate();
    return out;
}

SignedSection unfold_signed(const InducingScheme& scheme, const SignedSection& nubar,
                            const OmegaGrid& grid, int k_max, int budget,
                            UnfoldReport* report, double tail_tol) {
    nubar.validate();
    check_unfold_args(grid, nubar.grid, k_max);
    const DomainBox& box = nubar.node(0).box;
    if (budget <= 0) budget = budget_for(box);

    SignedSection out;
    out.grid = grid;
    out.values.resize(grid.size());
    out.vanishes_on_constants = nubar.vanishes_on_constants;
    std::vector<double> deficits;
    std::vector<NeumaierSum> level_acc((std::size_t)k_max);
    std::size_t low_nodes = 0;

    for (std::size_t j = 0; j < grid.size(); ++j) {
        double w = grid.nodes[j];
        if (w >= 0.5) {
            SignedAtomicMeasure m = interpolate(nubar, w);
            if ((int)m.atoms.size() > budget)
                m = compact(m, budget, box.dim == 2 ? CompactMode::grid : CompactMode::merge)
                        .measure;
            out.values[j] = std::move(m);
            continue;
        }
        ++low_nodes;
        InverseChain c(scheme.alpha, w, false, false);
        NodeWeights nw = word_weights(scheme, c, k_max);
        deficits.push_back(1.0 - nw.retained / nw.total);
        if (deficits.back() > tail_tol)
            throw solver_error("unfold: k_max too small for requested tail tolerance");

        SignedAtomicMeasure acc;
        acc.box = box;
        acc.vanishes_on_constants = nubar.vanishes_on_constants;
        Vec2 run{0.0, 0.0};
        double pw = 1.0;
        for (int n = 0; n < k_max; ++n) {
            std::size_t un = (std::size_t)n;
            level_acc[un].add(nw.raw[un] / nw.total);
            double weight = nw.raw[un] / nw.total;
            Vec2 top = circle_point(c.theta(un));
            Vec2 tr{run.x + pw * top.x, run.y + pw * top.y};
            double contraction = pw * scheme.lambda_fib;
            SmoothMap g = SmoothMap::affine(Mat2{contraction, 0.0, 0.0, contraction}, tr);
            SignedAtomicMeasure piece = push_forward(interpolate(nubar, c.theta(un)), g);
            for (const Atom& a : piece.atoms) acc.atoms.push_back({a.x, weight * a.w});
            Vec2 cy = circle_point(c.orbit_point(un + 1, 1));
            run.x += pw * cy.x;
            run.y += pw * cy.y;
            pw *= scheme.lambda_fib;
            if ((int)acc.atoms.size() > 6 * budget)
                acc = compact(acc, 4 * budget,
                              box.dim == 2 ? CompactMode::grid : CompactMode::merge)
                          .measure;
        }
        if (acc.vanishes_on_constants && !acc.atoms.empty()) acc.fix_mass_zero();
        out.values[j] =
            compact(acc, budget, box.dim == 2 ? CompactMode::grid : CompactMode::merge)
                .measure;
    }
    finish_report(report, k_max, scheme.E, deficits, level_acc, low_nodes);
    return out;
}

UnfoldedDensity unfolded_density(double alpha, const OmegaGrid& grid, int words) {
    check_alpha(alpha);
    grid.validate();
    if (!(grid.lo > 0.0)) throw argument_error("unfolded_density: grid must start above 0");
    if (std::abs(grid.hi - 1.0) > 1e-9)
        throw argument_error("unfolded_density: grid must end at 1");
    if (words < 64) throw argument_error("unfolded_density: need more return words");

    BaseInduction bi = induce_base(alpha, 257, 2000, 1e-6, 20000);

    std::size_t M = grid.size();
    std::vector<double> raw(M, 0.0);
    parallel_for(M, [&](std::size_t j) {
        InverseChain c(alpha, grid.nodes[j], false, false);
        NeumaierSum acc;
        double last = 0.0;
        std::size_t nlast = 0;
        int quiet = 0;
        for (int n = 0; n < words; ++n) {
            c.extend((std::size_t)n);
            double a = bi.rho_bar.value(c.theta((std::size_t)n)) *
                       c.theta_prime((std::size_t)n);
            acc.add(a);
            last = a;
            nlast = (std::size_t)n;
            if (acc.value() > 0.0 && a < 1e-15 * acc.value()) {
                if (++quiet >= 5) break;
            } else {
                quiet = 0;
            }
        }
        raw[j] = (acc.value() + alpha * last * (double)nlast) / bi.E;
    });

    UnfoldedDensity out;
    out.E = bi.E;
    out.words = words;
    out.density.grid = grid;
    out.density.loglog_interp = true;
    out.density.rho = std::move(raw);
    out.pre_norm_integral = out.density.integral();
    if (!(out.pre_norm_integral > 0.25 && out.pre_norm_integral < 1.75))
        throw solver_error("unfolded_density: word sum mass drifted beyond the truncation budget");
    for (double& v : out.density.rho) v /= out.pre_norm_integral;
    if (std::abs(out.density.integral() - 1.0) > 1e-6)
        throw solver_error("unfolded_density: normalization drift above tolerance");
    out.density.validate(1e-6);
    return out;
}

OmegaGrid solenoid_grid(int grid_M, double omega_min) {
    if (grid_M < 33) throw argument_error("solenoid_grid: grid too coarse");
    if (!(omega_min > 0.0 && omega_min < 0.4))
        throw argument_error("solenoid_grid: lower cutoff out of range");
    return OmegaGrid::graded(omega_min, 1.0, 2e-5, 1.1, 1.0 / (double)grid_M);
}

TailStatistics tail_statistics(double alpha, long long samples, std::uint64_t seed) {
    check_alpha(alpha);
    if (samples < 100000)
        throw argument_error("tail_statistics: need at least 1e5 samples");
    TailStatistics t;
    t.alpha = alpha;
    t.samples = samples;
    t.seed = seed;

    std::vector<long long> count;
    const long long cap = 10000000;
    for (long long s = 0; s < samples; ++s) {
        double w = 1.0 - 0.5 * u01(seed, (std::uint64_t)s);  // (1/2, 1]
        double v = 2.0 * w - 1.0;
        long long k = 1;
        while (v <= 0.5) {
            v = left_value(alpha, v);
            if (++k > cap) throw solver_error("tail_statistics: orbit failed to return");
        }
        if ((std::size_t)k >= count.size()) count.resize((std::size_t)k + 1, 0);
        ++count[(std::size_t)k];
    }

    std::size_t kmax = count.size() - 1;  // largest observed return time
    t.survivors.assign(kmax, 0);
    long long running = 0;
    for (std::size_t k = kmax; k >= 1; --k) {
        running += count[k];
        if (k - 1 < t.survivors.size()) t.survivors[k - 1] = running;
    }
    // survivors[k] = #{tau > k}; survivors[0] = samples by construction
    t.k_star = 0;
    for (std::size_t k = 0; k < t.survivors.size(); ++k)
        if (t.survivors[k] >= 100) t.k_star = (int)k;
    if (t.k_star < 15)
        throw solver_error("tail_statistics: tail too short for a slope estimate");

    NeumaierSum sx, sy, sxx, sxy;
    long long pts = 0;
    for (int k = 10; k <= t.k_star; ++k) {
        double x = std::log((double)k);
        double y = std::log((double)t.survivors[(std::size_t)k] / (double)samples);
        sx.add(x);
        sy.add(y);
        sxx.add(x * x);
        sxy.add(x * y);
        ++pts;
    }
    double n = (double)pts;
    t.slope = (n * sxy.value() - sx.value() * sy.value()) /
              (n * sxx.value() - sx.value() * sx.value());
    return t;
}

std::string TailStatistics::csv() const {
    std::ostringstream os;
    os << "k,survival,count\n";
    os << std::setprecision(17);
    for (std::size_t k = 0; k < survivors.size(); ++k)
        os << k << ',' << (double)survivors[k] / (double)samples << ',' << survivors[k]
           << '\n';
    return os.str();
}

std::string density_csv(const BaseDensity& density) {
    if (density.rho.size() != density.grid.size())
        throw argument_error("density_csv: value count mismatch");
    bool dotted = density.has_derivative();
    std::ostringstream os;
    os << (dotted ? "omega,rho,rho_dot\n" : "omega,rho\n");
    for (std::size_t j = 0; j < density.rho.size(); ++j) {
        os << format_double(density.grid.nodes[j]) << ',' << format_double(density.rho[j]);
        if (dotted) os << ',' << format_double(density.rho_dot[j]);
        os << '\n';
    }
    return os.str();
}

}  // namespace skewresp
