#include "skewresp/measure.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace skewresp {

// ---- DomainBox -------------------------------------------------------------

DomainBox DomainBox::interval(double a, double b) {
    DomainBox box;
    box.dim = 1;
    box.lo = {a, 0.0};
    box.hi = {b, 0.0};
    box.x0 = {0.5 * (a + b), 0.0};
    box.validate();
    return box;
}

DomainBox DomainBox::rectangle(double ax, double bx, double ay, double by) {
    DomainBox box;
    box.dim = 2;
    box.lo = {ax, ay};
    box.hi = {bx, by};
    box.x0 = {0.5 * (ax + bx), 0.5 * (ay + by)};
    box.validate();
    return box;
}

bool DomainBox::contains(Vec2 p, double tol) const {
    if (p.x < lo.x - tol || p.x > hi.x + tol) return false;
    if (dim == 2 && (p.y < lo.y - tol || p.y > hi.y + tol)) return false;
    return true;
}

Vec2 DomainBox::clamp(Vec2 p) const {
    Vec2 q;
    q.x = std::min(std::max(p.x, lo.x), hi.x);
    q.y = dim == 2 ? std::min(std::max(p.y, lo.y), hi.y) : 0.0;
    return q;
}

double DomainBox::diameter() const {
    if (dim == 1) return hi.x - lo.x;
    return std::hypot(hi.x - lo.x, hi.y - lo.y);
}

void DomainBox::validate() const {
    if (dim != 1 && dim != 2) throw argument_error("DomainBox: dim must be 1 or 2");
    if (!(lo.x < hi.x)) throw argument_error("DomainBox: need lo.x < hi.x");
    if (dim == 2 && !(lo.y < hi.y)) throw argument_error("DomainBox: need lo.y < hi.y");
    if (!contains(x0, 0.0)) throw argument_error("DomainBox: base point x0 must lie inside");
}

bool DomainBox::same_as(const DomainBox& o) const {
    if (dim != o.dim) return false;
    const double tol = 1e-12;
    bool ok = std::abs(lo.x - o.lo.x) <= tol && std::abs(hi.x - o.hi.x) <= tol &&
              std::abs(x0.x - o.x0.x) <= tol;
    if (dim == 2)
        ok = ok && std::abs(lo.y - o.lo.y) <= tol && std::abs(hi.y - o.hi.y) <= tol &&
             std::abs(x0.y - o.x0.y) <= tol;
    return ok;
}

// ---- measures ---------------------------------------------------------------

double AtomicMeasure::total_weight() const {
    NeumaierSum s;
    for (const Atom& a : atoms) s.add(a.w);
    return s.value();
}

void AtomicMeasure::renormalize() {
    double t = total_weight();
    if (!(t > 0.0)) throw argument_error("AtomicMeasure: nonpositive total weight");
    for (Atom& a : atoms) a.w /= t;
}

void AtomicMeasure::validate(double tol) const {
    box.validate();
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        if (atoms[i].w < -1e-15)
            throw argument_error("AtomicMeasure: negative weight at atom " + std::to_string(i));
        if (!box.contains(atoms[i].x))
            throw domain_violation("AtomicMeasure: atom " + std::to_string(i) +
                                   " lies outside the domain box");
    }
    if (std::abs(total_weight() - 1.0) > tol)
        throw argument_error("AtomicMeasure: weights must sum to 1");
}

double SignedAtomicMeasure::total_weight() const {
    NeumaierSum s;
    for (const Atom& a : atoms) s.add(a.w);
    return s.value();
}

double SignedAtomicMeasure::total_abs_weight() const {
    NeumaierSum s;
    for (const Atom& a : atoms) s.add(std::abs(a.w));
    return s.value();
}

void SignedAtomicMeasure::fix_mass_zero() {
    if (atoms.empty()) return;
    double drift = total_weight();
    if (drift == 0.0) return;
    std::size_t k = 0;
    for (std::size_t i = 1; i < atoms.size(); ++i)
        if (std::abs(atoms[i].w) > std::abs(atoms[k].w)) k = i;
    atoms[k].w -= drift;
}

void SignedAtomicMeasure::validate(double tol) const {
    box.validate();
    for (std::size_t i = 0; i < atoms.size(); ++i)
        if (!box.contains(atoms[i].x))
            throw domain_violation("SignedAtomicMeasure: atom " + std::to_string(i) +
                                   " lies outside the domain box");
    if (vanishes_on_constants && std::abs(total_weight()) > tol)
        throw argument_error("SignedAtomicMeasure: total mass must vanish");
}

double FirstOrderDistribution::total_weight() const {
    NeumaierSum s;
    for (const FoAtom& a : atoms) s.add(a.w);
    return s.value();
}

double FirstOrderDistribution::total_abs_weight() const {
    NeumaierSum s;
    for (const FoAtom& a : atoms) {
        s.add(std::abs(a.w));
        s.add(norm2(a.v));
    }
    return s.value();
}

void FirstOrderDistribution::fix_mass_zero() {
    if (atoms.empty()) return;
    double drift = total_weight();
    if (drift == 0.0) return;
    std::size_t k = 0;
    for (std::size_t i = 1; i < atoms.size(); ++i)
        if (std::abs(atoms[i].w) > std::abs(atoms[k].w)) k = i;
    atoms[k].w -= drift;
}

// ---- SmoothMap --------------------------------------------------------------

SmoothMap SmoothMap::affine(const Mat2& A, const Vec2& t) {
    SmoothMap h;
    h.value = [A, t](const Vec2& p) { return A * p + t; };
    h.jac = [A](const Vec2&) { return A; };
    h.lip = opnorm(A);
    return h;
}

SmoothMap SmoothMap::identity() { return affine(Mat2{}, Vec2{}); }

// ---- test functions ---------------------------------------------------------

double TestFunction::seminorm(int k) const {
    switch (k) {
        case 1: return d1;
        case 2: return d1 + d2;
        case 3: return d1 + d2 + d3;
        default: throw argument_error("TestFunction: order k must be 1, 2 or 3");
    }
}

void TestBank::validate() const {
    box.validate();
    if (k < 1 || k > 3) throw argument_error("TestBank: order k must be 1, 2 or 3");
    for (const TestFunction& phi : members)
        if (phi.seminorm(k) > 1.0 + 1e-12)
            throw argument_error("TestBank: member '" + phi.name + "' exceeds unit seminorm");
}

bool certify(const TestFunction& phi, const DomainBox& box, int probes_per_axis,
             double slack) {
    if (probes_per_axis < 2) throw argument_error("certify: need at least 2 probes per axis");
    const int P = probes_per_axis;
    const double h = 1e-4;

    if (std::abs(phi.value(box.x0) - phi.value_at_x0) > slack) return false;

    auto probe_at = [&](Vec2 p) -> bool {
        if (norm2(phi.gradient(p)) > phi.d1 + slack) return false;
        if (opnorm(phi.hessian(p)) > phi.d2 + slack) return false;
        return true;
    };
    auto d3_dir = [&](Vec2 p, Vec2 u) {
        Mat2 hp = phi.hessian(p + h * u);
        Mat2 hm = phi.hessian(p - h * u);
        double qp = u.x * (hp.a * u.x + hp.b * u.y) + u.y * (hp.c * u.x + hp.d * u.y);
        double qm = u.x * (hm.a * u.x + hm.b * u.y) + u.y * (hm.c * u.x + hm.d * u.y);
        return (qp - qm) / (2.0 * h);
    };

    std::vector<Vec2> dirs;
    if (box.dim == 1) {
        dirs.push_back({1.0, 0.0});
    } else {
        for (int a = 0; a < 8; ++a) {
            double t = 3.14159265358979323846 * a / 8.0;
            dirs.push_back({std::cos(t), std::sin(t)});
        }
    }

    const int Py = box.dim == 2 ? P : 1;
    for (int i = 0; i < P; ++i) {
        for (int j = 0; j < Py; ++j) {
            Vec2 p;
            p.x = box.lo.x + (box.hi.x - box.lo.x) * i / (P - 1);
            p.y = box.dim == 2 ? box.lo.y + (box.hi.y - box.lo.y) * j / (Py - 1) : 0.0;
            if (!probe_at(p)) return false;
            // pull inward so the difference stencil stays in the box
            Vec2 q;
            q.x = std::min(std::max(p.x, box.lo.x + h), box.hi.x - h);
            q.y = box.dim == 2 ? std::min(std::max(p.y, box.lo.y + h), box.hi.y - h) : 0.0;
            for (Vec2 u : dirs)
                if (std::abs(d3_dir(q, u)) > phi.d3 + slack) return false;
        }
    }
    return true;
}

// ---- push-forward / pairing -------------------------------------------------

namespace {

Vec2 mapped_position(const DomainBox& box, const SmoothMap& h, Vec2 x, std::size_t i) {
    Vec2 y = h.value(x);
    if (!box.contains(y))
        throw domain_violation("push_forward: image of atom " + std::to_string(i) +
                               " at (" + format_double(y.x) + "," + format_double(y.y) +
                               ") leaves the domain box");
    return box.clamp(y);
}

}  // namespace

AtomicMeasure push_forward(const AtomicMeasure& mu, const SmoothMap& h) {
    AtomicMeasure out;
    out.box = mu.box;
    out.atoms.reserve(mu.atoms.size());
    for (std::size_t i = 0; i < mu.atoms.size(); ++i)
        out.atoms.push_back({mapped_position(mu.box, h, mu.atoms[i].x, i), mu.atoms[i].w});
    return out;
}

SignedAtomicMeasure push_forward(const SignedAtomicMeasure& mu, const SmoothMap& h) {
    SignedAtomicMeasure out;
    out.box = mu.box;
    out.vanishes_on_constants = mu.vanishes_on_constants;
    out.atoms.reserve(mu.atoms.size());
    for (std::size_t i = 0; i < mu.atoms.size(); ++i)
        out.atoms.push_back({mapped_position(mu.box, h, mu.atoms[i].x, i), mu.atoms[i].w});
    return out;
}

FirstOrderDistribution push_forward(const FirstOrderDistribution& xi, const SmoothMap& h) {
    FirstOrderDistribution out;
    out.box = xi.box;
    out.vanishes_on_constants = xi.vanishes_on_constants;
    out.atoms.reserve(xi.atoms.size());
    for (std::size_t i = 0; i < xi.atoms.size(); ++i) {
        const FoAtom& a = xi.atoms[i];
        Vec2 y = mapped_position(xi.box, h, a.x, i);
        out.atoms.push_back({y, a.w, h.jac(a.x) * a.v});
    }
    return out;
}

double pair(const AtomicMeasure& mu, const TestFunction& phi) {
    NeumaierSum s;
    for (const Atom& a : mu.atoms) s.add(a.w * phi.value(a.x));
    return s.value();
}

double pair(const SignedAtomicMeasure& mu, const TestFunction& phi) {
    NeumaierSum s;
    for (const Atom& a : mu.atoms) s.add(a.w * phi.value(a.x));
    return s.value();
}

double pair(const FirstOrderDistribution& xi, const TestFunction& phi) {
    NeumaierSum s;
    for (const FoAtom& a : xi.atoms) {
        s.add(a.w * phi.value(a.x));
        s.add(dot(a.v, phi.gradient(a.x)));
    }
    return s.value();
}

// ---- Wasserstein-1 ----------------------------------------------------------

namespace {

double w1_line(const AtomicMeasure& mu, const AtomicMeasure& nu) {
    // integral of |F_mu - F_nu| over the line
    std::vector<std::pair<double, double>> ev;
    ev.reserve(mu.atoms.size() + nu.atoms.size());
    for (const Atom& a : mu.atoms) ev.push_back({a.x.x, a.w});
    for (const Atom& a : nu.atoms) ev.push_back({a.x.x, -a.w});
    std::sort(ev.begin(), ev.end(),
              [](const auto& l, const auto& r) { return l.first < r.first; });
    NeumaierSum F, total;
    double prev = 0.0;
    bool have_prev = false;
    for (const auto& e : ev) {
        if (have_prev && e.first > prev) total.add(std::abs(F.value()) * (e.first - prev));
        F.add(e.second);
        prev = e.first;
        have_prev = true;
    }
    return total.value();
}

// exact min-cost transport by successive shortest augmenting paths
double w1_plane(const AtomicMeasure& mu, const AtomicMeasure& nu) {
    std::vector<Vec2> ap, bp;
    std::vector<double> a, b;
    for (const Atom& at : mu.atoms)
        if (at.w > 0.0) { ap.push_back(at.x); a.push_back(at.w); }
    for (const Atom& at : nu.atoms)
        if (at.w > 0.0) { bp.push_back(at.x); b.push_back(at.w); }
    const std::size_t m = a.size(), n = b.size();
    if (m == 0 || n == 0) return 0.0;

    NeumaierSum sa, sb;
    for (double w : a) sa.add(w);
    for (double w : b) sb.add(w);
    const double scale = sa.value();
    {
        double r = scale / sb.value();
        for (double& w : b) w *= r;
    }

    std::vector<double> cost(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            cost[i * n + j] = std::hypot(ap[i].x - bp[j].x, ap[i].y - bp[j].y);

    std::vector<double> flow(m * n, 0.0);
    std::vector<double> pot(m + n, 0.0);
    std::vector<double> ra = a, rb = b;
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t V = m + n;
    std::vector<double> dist(V);
    std::vector<int> par(V);
    std::vector<char> done(V);

    double remaining = scale;
    const double mass_tol = 1e-14 * scale;
    std::size_t guard = 64 * (m + n) + 64;
    while (remaining > mass_tol) {
        if (guard-- == 0) throw solver_error("transport solver: augmentation limit reached");
        std::fill(dist.begin(), dist.end(), inf);
        std::fill(par.begin(), par.end(), -1);
        std::fill(done.begin(), done.end(), 0);
        for (std::size_t i = 0; i < m; ++i)
            if (ra[i] > mass_tol) dist[i] = 0.0;
        for (std::size_t it = 0; it < V; ++it) {
            std::size_t u = V;
            double best = inf;
            for (std::size_t v = 0; v < V; ++v)
                if (!done[v] && dist[v] < best) { best = dist[v]; u = v; }
            if (u == V) break;
            done[u] = 1;
            if (u < m) {
                for (std::size_t j = 0; j < n; ++j) {
                    double rc = cost[u * n + j] + pot[u] - pot[m + j];
                    if (rc < 0.0) rc = 0.0;
                    double nd = dist[u] + rc;
                    if (nd < dist[m + j]) { dist[m + j] = nd; par[m + j] = (int)u; }
                }
            } else {
                std::size_t j = u - m;
                for (std::size_t i = 0; i < m; ++i) {
                    if (flow[i * n + j] <= 0.0) continue;
                    double rc = pot[m + j] - pot[i] - cost[i * n + j];
                    if (rc < 0.0) rc = 0.0;
                    double nd = dist[u] + rc;
                    if (nd < dist[i]) { dist[i] = nd; par[i] = (int)u; }
                }
            }
        }
        std::size_t jstar = n;
        double dstar = inf;
        for (std::size_t j = 0; j < n; ++j)
            if (rb[j] > mass_tol && dist[m + j] < dstar) { dstar = dist[m + j]; jstar = j; }
        if (jstar == n) {
            if (remaining <= 1e-9 * scale) break;
            throw solver_error("transport solver: no augmenting path");
        }
        // bottleneck along the alternating path
        double theta = rb[jstar];
        std::size_t v = m + jstar;
        while (par[v] >= 0) {
            std::size_t u = (std::size_t)par[v];
            if (u >= m && v < m) theta = std::min(theta, flow[v * n + (u - m)]);
            v = u;
        }
        theta = std::min(theta, ra[v]);
        // apply
        std::size_t root = v;
        v = m + jstar;
        while (par[v] >= 0) {
            std::size_t u = (std::size_t)par[v];
            if (u < m && v >= m)
                flow[u * n + (v - m)] += theta;
            else if (u >= m && v < m)
                flow[v * n + (u - m)] = std::max(0.0, flow[v * n + (u - m)] - theta);
            v = u;
        }
        ra[root] -= theta;
        rb[jstar] -= theta;
        remaining -= theta;
        for (std::size_t w = 0; w < V; ++w)
            pot[w] += std::min(dist[w], dstar);
    }

    NeumaierSum s;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (flow[i * n + j] > 0.0) s.add(flow[i * n + j] * cost[i * n + j]);
    return s.value();
}

}  // namespace

double wasserstein1(const AtomicMeasure& mu, const AtomicMeasure& nu) {
    if (!mu.box.same_as(nu.box))
        throw argument_error("wasserstein1: measures live on different domain boxes");
    if (std::abs(mu.total_weight() - nu.total_weight()) > 1e-9)
        throw argument_error("wasserstein1: total masses differ");
    if (mu.box.dim == 1) return w1_line(mu, nu);
    if (mu.atoms.size() > 1024 || nu.atoms.size() > 1024)
        throw capacity_error("wasserstein1: exact planar transport supports at most 1024 "
                             "atoms per side, compact the inputs first");
    return w1_plane(mu, nu);
}

// ---- dual norm --------------------------------------------------------------

double dual_norm_estimate(const SignedAtomicMeasure& xi, const TestBank& bank, int k) {
    if (!xi.vanishes_on_constants)
        throw argument_error("dual_norm_estimate: functional must vanish on constants");
    if (k != bank.k)
        throw argument_error("dual_norm_estimate: bank is calibrated for a different order");
    double best = 0.0;
    for (const TestFunction& phi : bank.members) best = std::max(best, std::abs(pair(xi, phi)));
    return best;
}

double dual_norm_estimate(const FirstOrderDistribution& xi, const TestBank& bank, int k) {
    if (!xi.vanishes_on_constants)
        throw argument_error("dual_norm_estimate: functional must vanish on constants");
    if (k != bank.k)
        throw argument_error("dual_norm_estimate: bank is calibrated for a different order");
    double best = 0.0;
    for (const TestFunction& phi : bank.members) best = std::max(best, std::abs(pair(xi, phi)));
    return best;
}

// ---- compaction -------------------------------------------------------------

namespace {

struct BinAccum {
    NeumaierSum wsum;   // signed weight
    double asum = 0.0;  // centroid weight (abs)
    NeumaierSum cx, cy;
    NeumaierSum vx, vy;  // first-order payload
};

struct Lattice {
    const DomainBox* box;
    double cell;
    long long nx, ny;

    long long index(Vec2 p) const {
        long long ix = (long long)std::floor((p.x - box->lo.x) / cell);
        ix = std::min(std::max(ix, 0LL), nx - 1);
        if (box->dim == 1) return ix;
        long long iy = (long long)std::floor((p.y - box->lo.y) / cell);
        iy = std::min(std::max(iy, 0LL), ny - 1);
        return ix + nx * iy;
    }
};

Lattice make_lattice(const DomainBox& box, double cell) {
    Lattice lat;
    lat.box = &box;
    lat.cell = cell;
    lat.nx = std::max(1LL, (long long)std::ceil((box.hi.x - box.lo.x) / cell - 1e-12));
    lat.ny = box.dim == 2
                 ? std::max(1LL, (long long)std::ceil((box.hi.y - box.lo.y) / cell - 1e-12))
                 : 1;
    return lat;
}

// first-encounter slot assignment keeps the output order independent of the
// hash map's internal layout
template <class AtomRange, class Classify, class Deposit>
std::size_t bin_atoms(const Lattice& lat, const AtomRange& atoms, Classify cls, Deposit dep,
                      std::vector<BinAccum>& accs, std::vector<long long>& slot_of_atom) {
    std::unordered_map<long long, std::size_t> slots;
    slots.reserve(atoms.size() * 2);
    slot_of_atom.resize(atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        long long key = lat.index(atoms[i].x) * 2 + cls(atoms[i]);
        auto it = slots.find(key);
        std::size_t s;
        if (it == slots.end()) {
            s = accs.size();
            slots.emplace(key, s);
            accs.emplace_back();
        } else {
            s = it->second;
        }
        slot_of_atom[i] = (long long)s;
        dep(accs[s], atoms[i]);
    }
    return accs.size();
}

double grid_cell_size(const DomainBox& box, int budget, int classes) {
    int per_class = std::max(1, budget / classes);
    if (box.dim == 1) return (box.hi.x - box.lo.x) / per_class;
    int side = std::max(1, (int)std::floor(std::sqrt((double)per_class)));
    return std::max((box.hi.x - box.lo.x), (box.hi.y - box.lo.y)) / side;
}

}  // namespace

Compacted<AtomicMeasure> compact(const AtomicMeasure& mu, int budget, CompactMode mode) {
    if (budget < 1) throw argument_error("compact: budget must be positive");
    Compacted<AtomicMeasure> out;
    out.measure.box = mu.box;

    if (mode == CompactMode::quantile) {
        if (mu.box.dim != 1)
            throw argument_error("compact: quantile mode needs a one-dimensional domain");
        out.measure = quantile_discretization(mu, budget);
        out.bound = w1_line(mu, out.measure);
        return out;
    }

    if ((int)mu.atoms.size() <= budget) {
        out.measure = mu;
        out.bound = 0.0;
        return out;
    }

    auto run = [&](double cell, std::vector<BinAccum>& accs, std::vector<long long>& sl) {
        Lattice lat = make_lattice(mu.box, cell);
        return bin_atoms(
            lat, mu.atoms, [](const Atom&) { return 0LL; },
            [](BinAccum& b, const Atom& a) {
                b.wsum.add(a.w);
                b.asum += a.w;
                b.cx.add(a.w * a.x.x);
                b.cy.add(a.w * a.x.y);
            },
            accs, sl);
    };

    std::vector<BinAccum> accs;
    std::vector<long long> slot;
    double cell = grid_cell_size(mu.box, budget, 1);
    if (mode == CompactMode::grid) {
        run(cell, accs, slot);
    } else {  // merge: grow the radius until the cloud fits
        cell = mu.box.diameter() / std::max(1, budget);
        for (int round = 0; round < 64; ++round) {
            accs.clear();
            if (run(cell, accs, slot) <= (std::size_t)budget) break;
            cell *= 2.0;
        }
    }

    out.measure.atoms.reserve(accs.size());
    std::vector<Vec2> centroid(accs.size());
    for (std::size_t s = 0; s < accs.size(); ++s) {
        const BinAccum& b = accs[s];
        if (b.asum <= 0.0) continue;
        centroid[s] = {b.cx.value() / b.asum, b.cy.value() / b.asum};
        centroid[s] = mu.box.clamp(centroid[s]);
        out.measure.atoms.push_back({centroid[s], b.wsum.value()});
    }
    NeumaierSum bd;
    for (std::size_t i = 0; i < mu.atoms.size(); ++i) {
        Vec2 c = centroid[(std::size_t)slot[i]];
        bd.add(mu.atoms[i].w * std::hypot(mu.atoms[i].x.x - c.x, mu.atoms[i].x.y - c.y));
    }
    out.bound = bd.value();
    return out;
}

Compacted<SignedAtomicMeasure> compact(const SignedAtomicMeasure& mu, int budget,
                                       CompactMode mode) {
    if (budget < 1) throw argument_error("compact: budget must be positive");
    if (mode == CompactMode::quantile)
        throw argument_error("compact: quantile mode is not defined for signed measures");
    Compacted<SignedAtomicMeasure> out;
    out.measure.box = mu.box;
    out.measure.vanishes_on_constants = mu.vanishes_on_constants;
    if ((int)mu.atoms.size() <= budget) {
        out.measure = mu;
        out.bound = 0.0;
        return out;
    }

    auto run = [&](double cell, std::vector<BinAccum>& accs, std::vector<long long>& sl) {
        Lattice lat = make_lattice(mu.box, cell);
        return bin_atoms(
            lat, mu.atoms, [](const Atom& a) { return a.w < 0.0 ? 1LL : 0LL; },
            [](BinAccum& b, const Atom& a) {
                double aw = std::abs(a.w);
                b.wsum.add(a.w);
                b.asum += aw;
                b.cx.add(aw * a.x.x);
                b.cy.add(aw * a.x.y);
            },
            accs, sl);
    };

    std::vector<BinAccum> accs;
    std::vector<long long> slot;
    if (mode == CompactMode::grid) {
        run(grid_cell_size(mu.box, budget, 2), accs, slot);
    } else {
        double cell = 2.0 * mu.box.diameter() / std::max(1, budget);
        for (int round = 0; round < 64; ++round) {
            accs.clear();
            if (run(cell, accs, slot) <= (std::size_t)budget) break;
            cell *= 2.0;
        }
    }

    std::vector<Vec2> centroid(accs.size());
    for (std::size_t s = 0; s < accs.size(); ++s) {
        const BinAccum& b = accs[s];
        if (b.asum <= 0.0) continue;
        centroid[s] = mu.box.clamp({b.cx.value() / b.asum, b.cy.value() / b.asum});
        out.measure.atoms.push_back({centroid[s], b.wsum.value()});
    }
    NeumaierSum bd;
    for (std::size_t i = 0; i < mu.atoms.size(); ++i) {
        Vec2 c = centroid[(std::size_t)slot[i]];
        bd.add(std::abs(mu.atoms[i].w) *
               std::hypot(mu.atoms[i].x.x - c.x, mu.atoms[i].x.y - c.y));
    }
    out.bound = bd.value();
    if (mu.vanishes_on_constants) out.measure.fix_mass_zero();
    return out;
}

Compacted<FirstOrderDistribution> compact(const FirstOrderDistribution& xi, int budget,
                                          CompactMode mode) {
    if (budget < 1) throw argument_error("compact: budget must be positive");
    if (mode == CompactMode::quantile)
        throw argument_error("compact: quantile mode is not defined for first-order data");
    Compacted<FirstOrderDistribution> out;
    out.measure.box = xi.box;
    out.measure.vanishes_on_constants = xi.vanishes_on_constants;
    if ((int)xi.atoms.size() <= budget) {
        out.measure = xi;
        out.bound = 0.0;
        return out;
    }

    auto run = [&](double cell, std::vector<BinAccum>& accs, std::vector<long long>& sl) {
        Lattice lat = make_lattice(xi.box, cell);
        return bin_atoms(
            lat, xi.atoms, [](const FoAtom& a) { return a.w < 0.0 ? 1LL : 0LL; },
            [](BinAccum& b, const FoAtom& a) {
                double aw = std::abs(a.w) + norm2(a.v);
                b.wsum.add(a.w);
                b.asum += aw;
                b.cx.add(aw * a.x.x);
                b.cy.add(aw * a.x.y);
                b.vx.add(a.v.x);
                b.vy.add(a.v.y);
            },
            accs, sl);
    };

    std::vector<BinAccum> accs;
    std::vector<long long> slot;
    if (mode == CompactMode::grid) {
        run(grid_cell_size(xi.box, budget, 2), accs, slot);
    } else {
        double cell = 2.0 * xi.box.diameter() / std::max(1, budget);
        for (int round = 0; round < 64; ++round) {
            accs.clear();
            if (run(cell, accs, slot) <= (std::size_t)budget) break;
            cell *= 2.0;
        }
    }

    std::vector<Vec2> centroid(accs.size());
    for (std::size_t s = 0; s < accs.size(); ++s) {
        const BinAccum& b = accs[s];
        Vec2 c;
        if (b.asum > 0.0) {
            c = xi.box.clamp({b.cx.value() / b.asum, b.cy.value() / b.asum});
        } else {
            continue;
        }
        centroid[s] = c;
        out.measure.atoms.push_back({c, b.wsum.value(), {b.vx.value(), b.vy.value()}});
    }
    NeumaierSum bd;
    for (std::size_t i = 0; i < xi.atoms.size(); ++i) {
        Vec2 c = centroid[(std::size_t)slot[i]];
        double d = std::hypot(xi.atoms[i].x.x - c.x, xi.atoms[i].x.y - c.y);
        bd.add((std::abs(xi.atoms[i].w) + norm2(xi.atoms[i].v)) * d);
    }
    out.bound = bd.value();
    if (xi.vanishes_on_constants) out.measure.fix_mass_zero();
    return out;
}

// ---- mixtures ---------------------------------------------------------------

AtomicMeasure mix(const std::vector<std::pair<double, AtomicMeasure>>& terms) {
    if (terms.empty()) throw argument_error("mix: empty mixture");
    AtomicMeasure out;
    out.box = terms.front().second.box;
    NeumaierSum wm;
    for (const auto& [w, m] : terms) {
        if (w < -1e-15) throw argument_error("mix: mixture weights must be nonnegative");
        if (!m.box.same_as(out.box)) throw argument_error("mix: domain boxes differ");
        wm.add(w);
        for (const Atom& a : m.atoms) out.atoms.push_back({a.x, w * a.w});
    }
    if (std::abs(wm.value() - 1.0) > 1e-9)
        throw argument_error("mix: mixture weights must sum to 1");
    return out;
}

SignedAtomicMeasure mix_signed(
    const std::vector<std::pair<double, SignedAtomicMeasure>>& terms) {
    if (terms.empty()) throw argument_error("mix_signed: empty mixture");
    SignedAtomicMeasure out;
    out.box = terms.front().second.box;
    out.vanishes_on_constants = true;
    for (const auto& [w, m] : terms) {
        if (!m.box.same_as(out.box)) throw argument_error("mix_signed: domain boxes differ");
        out.vanishes_on_constants = out.vanishes_on_constants && m.vanishes_on_constants;
        for (const Atom& a : m.atoms) out.atoms.push_back({a.x, w * a.w});
    }
    return out;
}

FirstOrderDistribution mix_first_order(
    const std::vector<std::pair<double, FirstOrderDistribution>>& terms) {
    if (terms.empty()) throw argument_error("mix_first_order: empty mixture");
    FirstOrderDistribution out;
    out.box = terms.front().second.box;
    out.vanishes_on_constants = true;
    for (const auto& [w, m] : terms) {
        if (!m.box.same_as(out.box))
            throw argument_error("mix_first_order: domain boxes differ");
        out.vanishes_on_constants = out.vanishes_on_constants && m.vanishes_on_constants;
        for (const FoAtom& a : m.atoms) out.atoms.push_back({a.x, w * a.w, w * a.v});
    }
    return out;
}

AtomicMeasure quantile_discretization(const AtomicMeasure& mu, int N) {
    if (N < 1) throw argument_error("quantile_discretization: need N >= 1");
    if (mu.box.dim != 1)
        throw argument_error("quantile_discretization: defined on one-dimensional domains");
    std::vector<Atom> sorted = mu.atoms;
    std::sort(sorted.begin(), sorted.end(),
              [](const Atom& l, const Atom& r) { return l.x.x < r.x.x; });
    AtomicMeasure out;
    out.box = mu.box;
    out.atoms.reserve(N);
    if (sorted.empty()) {
        out.atoms.assign(static_cast<std::size_t>(N), {{mu.box.x0.x, 0.0}, 1.0 / N});
        return out;
    }
    // each output atom sits at the mass centroid of its quantile slice; atoms
    // straddling a slice boundary are split, which keeps the mean exact and the
    // discretization symmetric under x -> -x
    double total = mu.total_weight();
    double slice = total / N;
    std::size_t i = 0;
    double left = sorted[0].w;  // mass of atom i not yet assigned
    for (int j = 0; j < N; ++j) {
        double need = slice;
        NeumaierSum first;  // slice first moment
        while (need > 0.0 && i < sorted.size()) {
            double take = std::min(need, left);
            first.add(take * sorted[i].x.x);
            need -= take;
            left -= take;
            if (left <= 0.0 && i + 1 < sorted.size()) {
                ++i;
                left = sorted[i].w;
            } else if (left <= 0.0) {
                break;
            }
            if (need <= slice * 1e-15) break;
        }
        out.atoms.push_back({{first.value() / slice, 0.0}, 1.0 / N});
    }
    return out;
}

// ---- standard bank ----------------------------------------------------------

TestFunction coordinate_function(const DomainBox& box, int axis) {
    if (axis < 0 || axis >= box.dim) throw argument_error("coordinate_function: bad axis");
    TestFunction phi;
    phi.name = axis == 0 ? "coord_x" : "coord_y";
    Vec2 x0 = box.x0;
    phi.value = [x0, axis](const Vec2& p) { return axis == 0 ? p.x - x0.x : p.y - x0.y; };
    phi.gradient = [axis](const Vec2&) {
        return axis == 0 ? Vec2{1.0, 0.0} : Vec2{0.0, 1.0};
    };
    phi.hessian = [](const Vec2&) { return Mat2{0, 0, 0, 0}; };
    phi.d1 = 1.0;
    phi.d2 = phi.d3 = 0.0;
    phi.value_at_x0 = 0.0;
    return phi;
}

TestFunction constant_function(const DomainBox& box, double c) {
    (void)box;
    TestFunction phi;
    phi.name = "constant";
    phi.value = [c](const Vec2&) { return c; };
    phi.gradient = [](const Vec2&) { return Vec2{0.0, 0.0}; };
    phi.hessian = [](const Vec2&) { return Mat2{0, 0, 0, 0}; };
    phi.d1 = phi.d2 = phi.d3 = 0.0;
    phi.value_at_x0 = c;
    return phi;
}

namespace {

double axis_reach(const DomainBox& box, int axis) {
    if (axis == 0) return std::max(box.hi.x - box.x0.x, box.x0.x - box.lo.x);
    return std::max(box.hi.y - box.x0.y, box.x0.y - box.lo.y);
}

TestFunction square_member(const DomainBox& box, int axis, int k) {
    double r = axis_reach(box, axis);
    double raw1 = 2.0 * r, raw2 = 2.0, raw3 = 0.0;
    double norm = raw1 + (k >= 2 ? raw2 : 0.0) + (k >= 3 ? raw3 : 0.0);
    double a = 1.0 / norm;
    Vec2 x0 = box.x0;
    TestFunction phi;
    phi.name = axis == 0 ? "square_x" : "square_y";
    phi.value = [a, x0, axis](const Vec2& p) {
        double t = axis == 0 ? p.x - x0.x : p.y - x0.y;
        return a * t * t;
    };
    phi.gradient = [a, x0, axis](const Vec2& p) {
        double t = axis == 0 ? p.x - x0.x : p.y - x0.y;
        return axis == 0 ? Vec2{2.0 * a * t, 0.0} : Vec2{0.0, 2.0 * a * t};
    };
    phi.hessian = [a, axis](const Vec2&) {
        return axis == 0 ? Mat2{2.0 * a, 0, 0, 0} : Mat2{0, 0, 0, 2.0 * a};
    };
    phi.d1 = a * raw1;
    phi.d2 = a * raw2;
    phi.d3 = 0.0;
    phi.value_at_x0 = 0.0;
    return phi;
}

TestFunction cross_member(const DomainBox& box, int k) {
    double rx = axis_reach(box, 0), ry = axis_reach(box, 1);
    double raw1 = std::hypot(rx, ry), raw2 = 1.0;
    double norm = raw1 + (k >= 2 ? raw2 : 0.0);
    double a = 1.0 / norm;
    Vec2 x0 = box.x0;
    TestFunction phi;
    phi.name = "cross_xy";
    phi.value = [a, x0](const Vec2& p) { return a * (p.x - x0.x) * (p.y - x0.y); };
    phi.gradient = [a, x0](const Vec2& p) {
        return Vec2{a * (p.y - x0.y), a * (p.x - x0.x)};
    };
    phi.hessian = [a](const Vec2&) { return Mat2{0, a, a, 0}; };
    phi.d1 = a * raw1;
    phi.d2 = a * raw2;
    phi.d3 = 0.0;
    phi.value_at_x0 = 0.0;
    return phi;
}

TestFunction cubic_member(const DomainBox& box, int k) {
    double r = axis_reach(box, 0);
    double raw1 = 3.0 * r * r, raw2 = 6.0 * r, raw3 = 6.0;
    double norm = raw1 + (k >= 2 ? raw2 : 0.0) + (k >= 3 ? raw3 : 0.0);
    // shave the amplitude so the probe headroom on d3 stays inside the unit ball
    double a = (k >= 3 ? 1.0 - 2e-5 : 1.0) / norm;
    Vec2 x0 = box.x0;
    TestFunction phi;
    phi.name = "cubic_x";
    phi.value = [a, x0](const Vec2& p) {
        double t = p.x - x0.x;
        return a * t * t * t;
    };
    phi.gradient = [a, x0](const Vec2& p) {
        double t = p.x - x0.x;
        return Vec2{3.0 * a * t * t, 0.0};
    };
    phi.hessian = [a, x0](const Vec2& p) {
        double t = p.x - x0.x;
        return Mat2{6.0 * a * t, 0, 0, 0};
    };
    phi.d1 = a * raw1;
    phi.d2 = a * raw2;
    // headroom absorbs the difference-stencil noise in certification probes
    phi.d3 = a * raw3 + 1e-5;
    phi.value_at_x0 = 0.0;
    return phi;
}

TestFunction wave_member(const DomainBox& box, Vec2 u, double c, double phase, int k,
                         int tag) {
    double norm = c + (k >= 2 ? c * c : 0.0) + (k >= 3 ? c * c * c : 0.0);
    double a = (k >= 3 ? 1.0 - 2e-5 : 1.0) / norm;
    Vec2 x0 = box.x0;
    TestFunction phi;
    phi.name = "wave_" + std::to_string(tag);
    phi.value = [a, c, u, x0, phase](const Vec2& p) {
        return a * std::sin(c * dot(u, p - x0) + phase);
    };
    phi.gradient = [a, c, u, x0, phase](const Vec2& p) {
        return (a * c * std::cos(c * dot(u, p - x0) + phase)) * u;
    };
    phi.hessian = [a, c, u, x0, phase](const Vec2& p) {
        double s = -a * c * c * std::sin(c * dot(u, p - x0) + phase);
        return Mat2{s * u.x * u.x, s * u.x * u.y, s * u.y * u.x, s * u.y * u.y};
    };
    phi.d1 = a * c;
    phi.d2 = a * c * c;
    phi.d3 = a * c * c * c + 1e-5;
    phi.value_at_x0 = a * std::sin(phase);
    return phi;
}

}  // namespace

TestBank standard_bank(const DomainBox& box, int k, int size) {
    if (size < 4) throw argument_error("standard_bank: need at least 4 members");
    if (k < 1 || k > 3) throw argument_error("standard_bank: order k must be 1, 2 or 3");
    TestBank bank;
    bank.box = box;
    bank.k = k;
    bank.members.push_back(coordinate_function(box, 0));
    bank.members.push_back(square_member(box, 0, k));
    if (box.dim == 2) {
        bank.members.push_back(coordinate_function(box, 1));
        bank.members.push_back(square_member(box, 1, k));
        bank.members.push_back(cross_member(box, k));
    } else {
        bank.members.push_back(cubic_member(box, k));
    }

    std::vector<Vec2> dirs;
    if (box.dim == 1) {
        dirs.push_back({1.0, 0.0});
    } else {
        double s = std::sqrt(0.5);
        dirs = {{1.0, 0.0}, {0.0, 1.0}, {s, s}, {s, -s}};
    }
    const double phases[4] = {0.0, 1.5707963267948966, 0.7853981633974483,
                              2.356194490192345};
    double base_freq = 3.14159265358979323846 / box.diameter();
    int tag = 0;
    for (int m = 1; (int)bank.members.size() < size; ++m) {
        double c = base_freq * m;
        for (Vec2 u : dirs) {
            for (double ph : phases) {
                if ((int)bank.members.size() >= size) break;
                bank.members.push_back(wave_member(box, u, c, ph, k, tag++));
            }
        }
    }
    bank.validate();
    return bank;
}

// ---- serialization ----------------------------------------------------------

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

double parse_field(const std::string& s, std::size_t row) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b != e && (*b == ' ' || *b == '\t')) ++b;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc())
        throw argument_error("csv: bad numeric field '" + s + "' in row " +
                             std::to_string(row));
    return v;
}

std::vector<std::vector<double>> parse_rows(const std::string& text,
                                            const std::string& expect_header,
                                            std::size_t fields) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw argument_error("csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expect_header)
        throw argument_error("csv: expected header '" + expect_header + "', got '" + line +
                             "'");
    std::vector<std::vector<double>> rows;
    std::size_t rowno = 1;
    while (std::getline(in, line)) {
        ++rowno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells = split_line(line);
        if (cells.size() != fields)
            throw argument_error("csv: row " + std::to_string(rowno) + " has " +
                                 std::to_string(cells.size()) + " fields, expected " +
                                 std::to_string(fields));
        std::vector<double> vals(fields);
        for (std::size_t i = 0; i < fields; ++i) vals[i] = parse_field(cells[i], rowno);
        rows.push_back(std::move(vals));
    }
    return rows;
}

}  // namespace

std::string to_csv(const AtomicMeasure& mu) {
    std::string out = mu.box.dim == 1 ? "x,w\n" : "x,y,w\n";
    for (const Atom& a : mu.atoms) {
        std::vector<std::string> cells{format_double(a.x.x)};
        if (mu.box.dim == 2) cells.push_back(format_double(a.x.y));
        cells.push_back(format_double(a.w));
        out += join_csv_row(cells);
        out += '\n';
    }
    return out;
}

std::string to_csv(const SignedAtomicMeasure& mu) {
    std::string out = mu.box.dim == 1 ? "x,w\n" : "x,y,w\n";
    for (const Atom& a : mu.atoms) {
        std::vector<std::string> cells{format_double(a.x.x)};
        if (mu.box.dim == 2) cells.push_back(format_double(a.x.y));
        cells.push_back(format_double(a.w));
        out += join_csv_row(cells);
        out += '\n';
    }
    return out;
}

std::string to_csv(const FirstOrderDistribution& xi) {
    std::string out = xi.box.dim == 1 ? "x,w,vx\n" : "x,y,w,vx,vy\n";
    for (const FoAtom& a : xi.atoms) {
        std::vector<std::string> cells{format_double(a.x.x)};
        if (xi.box.dim == 2) cells.push_back(format_double(a.x.y));
        cells.push_back(format_double(a.w));
        cells.push_back(format_double(a.v.x));
        if (xi.box.dim == 2) cells.push_back(format_double(a.v.y));
        out += join_csv_row(cells);
        out += '\n';
    }
    return out;
}

AtomicMeasure atomic_measure_from_csv(const std::string& text, const DomainBox& box) {
    const bool planar = box.dim == 2;
    auto rows = parse_rows(text, planar ? "x,y,w" : "x,w", planar ? 3 : 2);
    AtomicMeasure mu;
    mu.box = box;
    mu.atoms.reserve(rows.size());
    for (const auto& r : rows)
        mu.atoms.push_back({{r[0], planar ? r[1] : 0.0}, planar ? r[2] : r[1]});
    double t = mu.total_weight();
    if (std::abs(t - 1.0) > 1e-6)
        throw argument_error("csv: probability weights must sum to 1");
    mu.renormalize();
    return mu;
}

SignedAtomicMeasure signed_measure_from_csv(const std::string& text, const DomainBox& box) {
    const bool planar = box.dim == 2;
    auto rows = parse_rows(text, planar ? "x,y,w" : "x,w", planar ? 3 : 2);
    SignedAtomicMeasure mu;
    mu.box = box;
    mu.atoms.reserve(rows.size());
    for (const auto& r : rows)
        mu.atoms.push_back({{r[0], planar ? r[1] : 0.0}, planar ? r[2] : r[1]});
    double scale = std::max(1.0, mu.total_abs_weight());
    mu.vanishes_on_constants = std::abs(mu.total_weight()) <= 1e-6 * scale;
    if (mu.vanishes_on_constants) mu.fix_mass_zero();
    return mu;
}

FirstOrderDistribution first_order_from_csv(const std::string& text, const DomainBox& box) {
    const bool planar = box.dim == 2;
    auto rows = parse_rows(text, planar ? "x,y,w,vx,vy" : "x,w,vx", planar ? 5 : 3);
    FirstOrderDistribution xi;
    xi.box = box;
    xi.atoms.reserve(rows.size());
    for (const auto& r : rows) {
        if (planar)
            xi.atoms.push_back({{r[0], r[1]}, r[2], {r[3], r[4]}});
        else
            xi.atoms.push_back({{r[0], 0.0}, r[1], {r[2], 0.0}});
    }
    double scale = std::max(1.0, xi.total_abs_weight());
    xi.vanishes_on_constants = std::abs(xi.total_weight()) <= 1e-6 * scale;
    if (xi.vanishes_on_constants) xi.fix_mass_zero();
    return xi;
}

}  // namespace skewresp
