#include "skewresp/section.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skewresp/systems.hpp"
#include "skewresp/util.hpp"
#include "json.hpp"

namespace skewresp {

namespace fs = std::filesystem;

OmegaGrid OmegaGrid::uniform(double lo, double hi, int M) {
    if (M < 2 || !(hi > lo)) throw argument_error("OmegaGrid::uniform: need M >= 2 and hi > lo");
    OmegaGrid g;
    g.lo = lo;
    g.hi = hi;
    g.nodes.resize(static_cast<std::size_t>(M));
    for (int j = 0; j < M; ++j)
        g.nodes[static_cast<std::size_t>(j)] = lo + (hi - lo) * j / (M - 1);
    g.nodes.back() = hi;
    return g;
}

OmegaGrid OmegaGrid::graded(double lo, double hi, double first_step, double ratio,
                            double max_step) {
    if (!(hi > lo) || !(first_step > 0.0) || !(ratio > 1.0) || !(max_step > 0.0))
        throw argument_error("OmegaGrid::graded: bad parameters");
    OmegaGrid g;
    g.lo = lo;
    g.hi = hi;
    g.nodes.push_back(lo);
    double step = first_step;
    double w = lo;
    while (w < hi) {
        w += step;
        if (w >= hi - 0.25 * step) {
            w = hi;
        }
        g.nodes.push_back(w);
        step = std::min(step * ratio, max_step);
    }
    g.validate();
    return g;
}

void OmegaGrid::validate() const {
    if (nodes.size() < 2) throw argument_error("OmegaGrid: need at least two nodes");
    if (!(hi > lo)) throw argument_error("OmegaGrid: empty interval");
    for (std::size_t j = 0; j < nodes.size(); ++j) {
        if (!std::isfinite(nodes[j])) throw argument_error("OmegaGrid: non-finite node");
        if (nodes[j] < lo - 1e-12 || nodes[j] > hi + 1e-12)
            throw argument_error("OmegaGrid: node outside interval");
        if (j > 0 && !(nodes[j] > nodes[j - 1]))
            throw argument_error("OmegaGrid: nodes must be strictly increasing");
    }
}

bool OmegaGrid::same_as(const OmegaGrid& o, double tol) const {
    if (nodes.size() != o.nodes.size()) return false;
    if (std::abs(lo - o.lo) > tol || std::abs(hi - o.hi) > tol) return false;
    for (std::size_t j = 0; j < nodes.size(); ++j)
        if (std::abs(nodes[j] - o.nodes[j]) > tol) return false;
    return true;
}

std::size_t OmegaGrid::bracket(double w, double* lambda_left) const {
    // callers must reject w outside [lo, hi] themselves; inside the interval but
    // off the node span we clamp to the end node
    if (w <= nodes.front()) {
        if (lambda_left) *lambda_left = 1.0;
        return 0;
    }
    if (w >= nodes.back()) {
        if (lambda_left) *lambda_left = 0.0;
        return nodes.size() - 2;
    }
    auto it = std::upper_bound(nodes.begin(), nodes.end(), w);
    std::size_t j = static_cast<std::size_t>(it - nodes.begin()) - 1;
    if (j > nodes.size() - 2) j = nodes.size() - 2;
    if (lambda_left) {
        double h = nodes[j + 1] - nodes[j];
        *lambda_left = (nodes[j + 1] - w) / h;
    }
    return j;
}

const AtomicMeasure& Section::node(std::size_t j) const {
    if (constant_flag) return values.at(0);
    return values.at(j);
}
AtomicMeasure& Section::node(std::size_t j) {
    if (constant_flag) return values.at(0);
    return values.at(j);
}

void Section::validate(double tol) const {
    grid.validate();
    std::size_t want = constant_flag ? 1 : grid.size();
    if (values.size() != want) throw argument_error("Section: node count does not match grid");
    for (const auto& v : values) v.validate(tol);
}

const SignedAtomicMeasure& SignedSection::node(std::size_t j) const {
    if (constant_flag) return values.at(0);
    return values.at(j);
}
SignedAtomicMeasure& SignedSection::node(std::size_t j) {
    if (constant_flag) return values.at(0);
    return values.at(j);
}

void SignedSection::validate(double tol) const {
    grid.validate();
    std::size_t want = constant_flag ? 1 : grid.size();
    if (values.size() != want) throw argument_error("SignedSection: node count does not match grid");
    for (const auto& v : values) v.validate(tol);
}

const FirstOrderDistribution& FirstOrderSection::node(std::size_t j) const {
    if (constant_flag) return values.at(0);
    return values.at(j);
}
FirstOrderDistribution& FirstOrderSection::node(std::size_t j) {
    if (constant_flag) return values.at(0);
    return values.at(j);
}

void ConvergenceReport::finalize() {
    iterations = static_cast<int>(distances.size());
    terminal_distance = distances.empty() ? 0.0 : distances.back();
    std::vector<double> ratios;
    for (std::size_t i = 1; i < distances.size(); ++i) {
        if (distances[i - 1] >= 1e-14 && distances[i] >= 1e-14)
            ratios.push_back(distances[i] / distances[i - 1]);
    }
    std::size_t tail = std::min(ratios.size(),
                                std::max<std::size_t>(4, ratios.size() / 3));
    lambda_valid = tail >= 4;
    if (tail == 0 || ratios.empty()) {
        lambda_hat = 0.0;
        lambda_valid = false;
        return;
    }
    std::vector<double> t(ratios.end() - static_cast<std::ptrdiff_t>(tail), ratios.end());
    std::sort(t.begin(), t.end());
    std::size_t m = t.size();
    lambda_hat = (m % 2 == 1) ? t[m / 2] : 0.5 * (t[m / 2 - 1] + t[m / 2]);
}

std::string ConvergenceReport::to_csv() const {
    std::string out = "iter,dist,ratio\n";
    for (std::size_t i = 0; i < distances.size(); ++i) {
        double ratio = (i > 0 && distances[i - 1] >= 1e-14)
                           ? distances[i] / distances[i - 1]
                           : 0.0;
        out += join_csv_row({format_double(static_cast<double>(i)), format_double(distances[i]),
                             format_double(ratio)});
        out += "\n";
    }
    return out;
}

double sup_metric(const Section& a, const Section& b) {
    if (!a.grid.same_as(b.grid)) throw argument_error("sup_metric: sections live on different grids");
    if (a.constant_flag && b.constant_flag) return wasserstein1(a.values[0], b.values[0]);
    double best = 0.0;
    std::size_t M = a.grid.size();
    std::vector<double> d(M, 0.0);
    parallel_for(M, [&](std::size_t j) { d[j] = wasserstein1(a.node(j), b.node(j)); });
    for (std::size_t j = 0; j < M; ++j) best = std::max(best, d[j]);
    return best;
}

double sup_dual_norm(const SignedSection& s, const TestBank& bank, int k) {
    if (s.constant_flag) return dual_norm_estimate(s.values[0], bank, k);
    double best = 0.0;
    std::size_t M = s.grid.size();
    std::vector<double> d(M, 0.0);
    parallel_for(M, [&](std::size_t j) { d[j] = dual_norm_estimate(s.node(j), bank, k); });
    for (std::size_t j = 0; j < M; ++j) best = std::max(best, d[j]);
    return best;
}

double sup_dual_norm(const FirstOrderSection& s, const TestBank& bank, int k) {
    if (s.constant_flag) return dual_norm_estimate(s.values[0], bank, k);
    double best = 0.0;
    std::size_t M = s.grid.size();
    std::vector<double> d(M, 0.0);
    parallel_for(M, [&](std::size_t j) { d[j] = dual_norm_estimate(s.node(j), bank, k); });
    for (std::size_t j = 0; j < M; ++j) best = std::max(best, d[j]);
    return best;
}

double l1_dual_norm(const SignedSection& s, const TestBank& bank, int k,
                    const BaseDensity& density) {
    const auto& nodes = s.grid.nodes;
    std::size_t M = nodes.size();
    std::vector<double> d(M, 0.0);
    parallel_for(M, [&](std::size_t j) {
        d[j] = dual_norm_estimate(s.node(j), bank, k) * density.value(nodes[j]);
    });
    NeumaierSum acc;
    for (std::size_t j = 0; j + 1 < M; ++j)
        acc.add(0.5 * (nodes[j + 1] - nodes[j]) * (d[j] + d[j + 1]));
    return acc.value();
}

namespace {

template <typename S, typename M>
M interpolate_impl(const S& s, double omega, M (*mixer)(const M&, const M&, double)) {
    if (s.constant_flag) return s.values[0];
    if (omega < s.grid.lo - 1e-12 || omega > s.grid.hi + 1e-12)
        throw domain_violation("interpolate: point outside the base interval");
    double lam = 0.0;
    std::size_t j = s.grid.bracket(omega, &lam);
    if (lam >= 1.0) return s.values[j];
    if (lam <= 0.0) return s.values[j + 1];
    return mixer(s.values[j], s.values[j + 1], lam);
}

AtomicMeasure mix_prob(const AtomicMeasure& a, const AtomicMeasure& b, double lam) {
    return mix({{lam, a}, {1.0 - lam, b}});
}
SignedAtomicMeasure mix_sgn(const SignedAtomicMeasure& a, const SignedAtomicMeasure& b,
                            double lam) {
    return mix_signed({{lam, a}, {1.0 - lam, b}});
}
FirstOrderDistribution mix_fo(const FirstOrderDistribution& a, const FirstOrderDistribution& b,
                              double lam) {
    return mix_first_order({{lam, a}, {1.0 - lam, b}});
}

}  // namespace

AtomicMeasure interpolate(const Section& s, double omega) {
    return interpolate_impl(s, omega, &mix_prob);
}
SignedAtomicMeasure interpolate(const SignedSection& s, double omega) {
    return interpolate_impl(s, omega, &mix_sgn);
}
FirstOrderDistribution interpolate(const FirstOrderSection& s, double omega) {
    return interpolate_impl(s, omega, &mix_fo);
}

Section constant_section(const OmegaGrid& grid, const AtomicMeasure& mu) {
    grid.validate();
    mu.validate();
    Section s;
    s.grid = grid;
    s.constant_flag = true;
    s.values.push_back(mu);
    return s;
}

SignedSection constant_signed_section(const OmegaGrid& grid, const SignedAtomicMeasure& mu) {
    grid.validate();
    SignedSection s;
    s.grid = grid;
    s.constant_flag = true;
    s.vanishes_on_constants = mu.vanishes_on_constants;
    s.values.push_back(mu);
    return s;
}

SignedSection section_difference(const Section& a, const Section& b) {
    if (!a.grid.same_as(b.grid))
        throw argument_error("section_difference: sections live on different grids");
    SignedSection out;
    out.grid = a.grid;
    out.vanishes_on_constants = true;
    out.constant_flag = a.constant_flag && b.constant_flag;
    std::size_t M = out.constant_flag ? 1 : a.grid.size();
    out.values.resize(M);
    for (std::size_t j = 0; j < M; ++j) {
        SignedAtomicMeasure d;
        d.box = a.node(j).box;
        d.vanishes_on_constants = true;
        for (const auto& atm : a.node(j).atoms) d.atoms.push_back({atm.x, atm.w});
        for (const auto& atm : b.node(j).atoms) d.atoms.push_back({atm.x, -atm.w});
        d.fix_mass_zero();
        out.values[j] = std::move(d);
    }
    return out;
}

namespace {

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw argument_error("cannot open for writing: " + p.string());
    out << body;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw argument_error("cannot open for reading: " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string grid_csv(const OmegaGrid& g) {
    std::string out = "j,omega\n";
    for (std::size_t j = 0; j < g.nodes.size(); ++j) {
        out += join_csv_row({format_double(static_cast<double>(j)), format_double(g.nodes[j])});
        out += "\n";
    }
    return out;
}

OmegaGrid grid_from_csv(const std::string& body, double lo, double hi) {
    OmegaGrid g;
    g.lo = lo;
    g.hi = hi;
    std::istringstream in(body);
    std::string line;
    if (!std::getline(in, line)) throw argument_error("grid.csv: empty");
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line != "j,omega") throw argument_error("grid.csv: bad header");
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw argument_error("grid.csv: bad row");
        g.nodes.push_back(std::stod(line.substr(comma + 1)));
    }
    g.validate();
    return g;
}

template <typename S>
void save_impl(const std::string& dir, const S& s, const char* kind) {
    s.grid.validate();
    fs::create_directories(dir);
    write_file(fs::path(dir) / "grid.csv", grid_csv(s.grid));
    std::size_t count = s.constant_flag ? 1 : s.grid.size();
    for (std::size_t j = 0; j < count; ++j)
        write_file(fs::path(dir) / ("node_" + std::to_string(j) + ".csv"), to_csv(s.values[j]));
    nlohmann::json meta;
    meta["kind"] = kind;
    meta["k"] = 3;
    meta["constant"] = s.constant_flag;
    meta["nodes"] = s.grid.size();
    meta["omega_lo"] = s.grid.lo;
    meta["omega_hi"] = s.grid.hi;
    meta["dim"] = s.values.at(0).box.dim;
    meta["box_lo"] = {s.values.at(0).box.lo.x, s.values.at(0).box.lo.y};
    meta["box_hi"] = {s.values.at(0).box.hi.x, s.values.at(0).box.hi.y};
    write_file(fs::path(dir) / "meta.json", meta.dump(2) + "\n");
}

nlohmann::json load_meta(const std::string& dir, const char* kind) {
    auto meta = nlohmann::json::parse(read_file(fs::path(dir) / "meta.json"));
    if (meta.at("kind").get<std::string>() != kind)
        throw argument_error("section directory holds a different section kind");
    return meta;
}

DomainBox box_from_meta(const nlohmann::json& meta) {
    int dim = meta.at("dim").get<int>();
    auto lo = meta.at("box_lo");
    auto hi = meta.at("box_hi");
    if (dim == 1) return DomainBox::interval(lo[0].get<double>(), hi[0].get<double>());
    return DomainBox::rectangle(lo[0].get<double>(), hi[0].get<double>(), lo[1].get<double>(),
                                hi[1].get<double>());
}

}  // namespace

void save_section(const std::string& dir, const Section& s) { save_impl(dir, s, "probability"); }
void save_section(const std::string& dir, const SignedSection& s) { save_impl(dir, s, "signed"); }

Section load_section(const std::string& dir) {
    auto meta = load_meta(dir, "probability");
    Section s;
    s.constant_flag = meta.at("constant").get<bool>();
    s.grid = grid_from_csv(read_file(fs::path(dir) / "grid.csv"),
                           meta.at("omega_lo").get<double>(), meta.at("omega_hi").get<double>());
    if (s.grid.size() != meta.at("nodes").get<std::size_t>())
        throw argument_error("grid.csv node count disagrees with meta.json");
    DomainBox box = box_from_meta(meta);
    std::size_t count = s.constant_flag ? 1 : s.grid.size();
    for (std::size_t j = 0; j < count; ++j)
        s.values.push_back(atomic_measure_from_csv(
            read_file(fs::path(dir) / ("node_" + std::to_string(j) + ".csv")), box));
    s.validate(1e-9);
    return s;
}

SignedSection load_signed_section(const std::string& dir) {
    auto meta = load_meta(dir, "signed");
    SignedSection s;
    s.constant_flag = meta.at("constant").get<bool>();
    s.grid = grid_from_csv(read_file(fs::path(dir) / "grid.csv"),
                           meta.at("omega_lo").get<double>(), meta.at("omega_hi").get<double>());
    DomainBox box = box_from_meta(meta);
    std::size_t count = s.constant_flag ? 1 : s.grid.size();
    for (std::size_t j = 0; j < count; ++j)
        s.values.push_back(signed_measure_from_csv(
            read_file(fs::path(dir) / ("node_" + std::to_string(j) + ".csv")), box));
    s.validate(1e-9);
    return s;
}

}  // namespace skewresp
