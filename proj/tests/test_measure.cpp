#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "skewresp/measure.hpp"

using namespace skewresp;

namespace {

AtomicMeasure delta(const DomainBox& box, double x, double y = 0.0) {
    AtomicMeasure m;
    m.box = box;
    m.atoms = {{{x, y}, 1.0}};
    return m;
}

AtomicMeasure random_cloud(const DomainBox& box, int n, std::uint64_t seed) {
    AtomicMeasure m;
    m.box = box;
    NeumaierSum tot;
    for (int i = 0; i < n; ++i) {
        double wx = box.lo.x + (box.hi.x - box.lo.x) * u01(seed, 3 * i);
        double wy = box.dim == 2 ? box.lo.y + (box.hi.y - box.lo.y) * u01(seed, 3 * i + 1)
                                 : 0.0;
        double w = 0.05 + u01(seed, 3 * i + 2);
        m.atoms.push_back({{wx, wy}, w});
        tot.add(w);
    }
    for (Atom& a : m.atoms) a.w /= tot.value();
    return m;
}

TestFunction square_raw(const DomainBox& box) {
    TestFunction phi;
    phi.name = "x^2";
    phi.value = [](const Vec2& p) { return p.x * p.x; };
    phi.gradient = [](const Vec2& p) { return Vec2{2.0 * p.x, 0.0}; };
    phi.hessian = [](const Vec2&) { return Mat2{2.0, 0, 0, 0}; };
    phi.d1 = 2.0 * std::max(std::abs(box.lo.x), std::abs(box.hi.x));
    phi.d2 = 2.0;
    phi.d3 = 0.0;
    phi.value_at_x0 = box.x0.x * box.x0.x;
    return phi;
}

// phi. h for the duality checks: wraps phi circ h with exact chain rule
TestFunction composed(const TestFunction& phi, const SmoothMap& h) {
    TestFunction out;
    out.name = phi.name + "_composed";
    out.value = [phi, h](const Vec2& p) { return phi.value(h.value(p)); };
    out.gradient = [phi, h](const Vec2& p) {
        Vec2 g = phi.gradient(h.value(p));
        Mat2 J = h.jac(p);
        return Vec2{J.a * g.x + J.c * g.y, J.b * g.x + J.d * g.y};  // J^T g
    };
    out.hessian = [](const Vec2&) { return Mat2{0, 0, 0, 0}; };
    return out;
}

}  // namespace

TEST_CASE("push forward moves atoms through the map") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    SmoothMap h = SmoothMap::affine(Mat2{0.5, 0, 0, 0}, Vec2{0.5, 0});
    AtomicMeasure img = push_forward(delta(box, 0.0), h);
    REQUIRE(img.atoms.size() == 1);
    CHECK(img.atoms[0].x.x == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(img.atoms[0].w == 1.0);

    AtomicMeasure mu = random_cloud(box, 12, 7);
    AtomicMeasure same = push_forward(mu, SmoothMap::identity());
    for (std::size_t i = 0; i < mu.atoms.size(); ++i) {
        CHECK(same.atoms[i].x.x == mu.atoms[i].x.x);
        CHECK(same.atoms[i].w == mu.atoms[i].w);
    }
}

TEST_CASE("push forward flags escaping atoms") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    SmoothMap h = SmoothMap::affine(Mat2{2.0, 0, 0, 0}, Vec2{0.0, 0});
    AtomicMeasure mu = delta(box, 0.9);
    CHECK_THROWS_AS(push_forward(mu, h), domain_violation);
}

TEST_CASE("first-order push forward matches the chain rule") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    FirstOrderDistribution xi;
    xi.box = box;
    xi.atoms = {{{0.0, 0.0}, 0.0, {1.0, 0.0}}};
    SmoothMap h = SmoothMap::affine(Mat2{0.5, 0, 0, 0}, Vec2{0.0, 0});

    TestFunction sq = square_raw(box);
    FirstOrderDistribution img = push_forward(xi, h);
    CHECK(img.atoms[0].v.x == doctest::Approx(0.5).epsilon(1e-15));
    // <h_* xi, phi> = <xi, phi . h> exercised with phi(x) = x^2
    CHECK(pair(img, sq) == doctest::Approx(pair(xi, composed(sq, h))).epsilon(1e-14));

    // doubling map on a wider box: action becomes 2 phi'(0)
    DomainBox wide = DomainBox::interval(-4.0, 4.0);
    FirstOrderDistribution eta;
    eta.box = wide;
    eta.atoms = {{{1.0, 0.0}, 0.0, {1.0, 0.0}}};
    SmoothMap dbl = SmoothMap::affine(Mat2{2.0, 0, 0, 0}, Vec2{0.0, 0});
    TestFunction sqw = square_raw(wide);
    FirstOrderDistribution img2 = push_forward(eta, dbl);
    CHECK(pair(img2, sqw) == doctest::Approx(2.0 * (2.0 * 2.0)).epsilon(1e-14));
}

TEST_CASE("pairing is the exact weighted sum") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    TestFunction sq = square_raw(box);
    CHECK(pair(delta(box, 0.37), sq) == doctest::Approx(0.37 * 0.37).epsilon(1e-15));

    AtomicMeasure mu = random_cloud(box, 33, 11);
    CHECK(pair(mu, constant_function(box, 1.0)) == doctest::Approx(1.0).epsilon(1e-14));

    AtomicMeasure half;
    half.box = box;
    half.atoms = {{{0.0, 0.0}, 0.5}, {{1.0, 0.0}, 0.5}};
    CHECK(pair(half, sq) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("W1 basics on the line") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    CHECK(wasserstein1(delta(box, -0.3), delta(box, 0.45)) ==
          doctest::Approx(0.75).epsilon(1e-14));
    AtomicMeasure mu = random_cloud(box, 40, 3);
    CHECK(wasserstein1(mu, mu) == 0.0);

    AtomicMeasure a, b;
    a.box = b.box = DomainBox::interval(0.0, 1.0);
    a.atoms = {{{0.0, 0.0}, 0.5}, {{1.0, 0.0}, 0.5}};
    b.atoms = {{{0.25, 0.0}, 0.5}, {{0.75, 0.0}, 0.5}};
    CHECK(wasserstein1(a, b) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("planar W1 agrees with the transport LP oracle") {
    DomainBox box = DomainBox::rectangle(0.0, 1.0, 0.0, 1.0);
    {
        AtomicMeasure a, b;
        a.box = b.box = box;
        a.atoms = {{{0.0, 0.0}, 0.5}, {{1.0, 0.0}, 0.5}};
        b.atoms = {{{0.25, 0.0}, 0.5}, {{0.75, 0.0}, 0.5}};
        CHECK(wasserstein1(a, b) == doctest::Approx(0.25).epsilon(1e-10));
    }
    {
        AtomicMeasure a, b;
        a.box = b.box = box;
        NeumaierSum ta, tb;
        for (int i = 0; i < 7; ++i) {
            double w = 1.0 + ((i * 13) % 5);
            a.atoms.push_back({{((7 * i + 3) % 23) / 23.0, ((11 * i + 5) % 19) / 19.0}, w});
            ta.add(w);
        }
        for (int j = 0; j < 9; ++j) {
            double w = 1.0 + ((j * 7) % 4);
            b.atoms.push_back({{((5 * j + 2) % 29) / 29.0, ((17 * j + 7) % 31) / 31.0}, w});
            tb.add(w);
        }
        for (Atom& at : a.atoms) at.w /= ta.value();
        for (Atom& at : b.atoms) at.w /= tb.value();
        CHECK(wasserstein1(a, b) == doctest::Approx(0.24749103867012412).epsilon(5e-9));
    }
    {
        AtomicMeasure a, b;
        a.box = b.box = box;
        NeumaierSum ta, tb;
        for (int i = 0; i < 25; ++i) {
            double w = 1.0 + ((i * i) % 7);
            a.atoms.push_back({{((3 * i * i + 5 * i + 1) % 97) / 97.0,
                                ((2 * i * i + 7 * i + 3) % 89) / 89.0},
                               w});
            ta.add(w);
        }
        for (int j = 0; j < 25; ++j) {
            double w = 1.0 + ((3 * j) % 5);
            b.atoms.push_back({{((5 * j * j + j + 2) % 83) / 83.0,
                                ((7 * j * j + 3 * j + 1) % 79) / 79.0},
                               w});
            tb.add(w);
        }
        for (Atom& at : a.atoms) at.w /= ta.value();
        for (Atom& at : b.atoms) at.w /= tb.value();
        CHECK(wasserstein1(a, b) == doctest::Approx(0.15841609230203663).epsilon(5e-9));
    }
}

TEST_CASE("planar W1 matches the line solver on collinear clouds") {
    DomainBox line = DomainBox::interval(0.0, 1.0);
    DomainBox plane = DomainBox::rectangle(0.0, 1.0, 0.0, 1.0);
    for (std::uint64_t s = 0; s < 8; ++s) {
        AtomicMeasure mu = random_cloud(line, 25, 100 + s);
        AtomicMeasure nu = random_cloud(line, 31, 200 + s);
        AtomicMeasure mu2 = mu, nu2 = nu;
        mu2.box = nu2.box = plane;
        CHECK(wasserstein1(mu2, nu2) ==
              doctest::Approx(wasserstein1(mu, nu)).epsilon(1e-9));
    }
}

TEST_CASE("W1 rejects oversize planar supports and mismatched inputs") {
    DomainBox plane = DomainBox::rectangle(0.0, 1.0, 0.0, 1.0);
    AtomicMeasure big;
    big.box = plane;
    for (int i = 0; i < 1025; ++i)
        big.atoms.push_back({{(i % 37) / 37.0, (i % 41) / 41.0}, 1.0 / 1025});
    AtomicMeasure small = random_cloud(plane, 4, 5);
    CHECK_THROWS_AS(wasserstein1(big, small), capacity_error);

    AtomicMeasure other = random_cloud(DomainBox::interval(0.0, 1.0), 4, 6);
    CHECK_THROWS_AS(wasserstein1(small, other), argument_error);
}

TEST_CASE("W1 metric axioms hold on random clouds") {
    for (int dim = 1; dim <= 2; ++dim) {
        DomainBox box = dim == 1 ? DomainBox::interval(-1.0, 1.0)
                                 : DomainBox::rectangle(-1.0, 1.0, -1.0, 1.0);
        for (std::uint64_t s = 0; s < 4; ++s) {
            AtomicMeasure x = random_cloud(box, 14, 1000 + s);
            AtomicMeasure y = random_cloud(box, 15, 2000 + s);
            AtomicMeasure z = random_cloud(box, 13, 3000 + s);
            double dxy = wasserstein1(x, y), dyx = wasserstein1(y, x);
            double dxz = wasserstein1(x, z), dzy = wasserstein1(z, y);
            CHECK(std::abs(dxy - dyx) <= 1e-10);
            CHECK(dxy <= dxz + dzy + 1e-10);
            CHECK(wasserstein1(x, x) <= 1e-12);
            CHECK(dxy >= 0.0);
        }
    }
}

TEST_CASE("push forward contracts W1 by the Lipschitz constant") {
    for (int dim = 1; dim <= 2; ++dim) {
        DomainBox box = dim == 1 ? DomainBox::interval(-1.0, 1.0)
                                 : DomainBox::rectangle(-1.0, 1.0, -1.0, 1.0);
        for (std::uint64_t s = 0; s < 6; ++s) {
            double l11 = 0.8 * u01(s, 1) - 0.4, l12 = dim == 2 ? 0.4 * u01(s, 2) - 0.2 : 0;
            double l21 = dim == 2 ? 0.4 * u01(s, 3) - 0.2 : 0, l22 = 0.8 * u01(s, 4) - 0.4;
            Mat2 A{l11, l12, l21, l22};
            SmoothMap h = SmoothMap::affine(A, Vec2{0.05, dim == 2 ? -0.03 : 0.0});
            AtomicMeasure mu = random_cloud(box, 18, 4000 + s);
            AtomicMeasure nu = random_cloud(box, 17, 5000 + s);
            double lhs = wasserstein1(push_forward(mu, h), push_forward(nu, h));
            CHECK(lhs <= h.lip * wasserstein1(mu, nu) + 1e-12);
        }
    }
}

TEST_CASE("pairing commutes with push forward") {
    DomainBox box = DomainBox::rectangle(-1.0, 1.0, -1.0, 1.0);
    TestBank bank = standard_bank(box, 3, 12);
    SmoothMap h = SmoothMap::affine(Mat2{0.4, 0.1, -0.2, 0.3}, Vec2{0.1, 0.05});
    AtomicMeasure mu = random_cloud(box, 21, 42);
    for (const TestFunction& phi : bank.members)
        CHECK(pair(push_forward(mu, h), phi) ==
              doctest::Approx(pair(mu, composed(phi, h))).epsilon(1e-12));

    FirstOrderDistribution xi;
    xi.box = box;
    for (int i = 0; i < 9; ++i)
        xi.atoms.push_back({{u01(9, 2 * i) - 0.5, u01(9, 2 * i + 1) - 0.5},
                            (i % 2 ? 1.0 : -1.0) / 9.0,
                            {0.1 * u01(19, i), -0.1 * u01(29, i)}});
    xi.fix_mass_zero();
    for (const TestFunction& phi : bank.members)
        CHECK(pair(push_forward(xi, h), phi) ==
              doctest::Approx(pair(xi, composed(phi, h))).epsilon(1e-12));
}

TEST_CASE("dual norm estimate attains the dipole distance") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    TestBank bank = standard_bank(box, 3, 64);
    SignedAtomicMeasure xi;
    xi.box = box;
    xi.atoms = {{{0.3, 0.0}, 1.0}, {{0.7, 0.0}, -1.0}};
    double est = dual_norm_estimate(xi, bank, 3);
    CHECK(est == doctest::Approx(0.4).epsilon(1e-12));

    TestBank dense = standard_bank(box, 3, 10000);
    double dense_est = dual_norm_estimate(xi, dense, 3);
    CHECK(dense_est >= est - 1e-12);
    CHECK(dense_est <= 1.05 * est);

    SignedAtomicMeasure zero;
    zero.box = box;
    CHECK(dual_norm_estimate(zero, bank, 3) == 0.0);

    CHECK_THROWS_AS(dual_norm_estimate(xi, bank, 2), argument_error);
    SignedAtomicMeasure bad = xi;
    bad.vanishes_on_constants = false;
    CHECK_THROWS_AS(dual_norm_estimate(bad, bank, 3), argument_error);
}

TEST_CASE("compaction respects budget and reported bound") {
    DomainBox box = DomainBox::interval(0.0, 1.0);

    AtomicMeasure tiny = random_cloud(box, 3, 1);
    auto same = compact(tiny, 3, CompactMode::merge);
    CHECK(same.bound == 0.0);
    CHECK(same.measure.atoms.size() == 3);

    AtomicMeasure two;
    two.box = box;
    double delta_sep = 0.01;
    two.atoms = {{{0.5 - delta_sep / 2, 0.0}, 0.5}, {{0.5 + delta_sep / 2, 0.0}, 0.5}};
    auto merged = compact(two, 1, CompactMode::merge);
    REQUIRE(merged.measure.atoms.size() == 1);
    CHECK(merged.measure.atoms[0].x.x == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(merged.bound <= delta_sep / 2 + 1e-15);
    CHECK(wasserstein1(two, merged.measure) <= merged.bound + 1e-15);

    AtomicMeasure unif;
    unif.box = box;
    for (int i = 0; i < 1000; ++i) unif.atoms.push_back({{(i + 0.5) / 1000.0, 0.0}, 1e-3});
    auto q = compact(unif, 100, CompactMode::quantile);
    CHECK(q.measure.atoms.size() == 100);
    CHECK(q.bound <= 1.0 / 200.0);
    CHECK(q.bound == doctest::Approx(0.0025).epsilon(0.02));
    CHECK(wasserstein1(unif, q.measure) <= q.bound + 1e-15);

    for (auto mode : {CompactMode::merge, CompactMode::grid}) {
        for (std::uint64_t s = 0; s < 3; ++s) {
            AtomicMeasure mu = random_cloud(box, 300, 7000 + s);
            auto c = compact(mu, 40, mode);
            CHECK(c.measure.atoms.size() <= 40);
            c.measure.validate(1e-9);
            CHECK(wasserstein1(mu, c.measure) <= c.bound + 1e-12);
        }
    }

    DomainBox plane = DomainBox::rectangle(0.0, 1.0, 0.0, 1.0);
    AtomicMeasure mu2 = random_cloud(plane, 400, 77);
    auto g2 = compact(mu2, 64, CompactMode::grid);
    CHECK(g2.measure.atoms.size() <= 64);
    CHECK(wasserstein1(mu2, g2.measure) <= g2.bound + 1e-12);
}

TEST_CASE("signed compaction keeps zero mass and rejects quantile mode") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    SignedAtomicMeasure xi;
    xi.box = box;
    for (int i = 0; i < 500; ++i)
        xi.atoms.push_back({{2.0 * u01(55, i) - 1.0, 0.0}, (i % 2 ? 1.0 : -1.0) * u01(56, i)});
    xi.fix_mass_zero();

    CHECK_THROWS_AS(compact(xi, 50, CompactMode::quantile), argument_error);

    for (auto mode : {CompactMode::merge, CompactMode::grid}) {
        auto c = compact(xi, 50, mode);
        CHECK(c.measure.atoms.size() <= 50);
        CHECK(std::abs(c.measure.total_weight()) <= 1e-12);
        // the reported bound dominates the pairing gap against unit-Lip members
        TestBank bank = standard_bank(box, 1, 8);
        for (const TestFunction& phi : bank.members) {
            double gap = std::abs(pair(xi, phi) - pair(c.measure, phi));
            CHECK(gap <= c.bound + 1e-12);
        }
    }
}

TEST_CASE("first-order compaction keeps the budget and zero mass") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    FirstOrderDistribution xi;
    xi.box = box;
    for (int i = 0; i < 400; ++i)
        xi.atoms.push_back({{2.0 * u01(65, i) - 1.0, 0.0},
                            (i % 2 ? 1.0 : -1.0) * u01(66, i),
                            {0.3 * u01(67, i) - 0.15, 0.0}});
    xi.fix_mass_zero();
    CHECK_THROWS_AS(compact(xi, 64, CompactMode::quantile), argument_error);
    auto c = compact(xi, 64, CompactMode::merge);
    CHECK(c.measure.atoms.size() <= 64);
    CHECK(std::abs(c.measure.total_weight()) <= 1e-12);
    CHECK(c.bound > 0.0);
}

TEST_CASE("mixtures combine weighted atoms") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    AtomicMeasure mu = random_cloud(box, 5, 2);
    AtomicMeasure one = mix({{1.0, mu}});
    CHECK(one.atoms.size() == mu.atoms.size());
    CHECK(wasserstein1(one, mu) <= 1e-15);

    AtomicMeasure m = mix({{0.3, delta(box, -0.5)}, {0.7, delta(box, 0.5)}});
    CHECK(pair(m, coordinate_function(box, 0)) == doctest::Approx(0.2).epsilon(1e-14));

    AtomicMeasure tri;
    tri.box = DomainBox::interval(0.0, 1.0);
    tri.atoms = {{{0.1, 0.0}, 0.2}, {{0.5, 0.0}, 0.5}, {{0.9, 0.0}, 0.3}};
    auto again = compact(mix({{0.5, tri}, {0.5, tri}}), 3, CompactMode::merge);
    REQUIRE(again.measure.atoms.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(again.measure.atoms[i].x.x == doctest::Approx(tri.atoms[i].x.x).epsilon(1e-14));
        CHECK(again.measure.atoms[i].w == doctest::Approx(tri.atoms[i].w).epsilon(1e-14));
    }

    CHECK_THROWS_AS(mix({{0.5, mu}, {0.3, mu}}), argument_error);
}

TEST_CASE("standard bank members carry certified bounds") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    for (int k = 1; k <= 3; ++k) {
        TestBank bank = standard_bank(box, k, 16);
        REQUIRE(bank.members.size() == 16);
        bank.validate();
        for (const TestFunction& phi : bank.members) CHECK(certify(phi, box, 1000));
    }
    CHECK(standard_bank(box, 3, 64).members[0].name == "coord_x");
    CHECK(standard_bank(box, 3, 64).members[0].d1 == 1.0);

    DomainBox plane = DomainBox::rectangle(-1.0, 1.0, 0.0, 2.0);
    TestBank bank2 = standard_bank(plane, 3, 24);
    bank2.validate();
    for (const TestFunction& phi : bank2.members) CHECK(certify(phi, plane, 33));

    TestFunction lying = coordinate_function(box, 0);
    lying.d1 = 0.5;  // understated bound must fail certification
    CHECK_FALSE(certify(lying, box, 100));

    CHECK_THROWS_AS(standard_bank(box, 3, 3), argument_error);
    CHECK_THROWS_AS(standard_bank(box, 4, 8), argument_error);
}

TEST_CASE("first-order pairing reduces to the signed pairing at zero cotangent") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    SignedAtomicMeasure s;
    s.box = box;
    FirstOrderDistribution f;
    f.box = box;
    for (int i = 0; i < 11; ++i) {
        double x = 2.0 * u01(31, i) - 1.0, w = u01(32, i) - 0.5;
        s.atoms.push_back({{x, 0.0}, w});
        f.atoms.push_back({{x, 0.0}, w, {0.0, 0.0}});
    }
    s.fix_mass_zero();
    f.fix_mass_zero();
    TestBank bank = standard_bank(box, 3, 10);
    for (const TestFunction& phi : bank.members)
        CHECK(pair(f, phi) == doctest::Approx(pair(s, phi)).epsilon(1e-15));
}

TEST_CASE("csv round trip preserves every atom") {
    DomainBox box = DomainBox::interval(-1.0, 1.0);
    AtomicMeasure mu = random_cloud(box, 17, 88);
    AtomicMeasure back = atomic_measure_from_csv(to_csv(mu), box);
    REQUIRE(back.atoms.size() == mu.atoms.size());
    for (std::size_t i = 0; i < mu.atoms.size(); ++i) {
        CHECK(back.atoms[i].x.x == mu.atoms[i].x.x);
        CHECK(back.atoms[i].w == mu.atoms[i].w);
    }

    DomainBox plane = DomainBox::rectangle(-1.0, 1.0, -1.0, 1.0);
    FirstOrderDistribution xi;
    xi.box = plane;
    for (int i = 0; i < 7; ++i)
        xi.atoms.push_back({{u01(91, 2 * i) - 0.5, u01(91, 2 * i + 1) - 0.5},
                            (i % 2 ? 1.0 : -1.0) * 0.25,
                            {u01(92, i) - 0.5, u01(93, i) - 0.5}});
    xi.fix_mass_zero();
    FirstOrderDistribution fb = first_order_from_csv(to_csv(xi), plane);
    REQUIRE(fb.atoms.size() == xi.atoms.size());
    for (std::size_t i = 0; i < xi.atoms.size(); ++i) {
        CHECK(fb.atoms[i].x.x == xi.atoms[i].x.x);
        CHECK(fb.atoms[i].x.y == xi.atoms[i].x.y);
        CHECK(fb.atoms[i].w == xi.atoms[i].w);
        CHECK(fb.atoms[i].v.x == xi.atoms[i].v.x);
        CHECK(fb.atoms[i].v.y == xi.atoms[i].v.y);
    }

    CHECK_THROWS_AS(atomic_measure_from_csv("a,b\n1,2\n", box), argument_error);
    CHECK_THROWS_AS(atomic_measure_from_csv("x,w\n0.5,zzz\n", box), argument_error);
}

TEST_CASE("measure validation rejects broken invariants") {
    DomainBox box = DomainBox::interval(0.0, 1.0);
    AtomicMeasure neg;
    neg.box = box;
    neg.atoms = {{{0.5, 0.0}, 1.5}, {{0.2, 0.0}, -0.5}};
    CHECK_THROWS_AS(neg.validate(), argument_error);

    AtomicMeasure outside;
    outside.box = box;
    outside.atoms = {{{1.5, 0.0}, 1.0}};
    CHECK_THROWS_AS(outside.validate(), domain_violation);

    AtomicMeasure drift;
    drift.box = box;
    drift.atoms = {{{0.5, 0.0}, 0.9}};
    CHECK_THROWS_AS(drift.validate(), argument_error);
    drift.renormalize();
    drift.validate();

    SignedAtomicMeasure lopsided;
    lopsided.box = box;
    lopsided.vanishes_on_constants = true;
    lopsided.atoms = {{{0.5, 0.0}, 0.25}};
    CHECK_THROWS_AS(lopsided.validate(), argument_error);
    lopsided.fix_mass_zero();
    lopsided.validate();
}
