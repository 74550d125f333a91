#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace skewresp {

// ---- errors ------------------------------------------------------------

struct domain_violation : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct capacity_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct argument_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct solver_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- small linear algebra (fibre space is 1D or 2D) ----------------------

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double norm2(Vec2 a);

// row-major 2x2 matrix [[a,b],[c,d]]
struct Mat2 {
    double a = 1.0, b = 0.0, c = 0.0, d = 1.0;
};

inline Vec2 operator*(const Mat2& m, Vec2 v) {
    return {m.a * v.x + m.b * v.y, m.c * v.x + m.d * v.y};
}
inline Mat2 operator*(const Mat2& m, const Mat2& n) {
    return {m.a * n.a + m.b * n.c, m.a * n.b + m.b * n.d,
            m.c * n.a + m.d * n.c, m.c * n.b + m.d * n.d};
}
// operator norm (largest singular value)
double opnorm(const Mat2& m);

// ---- deterministic reductions -------------------------------------------

// Neumaier compensated accumulator; fixed insertion order gives
// bit-reproducible sums regardless of thread count.
struct NeumaierSum {
    double s = 0.0, c = 0.0;
    void add(double x) {
        double t = s + x;
        if (std::abs(s) >= std::abs(x))
            c += (s - t) + x;
        else
            c += (x - t) + s;
        s = t;
    }
    double value() const { return s + c; }
};

// ---- counter-based RNG ----------------------------------------------------

// stateless: value depends only on (seed, index); safe under any
// thread partitioning of the index range.
std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t index);
double u01(std::uint64_t seed, std::uint64_t index);  // in [0,1)

// ---- threading -------------------------------------------------------------

// honors the THREADS environment variable; 0 = hardware count.
int thread_count();
void set_thread_count(int n);  // overrides env (tests)

// static block partition; fn(i) must only write state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// ---- formatting ------------------------------------------------------------

// shortest round-trip decimal, locale-independent ('.' decimal point)
std::string format_double(double v);

std::string join_csv_row(const std::vector<std::string>& cells);

}  // namespace skewresp
