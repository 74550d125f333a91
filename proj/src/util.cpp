#include "skewresp/util.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace skewresp {

double norm2(Vec2 a) { return std::hypot(a.x, a.y); }

double opnorm(const Mat2& m) {
    // singular values of a 2x2 via the closed form
    double e = (m.a + m.d) / 2, f = (m.a - m.d) / 2;
    double g = (m.c + m.b) / 2, h = (m.c - m.b) / 2;
    return std::hypot(e, h) + std::hypot(f, g);
}

static std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ (index * 0x9e3779b97f4a7c15ULL + 0x243f6a8885a308d3ULL));
}

double u01(std::uint64_t seed, std::uint64_t index) {
    return (counter_hash(seed, index) >> 11) * 0x1.0p-53;
}

static int g_threads_override = -1;

void set_thread_count(int n) { g_threads_override = n; }

int thread_count() {
    if (g_threads_override > 0) return g_threads_override;
    if (const char* env = std::getenv("THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    int nt = thread_count();
    if (nt <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(nt), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

std::string join_csv_row(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out.push_back(',');
        out += cells[i];
    }
    out.push_back('\n');
    return out;
}

}  // namespace skewresp
