#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace realmerge {

// Deterministic generator: splitmix64 streams with Box-Muller gaussians.
// std::normal_distribution is implementation-defined, so seeded runs would
// not be reproducible across standard libraries; this one is pinned.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    // Independent substream: mixes the stream id into the seed so derived
    // generators do not overlap for small consecutive ids.
    Rng(uint64_t seed, uint64_t stream) : state_(seed ^ (stream * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL)) {
        next_u64();
    }

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double gaussian() {
        // u1 in (0, 1] keeps the log finite
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    std::vector<double> gaussian_vec(size_t n, double scale = 1.0) {
        std::vector<double> v(n);
        for (size_t i = 0; i < n; i++) {
            v[i] = scale * gaussian();
        }
        return v;
    }

    // isotropic random direction
    std::vector<double> unit_vec(size_t n) {
        std::vector<double> v = gaussian_vec(n);
        double s = 0.0;
        for (double x : v) {
            s += x * x;
        }
        s = std::sqrt(s);
        if (s == 0.0) {
            v.assign(n, 0.0);
            v[0] = 1.0;
            return v;
        }
        for (double & x : v) {
            x /= s;
        }
        return v;
    }

private:
    uint64_t state_;
};

} // namespace realmerge
