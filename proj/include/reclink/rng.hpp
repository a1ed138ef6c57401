#ifndef RECLINK_RNG_HPP
#define RECLINK_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace reclink {

// Deterministic random source.
//
// std::mt19937_64 output is fully specified by the standard, but the
// std::*_distribution adaptors are not, so every variate transform here
// is written out explicitly. Two builds on different platforms given the
// same seed produce bit-identical streams, which the reproducibility
// guarantees of the simulation harness rely on.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // splitmix64 step, used both as a stream mixer and for seed derivation.
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // Independent stream id for (cell, replication) style sub-streams.
    static std::uint64_t derive(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
        return mix(mix(mix(base) ^ a) ^ b);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, n), unbiased via rejection on a power-of-two mask.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: empty range");
        if ((n & (n - 1)) == 0) return engine_() & (n - 1);
        std::uint64_t mask = n - 1;
        mask |= mask >> 1; mask |= mask >> 2; mask |= mask >> 4;
        mask |= mask >> 8; mask |= mask >> 16; mask |= mask >> 32;
        for (;;) {
            std::uint64_t v = engine_() & mask;
            if (v < n) return v;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Marsaglia-Tsang squeeze for shape >= 1, boosted for shape < 1.
    double gamma(double shape, double scale = 1.0) {
        if (shape <= 0.0 || scale <= 0.0)
            throw std::invalid_argument("gamma: nonpositive parameter");
        if (shape < 1.0) {
            double u = uniform();
            while (u <= 0.0) u = uniform();
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            while (u <= 0.0) u = uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v))
                return scale * d * v;
        }
    }

    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        return x / (x + y);
    }

    double inverse_gamma(double shape, double rate) {
        return rate / gamma(shape, 1.0);
    }

    std::vector<double> dirichlet(const std::vector<double>& alpha) {
        std::vector<double> out(alpha.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < alpha.size(); ++i) {
            out[i] = gamma(alpha[i]);
            sum += out[i];
        }
        for (double& v : out) v /= sum;
        return out;
    }

    // Index draw proportional to nonnegative weights.
    std::size_t discrete(const std::vector<double>& w) {
        double total = 0.0;
        for (double v : w) total += v;
        if (!(total > 0.0)) throw std::invalid_argument("discrete: zero total weight");
        double target = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < w.size(); ++i) {
            acc += w[i];
            if (target < acc) return i;
        }
        return w.size() - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

    // k distinct indices from [0, n), order randomized.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + static_cast<std::size_t>(uniform_int(n - i));
            std::swap(p[i], p[j]);
        }
        p.resize(k);
        return p;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace reclink

#endif
