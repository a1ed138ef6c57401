#ifndef RECLINK_FS_MODEL_HPP
#define RECLINK_FS_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <reclink/comparison.hpp>
#include <reclink/hungarian.hpp>

namespace reclink {

struct FsOptions {
    double tol = 1e-6;
    int max_iter = 500;
    double prob_floor = 1e-8;
    bool per_block_nu = true;
};

// Two-class conditional-independence mixture over comparison vectors:
// agreement level probabilities for the match class (m) and the non-match
// class (u), plus the match prevalence among candidate pairs (nu), fitted
// by EM on all within-block pairs.
struct FsModel {
    std::vector<std::vector<double>> m;  // field x level
    std::vector<std::vector<double>> u;
    std::vector<double> nu;              // per block, or one entry when pooled
    bool per_block = true;
    int iterations = 0;
    bool converged = false;
    std::vector<double> loglik_trace;

    double loglik() const {
        return loglik_trace.empty() ? -std::numeric_limits<double>::infinity()
                                    : loglik_trace.back();
    }
};

namespace detail {

// Maximizer of sum_l c_l log p_l over the simplex with p_l >= floor.
// Binding levels sit exactly at the floor, the rest stay proportional,
// so the M-step remains an exact constrained maximization.
inline std::vector<double> floored_simplex_mle(const std::vector<double>& counts, double floor) {
    const std::size_t L = counts.size();
    std::vector<double> p(L);
    double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    if (total <= 0.0) {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(L));
        return p;
    }
    std::vector<char> bound(L, 0);
    for (;;) {
        std::size_t nb = 0;
        double free_mass = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            if (bound[l]) ++nb;
            else free_mass += counts[l];
        }
        double avail = 1.0 - static_cast<double>(nb) * floor;
        bool changed = false;
        for (std::size_t l = 0; l < L; ++l) {
            if (bound[l]) { p[l] = floor; continue; }
            p[l] = free_mass > 0.0 ? counts[l] * avail / free_mass : 0.0;
            if (p[l] < floor) { bound[l] = 1; changed = true; }
        }
        if (!changed) break;
    }
    return p;
}

inline double clamp(double x, double lo, double hi) {
    return std::min(hi, std::max(lo, x));
}

} // namespace detail

inline FsModel em_fit(const ComparisonTable& t, const FsOptions& opts = {}) {
    const std::size_t K = t.n_fields();
    const std::size_t P = t.n_pairs();
    if (P == 0) throw std::invalid_argument("em_fit: no candidate pairs");

    FsModel mod;
    mod.per_block = opts.per_block_nu;
    mod.m.resize(K);
    mod.u.resize(K);

    // initialization: matches agree strongly, non-matches follow the
    // empirical level frequencies
    for (std::size_t f = 0; f < K; ++f) {
        const int L = t.schema[f].levels();
        mod.m[f].assign(L, 0.0);
        mod.m[f][0] = 0.9;
        for (int l = 1; l < L; ++l) mod.m[f][l] = 0.1 / (L - 1);
        std::vector<double> freq(L, 0.0);
        for (std::size_t p = 0; p < P; ++p) {
            std::int8_t g = t.level(p, f);
            if (g >= 0) freq[g] += 1.0;
        }
        mod.u[f] = detail::floored_simplex_mle(freq, opts.prob_floor);
    }

    const std::size_t nblk = opts.per_block_nu ? t.blocks.size() : 1;
    mod.nu.assign(nblk, 0.0);
    if (opts.per_block_nu) {
        for (std::size_t b = 0; b < t.blocks.size(); ++b) {
            const auto& blk = t.blocks[b];
            double na = static_cast<double>(blk.a_rows.size());
            double nb = static_cast<double>(blk.b_rows.size());
            double npairs = na * nb;
            mod.nu[b] = npairs > 0.0
                ? detail::clamp(std::min(na, nb) / npairs, opts.prob_floor, 1.0 - opts.prob_floor)
                : opts.prob_floor;
        }
    } else {
        mod.nu[0] = detail::clamp(
            static_cast<double>(std::min(t.n_a, t.n_b)) / static_cast<double>(P),
            opts.prob_floor, 1.0 - opts.prob_floor);
    }

    std::vector<double> q(P, 0.0);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        // E-step
        double ll = 0.0;
        for (std::size_t b = 0; b < t.blocks.size(); ++b) {
            const auto& blk = t.blocks[b];
            const double nu = mod.nu[opts.per_block_nu ? b : 0];
            for (std::size_t p = blk.pair_begin; p < blk.pair_end; ++p) {
                double pm = 1.0, pu = 1.0;
                for (std::size_t f = 0; f < K; ++f) {
                    std::int8_t g = t.level(p, f);
                    if (g < 0) continue;
                    pm *= mod.m[f][g];
                    pu *= mod.u[f][g];
                }
                double num = nu * pm;
                double den = num + (1.0 - nu) * pu;
                q[p] = num / den;
                ll += std::log(den);
            }
        }
        mod.loglik_trace.push_back(ll);
        mod.iterations = iter + 1;
        if (std::abs(ll - prev_ll) < opts.tol) {
            mod.converged = true;
            break;
        }
        prev_ll = ll;

        // M-step
        for (std::size_t f = 0; f < K; ++f) {
            const int L = t.schema[f].levels();
            std::vector<double> cm(L, 0.0), cu(L, 0.0);
            for (std::size_t p = 0; p < P; ++p) {
                std::int8_t g = t.level(p, f);
                if (g < 0) continue;
                cm[g] += q[p];
                cu[g] += 1.0 - q[p];
            }
            mod.m[f] = detail::floored_simplex_mle(cm, opts.prob_floor);
            mod.u[f] = detail::floored_simplex_mle(cu, opts.prob_floor);
        }
        if (opts.per_block_nu) {
            for (std::size_t b = 0; b < t.blocks.size(); ++b) {
                const auto& blk = t.blocks[b];
                std::size_t npairs = blk.pair_end - blk.pair_begin;
                if (npairs == 0) continue;
                double s = 0.0;
                for (std::size_t p = blk.pair_begin; p < blk.pair_end; ++p) s += q[p];
                mod.nu[b] = detail::clamp(s / static_cast<double>(npairs),
                                          opts.prob_floor, 1.0 - opts.prob_floor);
            }
        } else {
            double s = std::accumulate(q.begin(), q.end(), 0.0);
            mod.nu[0] = detail::clamp(s / static_cast<double>(P),
                                      opts.prob_floor, 1.0 - opts.prob_floor);
        }
    }
    return mod;
}

// Log likelihood ratio log(m/u) summed over observed fields.
inline std::vector<double> match_weights(const FsModel& mod, const ComparisonTable& t) {
    std::vector<double> w(t.n_pairs(), 0.0);
    for (std::size_t p = 0; p < t.n_pairs(); ++p) {
        double acc = 0.0;
        for (std::size_t f = 0; f < t.n_fields(); ++f) {
            std::int8_t g = t.level(p, f);
            if (g < 0) continue;
            acc += std::log(mod.m[f][g]) - std::log(mod.u[f][g]);
        }
        w[p] = acc;
    }
    return w;
}

// Posterior match probability per candidate pair under the fitted mixture.
inline std::vector<double> posterior_q(const FsModel& mod, const ComparisonTable& t) {
    std::vector<double> q(t.n_pairs(), 0.0);
    for (std::size_t b = 0; b < t.blocks.size(); ++b) {
        const auto& blk = t.blocks[b];
        const double nu = mod.nu[mod.per_block ? b : 0];
        for (std::size_t p = blk.pair_begin; p < blk.pair_end; ++p) {
            double pm = 1.0, pu = 1.0;
            for (std::size_t f = 0; f < t.n_fields(); ++f) {
                std::int8_t g = t.level(p, f);
                if (g < 0) continue;
                pm *= mod.m[f][g];
                pu *= mod.u[f][g];
            }
            double num = nu * pm;
            q[p] = num / (num + (1.0 - nu) * pu);
        }
    }
    return q;
}

namespace detail {

// pair indices of each canonical A row within one block, in column order
inline std::vector<std::vector<std::size_t>> rows_of_block(const ComparisonTable::Block& blk) {
    std::vector<std::vector<std::size_t>> rows(blk.a_rows.size());
    const std::size_t nb = blk.b_rows.size();
    for (std::size_t p = blk.pair_begin; p < blk.pair_end; ++p) {
        std::size_t local = p - blk.pair_begin;
        rows[local / nb].push_back(p);
    }
    return rows;
}

} // namespace detail

// Rescale each A row to sum to one across its in-block candidates.
// An all-zero row becomes uniform over its candidates.
inline std::vector<double> normalize_q_rows(const ComparisonTable& t,
                                            const std::vector<double>& q) {
    if (q.size() != t.n_pairs()) throw std::invalid_argument("normalize_q_rows: size mismatch");
    std::vector<double> out(q.size(), 0.0);
    for (const auto& blk : t.blocks) {
        if (blk.b_rows.empty()) continue;
        for (const auto& row : detail::rows_of_block(blk)) {
            double s = 0.0;
            for (std::size_t p : row) s += q[p];
            for (std::size_t p : row)
                out[p] = s > 0.0 ? q[p] / s : 1.0 / static_cast<double>(row.size());
        }
    }
    return out;
}

// Keep the top `keep` entries of each A row (ties resolved toward the
// lower column index), zero the rest, renormalize the kept mass.
inline std::vector<double> truncate_q(const ComparisonTable& t,
                                      const std::vector<double>& q, int keep) {
    if (keep != 1 && keep != 2) throw std::invalid_argument("truncate_q: keep must be 1 or 2");
    if (q.size() != t.n_pairs()) throw std::invalid_argument("truncate_q: size mismatch");
    std::vector<double> out(q.size(), 0.0);
    for (const auto& blk : t.blocks) {
        if (blk.b_rows.empty()) continue;
        for (const auto& row : detail::rows_of_block(blk)) {
            std::vector<std::size_t> order(row.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
                return q[row[x]] > q[row[y]];
            });
            std::size_t k = std::min<std::size_t>(keep, row.size());
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += q[row[order[i]]];
            for (std::size_t i = 0; i < k; ++i) {
                std::size_t p = row[order[i]];
                out[p] = s > 0.0 ? q[p] / s : 1.0 / static_cast<double>(k);
            }
        }
    }
    return out;
}

// Exact one-to-one assignment per block: maximize the summed score over
// pairs whose gate value reaches the threshold, leaving records unlinked
// when that scores higher. Returns canonical A row -> B row or -1.
inline std::vector<int> assign_one_to_one(const ComparisonTable& t,
                                          const std::vector<double>& score,
                                          const std::vector<double>& gate,
                                          double threshold = 0.5) {
    if (score.size() != t.n_pairs() || gate.size() != t.n_pairs())
        throw std::invalid_argument("assign_one_to_one: size mismatch");
    std::vector<int> a_to_b(t.n_a, -1);
    const double NEG = -std::numeric_limits<double>::infinity();
    for (const auto& blk : t.blocks) {
        if (blk.a_rows.empty() || blk.b_rows.empty()) continue;
        const std::size_t na = blk.a_rows.size(), nb = blk.b_rows.size();
        std::vector<std::vector<double>> w(na, std::vector<double>(nb, NEG));
        for (std::size_t p = blk.pair_begin; p < blk.pair_end; ++p) {
            std::size_t local = p - blk.pair_begin;
            if (gate[p] >= threshold) w[local / nb][local % nb] = score[p];
        }
        auto match = max_weight_matching(w);
        for (std::size_t i = 0; i < na; ++i)
            if (match[i] >= 0) a_to_b[blk.a_rows[i]] = blk.b_rows[match[i]];
    }
    return a_to_b;
}

} // namespace reclink

#endif
