#ifndef RECLINK_BIPARTITE_GIBBS_HPP
#define RECLINK_BIPARTITE_GIBBS_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <reclink/comparison.hpp>
#include <reclink/rng.hpp>

namespace reclink {

// Prior over bipartite linkage structures: Beta-binomial on the fraction
// of A records that are linked, uniform over structures given the count.
struct BipartitePrior {
    double pi_a = 1.0;
    double pi_b = 1.0;

    void validate() const {
        if (!(pi_a > 0.0) || !(pi_b > 0.0))
            throw std::invalid_argument("bipartite prior hyperparameters must be positive");
    }
};

struct GibbsOptions {
    int n_iter = 2000;
    int burn_in = 1000;
    int thin = 1;
    double dir_alpha = 1.0;
    // when non-empty, the level probabilities are held fixed instead of
    // being resampled (used when validating against exact enumeration)
    std::vector<std::vector<double>> fixed_m;
    std::vector<std::vector<double>> fixed_u;

    void validate() const {
        if (n_iter <= burn_in) throw std::invalid_argument("n_iter must exceed burn_in");
        if (thin < 1) throw std::invalid_argument("thin must be >= 1");
        if ((n_iter - burn_in) / thin < 1)
            throw std::invalid_argument("iteration budget yields no samples");
        if (!(dir_alpha > 0.0)) throw std::invalid_argument("dirichlet hyperparameter must be positive");
    }
};

struct PosteriorLinkageSamples {
    std::vector<std::vector<int>> samples;  // canonical A row -> B row or -1
    std::uint64_t seed = 0;
    int n_iter = 0, burn_in = 0, thin = 1;
    std::vector<double> pair_marginal;  // link frequency aligned with table pairs
    std::vector<double> pi_trace;
};

struct FeedbackRegressionParams {
    double beta0_m = 0.0, beta1_m = 0.0, sigma_m = 1.0;
    double beta0_u = 0.0, beta1_u = 0.0, sigma_u = 1.0;
};

namespace detail {

// candidate (pair index, B row) lists per canonical A row
inline std::vector<std::vector<std::pair<std::size_t, int>>>
candidates_by_row(const ComparisonTable& t) {
    std::vector<std::vector<std::pair<std::size_t, int>>> cand(t.n_a);
    for (std::size_t p = 0; p < t.n_pairs(); ++p)
        cand[t.pairs[p].first].emplace_back(p, t.pairs[p].second);
    return cand;
}

inline double pair_ratio(const ComparisonTable& t, std::size_t p,
                         const std::vector<std::vector<double>>& m,
                         const std::vector<std::vector<double>>& u) {
    double r = 1.0;
    for (std::size_t f = 0; f < t.n_fields(); ++f) {
        std::int8_t g = t.level(p, f);
        if (g < 0) continue;
        r *= m[f][g] / u[f][g];
    }
    return r;
}

inline double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

} // namespace detail

// Exact posterior over every bipartite structure of a small problem with
// the level probabilities held fixed; the linked-fraction parameter is
// integrated out analytically. Serves as the ground truth the sampler is
// checked against.
struct ExactPosterior {
    std::vector<std::vector<int>> structures;  // a_to_b per structure
    std::vector<double> prob;
    std::vector<double> pair_marginal;
};

inline ExactPosterior enumerate_exact(const ComparisonTable& t,
                                      const BipartitePrior& prior,
                                      const std::vector<std::vector<double>>& m,
                                      const std::vector<std::vector<double>>& u) {
    prior.validate();
    if (t.n_a > 4 || t.n_b > 5)
        throw std::invalid_argument("enumerate_exact: problem exceeds enumeration bound");

    auto cand = detail::candidates_by_row(t);
    std::vector<double> log_lr(t.n_pairs());
    for (std::size_t p = 0; p < t.n_pairs(); ++p)
        log_lr[p] = std::log(detail::pair_ratio(t, p, m, u));

    const double n_a = static_cast<double>(t.n_a);
    const double n_b = static_cast<double>(t.n_b);
    const double lb0 = detail::log_beta(prior.pi_a, prior.pi_b);

    ExactPosterior out;
    std::vector<int> z(t.n_a, -1);
    std::vector<char> taken(t.n_b, 0);
    std::vector<double> logw;

    std::function<void(std::size_t, int, double)> rec =
        [&](std::size_t i, int links, double acc) {
            if (i == t.n_a) {
                double n = static_cast<double>(links);
                double lw = acc
                    + detail::log_beta(prior.pi_a + n, prior.pi_b + n_a - n) - lb0
                    + std::lgamma(n_b - n + 1.0) - std::lgamma(n_b + 1.0);
                out.structures.push_back(z);
                logw.push_back(lw);
                return;
            }
            rec(i + 1, links, acc);  // row i unlinked
            for (auto [p, j] : cand[i]) {
                if (taken[j]) continue;
                taken[j] = 1;
                z[i] = j;
                rec(i + 1, links + 1, acc + log_lr[p]);
                z[i] = -1;
                taken[j] = 0;
            }
        };
    rec(0, 0, 0.0);

    double mx = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    out.prob.resize(logw.size());
    for (std::size_t s = 0; s < logw.size(); ++s) {
        out.prob[s] = std::exp(logw[s] - mx);
        total += out.prob[s];
    }
    for (double& p : out.prob) p /= total;

    out.pair_marginal.assign(t.n_pairs(), 0.0);
    for (std::size_t s = 0; s < out.structures.size(); ++s)
        for (std::size_t p = 0; p < t.n_pairs(); ++p)
            if (out.structures[s][t.pairs[p].first] == t.pairs[p].second)
                out.pair_marginal[p] += out.prob[s];
    return out;
}

namespace detail {

struct MixtureState {
    std::vector<std::vector<double>> m, u;
    double pi = 0.5;

    void init(const ComparisonTable& t, const GibbsOptions& opts) {
        if (!opts.fixed_m.empty()) {
            m = opts.fixed_m;
            u = opts.fixed_u;
            return;
        }
        m.resize(t.n_fields());
        u.resize(t.n_fields());
        for (std::size_t f = 0; f < t.n_fields(); ++f) {
            int L = t.schema[f].levels();
            m[f].assign(L, 1.0 / L);
            u[f].assign(L, 1.0 / L);
        }
    }

    void resample_mu(const ComparisonTable& t, const std::vector<int>& z,
                     const GibbsOptions& opts, Rng& rng) {
        if (!opts.fixed_m.empty()) return;
        for (std::size_t f = 0; f < t.n_fields(); ++f) {
            int L = t.schema[f].levels();
            std::vector<double> cm(L, opts.dir_alpha), cu(L, opts.dir_alpha);
            for (std::size_t p = 0; p < t.n_pairs(); ++p) {
                std::int8_t g = t.level(p, f);
                if (g < 0) continue;
                if (z[t.pairs[p].first] == t.pairs[p].second) cm[g] += 1.0;
                else cu[g] += 1.0;
            }
            m[f] = rng.dirichlet(cm);
            u[f] = rng.dirichlet(cu);
        }
    }

    void resample_pi(const BipartitePrior& prior, int links, std::size_t n_a, Rng& rng) {
        pi = rng.beta(prior.pi_a + links, prior.pi_b + static_cast<double>(n_a) - links);
    }
};

} // namespace detail

// Gibbs sampler over one-to-one linkage structures under the two-class
// comparison mixture. Each sweep resamples the level probabilities, the
// linked-fraction parameter, then every A row's link in randomized order.
// extra_log_ratio(pair) lets a caller multiply an additional likelihood
// factor into the link-vs-unlinked choice (regression feedback).
inline PosteriorLinkageSamples gibbs_sl_impl(
    const ComparisonTable& t, const BipartitePrior& prior, const GibbsOptions& opts,
    std::uint64_t seed, Rng& rng,
    const std::function<double(std::size_t)>* extra_log_ratio,
    const std::function<void(const std::vector<int>&, int)>* per_sweep,
    const std::function<void(const std::vector<int>&)>* per_sample) {
    prior.validate();
    opts.validate();

    auto cand = detail::candidates_by_row(t);
    detail::MixtureState st;
    st.init(t, opts);

    std::vector<int> z(t.n_a, -1);
    std::vector<int> zb(t.n_b, -1);
    int links = 0;

    PosteriorLinkageSamples out;
    out.seed = seed;
    out.n_iter = opts.n_iter;
    out.burn_in = opts.burn_in;
    out.thin = opts.thin;
    out.pair_marginal.assign(t.n_pairs(), 0.0);

    std::vector<double> lr(t.n_pairs());
    std::vector<double> w;
    std::vector<int> choice;

    for (int iter = 0; iter < opts.n_iter; ++iter) {
        st.resample_mu(t, z, opts, rng);
        st.resample_pi(prior, links, t.n_a, rng);
        if (per_sweep) (*per_sweep)(z, iter);

        for (std::size_t p = 0; p < t.n_pairs(); ++p) {
            lr[p] = detail::pair_ratio(t, p, st.m, st.u);
            if (extra_log_ratio) lr[p] *= std::exp((*extra_log_ratio)(p));
        }

        auto order = rng.permutation(t.n_a);
        for (std::size_t oi = 0; oi < t.n_a; ++oi) {
            std::size_t i = order[oi];
            if (z[i] >= 0) {
                zb[z[i]] = -1;
                z[i] = -1;
                --links;
            }
            w.clear();
            choice.clear();
            w.push_back(1.0);
            choice.push_back(-1);
            const double prior_ratio =
                st.pi / ((1.0 - st.pi) * (static_cast<double>(t.n_b) - links));
            for (auto [p, j] : cand[i]) {
                if (zb[j] >= 0) continue;
                w.push_back(prior_ratio * lr[p]);
                choice.push_back(static_cast<int>(j));
            }
            std::size_t pick = rng.discrete(w);
            if (choice[pick] >= 0) {
                z[i] = choice[pick];
                zb[choice[pick]] = static_cast<int>(i);
                ++links;
            }
        }

        if (iter >= opts.burn_in && (iter - opts.burn_in) % opts.thin == 0) {
            out.samples.push_back(z);
            out.pi_trace.push_back(st.pi);
            for (std::size_t p = 0; p < t.n_pairs(); ++p)
                if (z[t.pairs[p].first] == t.pairs[p].second)
                    out.pair_marginal[p] += 1.0;
            if (per_sample) (*per_sample)(z);
        }
    }
    for (double& v : out.pair_marginal)
        v /= static_cast<double>(out.samples.size());
    return out;
}

inline PosteriorLinkageSamples gibbs_sl(const ComparisonTable& t,
                                        const BipartitePrior& prior,
                                        const GibbsOptions& opts,
                                        std::uint64_t seed) {
    Rng rng(seed);
    return gibbs_sl_impl(t, prior, opts, seed, rng, nullptr, nullptr, nullptr);
}

struct KsgOptions {
    GibbsOptions gibbs;
    // minimum class size for a regression update; below it the class
    // parameters are carried over and a diagnostic is recorded
    int min_class_size = 3;
};

struct KsgResult {
    PosteriorLinkageSamples linkage;
    std::vector<FeedbackRegressionParams> params;  // one per recorded sample
    int frozen_link_updates = 0;
    int frozen_nonlink_updates = 0;
};

// Linkage sampler with regression feedback: outcomes y live on the A file,
// covariates x on the B file. Pairs currently linked contribute to a
// link-class regression of y on x and all remaining pairs to a non-link
// class; the two Gaussian densities enter each link's full conditional.
inline KsgResult da_ksg(const ComparisonTable& t,
                        const std::vector<double>& y_a,
                        const std::vector<double>& x_b,
                        const BipartitePrior& prior,
                        const KsgOptions& opts,
                        std::uint64_t seed) {
    if (y_a.size() != t.n_a || x_b.size() != t.n_b)
        throw std::invalid_argument("da_ksg: outcome/covariate sizes must match the files");

    Rng rng(seed);
    KsgResult res;
    FeedbackRegressionParams cur;

    // start from marginal moments so the first sweeps are sane
    {
        double my = 0.0, vy = 0.0;
        for (double v : y_a) my += v;
        my /= std::max<std::size_t>(1, y_a.size());
        for (double v : y_a) vy += (v - my) * (v - my);
        vy = y_a.size() > 1 ? vy / (y_a.size() - 1) : 1.0;
        cur.beta0_m = cur.beta0_u = my;
        cur.sigma_m = cur.sigma_u = std::sqrt(std::max(vy, 1e-6));
    }

    // scale references for the truncation box of the regression prior
    double y_mean = 0.0, y_sd = 1.0, x_sd = 1.0;
    {
        double sy = 0.0, syy = 0.0, sx = 0.0, sxx = 0.0;
        for (double v : y_a) { sy += v; syy += v * v; }
        for (double v : x_b) { sx += v; sxx += v * v; }
        double ny = static_cast<double>(y_a.size()), nx = static_cast<double>(x_b.size());
        y_mean = sy / ny;
        y_sd = std::sqrt(std::max(syy / ny - y_mean * y_mean, 1e-12));
        double x_mean = sx / nx;
        x_sd = std::sqrt(std::max(sxx / nx - x_mean * x_mean, 1e-12));
    }

    // Conjugate update under p(beta, sigma^2) ~ 1/sigma^2 for y = b0 + b1 x,
    // truncated to a generous box around the marginal moments. The box never
    // binds once a class holds a nontrivial number of pairs; it only rejects
    // the wild draws a 1-2 degree-of-freedom update can produce, which would
    // otherwise freeze in and lock the chain out of linking entirely.
    auto update_class = [&](double n, double sx, double sxx, double sy, double sxy,
                            double syy, double& b0, double& b1, double& sig,
                            int& freeze_counter) {
        if (n < opts.min_class_size) { ++freeze_counter; return; }
        double det = n * sxx - sx * sx;
        if (!(det > 1e-12 * n * std::max(1.0, sxx))) { ++freeze_counter; return; }
        double b1_hat = (n * sxy - sx * sy) / det;
        double b0_hat = (sy - b1_hat * sx) / n;
        double rss = syy - b0_hat * sy - b1_hat * sxy;
        rss = std::max(rss, 1e-12);
        double shape = (n - 2.0) / 2.0;
        double ixx = sxx / det, ixy = -sx / det, iyy = n / det;
        const double sig_lo = 1e-3 * y_sd, sig_hi = 20.0 * y_sd;
        const double b0_span = 50.0 * y_sd;
        const double b1_span = 50.0 * y_sd / x_sd;
        for (int attempt = 0; attempt < 50; ++attempt) {
            double s2 = rng.inverse_gamma(shape, rss / 2.0);
            double l11 = std::sqrt(s2 * ixx);
            double l21 = s2 * ixy / l11;
            double l22 = std::sqrt(std::max(s2 * iyy - l21 * l21, 0.0));
            double z1 = rng.normal(), z2 = rng.normal();
            double cb0 = b0_hat + l11 * z1;
            double cb1 = b1_hat + l21 * z1 + l22 * z2;
            double csig = std::sqrt(s2);
            if (csig < sig_lo || csig > sig_hi) continue;
            if (std::abs(cb0 - y_mean) > b0_span || std::abs(cb1) > b1_span) continue;
            b0 = cb0;
            b1 = cb1;
            sig = csig;
            return;
        }
        ++freeze_counter;
    };

    std::function<void(const std::vector<int>&, int)> per_sweep =
        [&](const std::vector<int>& z, int) {
            double nM = 0, sxM = 0, sxxM = 0, syM = 0, sxyM = 0, syyM = 0;
            double nU = 0, sxU = 0, sxxU = 0, syU = 0, sxyU = 0, syyU = 0;
            for (std::size_t p = 0; p < t.n_pairs(); ++p) {
                double x = x_b[t.pairs[p].second];
                double y = y_a[t.pairs[p].first];
                if (z[t.pairs[p].first] == t.pairs[p].second) {
                    nM += 1; sxM += x; sxxM += x * x; syM += y; sxyM += x * y; syyM += y * y;
                } else {
                    nU += 1; sxU += x; sxxU += x * x; syU += y; sxyU += x * y; syyU += y * y;
                }
            }
            update_class(nM, sxM, sxxM, syM, sxyM, syyM,
                         cur.beta0_m, cur.beta1_m, cur.sigma_m, res.frozen_link_updates);
            update_class(nU, sxU, sxxU, syU, sxyU, syyU,
                         cur.beta0_u, cur.beta1_u, cur.sigma_u, res.frozen_nonlink_updates);
        };

    std::function<double(std::size_t)> feedback = [&](std::size_t p) {
        double x = x_b[t.pairs[p].second];
        double y = y_a[t.pairs[p].first];
        double rm = (y - cur.beta0_m - cur.beta1_m * x) / cur.sigma_m;
        double ru = (y - cur.beta0_u - cur.beta1_u * x) / cur.sigma_u;
        return -std::log(cur.sigma_m) - 0.5 * rm * rm
             + std::log(cur.sigma_u) + 0.5 * ru * ru;
    };

    std::function<void(const std::vector<int>&)> per_sample =
        [&](const std::vector<int>&) { res.params.push_back(cur); };

    res.linkage = gibbs_sl_impl(t, prior, opts.gibbs, seed, rng,
                                &feedback, &per_sweep, &per_sample);
    return res;
}

} // namespace reclink

#endif
