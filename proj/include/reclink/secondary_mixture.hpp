#ifndef RECLINK_SECONDARY_MIXTURE_HPP
#define RECLINK_SECONDARY_MIXTURE_HPP

// Post-linkage secondary analysis: the analyst sees an already linked file
// (y, x, block) with an unknown fraction of mismatched rows, and models it
// as a two-class mixture: correctly linked rows follow the regression of
// interest, mismatched rows follow a null law. Two fitters are provided: a
// per-block Bayesian data-augmentation sampler with conjugate updates, and
// a global EM fit with a Huber sandwich covariance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <reclink/rng.hpp>

namespace reclink {

struct LinkedRow {
    double y = 0.0;
    double x = 0.0;
    int block = 0;
};

namespace detail {

inline double log_normal_pdf(double y, double mean, double var) {
    double d = y - mean;
    return -0.5 * std::log(2.0 * M_PI * var) - d * d / (2.0 * var);
}

// Slope and its classical variance from an intercept+slope OLS fit.
inline std::optional<std::pair<double, double>> slope_ols(const std::vector<double>& y,
                                                          const std::vector<double>& x) {
    const int n = static_cast<int>(y.size());
    if (n < 3) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx < 1e-12) return std::nullopt;
    double b1 = sxy / sxx;
    double b0 = my - b1 * mx;
    double rss = 0.0;
    for (int i = 0; i < n; ++i) {
        double r = y[i] - b0 - b1 * x[i];
        rss += r * r;
    }
    double s2 = rss / (n - 2);
    return std::make_pair(b1, s2 / sxx);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Bayesian data augmentation, fitted independently within each block.
// ---------------------------------------------------------------------------

struct GtPriors {
    // coefficient prior: beta | sigma^2 ~ N(0, sigma^2 * coef_scale2 * I);
    // scaling by sigma^2 keeps every conditional conjugate and gives the
    // marginal likelihood of a class a closed form (used by the tests)
    double coef_scale2 = 100.0;
    double a0 = 0.01, b0 = 0.01;  // sigma^2 ~ inverse-gamma(a0, b0)
    double lambda_a = 1.0, lambda_b = 1.0;

    void validate() const {
        if (coef_scale2 <= 0.0 || a0 <= 0.0 || b0 <= 0.0 || lambda_a <= 0.0 || lambda_b <= 0.0)
            throw std::invalid_argument("GtPriors: hyperparameters must be positive");
    }
};

struct GtOptions {
    int n_iter = 2000;
    int burn_in = 1000;
    int thin = 1;
    int min_rows = 10;
    // anchor the link class to the larger |slope|; switch off only to
    // study label switching
    bool identify = true;
    // refresh an emptied class from its prior instead of freezing it;
    // freezing leaves the chain's stationary law subtly wrong (the empty
    // class's correct full conditional is the prior), which shows up
    // against the exact small-block posterior
    bool refresh_empty_from_prior = true;
    // model the non-link class as a regression on x rather than as a
    // marginal normal; the regression form makes the two classes label
    // symmetric and is kept only for label-switching demonstrations
    bool u_regression = false;

    void validate() const {
        if (n_iter <= burn_in || burn_in < 0 || thin < 1)
            throw std::invalid_argument("GtOptions: need n_iter > burn_in >= 0, thin >= 1");
        if (min_rows < 3) throw std::invalid_argument("GtOptions: min_rows below 3");
    }
};

struct GtBlockSamples {
    std::vector<Eigen::Vector2d> beta_m, beta_u;  // (intercept, slope) per class
    std::vector<double> sigma2_m, sigma2_u, lambda;
    std::vector<std::vector<std::uint8_t>> c;  // per-sample class indicators
    int frozen_m = 0, frozen_u = 0;            // sweeps with an empty class
    int swaps = 0;                             // identification relabelings
};

namespace detail {

struct NigDraw {
    Eigen::Vector2d beta;  // (intercept, slope); slope fixed at 0 for marginal-only
    double sigma2 = 1.0;
};

struct NigPosterior {
    Eigen::Matrix2d vn = Eigen::Matrix2d::Zero();
    Eigen::Vector2d mn = Eigen::Vector2d::Zero();
    double an = 0.0, bn = 0.0;
    double log_marginal = 0.0;
    bool with_slope = true;
};

// Conjugate normal-inverse-gamma posterior for y ~ N(b0 + b1 x, sigma^2)
// (or intercept-only when with_slope is false), with prior
// beta | sigma^2 ~ N(0, sigma^2 * scale * I), sigma^2 ~ IG(a0, b0).
// Also evaluates the log marginal likelihood (0 for an empty class).
inline NigPosterior nig_posterior(const std::vector<double>& y, const std::vector<double>& x,
                                  const GtPriors& pr, bool with_slope) {
    const int n = static_cast<int>(y.size());
    const int p = with_slope ? 2 : 1;
    NigPosterior post;
    post.with_slope = with_slope;
    Eigen::MatrixXd v0_inv = Eigen::MatrixXd::Identity(p, p) / pr.coef_scale2;
    Eigen::MatrixXd vn_inv = v0_inv;
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
    double yty = 0.0;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd row(p);
        row(0) = 1.0;
        if (with_slope) row(1) = x[i];
        vn_inv += row * row.transpose();
        xty += row * y[i];
        yty += y[i] * y[i];
    }
    Eigen::MatrixXd vn = vn_inv.inverse();
    Eigen::VectorXd mn = vn * xty;
    post.an = pr.a0 + 0.5 * n;
    post.bn = pr.b0 + 0.5 * (yty - mn.dot(vn_inv * mn));
    post.vn.topLeftCorner(p, p) = vn;
    post.mn.head(p) = mn;
    if (n == 0) {
        post.log_marginal = 0.0;
    } else {
        double log_det_ratio = std::log(vn.determinant()) + p * std::log(1.0 / pr.coef_scale2);
        post.log_marginal = -0.5 * n * std::log(2.0 * M_PI) + 0.5 * log_det_ratio +
                            pr.a0 * std::log(pr.b0) - std::lgamma(pr.a0) + std::lgamma(post.an) -
                            post.an * std::log(post.bn);
    }
    return post;
}

inline NigDraw nig_draw(const NigPosterior& post, Rng& rng) {
    NigDraw d;
    // the diffuse IG(0.01, 0.01) prior has enormous tails; clamp draws to
    // keep downstream densities finite (truncates ~1e-2 % of prior mass)
    d.sigma2 = std::min(1e20, std::max(1e-20, rng.inverse_gamma(post.an, post.bn)));
    double s = std::sqrt(d.sigma2);
    if (post.with_slope) {
        // beta | sigma^2 ~ N(mn, sigma^2 * vn); 2x2 Cholesky by hand
        double l11 = std::sqrt(post.vn(0, 0));
        double l21 = post.vn(1, 0) / l11;
        double l22 = std::sqrt(std::max(post.vn(1, 1) - l21 * l21, 0.0));
        double z1 = rng.normal(), z2 = rng.normal();
        d.beta(0) = post.mn(0) + s * l11 * z1;
        d.beta(1) = post.mn(1) + s * (l21 * z1 + l22 * z2);
    } else {
        d.beta(0) = post.mn(0) + s * std::sqrt(post.vn(0, 0)) * rng.normal();
        d.beta(1) = 0.0;
    }
    return d;
}

inline NigDraw nig_regression_draw(const std::vector<double>& y, const std::vector<double>& x,
                                   const GtPriors& pr, Rng& rng, bool with_slope = true) {
    return nig_draw(nig_posterior(y, x, pr, with_slope), rng);
}

inline double nig_regression_log_marginal(const std::vector<double>& y,
                                          const std::vector<double>& x, const GtPriors& pr,
                                          bool with_slope = true) {
    return nig_posterior(y, x, pr, with_slope).log_marginal;
}

} // namespace detail

// One block's data-augmentation chain. Both classes are conjugate
// regressions; the link class is the anchored (larger |slope|) one.
inline GtBlockSamples gt_da_block(const std::vector<double>& y, const std::vector<double>& x,
                                  const GtPriors& priors, const GtOptions& opts,
                                  std::uint64_t seed) {
    priors.validate();
    opts.validate();
    const int n = static_cast<int>(y.size());
    if (n != static_cast<int>(x.size()))
        throw std::invalid_argument("gt_da_block: length mismatch");
    if (n < opts.min_rows) throw std::invalid_argument("gt_da_block: block below min_rows");

    Rng rng(seed);
    std::vector<std::uint8_t> c(n);
    for (int i = 0; i < n; ++i) c[i] = rng.bernoulli(0.5) ? 1 : 0;

    double mean_y = 0.0;
    for (double v : y) mean_y += v;
    mean_y /= n;
    double var_y = 0.0;
    for (double v : y) var_y += (v - mean_y) * (v - mean_y);
    var_y = std::max(var_y / n, 1e-6);

    detail::NigDraw m{Eigen::Vector2d(mean_y, 0.0), var_y};
    detail::NigDraw u{Eigen::Vector2d(mean_y, 0.0), var_y};
    double lambda = 0.5;

    GtBlockSamples out;
    std::vector<double> ym, xm, yu, xu;
    ym.reserve(n);
    xm.reserve(n);
    yu.reserve(n);
    xu.reserve(n);

    for (int it = 0; it < opts.n_iter; ++it) {
        // (a) class indicators
        for (int i = 0; i < n; ++i) {
            double lm = std::log(lambda) +
                        detail::log_normal_pdf(y[i], m.beta(0) + m.beta(1) * x[i], m.sigma2);
            double lu = std::log1p(-lambda) +
                        detail::log_normal_pdf(y[i], u.beta(0) + u.beta(1) * x[i], u.sigma2);
            double p1 = 1.0 / (1.0 + std::exp(lu - lm));
            c[i] = rng.bernoulli(p1) ? 1 : 0;
        }
        ym.clear();
        xm.clear();
        yu.clear();
        xu.clear();
        for (int i = 0; i < n; ++i) {
            if (c[i]) {
                ym.push_back(y[i]);
                xm.push_back(x[i]);
            } else {
                yu.push_back(y[i]);
                xu.push_back(x[i]);
            }
        }
        // (b) class parameters; an emptied class is frozen for the sweep
        // (or refreshed from its prior when configured) and counted
        if (!ym.empty()) {
            m = detail::nig_regression_draw(ym, xm, priors, rng);
        } else {
            ++out.frozen_m;
            if (opts.refresh_empty_from_prior) m = detail::nig_regression_draw({}, {}, priors, rng);
        }
        if (!yu.empty()) {
            u = detail::nig_regression_draw(yu, xu, priors, rng, opts.u_regression);
        } else {
            ++out.frozen_u;
            if (opts.refresh_empty_from_prior)
                u = detail::nig_regression_draw({}, {}, priors, rng, opts.u_regression);
        }
        // (c) link fraction
        lambda = rng.beta(priors.lambda_a + static_cast<double>(ym.size()),
                          priors.lambda_b + static_cast<double>(yu.size()));
        // identification: the link class carries the larger |slope|; a
        // class with no rows this sweep cannot claim the label (its
        // parameters are prior noise, not evidence)
        if (opts.identify && !ym.empty() && !yu.empty() &&
            std::abs(u.beta(1)) > std::abs(m.beta(1))) {
            std::swap(m, u);
            lambda = 1.0 - lambda;
            for (auto& ci : c) ci = ci ? 0 : 1;
            ++out.swaps;
        }

        if (it >= opts.burn_in && (it - opts.burn_in) % opts.thin == 0) {
            out.beta_m.push_back(m.beta);
            out.beta_u.push_back(u.beta);
            out.sigma2_m.push_back(m.sigma2);
            out.sigma2_u.push_back(u.sigma2);
            out.lambda.push_back(lambda);
            out.c.push_back(c);
        }
    }
    return out;
}

// Exact posterior over class configurations for one small block, obtained
// by integrating the class parameters and the link fraction analytically.
// Exponential in n; intended for oracle checks.
inline std::vector<double> gt_exact_config_posterior(const std::vector<double>& y,
                                                     const std::vector<double>& x,
                                                     const GtPriors& priors,
                                                     bool u_regression = false) {
    priors.validate();
    const int n = static_cast<int>(y.size());
    if (n > 12) throw std::invalid_argument("gt_exact_config_posterior: block too large");
    const int n_cfg = 1 << n;
    std::vector<double> logw(n_cfg);
    std::vector<double> ym, xm, yu, xu;
    for (int cfg = 0; cfg < n_cfg; ++cfg) {
        ym.clear();
        xm.clear();
        yu.clear();
        xu.clear();
        int k = 0;
        for (int i = 0; i < n; ++i) {
            if (cfg & (1 << i)) {
                ym.push_back(y[i]);
                xm.push_back(x[i]);
                ++k;
            } else {
                yu.push_back(y[i]);
                xu.push_back(x[i]);
            }
        }
        double log_prior = std::lgamma(priors.lambda_a + k) +
                           std::lgamma(priors.lambda_b + n - k) -
                           std::lgamma(priors.lambda_a + priors.lambda_b + n) -
                           (std::lgamma(priors.lambda_a) + std::lgamma(priors.lambda_b) -
                            std::lgamma(priors.lambda_a + priors.lambda_b));
        logw[cfg] = log_prior + detail::nig_regression_log_marginal(ym, xm, priors) +
                    detail::nig_regression_log_marginal(yu, xu, priors, u_regression);
    }
    double mx = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    for (double& w : logw) {
        w = std::exp(w - mx);
        total += w;
    }
    for (double& w : logw) w /= total;
    return logw;
}

struct GtFileSamples {
    std::vector<GtBlockSamples> blocks;
    // per retained sample: pooled OLS slope and classical variance on the
    // rows imputed as correct links (intercept+slope design)
    std::vector<std::pair<double, double>> beta_mi;
    int dropped_samples = 0;  // too few imputed links or degenerate design
};

// Runs one chain per block (independent seeds, aligned sample indices) and
// assembles the per-sample pooled slope estimates ready for MI combining.
inline GtFileSamples gt_da(const std::vector<LinkedRow>& rows, const GtPriors& priors,
                           const GtOptions& opts, std::uint64_t seed) {
    std::vector<int> block_ids;
    for (const auto& r : rows)
        if (std::find(block_ids.begin(), block_ids.end(), r.block) == block_ids.end())
            block_ids.push_back(r.block);
    std::sort(block_ids.begin(), block_ids.end());

    GtFileSamples out;
    std::vector<std::vector<int>> block_rows;
    for (std::size_t b = 0; b < block_ids.size(); ++b) {
        std::vector<double> y, x;
        std::vector<int> idx;
        for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
            if (rows[i].block != block_ids[b]) continue;
            y.push_back(rows[i].y);
            x.push_back(rows[i].x);
            idx.push_back(i);
        }
        out.blocks.push_back(
            gt_da_block(y, x, priors, opts, Rng::derive(seed, 71, static_cast<std::uint64_t>(b))));
        block_rows.push_back(std::move(idx));
    }

    const int n_samples = static_cast<int>(out.blocks.front().lambda.size());
    std::vector<double> ys, xs;
    for (int s = 0; s < n_samples; ++s) {
        ys.clear();
        xs.clear();
        for (std::size_t b = 0; b < out.blocks.size(); ++b) {
            const auto& c = out.blocks[b].c[s];
            for (std::size_t j = 0; j < c.size(); ++j) {
                if (!c[j]) continue;
                ys.push_back(rows[block_rows[b][j]].y);
                xs.push_back(rows[block_rows[b][j]].x);
            }
        }
        auto fit = detail::slope_ols(ys, xs);
        if (fit) out.beta_mi.push_back(*fit);
        else ++out.dropped_samples;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Global EM fit: link class y ~ N(b0 + b1 x, s2m), non-link class y ~
// N(mu, s2u) independent of x.
// ---------------------------------------------------------------------------

struct SlwOptions {
    double tol = 1e-8;
    int max_iter = 2000;
    double lambda_init = 0.8;
    int restarts = 5;
    double lambda_clamp = 1e-4;

    void validate() const {
        if (tol <= 0.0 || max_iter < 1 || restarts < 0)
            throw std::invalid_argument("SlwOptions: bad tolerances");
        if (lambda_init <= 0.0 || lambda_init >= 1.0)
            throw std::invalid_argument("SlwOptions: lambda_init outside (0,1)");
    }
};

struct SlwFit {
    // parameter order used throughout: b0, b1, s2m, mu_u, s2u, lambda
    double b0 = 0.0, b1 = 0.0, sigma2_m = 1.0;
    double mu_u = 0.0, sigma2_u = 1.0;
    double lambda = 0.5;
    Eigen::Matrix<double, 6, 6> vcov = Eigen::Matrix<double, 6, 6>::Zero();
    double slope_ci_lo = 0.0, slope_ci_hi = 0.0;
    std::vector<double> posterior;  // per-row Pr(link | data) at the optimum
    std::vector<double> loglik_trace;
    double loglik = -std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
    int restarts_used = 0;

    double slope_se() const { return std::sqrt(std::max(vcov(1, 1), 0.0)); }
};

namespace detail {

struct SlwParams {
    double b0, b1, s2m, mu, s2u, lambda;
};

inline double slw_loglik(const std::vector<LinkedRow>& rows, const SlwParams& p) {
    double ll = 0.0;
    for (const auto& r : rows) {
        double lm = std::log(p.lambda) + log_normal_pdf(r.y, p.b0 + p.b1 * r.x, p.s2m);
        double lu = std::log1p(-p.lambda) + log_normal_pdf(r.y, p.mu, p.s2u);
        double hi = std::max(lm, lu);
        ll += hi + std::log(std::exp(lm - hi) + std::exp(lu - hi));
    }
    return ll;
}

// Per-row score of the log mixture density in the natural parameters.
inline Eigen::Matrix<double, 6, 1> slw_score_row(const LinkedRow& r, const SlwParams& p) {
    double mm = p.b0 + p.b1 * r.x;
    double lm = std::log(p.lambda) + log_normal_pdf(r.y, mm, p.s2m);
    double lu = std::log1p(-p.lambda) + log_normal_pdf(r.y, p.mu, p.s2u);
    double hi = std::max(lm, lu);
    double fm = std::exp(lm - hi), fu = std::exp(lu - hi);
    double s = fm + fu;
    double wm = fm / s, wu = fu / s;
    Eigen::Matrix<double, 6, 1> g;
    double dm = r.y - mm, du = r.y - p.mu;
    g(0) = wm * dm / p.s2m;
    g(1) = wm * dm * r.x / p.s2m;
    g(2) = wm * (dm * dm / (2.0 * p.s2m * p.s2m) - 0.5 / p.s2m);
    g(3) = wu * du / p.s2u;
    g(4) = wu * (du * du / (2.0 * p.s2u * p.s2u) - 0.5 / p.s2u);
    g(5) = wm / p.lambda - wu / (1.0 - p.lambda);
    return g;
}

inline SlwParams slw_em_run(const std::vector<LinkedRow>& rows, SlwParams p,
                            const SlwOptions& opts, std::vector<double>& trace, bool& converged,
                            int& iters, double var_floor) {
    const int n = static_cast<int>(rows.size());
    trace.clear();
    converged = false;
    double prev = -std::numeric_limits<double>::infinity();
    for (iters = 0; iters < opts.max_iter; ++iters) {
        double ll = slw_loglik(rows, p);
        trace.push_back(ll);
        if (std::abs(ll - prev) < opts.tol) {
            converged = true;
            break;
        }
        prev = ll;
        // E-step
        double sw = 0.0, swx = 0.0, swy = 0.0, swxx = 0.0, swxy = 0.0;
        double su = 0.0, suy = 0.0;
        std::vector<double> w(n);
        for (int i = 0; i < n; ++i) {
            const auto& r = rows[i];
            double lm = std::log(p.lambda) + log_normal_pdf(r.y, p.b0 + p.b1 * r.x, p.s2m);
            double lu = std::log1p(-p.lambda) + log_normal_pdf(r.y, p.mu, p.s2u);
            w[i] = 1.0 / (1.0 + std::exp(lu - lm));
            sw += w[i];
            swx += w[i] * r.x;
            swy += w[i] * r.y;
            swxx += w[i] * r.x * r.x;
            swxy += w[i] * r.x * r.y;
            su += 1.0 - w[i];
            suy += (1.0 - w[i]) * r.y;
        }
        // M-step: weighted OLS for the link class means
        double det = sw * swxx - swx * swx;
        const bool have_m = sw > 1e-10 && std::abs(det) > 1e-12;
        const bool have_u = su > 1e-10;
        if (have_m) {
            p.b1 = (sw * swxy - swx * swy) / det;
            p.b0 = (swy - p.b1 * swx) / sw;
        }
        if (have_u) p.mu = suy / su;
        double rss_m = 0.0, rss_u = 0.0;
        for (int i = 0; i < n; ++i) {
            double dm = rows[i].y - p.b0 - p.b1 * rows[i].x;
            double du = rows[i].y - p.mu;
            rss_m += w[i] * dm * dm;
            rss_u += (1.0 - w[i]) * du * du;
        }
        // The non-link class models the outcome marginally, so by the law
        // of total variance its variance can never fall below the link
        // class's residual variance. The two variances are maximized
        // jointly over {s2u >= s2m}: when the unconstrained solutions
        // violate the order, the constrained maximum sits on the boundary
        // at the pooled variance. (Raising s2u to an unconstrained s2m
        // instead is not a coordinate ascent step and can lower the
        // likelihood once the bound activates.)
        if (have_m && have_u) {
            double vm = rss_m / sw, vu = rss_u / su;
            if (vu < vm) vm = vu = (rss_m + rss_u) / (sw + su);
            p.s2m = std::max(vm, var_floor);
            p.s2u = std::max(vu, var_floor);
        } else if (have_m) {
            p.s2m = std::max(rss_m / sw, var_floor);
            p.s2u = std::max(p.s2u, p.s2m);  // empty class: weightless, keep feasible
        } else if (have_u) {
            p.s2u = std::max({rss_u / su, var_floor, p.s2m});
        }
        p.lambda = std::min(1.0 - opts.lambda_clamp, std::max(opts.lambda_clamp, sw / n));
    }
    return p;
}

} // namespace detail

inline SlwFit slw_em(const std::vector<LinkedRow>& rows, const SlwOptions& opts = {},
                     std::uint64_t seed = 1) {
    opts.validate();
    const int n = static_cast<int>(rows.size());
    if (n < 6) throw std::invalid_argument("slw_em: too few rows");

    double my = 0.0, mx = 0.0;
    for (const auto& r : rows) {
        my += r.y;
        mx += r.x;
    }
    my /= n;
    mx /= n;
    double vy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const auto& r : rows) {
        vy += (r.y - my) * (r.y - my);
        sxx += (r.x - mx) * (r.x - mx);
        sxy += (r.x - mx) * (r.y - my);
    }
    vy = std::max(vy / n, 1e-8);
    const double var_floor = 1e-8 * vy;

    detail::SlwParams init;
    init.b1 = sxx > 1e-12 ? sxy / sxx : 0.0;
    init.b0 = my - init.b1 * mx;
    init.s2m = vy;
    init.mu = my;
    init.s2u = vy;
    init.lambda = opts.lambda_init;

    double rss = 0.0;
    for (const auto& r : rows) {
        double e = r.y - init.b0 - init.b1 * r.x;
        rss += e * e;
    }
    const double s2m_ols = std::max(rss / n, 10.0 * var_floor);

    auto run = [&](detail::SlwParams p0) {
        SlwFit f;
        std::vector<double> trace;
        bool conv = false;
        int iters = 0;
        auto p = detail::slw_em_run(rows, p0, opts, trace, conv, iters, var_floor);
        f.b0 = p.b0;
        f.b1 = p.b1;
        f.sigma2_m = p.s2m;
        f.mu_u = p.mu;
        f.sigma2_u = p.s2u;
        f.lambda = p.lambda;
        f.loglik_trace = std::move(trace);
        f.loglik = f.loglik_trace.empty() ? -std::numeric_limits<double>::infinity()
                                          : f.loglik_trace.back();
        f.converged = conv;
        f.iterations = iters;
        return f;
    };

    // The mixture likelihood is multimodal, so the EM is run from a small
    // fixed set of starting points and the best local optimum is kept: the
    // plain moment start, a link-dominant start (tight regression variance,
    // nearly all rows in the link class), and a contamination-heavy start.
    std::vector<detail::SlwParams> starts{init};
    starts.push_back(init);
    starts.back().s2m = s2m_ols;
    starts.back().lambda = 0.98;
    starts.push_back(init);
    starts.back().s2m = 0.5 * s2m_ols;
    starts.back().s2u = 1.5 * vy;
    starts.back().lambda = 0.55;

    SlwFit best = run(starts[0]);
    for (std::size_t s = 1; s < starts.size(); ++s) {
        SlwFit cand = run(starts[s]);
        if (cand.loglik > best.loglik) best = cand;
    }
    bool degenerate = !std::isfinite(best.loglik) ||
                      best.lambda <= opts.lambda_clamp + 1e-12 ||
                      best.sigma2_m <= var_floor * (1.0 + 1e-9) ||
                      best.sigma2_u <= var_floor * (1.0 + 1e-9);
    if (degenerate && opts.restarts > 0) {
        Rng rng(seed);
        for (int r = 0; r < opts.restarts; ++r) {
            detail::SlwParams p0 = init;
            p0.b0 += rng.normal(0.0, std::sqrt(vy));
            p0.b1 *= rng.uniform(0.25, 2.0);
            p0.s2m = vy * rng.uniform(0.2, 2.0);
            p0.s2u = vy * rng.uniform(0.2, 2.0);
            p0.lambda = rng.uniform(0.2, 0.95);
            SlwFit cand = run(p0);
            if (cand.loglik > best.loglik) {
                best = cand;
                best.restarts_used = r + 1;
            }
        }
    }

    // Huber sandwich: bread from a numerical Jacobian of the analytic
    // score sum, meat from per-row score outer products.
    // Single-class limit: a finite sample with no linkage errors still lets
    // the mixture MLE keep a sliver of mass in the non-link class, so the
    // six-parameter mixture is compared against the three-parameter plain
    // regression by BIC; if the extra component does not earn its
    // parameters the fit collapses to ordinary least squares with the link
    // fraction pinned at the upper clamp.
    {
        double ll_single = 0.0;
        const double s2s = std::max(rss / n, var_floor);
        for (const auto& r : rows)
            ll_single += detail::log_normal_pdf(r.y, init.b0 + init.b1 * r.x, s2s);
        if (!(2.0 * (best.loglik - ll_single) > 3.0 * std::log(static_cast<double>(n)))) {
            best.b0 = init.b0;
            best.b1 = init.b1;
            best.sigma2_m = s2s;
            best.mu_u = my;
            best.sigma2_u = vy;
            best.lambda = 1.0 - opts.lambda_clamp;
            best.loglik = ll_single;
            best.loglik_trace = {ll_single};
            best.converged = true;
            best.posterior.assign(n, 1.0);
            // Huber sandwich for the plain regression, embedded in the
            // mixture-parameter layout with zero rows for the unused block.
            Eigen::Matrix3d info3 = Eigen::Matrix3d::Zero();
            Eigen::Matrix3d meat3 = Eigen::Matrix3d::Zero();
            for (const auto& r : rows) {
                double e = r.y - best.b0 - best.b1 * r.x;
                Eigen::Vector3d g(e / s2s, e * r.x / s2s,
                                  (e * e - s2s) / (2.0 * s2s * s2s));
                meat3 += g * g.transpose();
                Eigen::Matrix3d hi;
                hi << 1.0 / s2s, r.x / s2s, e / (s2s * s2s),
                      r.x / s2s, r.x * r.x / s2s, e * r.x / (s2s * s2s),
                      e / (s2s * s2s), e * r.x / (s2s * s2s),
                      (e * e) / (s2s * s2s * s2s) - 0.5 / (s2s * s2s);
                info3 += hi;
            }
            best.vcov.setZero();
            Eigen::FullPivLU<Eigen::Matrix3d> lu3(info3);
            if (lu3.isInvertible()) {
                Eigen::Matrix3d bi = lu3.inverse();
                Eigen::Matrix3d v3 = bi * meat3 * bi.transpose();
                best.vcov.topLeftCorner<3, 3>() = 0.5 * (v3 + v3.transpose());
            }
            double zq = boost::math::quantile(boost::math::normal(), 0.975);
            best.slope_ci_lo = best.b1 - zq * best.slope_se();
            best.slope_ci_hi = best.b1 + zq * best.slope_se();
            return best;
        }
    }

    detail::SlwParams at{best.b0, best.b1, best.sigma2_m, best.mu_u, best.sigma2_u, best.lambda};
    auto total_score = [&](const detail::SlwParams& p) {
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (const auto& r : rows) g += detail::slw_score_row(r, p);
        return g;
    };
    Eigen::Matrix<double, 6, 6> info = Eigen::Matrix<double, 6, 6>::Zero();
    double base[6] = {at.b0, at.b1, at.s2m, at.mu, at.s2u, at.lambda};
    for (int k = 0; k < 6; ++k) {
        double h = 1e-5 * std::max(1.0, std::abs(base[k]));
        if (k == 5) h = std::min(h, 0.25 * std::min(at.lambda, 1.0 - at.lambda));
        detail::SlwParams hiP = at, loP = at;
        double* fields_hi[6] = {&hiP.b0, &hiP.b1, &hiP.s2m, &hiP.mu, &hiP.s2u, &hiP.lambda};
        double* fields_lo[6] = {&loP.b0, &loP.b1, &loP.s2m, &loP.mu, &loP.s2u, &loP.lambda};
        *fields_hi[k] += h;
        *fields_lo[k] -= h;
        info.col(k) = -(total_score(hiP) - total_score(loP)) / (2.0 * h);
    }
    info = 0.5 * (info + info.transpose()).eval();
    Eigen::Matrix<double, 6, 6> meat = Eigen::Matrix<double, 6, 6>::Zero();
    best.posterior.resize(n);
    for (int i = 0; i < n; ++i) {
        auto g = detail::slw_score_row(rows[i], at);
        meat += g * g.transpose();
        double lm = std::log(at.lambda) +
                    detail::log_normal_pdf(rows[i].y, at.b0 + at.b1 * rows[i].x, at.s2m);
        double lu = std::log1p(-at.lambda) + detail::log_normal_pdf(rows[i].y, at.mu, at.s2u);
        best.posterior[i] = 1.0 / (1.0 + std::exp(lu - lm));
    }
    Eigen::FullPivLU<Eigen::Matrix<double, 6, 6>> lu(info);
    if (lu.isInvertible()) {
        Eigen::Matrix<double, 6, 6> bi = lu.inverse();
        best.vcov = bi * meat * bi.transpose();
        best.vcov = 0.5 * (best.vcov + best.vcov.transpose()).eval();
    }
    double z = boost::math::quantile(boost::math::normal(), 0.975);
    best.slope_ci_lo = best.b1 - z * best.slope_se();
    best.slope_ci_hi = best.b1 + z * best.slope_se();
    return best;
}

} // namespace reclink

#endif
