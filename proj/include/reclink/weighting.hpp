#ifndef RECLINK_WEIGHTING_HPP
#define RECLINK_WEIGHTING_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <reclink/rng.hpp>

namespace reclink {

struct LinearFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd vcov;
    Eigen::VectorXd ci_lo, ci_hi;
    std::string method;
    std::vector<std::string> notes;

    double se(int k = 0) const { return std::sqrt(vcov(k, k)); }
};

namespace detail {

inline Eigen::MatrixXd solve_full(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                  const char* ctx) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible())
        throw std::runtime_error(std::string(ctx) + ": singular system");
    return lu.solve(B);
}

inline void t_interval(LinearFit& fit, double dof) {
    const int p = static_cast<int>(fit.beta.size());
    fit.ci_lo.resize(p);
    fit.ci_hi.resize(p);
    double q = dof > 0.0
        ? boost::math::quantile(boost::math::students_t(dof), 0.975)
        : boost::math::quantile(boost::math::normal(), 0.975);
    for (int k = 0; k < p; ++k) {
        double half = q * std::sqrt(std::max(fit.vcov(k, k), 0.0));
        fit.ci_lo(k) = fit.beta(k) - half;
        fit.ci_hi(k) = fit.beta(k) + half;
    }
}

inline void normal_interval(LinearFit& fit) { t_interval(fit, 0.0); }

} // namespace detail

// Ordinary least squares with the classical variance. The design is taken
// as given; the simulation benchmark passes a single no-intercept column.
inline LinearFit naive_ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                           const std::string& method = "naive") {
    const auto n = X.rows();
    const auto p = X.cols();
    if (y.size() != n) throw std::invalid_argument("naive_ols: length mismatch");
    if (n < 3 || n <= p) throw std::invalid_argument("naive_ols: too few observations");
    Eigen::MatrixXd xtx = X.transpose() * X;
    LinearFit fit;
    fit.method = method;
    fit.beta = detail::solve_full(xtx, X.transpose() * y, "naive_ols");
    Eigen::VectorXd resid = y - X * fit.beta;
    double sigma2 = resid.squaredNorm() / static_cast<double>(n - p);
    fit.vcov = sigma2 * detail::solve_full(xtx, Eigen::MatrixXd::Identity(p, p), "naive_ols");
    detail::t_interval(fit, static_cast<double>(n - p));
    return fit;
}

// First-order prediction of the naive estimator's bias given the linkage
// error matrix: (X'X)^-1 X' (Q - I) X beta.
inline Eigen::VectorXd prop1_bias(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& beta) {
    if (Q.rows() != Q.cols() || Q.rows() != X.rows())
        throw std::invalid_argument("prop1_bias: Q must be square and conform with X");
    Eigen::MatrixXd xtx = X.transpose() * X;
    Eigen::VectorXd rhs = X.transpose() * ((Q * (X * beta)) - X * beta);
    return detail::solve_full(xtx, rhs, "prop1_bias");
}

// Bias-adjusted estimator: the naive fit on the declared links minus the
// plug-in estimate of its linkage bias. Q is expected to be row-truncated
// to the top two entries before the call. Convention: q_ij and delta_ij
// give the probability/indicator that outcome row i belongs to covariate
// row j; both may be rectangular when the outcome and covariate files
// differ in size (X then spans the covariate file).
inline LinearFit sw_estimator(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                              const Eigen::MatrixXd& Q, const Eigen::MatrixXd& Delta) {
    const auto n = y.size();
    if (Q.rows() != n || Delta.rows() != n || X.rows() != Q.cols() || Delta.cols() != Q.cols())
        throw std::invalid_argument("sw_estimator: dimension mismatch");
    Eigen::MatrixXd x_star = Delta * X;
    LinearFit fit = naive_ols(y, x_star, "SW");
    Eigen::MatrixXd xtx = X.transpose() * X;
    Eigen::VectorXd corr = detail::solve_full(
        xtx, X.transpose() * ((Q - Delta).transpose() * y), "sw_estimator");
    fit.beta -= corr;
    detail::t_interval(fit, static_cast<double>(n - X.cols()));
    fit.notes.push_back("variance from the naive stage; use blocked jackknife for coverage");
    return fit;
}

enum class HlVariant { HLF, HL2, HL1 };

inline const char* hl_name(HlVariant v) {
    switch (v) {
        case HlVariant::HLF: return "HLF";
        case HlVariant::HL2: return "HL2";
        default: return "HL1";
    }
}

// Pooled weighted estimating equation solution over blocks:
// beta = (sum X' Q' Q X)^-1 (sum X' Q' y). Q_b may be rectangular
// (outcome rows by covariate rows) and is used exactly as supplied; the
// caller prepares the full or truncated variant.
inline Eigen::VectorXd hl_point(const std::vector<Eigen::MatrixXd>& Q,
                                const std::vector<Eigen::MatrixXd>& X,
                                const std::vector<Eigen::VectorXd>& y) {
    if (Q.empty() || Q.size() != X.size() || Q.size() != y.size())
        throw std::invalid_argument("hl_point: block lists must conform");
    const auto p = X[0].cols();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (std::size_t b = 0; b < Q.size(); ++b) {
        if (Q[b].rows() != y[b].size() || Q[b].cols() != X[b].rows() || X[b].cols() != p)
            throw std::invalid_argument("hl_point: block dimension mismatch");
        Eigen::MatrixXd qx = Q[b] * X[b];
        A += qx.transpose() * qx;
        rhs += qx.transpose() * y[b];
    }
    return detail::solve_full(A, rhs, "hl_point");
}

struct JackknifeResult {
    Eigen::MatrixXd vcov;
    int valid = 0;
    int excluded = 0;
    double dof = 0.0;
};

// Delete-one-block jackknife over a refit closure. The closure returns the
// replicate estimate with one block left out, or nothing when that
// replicate is singular; such replicates are excluded and counted.
inline JackknifeResult jackknife_variance(
    int n_blocks, const std::function<std::optional<Eigen::VectorXd>(int)>& refit) {
    if (n_blocks < 2) throw std::invalid_argument("jackknife_variance: need at least 2 blocks");
    std::vector<Eigen::VectorXd> reps;
    int excluded = 0;
    for (int g = 0; g < n_blocks; ++g) {
        auto est = refit(g);
        if (est.has_value()) reps.push_back(*est);
        else ++excluded;
    }
    if (reps.size() < 2)
        throw std::runtime_error("jackknife_variance: fewer than 2 valid replicates");
    const double G = static_cast<double>(reps.size());
    const auto p = reps[0].size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    for (const auto& r : reps) mean += r;
    mean /= G;
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(p, p);
    for (const auto& r : reps) {
        Eigen::VectorXd d = r - mean;
        v += d * d.transpose();
    }
    JackknifeResult out;
    out.vcov = (G - 1.0) / G * v;
    out.valid = static_cast<int>(reps.size());
    out.excluded = excluded;
    out.dof = G - 1.0;
    return out;
}

inline LinearFit hl_estimator(const std::vector<Eigen::MatrixXd>& Q,
                              const std::vector<Eigen::MatrixXd>& X,
                              const std::vector<Eigen::VectorXd>& y,
                              HlVariant variant,
                              const std::function<std::optional<Eigen::VectorXd>(int)>* jackknife_refit = nullptr) {
    LinearFit fit;
    fit.method = hl_name(variant);
    fit.beta = hl_point(Q, X, y);
    const auto p = fit.beta.size();
    fit.vcov = Eigen::MatrixXd::Zero(p, p);
    if (jackknife_refit) {
        auto jk = jackknife_variance(static_cast<int>(Q.size()), *jackknife_refit);
        fit.vcov = jk.vcov;
        if (jk.excluded > 0)
            fit.notes.push_back(std::to_string(jk.excluded) + " jackknife replicate(s) excluded");
        detail::t_interval(fit, jk.dof);
    } else {
        fit.notes.push_back("variance not estimated; supply a jackknife refit closure");
        detail::t_interval(fit, 0.0);
    }
    return fit;
}

// Exchangeable linkage error matrix: correct link probability on the
// diagonal, the remaining mass spread evenly off-diagonal.
inline Eigen::MatrixXd ele_q(double lambda, int n) {
    if (n < 1) throw std::invalid_argument("ele_q: empty block");
    if (n == 1) {
        if (lambda != 1.0) throw std::invalid_argument("ele_q: lambda must be 1 for n=1");
        return Eigen::MatrixXd::Ones(1, 1);
    }
    if (lambda < 1.0 / n || lambda > 1.0)
        throw std::invalid_argument("ele_q: lambda outside [1/n, 1]");
    double off = (1.0 - lambda) / (n - 1);
    Eigen::MatrixXd Q = Eigen::MatrixXd::Constant(n, n, off);
    Q.diagonal().setConstant(lambda);
    return Q;
}

struct AuditEstimate {
    double lambda = 0.0;
    int audit_size = 0;
    bool clamped = false;
};

// Correct-link probability for one block from a random audit of its links,
// clamped away from 0 and 1 to keep the error model proper.
inline AuditEstimate estimate_lambda_audit(const std::vector<std::uint8_t>& correct,
                                           double audit_fraction, std::uint64_t seed) {
    const int n = static_cast<int>(correct.size());
    if (n == 0) throw std::invalid_argument("estimate_lambda_audit: empty block");
    if (!(audit_fraction > 0.0) || audit_fraction > 1.0)
        throw std::invalid_argument("estimate_lambda_audit: fraction must be in (0, 1]");
    int a = std::max(1, static_cast<int>(std::llround(audit_fraction * n)));
    a = std::min(a, n);
    Rng rng(seed);
    auto idx = rng.sample_without_replacement(n, a);
    double hits = 0.0;
    for (auto i : idx) hits += correct[i] ? 1.0 : 0.0;
    double n_bc = hits / static_cast<double>(a);
    double lo = 1.0 / n, hi = (n - 1.0) / n;
    AuditEstimate out;
    out.audit_size = a;
    out.lambda = std::min(hi, std::max(lo, n_bc));
    out.clamped = (out.lambda != n_bc);
    return out;
}

struct EleModel {
    std::vector<double> lambdas;
    std::vector<int> block_sizes;
    std::vector<int> audit_sizes;  // 0 marks a lambda treated as known

    void validate() const {
        if (lambdas.size() != block_sizes.size())
            throw std::invalid_argument("EleModel: lambdas and block sizes must conform");
        if (!audit_sizes.empty() && audit_sizes.size() != lambdas.size())
            throw std::invalid_argument("EleModel: audit sizes must conform");
        for (std::size_t b = 0; b < lambdas.size(); ++b) {
            int n = block_sizes[b];
            if (n < 1) throw std::invalid_argument("EleModel: empty block");
            if (lambdas[b] < 1.0 / n - 1e-12 || lambdas[b] > 1.0 + 1e-12)
                throw std::invalid_argument("EleModel: lambda outside [1/n, 1]");
        }
    }
};

enum class ChVariant { ChR, ChL, ChB };

inline const char* ch_name(ChVariant v) {
    switch (v) {
        case ChVariant::ChR: return "ChR";
        case ChVariant::ChL: return "ChL";
        default: return "ChB";
    }
}

// Weighted estimating-equation estimators under the exchangeable error
// model, with a sandwich variance that carries both the model residual
// variation and the audit-sampling variability of each lambda-hat.
//
// Variants differ in the weighting matrix: the ratio form uses X', the
// Lahiri-Larsen form X'Q', and the BLUE form X'Q'(sigma^2 I + Sigma)^-1.
// Sigma here is the variance of E(Y*|X) induced by the error model; its
// rows are treated independently, Sigma_ii = (Q mu^2)_i - ((Q mu)_i)^2
// with mu = X beta, which is exact per row under exchangeability within
// the block (joint permutation dependence across rows is ignored).
// sigma^2, when not supplied, is the plug-in from the Lahiri-Larsen
// residuals: mean((y - QX beta)^2) - mean(Sigma_ii), floored at zero.
inline LinearFit chambers_fit(const std::vector<Eigen::VectorXd>& y,
                              const std::vector<Eigen::MatrixXd>& X,
                              const EleModel& model, ChVariant variant,
                              double sigma2_hat = std::numeric_limits<double>::quiet_NaN()) {
    model.validate();
    const std::size_t H = model.lambdas.size();
    if (y.size() != H || X.size() != H)
        throw std::invalid_argument("chambers_fit: block lists must conform with the model");
    const auto p = X[0].cols();

    std::vector<Eigen::MatrixXd> Q(H);
    for (std::size_t b = 0; b < H; ++b) {
        const int n = model.block_sizes[b];
        if (y[b].size() != n || X[b].rows() != n)
            throw std::invalid_argument("chambers_fit: block dimension mismatch");
        Q[b] = ele_q(model.lambdas[b], n);
    }

    // preliminary Lahiri-Larsen pass for the plug-in quantities
    Eigen::VectorXd beta_ll;
    {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
        for (std::size_t b = 0; b < H; ++b) {
            Eigen::MatrixXd qx = Q[b] * X[b];
            A += qx.transpose() * qx;
            rhs += qx.transpose() * y[b];
        }
        beta_ll = detail::solve_full(A, rhs, "chambers_fit(prelim)");
    }

    std::vector<Eigen::VectorXd> sigma_diag(H);
    double rss = 0.0, sig_sum = 0.0, n_total = 0.0;
    for (std::size_t b = 0; b < H; ++b) {
        Eigen::VectorXd mu = X[b] * beta_ll;
        Eigen::VectorXd qmu = Q[b] * mu;
        Eigen::VectorXd qmu2 = Q[b] * mu.cwiseProduct(mu);
        sigma_diag[b] = (qmu2 - qmu.cwiseProduct(qmu)).cwiseMax(0.0);
        rss += (y[b] - qmu).squaredNorm();
        sig_sum += sigma_diag[b].sum();
        n_total += static_cast<double>(model.block_sizes[b]);
    }
    double s2 = sigma2_hat;
    if (std::isnan(s2)) s2 = std::max(rss / n_total - sig_sum / n_total, 1e-8);

    // weighting matrices per block
    std::vector<Eigen::MatrixXd> ups(H), W(H);
    for (std::size_t b = 0; b < H; ++b) {
        const int n = model.block_sizes[b];
        switch (variant) {
            case ChVariant::ChR:
                ups[b] = X[b].transpose();
                break;
            case ChVariant::ChL:
                ups[b] = X[b].transpose() * Q[b].transpose();
                break;
            case ChVariant::ChB: {
                Eigen::MatrixXd cov = s2 * Eigen::MatrixXd::Identity(n, n);
                cov.diagonal() += sigma_diag[b];
                W[b] = cov.inverse();
                ups[b] = X[b].transpose() * Q[b].transpose() * W[b];
                break;
            }
        }
    }

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (std::size_t b = 0; b < H; ++b) {
        A += ups[b] * Q[b] * X[b];
        rhs += ups[b] * y[b];
    }

    LinearFit fit;
    fit.method = ch_name(variant);
    fit.beta = detail::solve_full(A, rhs, "chambers_fit");

    // sandwich: A^-1 [ sum ups (s2 I + Sigma) ups' + sum G v G' ] A^-T
    Eigen::MatrixXd mid = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t b = 0; b < H; ++b) {
        const int n = model.block_sizes[b];
        Eigen::MatrixXd cov = s2 * Eigen::MatrixXd::Identity(n, n);
        cov.diagonal() += sigma_diag[b];
        mid += ups[b] * cov * ups[b].transpose();

        int a_b = b < model.audit_sizes.size() ? model.audit_sizes[b] : 0;
        if (a_b > 0 && n > 1) {
            double lam = model.lambdas[b];
            double v_b = lam * (1.0 - lam) / static_cast<double>(a_b);
            // dQ/dlambda: 1 on the diagonal, -1/(n-1) off it
            Eigen::MatrixXd dQ = Eigen::MatrixXd::Constant(n, n, -1.0 / (n - 1));
            dQ.diagonal().setConstant(1.0);
            Eigen::MatrixXd dups;
            switch (variant) {
                case ChVariant::ChR: dups = Eigen::MatrixXd::Zero(p, n); break;
                case ChVariant::ChL: dups = X[b].transpose() * dQ.transpose(); break;
                case ChVariant::ChB: dups = X[b].transpose() * dQ.transpose() * W[b]; break;
            }
            Eigen::VectorXd resid = y[b] - Q[b] * (X[b] * fit.beta);
            Eigen::VectorXd G = dups * resid - ups[b] * (dQ * (X[b] * fit.beta));
            mid += v_b * (G * G.transpose());
        }

        double lo = 1.0 / n + 1e-12, hi = (n - 1.0) / n - 1e-12;
        if (n > 1 && (model.lambdas[b] <= lo || (model.lambdas[b] >= hi && model.lambdas[b] < 1.0)))
            fit.notes.push_back("lambda at clamp boundary in block " + std::to_string(b));
    }
    Eigen::MatrixXd a_inv = detail::solve_full(A, Eigen::MatrixXd::Identity(p, p), "chambers_fit");
    fit.vcov = a_inv * mid * a_inv.transpose();
    detail::normal_interval(fit);
    return fit;
}

} // namespace reclink

#endif
