#ifndef RECLINK_COMBINE_HPP
#define RECLINK_COMBINE_HPP

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace reclink {

struct PooledEstimate {
    double point = 0.0;
    double within = 0.0;   // mean of the supplied variances
    double between = 0.0;  // spread of the supplied points (divisor differs by rule)
    double total = 0.0;
    double dof = std::numeric_limits<double>::infinity();  // infinity => normal interval
    double ci_lo = 0.0, ci_hi = 0.0;
    int m = 0;
};

namespace detail {

inline void pooled_interval(PooledEstimate& est) {
    double q = std::isfinite(est.dof)
        ? boost::math::quantile(boost::math::students_t(est.dof), 0.975)
        : boost::math::quantile(boost::math::normal(), 0.975);
    double half = q * std::sqrt(std::max(est.total, 0.0));
    est.ci_lo = est.point - half;
    est.ci_hi = est.point + half;
}

} // namespace detail

// Multiple-imputation pooling: point = mean, total variance
// T = U + (1 + 1/m) B with B the sample variance of the points
// (divisor m - 1), and a Student-t interval on
// df = (m - 1)(1 + U/((1 + 1/m)B))^2. B = 0 degenerates to a normal
// interval on the within variance alone.
inline PooledEstimate mi_combine(const std::vector<std::pair<double, double>>& estimates) {
    const int m = static_cast<int>(estimates.size());
    if (m < 2) throw std::invalid_argument("mi_combine: need at least 2 estimates");
    PooledEstimate out;
    out.m = m;
    for (const auto& [q, v] : estimates) {
        if (v < 0.0) throw std::invalid_argument("mi_combine: negative variance");
        out.point += q;
        out.within += v;
    }
    out.point /= m;
    out.within /= m;
    for (const auto& [q, v] : estimates) {
        (void)v;
        out.between += (q - out.point) * (q - out.point);
    }
    out.between /= (m - 1);
    const double infl = (1.0 + 1.0 / m) * out.between;
    out.total = out.within + infl;
    if (infl > 0.0) {
        const double r = out.within / infl;
        out.dof = (m - 1) * (1.0 + r) * (1.0 + r);
    }
    detail::pooled_interval(out);
    return out;
}

// Averaging over sampled linkage structures: the posterior mean is the
// average of the conditional means and the posterior variance is the
// mean conditional variance plus the population-style spread of the
// conditional means (divisor m). With equal draws per structure this
// reproduces the stacked-sample moments exactly.
inline PooledEstimate linkage_average(
    const std::vector<std::pair<double, double>>& conditionals) {
    const int m = static_cast<int>(conditionals.size());
    if (m < 2) throw std::invalid_argument("linkage_average: need at least 2 structures");
    PooledEstimate out;
    out.m = m;
    for (const auto& [mu, v] : conditionals) {
        if (v < 0.0) throw std::invalid_argument("linkage_average: negative variance");
        out.point += mu;
        out.within += v;
    }
    out.point /= m;
    out.within /= m;
    for (const auto& [mu, v] : conditionals) {
        (void)v;
        out.between += (mu - out.point) * (mu - out.point);
    }
    out.between /= m;
    out.total = out.within + out.between;
    detail::pooled_interval(out);
    return out;
}

} // namespace reclink

#endif
