#ifndef RECLINK_HARNESS_HPP
#define RECLINK_HARNESS_HPP

// Simulation benchmark harness. An experiment plan is a factorial grid of
// generator configurations crossed with a set of estimation methods and a
// replication count. The runner executes every (cell, replication) task,
// routes the generated data through the requested linkers and estimators,
// and aggregates per-cell bias, standard error, interval coverage, and
// linkage quality. Replication failures are recorded and skipped; a cell
// whose failure share exceeds the ceiling is marked invalid. Results are
// deterministic for a fixed base seed regardless of the worker count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bipartite_gibbs.hpp"
#include "combine.hpp"
#include "comparison.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "fs_model.hpp"
#include "rng.hpp"
#include "secondary_mixture.hpp"
#include "simgen.hpp"
#include "weighting.hpp"

namespace reclink {

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

// Two-file methods link the files first and regress the outcome on the
// covariate across the declared or sampled links. Linked-file methods take
// an already-linked file with block-level error rates as given.
enum class Method {
    FsNaive,  // mixture-model linkage, best one-to-one assignment, plain OLS
    SL,       // posterior linkage sampling, per-draw OLS pooled by MI rules
    KSG,      // linkage sampling with regression feedback, posterior summary
    HLF,      // weighted estimating equations, full link-probability matrix
    HL2,      // same, probabilities truncated to the top two per row
    HL1,      // same, truncated to the single best candidate
    SW,       // bias-corrected naive fit on the assigned pairs
    Naive,    // plain OLS on the linked file as delivered
    ChR,      // exchangeable-error adjusted, ratio weighting
    ChL,      // exchangeable-error adjusted, link-probability weighting
    ChB,      // exchangeable-error adjusted, best-linear weighting
    GT,       // Bayesian mixture over correct/incorrect links, MI pooling
    SLW,      // two-component likelihood fit with sandwich variance
};

inline const char* method_name(Method m) {
    switch (m) {
        case Method::FsNaive: return "FS-naive";
        case Method::SL: return "SL";
        case Method::KSG: return "KSG";
        case Method::HLF: return "HLF";
        case Method::HL2: return "HL2";
        case Method::HL1: return "HL1";
        case Method::SW: return "SW";
        case Method::Naive: return "Naive";
        case Method::ChR: return "ChR";
        case Method::ChL: return "ChL";
        case Method::ChB: return "ChB";
        case Method::GT: return "GT";
        case Method::SLW: return "SLW";
    }
    return "?";
}

inline Method parse_method(const std::string& name) {
    static const std::map<std::string, Method> table = {
        {"FS-naive", Method::FsNaive}, {"SL", Method::SL},   {"KSG", Method::KSG},
        {"HLF", Method::HLF},          {"HL2", Method::HL2}, {"HL1", Method::HL1},
        {"SW", Method::SW},            {"Naive", Method::Naive}, {"ChR", Method::ChR},
        {"ChL", Method::ChL},          {"ChB", Method::ChB}, {"GT", Method::GT},
        {"SLW", Method::SLW}};
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("unknown method '" + name + "'");
    return it->second;
}

// 1 = two separate files to link, 2 = one already-linked file.
inline int method_scenario(Method m) {
    switch (m) {
        case Method::FsNaive:
        case Method::SL:
        case Method::KSG:
        case Method::HLF:
        case Method::HL2:
        case Method::HL1:
        case Method::SW: return 1;
        default: return 2;
    }
}

// ---------------------------------------------------------------------------
// Linkage quality
// ---------------------------------------------------------------------------

struct LinkageQuality {
    double precision = 1.0;  // declared links that are true links
    double recall = 1.0;     // true links that were declared
    double f1 = 1.0;
    int n_declared = 0, n_true = 0, n_correct = 0;
};

// Conventions: no declared links gives precision 1 (nothing asserted,
// nothing wrong) and recall 0 whenever true links exist; an empty truth
// set gives recall 1.
inline LinkageQuality evaluate_linkage(const std::vector<std::pair<int, int>>& declared,
                                       const std::vector<std::pair<int, int>>& truth) {
    std::set<std::pair<int, int>> dset(declared.begin(), declared.end());
    std::set<std::pair<int, int>> tset(truth.begin(), truth.end());
    LinkageQuality q;
    q.n_declared = static_cast<int>(dset.size());
    q.n_true = static_cast<int>(tset.size());
    for (const auto& d : dset) q.n_correct += tset.count(d) ? 1 : 0;
    q.precision = q.n_declared == 0 ? 1.0 : static_cast<double>(q.n_correct) / q.n_declared;
    q.recall = q.n_true == 0 ? 1.0 : static_cast<double>(q.n_correct) / q.n_true;
    double pr = q.precision + q.recall;
    q.f1 = pr > 0.0 ? 2.0 * q.precision * q.recall / pr : 0.0;
    return q;
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

struct HarnessOptions {
    int gibbs_iter = 1000;  // linkage sampler sweeps (burn-in included)
    int gibbs_burn = 500;
    int mi_draws = 25;     // retained linkage draws pooled by the MI rules
    int gt_iter = 1500;    // mixture sampler sweeps for the linked-file model
    int gt_burn = 500;
    int gt_min_rows = 10;
    double assign_threshold = 0.5;  // posterior gate for declaring a link
    int min_links = 3;              // fewest pairs a regression accepts

    void validate() const {
        if (gibbs_iter <= gibbs_burn || gibbs_burn < 0)
            throw ConfigError("harness: need gibbs-iter > gibbs-burn >= 0");
        if (gt_iter <= gt_burn || gt_burn < 0)
            throw ConfigError("harness: need gt-iter > gt-burn >= 0");
        if (mi_draws < 2) throw ConfigError("harness: mi-draws below 2");
        if (min_links < 3) throw ConfigError("harness: min-links below 3");
        if (!(assign_threshold > 0.0) || !(assign_threshold < 1.0))
            throw ConfigError("harness: assign-threshold outside (0,1)");
    }
};

struct ExperimentPlan {
    int scenario = 2;
    std::vector<Scenario1Config> cells_s1;
    std::vector<Scenario2Config> cells_s2;
    std::vector<std::string> labels;  // optional; fingerprints when empty
    std::vector<Method> methods;
    int replications = 1;
    std::uint64_t base_seed = 1;
    int workers = 1;
    double failure_ceiling = 0.2;  // share of failed replications a cell tolerates
    HarnessOptions opt;

    std::size_t n_cells() const {
        return scenario == 1 ? cells_s1.size() : cells_s2.size();
    }

    void validate() const {
        if (scenario != 1 && scenario != 2) throw ConfigError("plan: scenario must be 1 or 2");
        if (n_cells() == 0) throw ConfigError("plan: no cells");
        if (methods.empty()) throw ConfigError("plan: no methods");
        for (Method m : methods)
            if (method_scenario(m) != scenario)
                throw ConfigError(std::string("plan: method ") + method_name(m) +
                                  " does not apply to scenario " + std::to_string(scenario));
        if (replications < 1) throw ConfigError("plan: replications below 1");
        if (workers < 1) throw ConfigError("plan: workers below 1");
        if (failure_ceiling < 0.0 || failure_ceiling > 1.0)
            throw ConfigError("plan: failure-ceiling outside [0,1]");
        if (!labels.empty() && labels.size() != n_cells())
            throw ConfigError("plan: labels must match the cell count");
        opt.validate();
        for (const auto& c : cells_s1) {
            c.validate();
            if (c.n_a > c.n_b)
                throw ConfigError("plan: the outcome file must not be larger than the covariate file");
        }
        for (const auto& c : cells_s2) c.validate();
    }
};

// Compact, parseable cell identifier: scenario tag then key=value pairs
// separated by ';'.
inline std::string fingerprint(const Scenario1Config& c) {
    std::ostringstream os;
    os << "s1;na=" << c.n_a << ";nb=" << c.n_b << ";ov=" << fmt_double(c.overlap)
       << ";blk=" << c.n_blocks << ";dp=" << (c.high_dp ? "high" : "low")
       << ";rho=" << fmt_double(c.rho) << ";err=" << fmt_double(c.error_level)
       << ";mech=" << mechanism_name(c.mechanism);
    return os.str();
}

inline std::string fingerprint(const Scenario2Config& c) {
    std::ostringstream os;
    os << "s2;n=" << c.n << ";blk=" << c.block_sizes.size() << ";rho=" << fmt_double(c.rho)
       << ";err=";
    for (std::size_t i = 0; i < c.error_rates.size(); ++i)
        os << (i ? "/" : "") << fmt_double(c.error_rates[i]);
    os << ";mech=" << mechanism_name(c.mechanism);
    return os.str();
}

inline std::string cell_label(const ExperimentPlan& plan, std::size_t cell) {
    if (!plan.labels.empty()) return plan.labels[cell];
    return plan.scenario == 1 ? fingerprint(plan.cells_s1[cell])
                              : fingerprint(plan.cells_s2[cell]);
}

// "s1;na=200;..." -> {{"scenario","s1"},{"na","200"},...}
inline std::map<std::string, std::string> parse_fingerprint(const std::string& label) {
    std::map<std::string, std::string> out;
    std::istringstream in(label);
    std::string tok;
    bool first = true;
    while (std::getline(in, tok, ';')) {
        if (first) {
            out["scenario"] = tok;
            first = false;
            continue;
        }
        auto eq = tok.find('=');
        if (eq != std::string::npos) out[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct EstimateRecord {
    int cell = 0;
    int rep = 0;
    std::string cell_label;
    std::string method;
    bool ok = false;
    double truth = 0.0;
    double estimate = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    double ci_lo = std::numeric_limits<double>::quiet_NaN();
    double ci_hi = std::numeric_limits<double>::quiet_NaN();
    bool covered = false;
    double precision = std::numeric_limits<double>::quiet_NaN();
    double recall = std::numeric_limits<double>::quiet_NaN();
    double elapsed_ms = 0.0;
    std::string note;  // failure message when not ok
};

struct MetricsRow {
    std::string cell;
    std::string method;
    double mean_bias = std::numeric_limits<double>::quiet_NaN();
    double mean_se = std::numeric_limits<double>::quiet_NaN();
    double coverage = std::numeric_limits<double>::quiet_NaN();
    double precision = std::numeric_limits<double>::quiet_NaN();
    double recall = std::numeric_limits<double>::quiet_NaN();
    int n_valid = 0;       // replications that produced an estimate
    int replications = 0;  // replications attempted
    bool valid = true;     // false once failures exceed the ceiling
    double wall_ms = 0.0;  // summed task time, not wall-clock under workers
};

struct PlanResult {
    std::vector<MetricsRow> metrics;      // cell-major, methods in plan order
    std::vector<EstimateRecord> records;  // ordered by (cell, replication, method)
    std::vector<std::string> invalid_cells;  // "label method" per breached row
    double wall_ms = 0.0;                    // wall-clock for the whole plan
};

namespace detail {

inline void fill_from_fit(EstimateRecord& r, const LinearFit& fit, int k) {
    r.estimate = fit.beta(k);
    r.se = fit.se(k);
    r.ci_lo = fit.ci_lo(k);
    r.ci_hi = fit.ci_hi(k);
}

inline void fill_from_pool(EstimateRecord& r, const PooledEstimate& pe) {
    r.estimate = pe.point;
    r.se = std::sqrt(std::max(pe.total, 0.0));
    r.ci_lo = pe.ci_lo;
    r.ci_hi = pe.ci_hi;
}

inline LinearFit ols_xy(const std::vector<double>& y, const std::vector<double>& x,
                        const std::string& name) {
    const int n = static_cast<int>(y.size());
    Eigen::VectorXd yv(n);
    Eigen::MatrixXd X(n, 2);
    for (int i = 0; i < n; ++i) {
        yv(i) = y[i];
        X(i, 0) = 1.0;
        X(i, 1) = x[i];
    }
    return naive_ols(yv, X, name);
}

// type-7 quantile (linear interpolation) of an unsorted sample
inline double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 1) return v[0];
    double h = p * static_cast<double>(n - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(h));
    std::size_t hi = std::min(lo + 1, n - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------------------
// Two-file workspace: generate, compare, fit the mixture, assign
// ---------------------------------------------------------------------------

inline std::vector<Record> to_records(const std::vector<PersonRecord>& rs, char tag) {
    std::vector<Record> out;
    out.reserve(rs.size());
    for (const auto& r : rs) {
        Record rec;
        rec.id = std::string(1, tag) + std::to_string(r.id);
        rec.block = r.block;
        rec.fields = {std::to_string(r.zip_or_gender), r.name, std::to_string(r.race),
                      std::to_string(r.yob)};
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<FieldSpec> linkage_schema(bool high_dp) {
    return {{high_dp ? "zip" : "gender", FieldKind::exact},
            {"name", FieldKind::string_ld},
            {"race", FieldKind::exact},
            {"yob", FieldKind::exact}};
}

struct S1Workspace {
    Scenario1Data data;
    ComparisonTable table;
    FsModel fs;
    std::vector<double> q;        // posterior link probability per pair
    std::vector<int> assignment;  // A row -> B row or -1
    std::vector<double> y_a, x_b;
    std::vector<std::pair<int, int>> truth_rows;  // true links as (A row, B row)
    LinkageQuality assign_quality;
};

inline S1Workspace make_s1_workspace(Scenario1Config cfg, const HarnessOptions& opt,
                                     std::uint64_t data_seed) {
    S1Workspace w;
    cfg.seed = data_seed;
    w.data = gen_scenario1(cfg);
    w.table = build_comparisons(to_records(w.data.file_a, 'a'), to_records(w.data.file_b, 'b'),
                                linkage_schema(cfg.high_dp));
    if (w.table.swapped)
        throw std::runtime_error("two-file workspace: unexpected file orientation swap");
    w.fs = em_fit(w.table);
    w.q = posterior_q(w.fs, w.table);
    w.assignment = assign_one_to_one(w.table, match_weights(w.fs, w.table), w.q,
                                     opt.assign_threshold);

    w.y_a.resize(w.data.file_a.size());
    for (std::size_t i = 0; i < w.data.file_a.size(); ++i) w.y_a[i] = w.data.file_a[i].y;
    w.x_b.resize(w.data.file_b.size());
    for (std::size_t j = 0; j < w.data.file_b.size(); ++j) w.x_b[j] = w.data.file_b[j].x;

    std::map<int, int> row_a, row_b;
    for (std::size_t i = 0; i < w.data.file_a.size(); ++i) row_a[w.data.file_a[i].id] = static_cast<int>(i);
    for (std::size_t j = 0; j < w.data.file_b.size(); ++j) row_b[w.data.file_b[j].id] = static_cast<int>(j);
    for (const auto& [ia, ib] : w.data.truth.links)
        w.truth_rows.emplace_back(row_a.at(ia), row_b.at(ib));

    std::vector<std::pair<int, int>> declared;
    for (std::size_t i = 0; i < w.assignment.size(); ++i)
        if (w.assignment[i] >= 0) declared.emplace_back(static_cast<int>(i), w.assignment[i]);
    w.assign_quality = evaluate_linkage(declared, w.truth_rows);
    return w;
}

inline std::vector<std::pair<int, int>> declared_from_marginal(const ComparisonTable& t,
                                                               const std::vector<double>& marginal) {
    std::vector<std::pair<int, int>> declared;
    for (std::size_t p = 0; p < t.n_pairs(); ++p)
        if (marginal[p] > 0.5) declared.push_back(t.pairs[p]);
    return declared;
}

// per-block dense matrices for the weighted estimating equations
struct HlBlocks {
    std::vector<Eigen::MatrixXd> Q, X;
    std::vector<Eigen::VectorXd> y;
};

inline HlBlocks hl_blocks(const S1Workspace& w, const std::vector<double>& qv) {
    HlBlocks out;
    for (const auto& blk : w.table.blocks) {
        const std::size_t na = blk.a_rows.size(), nb = blk.b_rows.size();
        if (na == 0 || nb == 0) continue;
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(na, nb);
        for (std::size_t p = blk.pair_begin; p < blk.pair_end; ++p) {
            std::size_t local = p - blk.pair_begin;
            Q(local / nb, local % nb) = qv[p];
        }
        Eigen::MatrixXd X(nb, 2);
        for (std::size_t j = 0; j < nb; ++j) {
            X(j, 0) = 1.0;
            X(j, 1) = w.x_b[blk.b_rows[j]];
        }
        Eigen::VectorXd y(na);
        for (std::size_t i = 0; i < na; ++i) y(i) = w.y_a[blk.a_rows[i]];
        out.Q.push_back(std::move(Q));
        out.X.push_back(std::move(X));
        out.y.push_back(std::move(y));
    }
    return out;
}

inline void run_s1_method(Method m, const S1Workspace& w, const ExperimentPlan& plan,
                          std::uint64_t method_seed, EstimateRecord& r) {
    const HarnessOptions& opt = plan.opt;
    switch (m) {
        case Method::FsNaive: {
            std::vector<double> ys, xs;
            for (std::size_t i = 0; i < w.assignment.size(); ++i) {
                if (w.assignment[i] < 0) continue;
                ys.push_back(w.y_a[i]);
                xs.push_back(w.x_b[w.assignment[i]]);
            }
            if (static_cast<int>(ys.size()) < opt.min_links)
                throw std::runtime_error("too few declared links for a regression");
            fill_from_fit(r, ols_xy(ys, xs, "FS-naive"), 1);
            r.precision = w.assign_quality.precision;
            r.recall = w.assign_quality.recall;
            break;
        }
        case Method::HLF:
        case Method::HL2:
        case Method::HL1: {
            std::vector<double> qv = m == Method::HLF ? normalize_q_rows(w.table, w.q)
                                     : m == Method::HL2 ? truncate_q(w.table, w.q, 2)
                                                        : truncate_q(w.table, w.q, 1);
            HlBlocks blocks = hl_blocks(w, qv);
            HlVariant variant = m == Method::HLF   ? HlVariant::HLF
                                : m == Method::HL2 ? HlVariant::HL2
                                                   : HlVariant::HL1;
            std::function<std::optional<Eigen::VectorXd>(int)> refit =
                [&](int g) -> std::optional<Eigen::VectorXd> {
                std::vector<Eigen::MatrixXd> Q, X;
                std::vector<Eigen::VectorXd> y;
                for (std::size_t b = 0; b < blocks.Q.size(); ++b) {
                    if (static_cast<int>(b) == g) continue;
                    Q.push_back(blocks.Q[b]);
                    X.push_back(blocks.X[b]);
                    y.push_back(blocks.y[b]);
                }
                try {
                    return hl_point(Q, X, y);
                } catch (const std::exception&) {
                    return std::nullopt;
                }
            };
            fill_from_fit(r, hl_estimator(blocks.Q, blocks.X, blocks.y, variant, &refit), 1);
            break;
        }
        case Method::SW: {
            std::vector<double> q2 = truncate_q(w.table, w.q, 2);
            const int nb = static_cast<int>(w.x_b.size());
            std::vector<int> rows;
            for (std::size_t i = 0; i < w.assignment.size(); ++i)
                if (w.assignment[i] >= 0) rows.push_back(static_cast<int>(i));
            if (static_cast<int>(rows.size()) < opt.min_links)
                throw std::runtime_error("too few declared links for a regression");
            Eigen::VectorXd y(rows.size());
            Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(rows.size(), nb);
            Eigen::MatrixXd D = Eigen::MatrixXd::Zero(rows.size(), nb);
            std::map<int, int> row_pos;
            for (std::size_t k = 0; k < rows.size(); ++k) {
                y(k) = w.y_a[rows[k]];
                D(k, w.assignment[rows[k]]) = 1.0;
                row_pos[rows[k]] = static_cast<int>(k);
            }
            for (std::size_t p = 0; p < w.table.n_pairs(); ++p) {
                auto it = row_pos.find(w.table.pairs[p].first);
                if (it != row_pos.end()) Q(it->second, w.table.pairs[p].second) = q2[p];
            }
            Eigen::MatrixXd X(nb, 2);
            for (int j = 0; j < nb; ++j) {
                X(j, 0) = 1.0;
                X(j, 1) = w.x_b[j];
            }
            fill_from_fit(r, sw_estimator(y, X, Q, D), 1);
            r.precision = w.assign_quality.precision;
            r.recall = w.assign_quality.recall;
            break;
        }
        case Method::SL: {
            GibbsOptions go;
            go.n_iter = opt.gibbs_iter;
            go.burn_in = opt.gibbs_burn;
            go.thin = std::max(1, (go.n_iter - go.burn_in) / opt.mi_draws);
            PosteriorLinkageSamples post = gibbs_sl(w.table, BipartitePrior{}, go, method_seed);
            std::vector<std::pair<double, double>> ests;
            for (const auto& sample : post.samples) {
                std::vector<double> ys, xs;
                for (std::size_t i = 0; i < sample.size(); ++i) {
                    if (sample[i] < 0) continue;
                    ys.push_back(w.y_a[i]);
                    xs.push_back(w.x_b[sample[i]]);
                }
                if (static_cast<int>(ys.size()) < opt.min_links) continue;
                LinearFit f = ols_xy(ys, xs, "SL-draw");
                ests.emplace_back(f.beta(1), f.vcov(1, 1));
            }
            if (ests.size() < 2)
                throw std::runtime_error("too few usable linkage draws for pooling");
            fill_from_pool(r, mi_combine(ests));
            LinkageQuality lq =
                evaluate_linkage(declared_from_marginal(w.table, post.pair_marginal), w.truth_rows);
            r.precision = lq.precision;
            r.recall = lq.recall;
            break;
        }
        case Method::KSG: {
            KsgOptions ko;
            ko.gibbs.n_iter = opt.gibbs_iter;
            ko.gibbs.burn_in = opt.gibbs_burn;
            ko.gibbs.thin = 1;
            KsgResult res = da_ksg(w.table, w.y_a, w.x_b, BipartitePrior{}, ko, method_seed);
            if (res.params.size() < 10)
                throw std::runtime_error("too few posterior draws for a summary");
            std::vector<double> slopes;
            slopes.reserve(res.params.size());
            for (const auto& p : res.params) slopes.push_back(p.beta1_m);
            double mean = 0.0;
            for (double s : slopes) mean += s;
            mean /= static_cast<double>(slopes.size());
            double var = 0.0;
            for (double s : slopes) var += (s - mean) * (s - mean);
            var /= static_cast<double>(slopes.size() - 1);
            r.estimate = mean;
            r.se = std::sqrt(var);
            r.ci_lo = quantile(slopes, 0.025);
            r.ci_hi = quantile(slopes, 0.975);
            LinkageQuality lq = evaluate_linkage(
                declared_from_marginal(w.table, res.linkage.pair_marginal), w.truth_rows);
            r.precision = lq.precision;
            r.recall = lq.recall;
            break;
        }
        default:
            throw std::logic_error("method not available for two-file cells");
    }
}

// ---------------------------------------------------------------------------
// Linked-file workspace
// ---------------------------------------------------------------------------

struct S2Workspace {
    Scenario2Data data;
    std::vector<LinkedRow> rows;
    std::vector<Eigen::VectorXd> y_blocks;
    std::vector<Eigen::MatrixXd> x_blocks;  // [1, x] per block
    EleModel ele;  // correct-link probabilities taken as the design values
};

inline S2Workspace make_s2_workspace(Scenario2Config cfg, std::uint64_t data_seed) {
    S2Workspace w;
    cfg.seed = data_seed;
    w.data = gen_scenario2(cfg);
    w.rows.reserve(w.data.rows.size());
    for (const auto& row : w.data.rows) w.rows.push_back({row.y, row.x, row.block});

    const std::size_t H = cfg.block_sizes.size();
    std::vector<std::vector<int>> members(H);
    for (std::size_t i = 0; i < w.data.rows.size(); ++i) {
        int b = w.data.rows[i].block;
        if (b < 0 || b >= static_cast<int>(H))
            throw std::runtime_error("linked-file workspace: block id out of range");
        members[b].push_back(static_cast<int>(i));
    }
    for (std::size_t b = 0; b < H; ++b) {
        const auto& idx = members[b];
        Eigen::VectorXd y(idx.size());
        Eigen::MatrixXd X(idx.size(), 2);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            y(k) = w.data.rows[idx[k]].y;
            X(k, 0) = 1.0;
            X(k, 1) = w.data.rows[idx[k]].x;
        }
        w.y_blocks.push_back(std::move(y));
        w.x_blocks.push_back(std::move(X));
        w.ele.lambdas.push_back(1.0 - cfg.error_rates[b]);
        w.ele.block_sizes.push_back(static_cast<int>(idx.size()));
    }
    return w;
}

inline void run_s2_method(Method m, const S2Workspace& w, const ExperimentPlan& plan,
                          std::uint64_t method_seed, EstimateRecord& r) {
    const HarnessOptions& opt = plan.opt;
    switch (m) {
        case Method::Naive: {
            std::vector<double> ys, xs;
            for (const auto& row : w.rows) {
                ys.push_back(row.y);
                xs.push_back(row.x);
            }
            fill_from_fit(r, ols_xy(ys, xs, "Naive"), 1);
            break;
        }
        case Method::ChR:
        case Method::ChL:
        case Method::ChB: {
            ChVariant v = m == Method::ChR   ? ChVariant::ChR
                          : m == Method::ChL ? ChVariant::ChL
                                             : ChVariant::ChB;
            fill_from_fit(r, chambers_fit(w.y_blocks, w.x_blocks, w.ele, v), 1);
            break;
        }
        case Method::GT: {
            GtOptions go;
            go.n_iter = opt.gt_iter;
            go.burn_in = opt.gt_burn;
            go.thin = 1;
            go.min_rows = opt.gt_min_rows;
            GtFileSamples out = gt_da(w.rows, GtPriors{}, go, method_seed);
            if (out.beta_mi.size() < 2)
                throw std::runtime_error("too few usable posterior draws for pooling");
            fill_from_pool(r, mi_combine(out.beta_mi));
            break;
        }
        case Method::SLW: {
            SlwFit fit = slw_em(w.rows, SlwOptions{}, method_seed);
            r.estimate = fit.b1;
            r.se = fit.slope_se();
            r.ci_lo = fit.slope_ci_lo;
            r.ci_hi = fit.slope_ci_hi;
            break;
        }
        default:
            throw std::logic_error("method not available for linked-file cells");
    }
}

// ---------------------------------------------------------------------------
// Replication driver
// ---------------------------------------------------------------------------

inline std::vector<EstimateRecord> run_replication(const ExperimentPlan& plan, int cell, int rep) {
    const std::uint64_t key =
        static_cast<std::uint64_t>(cell) * 1000003ULL + static_cast<std::uint64_t>(rep);
    const std::uint64_t data_seed = Rng::derive(plan.base_seed, key, 1);

    std::vector<EstimateRecord> out;
    std::string workspace_error;
    std::optional<S1Workspace> w1;
    std::optional<S2Workspace> w2;
    double truth = 0.0;
    try {
        if (plan.scenario == 1) {
            w1 = make_s1_workspace(plan.cells_s1[cell], plan.opt, data_seed);
            truth = w1->data.truth.beta_true;
        } else {
            w2 = make_s2_workspace(plan.cells_s2[cell], data_seed);
            truth = w2->data.beta_true;
        }
    } catch (const std::exception& e) {
        workspace_error = e.what();
    }

    for (std::size_t mi = 0; mi < plan.methods.size(); ++mi) {
        Method m = plan.methods[mi];
        EstimateRecord r;
        r.cell = cell;
        r.rep = rep;
        r.cell_label = cell_label(plan, cell);
        r.method = method_name(m);
        r.truth = truth;
        const std::uint64_t method_seed = Rng::derive(plan.base_seed, key, 100 + mi);
        auto t0 = std::chrono::steady_clock::now();
        if (!workspace_error.empty()) {
            r.note = "data/linkage stage failed: " + workspace_error;
        } else {
            try {
                if (plan.scenario == 1)
                    run_s1_method(m, *w1, plan, method_seed, r);
                else
                    run_s2_method(m, *w2, plan, method_seed, r);
                r.ok = true;
                r.covered = r.ci_lo <= truth && truth <= r.ci_hi;
            } catch (const std::exception& e) {
                r.ok = false;
                r.note = e.what();
                r.estimate = r.se = r.ci_lo = r.ci_hi =
                    std::numeric_limits<double>::quiet_NaN();
            }
        }
        r.elapsed_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Plan execution
// ---------------------------------------------------------------------------

inline PlanResult run_plan(const ExperimentPlan& plan) {
    plan.validate();
    const int n_cells = static_cast<int>(plan.n_cells());
    const int reps = plan.replications;
    const int n_tasks = n_cells * reps;

    std::vector<std::vector<EstimateRecord>> task_records(n_tasks);
    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            int t = next.fetch_add(1);
            if (t >= n_tasks) return;
            task_records[t] = detail::run_replication(plan, t / reps, t % reps);
        }
    };

    auto t0 = std::chrono::steady_clock::now();
    const int n_workers = std::min(plan.workers, n_tasks);
    if (n_workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_workers; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    PlanResult result;
    result.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    for (const auto& task : task_records)
        for (const auto& r : task) result.records.push_back(r);

    // single-threaded aggregation in (cell, method) order
    for (int cell = 0; cell < n_cells; ++cell) {
        for (std::size_t mi = 0; mi < plan.methods.size(); ++mi) {
            MetricsRow row;
            row.cell = cell_label(plan, cell);
            row.method = method_name(plan.methods[mi]);
            row.replications = reps;
            double bias = 0.0, se = 0.0, cover = 0.0, prec = 0.0, rec = 0.0;
            int n_ok = 0, n_quality = 0;
            for (int rep = 0; rep < reps; ++rep) {
                const EstimateRecord& r = task_records[cell * reps + rep][mi];
                row.wall_ms += r.elapsed_ms;
                if (!r.ok) continue;
                ++n_ok;
                bias += r.estimate - r.truth;
                se += r.se;
                cover += r.covered ? 1.0 : 0.0;
                if (std::isfinite(r.precision)) {
                    ++n_quality;
                    prec += r.precision;
                    rec += r.recall;
                }
            }
            row.n_valid = n_ok;
            if (n_ok > 0) {
                row.mean_bias = bias / n_ok;
                row.mean_se = se / n_ok;
                row.coverage = cover / n_ok;
            }
            if (n_quality > 0) {
                row.precision = prec / n_quality;
                row.recall = rec / n_quality;
            }
            const double failures = reps - n_ok;
            row.valid = failures <= plan.failure_ceiling * reps;
            if (!row.valid)
                result.invalid_cells.push_back(row.cell + " " + row.method);
            result.metrics.push_back(std::move(row));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// CSV output (fixed column orders)
// ---------------------------------------------------------------------------

inline CsvTable metrics_csv(const std::vector<MetricsRow>& rows) {
    CsvTable t;
    t.header = {"cell",      "method", "mean_bias", "mean_se",      "coverage",
                "precision", "recall", "n_valid",   "replications", "valid"};
    for (const auto& r : rows)
        t.rows.push_back({r.cell, r.method, fmt_double(r.mean_bias), fmt_double(r.mean_se),
                          fmt_double(r.coverage), fmt_double(r.precision), fmt_double(r.recall),
                          std::to_string(r.n_valid), std::to_string(r.replications),
                          r.valid ? "1" : "0"});
    return t;
}

inline CsvTable estimates_csv(const std::vector<EstimateRecord>& records) {
    CsvTable t;
    t.header = {"cell",  "rep",   "method",  "ok",    "estimate", "se",   "ci_lo",
                "ci_hi", "covered", "truth", "precision", "recall", "note"};
    for (const auto& r : records)
        t.rows.push_back({r.cell_label, std::to_string(r.rep), r.method, r.ok ? "1" : "0",
                          fmt_double(r.estimate), fmt_double(r.se), fmt_double(r.ci_lo),
                          fmt_double(r.ci_hi), r.covered ? "1" : "0", fmt_double(r.truth),
                          fmt_double(r.precision), fmt_double(r.recall), r.note});
    return t;
}

// Timing is reported separately so the metric files stay byte-identical
// across runs and worker counts.
inline CsvTable timings_csv(const PlanResult& result) {
    CsvTable t;
    t.header = {"cell", "method", "wall_ms"};
    for (const auto& r : result.metrics)
        t.rows.push_back({r.cell, r.method, fmt_double(r.wall_ms)});
    t.rows.push_back({"__total__", "", fmt_double(result.wall_ms)});
    return t;
}

// ---------------------------------------------------------------------------
// Main-effects screen
// ---------------------------------------------------------------------------

struct AnovaRow {
    std::string factor;
    double ss = 0.0;
    int df = 0;
    double mean_sq = 0.0;
    double f = 0.0;
};

// Sequential (type-I) sums of squares for categorical main effects, added
// in the order the factors are supplied; F statistics use the residual
// mean square of the full main-effects model. Intended as a screen: the
// ranking of factors is the deliverable, not the exact p-values.
inline std::vector<AnovaRow> anova_screen(const std::vector<std::string>& factor_names,
                                          const std::vector<std::vector<std::string>>& factor_levels,
                                          const std::vector<double>& response) {
    const std::size_t k = factor_names.size();
    const std::size_t n = response.size();
    if (factor_levels.size() != k)
        throw std::invalid_argument("anova_screen: factor name/level mismatch");
    if (n < 2) throw std::invalid_argument("anova_screen: need at least 2 observations");
    for (const auto& lv : factor_levels)
        if (lv.size() != n) throw std::invalid_argument("anova_screen: level column length mismatch");

    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) y(i) = response[i];

    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, 1);
    auto fit_rss = [&](const Eigen::MatrixXd& Xc, int& rank) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xc);
        rank = static_cast<int>(qr.rank());
        Eigen::VectorXd beta = qr.solve(y);
        return (y - Xc * beta).squaredNorm();
    };

    int rank_prev = 0;
    double rss_prev = fit_rss(X, rank_prev);

    std::vector<AnovaRow> rows(k);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::string> lv = factor_levels[f];
        std::sort(lv.begin(), lv.end());
        lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
        if (lv.size() > 1) {
            Eigen::MatrixXd Xn(n, X.cols() + static_cast<Eigen::Index>(lv.size()) - 1);
            Xn.leftCols(X.cols()) = X;
            for (std::size_t l = 1; l < lv.size(); ++l) {
                for (std::size_t i = 0; i < n; ++i)
                    Xn(i, X.cols() + static_cast<Eigen::Index>(l) - 1) =
                        factor_levels[f][i] == lv[l] ? 1.0 : 0.0;
            }
            X = std::move(Xn);
        }
        int rank_now = 0;
        double rss_now = fit_rss(X, rank_now);
        rows[f].factor = factor_names[f];
        rows[f].ss = std::max(rss_prev - rss_now, 0.0);
        rows[f].df = rank_now - rank_prev;
        rss_prev = rss_now;
        rank_prev = rank_now;
    }

    const double rss_full = rss_prev;
    const int df_res = static_cast<int>(n) - rank_prev;
    const double scale = y.squaredNorm() + 1.0;
    const double tiny = 1e-12 * scale;
    const double ms_res = df_res > 0 ? rss_full / df_res : 0.0;
    for (auto& row : rows) {
        row.mean_sq = row.df > 0 ? row.ss / row.df : 0.0;
        if (row.df > 0 && ms_res > tiny)
            row.f = row.mean_sq / ms_res;
        else
            row.f = row.ss > tiny ? std::numeric_limits<double>::infinity() : 0.0;
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const AnovaRow& a, const AnovaRow& b) { return a.f > b.f; });
    return rows;
}

// ---------------------------------------------------------------------------
// Plan parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> grid_doubles(const Toml& t, const std::string& key, double dflt) {
    if (!t.has(key)) return {dflt};
    try {
        return t.get_double_array(key);
    } catch (const ConfigError&) {
        return {t.get_double(key)};
    }
}

inline std::vector<std::int64_t> grid_ints(const Toml& t, const std::string& key,
                                           std::int64_t dflt) {
    if (!t.has(key)) return {dflt};
    try {
        return t.get_int_array(key);
    } catch (const ConfigError&) {
        return {t.get_int(key)};
    }
}

inline std::vector<std::string> grid_strings(const Toml& t, const std::string& key,
                                             const std::string& dflt) {
    if (!t.has(key)) return {dflt};
    try {
        return t.get_string_array(key);
    } catch (const ConfigError&) {
        return {t.get_string(key)};
    }
}

inline bool parse_dp(const std::string& s) {
    if (s == "high") return true;
    if (s == "low") return false;
    throw ConfigError("dp must be \"high\" or \"low\", got '" + s + "'");
}

} // namespace detail

// Builds a plan from a config. Factor keys may hold a scalar or a list;
// lists are crossed into a full grid. Cells are enumerated with the first
// factor outermost: two-file plans over (dp, mechanism, overlap,
// error-level, rho, n-blocks), linked-file plans over (mechanism, rho).
inline ExperimentPlan plan_from_toml(const Toml& t) {
    ExperimentPlan plan;
    plan.scenario = static_cast<int>(t.get_int("plan.scenario", 2));
    if (!t.has("plan.methods")) throw ConfigError("plan.methods is required");
    for (const auto& name : t.get_string_array("plan.methods"))
        plan.methods.push_back(parse_method(name));
    plan.replications = static_cast<int>(t.get_int("plan.replications", 50));
    plan.base_seed = static_cast<std::uint64_t>(t.get_int("plan.seed", 1));
    plan.workers = static_cast<int>(t.get_int("plan.workers", 1));
    plan.failure_ceiling = t.get_double("plan.failure-ceiling", 0.2);
    plan.opt.gibbs_iter = static_cast<int>(t.get_int("plan.gibbs-iter", 1000));
    plan.opt.gibbs_burn =
        static_cast<int>(t.get_int("plan.gibbs-burn", plan.opt.gibbs_iter / 2));
    plan.opt.mi_draws = static_cast<int>(t.get_int("plan.mi-draws", 25));
    plan.opt.gt_iter = static_cast<int>(t.get_int("plan.gt-iter", 1500));
    plan.opt.gt_burn = static_cast<int>(t.get_int("plan.gt-burn", 500));
    plan.opt.gt_min_rows = static_cast<int>(t.get_int("plan.gt-min-rows", 10));

    if (plan.scenario == 1) {
        Scenario1Config base;
        base.n_a = static_cast<int>(t.get_int("scenario1.n-a", 200));
        base.n_b = static_cast<int>(t.get_int("scenario1.n-b", 300));
        for (const auto& dp : detail::grid_strings(t, "scenario1.dp", "high"))
            for (const auto& mech : detail::grid_strings(t, "scenario1.mechanism", "LCAR"))
                for (double ov : detail::grid_doubles(t, "scenario1.overlap", 1.0))
                    for (double err : detail::grid_doubles(t, "scenario1.error-level", 0.1))
                        for (double rho : detail::grid_doubles(t, "scenario1.rho", 0.9))
                            for (std::int64_t blk : detail::grid_ints(t, "scenario1.n-blocks", 6)) {
                                Scenario1Config c = base;
                                c.high_dp = detail::parse_dp(dp);
                                c.mechanism = parse_mechanism(mech);
                                c.overlap = ov;
                                c.error_level = err;
                                c.rho = rho;
                                c.n_blocks = static_cast<int>(blk);
                                plan.cells_s1.push_back(c);
                            }
    } else {
        Scenario2Config base;
        base.n = static_cast<int>(t.get_int("scenario2.n", 600));
        if (t.has("scenario2.block-sizes")) {
            base.block_sizes.clear();
            for (std::int64_t b : t.get_int_array("scenario2.block-sizes"))
                base.block_sizes.push_back(static_cast<int>(b));
        }
        if (t.has("scenario2.error-rates"))
            base.error_rates = t.get_double_array("scenario2.error-rates");
        for (const auto& mech : detail::grid_strings(t, "scenario2.mechanism", "ELE"))
            for (double rho : detail::grid_doubles(t, "scenario2.rho", 0.9)) {
                Scenario2Config c = base;
                c.mechanism = parse_mechanism(mech);
                c.rho = rho;
                plan.cells_s2.push_back(c);
            }
    }
    plan.validate();
    return plan;
}

} // namespace reclink

#endif
