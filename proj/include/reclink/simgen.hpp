#ifndef RECLINK_SIMGEN_HPP
#define RECLINK_SIMGEN_HPP

// Synthetic data generators for the two study designs: a pair of files to
// be linked (linking variables plus one analysis variable per file, with
// measurement error injected into the linking variables), and a single
// pre-linked file whose outcome column carries block-confined linkage
// errors. All generation is deterministic given the config and seed.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <reclink/config.hpp>
#include <reclink/csv.hpp>
#include <reclink/rng.hpp>

namespace reclink {

// ---------------------------------------------------------------------------
// Error mechanisms
// ---------------------------------------------------------------------------

// LCAR/ELE pick erroneous records uniformly; the others tilt the error
// propensity by a record-level variable: SNL by a coarse category of the
// record itself, NL by the covariate, WNL by the outcome, IL by an
// unobserved combination of both.
enum class Mechanism { LCAR, SNL, NL, WNL, IL, ELE };

inline const char* mechanism_name(Mechanism m) {
    switch (m) {
        case Mechanism::LCAR: return "LCAR";
        case Mechanism::SNL: return "SNL";
        case Mechanism::NL: return "NL";
        case Mechanism::WNL: return "WNL";
        case Mechanism::IL: return "IL";
        case Mechanism::ELE: return "ELE";
    }
    return "?";
}

inline Mechanism parse_mechanism(const std::string& s) {
    if (s == "LCAR") return Mechanism::LCAR;
    if (s == "SNL") return Mechanism::SNL;
    if (s == "NL") return Mechanism::NL;
    if (s == "WNL") return Mechanism::WNL;
    if (s == "IL") return Mechanism::IL;
    if (s == "ELE") return Mechanism::ELE;
    throw ConfigError("unknown mechanism '" + s + "'");
}

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

struct Scenario1Config {
    int n_a = 600;
    int n_b = 900;
    double overlap = 1.0;  // fraction of file A that has a true match in B
    int n_blocks = 6;
    bool high_dp = true;  // discriminatory power of the linking variables
    double rho = 0.9;     // analysis-variable correlation; true slope = 2*rho
    double error_level = 0.1;
    Mechanism mechanism = Mechanism::LCAR;
    std::uint64_t seed = 1;
    // Constants of the design, configurable rather than hardcoded.
    int year_base = 2025;
    double age_mean = 30.0;
    double age_sd = 10.0;

    int n_links() const { return static_cast<int>(std::llround(overlap * n_a)); }

    void validate() const {
        if (n_a < 1 || n_b < 1) throw ConfigError("scenario1: file sizes must be positive");
        if (!(overlap > 0.0 && overlap <= 1.0))
            throw ConfigError("scenario1: overlap must be in (0,1]");
        if (std::abs(overlap * n_a - std::llround(overlap * n_a)) > 1e-9)
            throw ConfigError("scenario1: overlap * n_a must be an integer");
        if (n_links() > n_b) throw ConfigError("scenario1: more links than records in file B");
        if (n_blocks < 1 || n_a % n_blocks != 0)
            throw ConfigError("scenario1: n_a must be divisible by n_blocks");
        if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("scenario1: rho must be in (-1,1)");
        if (!(error_level > 0.0 && error_level < 1.0))
            throw ConfigError("scenario1: error level must be in (0,1)");
        if (mechanism == Mechanism::ELE)
            throw ConfigError("scenario1: ELE is a pre-linked-file mechanism; use LCAR");
        if (!(age_sd > 0.0)) throw ConfigError("scenario1: age sd must be positive");
    }
};

struct Scenario2Config {
    int n = 600;
    std::vector<int> block_sizes{100, 200, 300};
    std::vector<double> error_rates{0.05, 0.10, 0.15};
    double rho = 0.9;
    Mechanism mechanism = Mechanism::ELE;
    std::uint64_t seed = 1;

    void validate() const {
        if (block_sizes.empty() || block_sizes.size() != error_rates.size())
            throw ConfigError("scenario2: need one error rate per block");
        long long total = 0;
        for (int b : block_sizes) {
            if (b < 1) throw ConfigError("scenario2: block sizes must be positive");
            total += b;
        }
        if (total != n) throw ConfigError("scenario2: block sizes must sum to n");
        for (double e : error_rates)
            if (!(e >= 0.0 && e < 1.0)) throw ConfigError("scenario2: rates must be in [0,1)");
        if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("scenario2: rho must be in (-1,1)");
        if (mechanism == Mechanism::LCAR || mechanism == Mechanism::SNL)
            throw ConfigError("scenario2: mechanism must be one of ELE, NL, WNL, IL");
    }
};

// ---------------------------------------------------------------------------
// Records and outputs
// ---------------------------------------------------------------------------

struct PersonRecord {
    int id = 0;     // position within its file
    int block = 0;  // exact blocking label (never erroneous)
    // Linking variables. The first one is a zip stratum (1..30) in the
    // high-DP design and a gender code (1..2) in the low-DP design.
    int zip_or_gender = 0;
    std::string name;
    int race = 0;  // 1..5
    int yob = 0;   // year of birth
    // Analysis-variable pair of the underlying individual. File A observes
    // y, file B observes x; the unobserved side is kept so that the
    // propensity mechanisms are defined for every record.
    double y = 0.0;
    double x = 0.0;
    bool flagged = false;  // received measurement error
};

struct ErrorInjection {
    std::vector<std::uint8_t> flagged;
    double intercept = std::numeric_limits<double>::quiet_NaN();  // logistic c1
    int n_flagged = 0;
    int deletions = 0;
    int transpositions = 0;
    int name_fallbacks = 0;
    bool shuffle_degenerate = false;  // exactly one flagged record: no year shuffle
};

struct Scenario1Truth {
    std::vector<std::pair<int, int>> links;  // (id in A, id in B)
    double beta_true = 0.0;
};

struct Scenario1Data {
    std::vector<PersonRecord> file_a;
    std::vector<PersonRecord> file_b;
    Scenario1Truth truth;
    ErrorInjection err_a;
    ErrorInjection err_b;
};

struct S2Row {
    double y = 0.0;
    double x = 0.0;
    int block = 0;
};

struct Scenario2Data {
    std::vector<S2Row> rows;
    std::vector<std::uint8_t> correct;  // outcome still at its own row
    std::vector<std::uint8_t> flagged;  // chosen by the error mechanism
    std::vector<int> flagged_per_block;
    std::vector<double> intercepts;  // logistic c1 per block (NaN for ELE)
    int degenerate_blocks = 0;       // blocks where <=1 flagged row made the shuffle a no-op
    double beta_true = 0.0;
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

// Solves mean_i logistic(c1 + v_i) = target for c1 by bracketing + bisection.
// The mean is strictly increasing in c1 with limits 0 and 1, so a bracket
// always exists for target in (0,1).
inline double solve_logistic_intercept(const std::vector<double>& v, double target,
                                       double tol = 1e-6) {
    if (v.empty()) throw std::invalid_argument("solve_logistic_intercept: empty sample");
    if (!(target > 0.0 && target < 1.0))
        throw std::invalid_argument("solve_logistic_intercept: target must be in (0,1)");
    auto mean_at = [&](double c1) {
        double s = 0.0;
        for (double vi : v) s += 1.0 / (1.0 + std::exp(-(c1 + vi)));
        return s / static_cast<double>(v.size());
    };
    auto v_summary = [&]() {
        double lo = v[0], hi = v[0], mean = 0.0;
        for (double vi : v) {
            lo = std::min(lo, vi);
            hi = std::max(hi, vi);
            mean += vi;
        }
        std::ostringstream os;
        os << " (V: n=" << v.size() << " min=" << lo << " max=" << hi
           << " mean=" << mean / static_cast<double>(v.size()) << ")";
        return os.str();
    };
    double lo = -1.0, hi = 1.0;
    for (int guard = 0; mean_at(lo) > target; ++guard) {
        if (guard > 64)
            throw std::runtime_error("solve_logistic_intercept: no lower bracket" + v_summary());
        lo *= 2.0;
    }
    for (int guard = 0; mean_at(hi) < target; ++guard) {
        if (guard > 64)
            throw std::runtime_error("solve_logistic_intercept: no upper bracket" + v_summary());
        hi *= 2.0;
    }
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        mid = 0.5 * (lo + hi);
        double m = mean_at(mid);
        if (std::abs(m - target) <= tol) return mid;
        if (m < target)
            lo = mid;
        else
            hi = mid;
    }
    if (std::abs(mean_at(mid) - target) <= tol) return mid;
    throw std::runtime_error("solve_logistic_intercept: bisection stalled" + v_summary());
}

// Deterministic synthetic surnames: capitalized consonant-vowel syllables,
// unique within one call, length 6 so that character-level perturbations
// always have room to act.
inline std::vector<std::string> make_surnames(int count, Rng& rng) {
    static const char cons[] = "bcdfghjklmnprstvwz";
    static const char vows[] = "aeiou";
    if (count < 0) throw std::invalid_argument("make_surnames: negative count");
    std::set<std::string> seen;
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<int>(out.size()) < count) {
        std::string s;
        for (int k = 0; k < 3; ++k) {
            s += cons[rng.uniform_int(sizeof(cons) - 1)];
            s += vows[rng.uniform_int(sizeof(vows) - 1)];
        }
        s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        if (seen.insert(s).second) out.push_back(std::move(s));
    }
    return out;
}

enum class NameError { Deletion, Transposition };

// Deletion removes one uniformly chosen character; transposition swaps two
// distinct uniformly chosen positions. A length-1 name cannot be
// transposed and falls back to deletion; an empty name is returned as-is.
// Both fallbacks bump the diagnostic counter when one is supplied.
inline std::string perturb_name(const std::string& name, NameError kind, Rng& rng,
                                int* fallbacks = nullptr) {
    if (name.empty()) {
        if (fallbacks) ++*fallbacks;
        return name;
    }
    if (kind == NameError::Transposition && name.size() < 2) {
        if (fallbacks) ++*fallbacks;
        kind = NameError::Deletion;
    }
    std::string out = name;
    if (kind == NameError::Deletion) {
        out.erase(static_cast<std::size_t>(rng.uniform_int(out.size())), 1);
        return out;
    }
    std::size_t i = static_cast<std::size_t>(rng.uniform_int(out.size()));
    std::size_t j = static_cast<std::size_t>(rng.uniform_int(out.size() - 1));
    if (j >= i) ++j;
    std::swap(out[i], out[j]);
    return out;
}

inline std::string perturb_name(const std::string& name, NameError kind, std::uint64_t seed,
                                int* fallbacks = nullptr) {
    Rng rng(seed);
    return perturb_name(name, kind, rng, fallbacks);
}

namespace detail {

inline double mechanism_variable(const PersonRecord& r, Mechanism mech) {
    switch (mech) {
        case Mechanism::SNL: return (r.race == 4 || r.race == 5) ? 1.0 : 0.0;
        case Mechanism::NL: return r.x;
        case Mechanism::WNL: return r.y;
        case Mechanism::IL: return -0.3 + std::exp(r.y) + 0.5 * r.x;
        default: throw std::invalid_argument("mechanism has no propensity variable");
    }
}

}  // namespace detail

// Flags records per the mechanism, shuffles year of birth among the flagged
// records, and perturbs each flagged record's name by deletion and by
// transposition independently, each with probability level/2 (deletion
// applied first when both fire).
inline ErrorInjection induce_error(std::vector<PersonRecord>& records, Mechanism mech,
                                   double level, Rng& rng) {
    if (!(level > 0.0 && level < 1.0))
        throw ConfigError("induce_error: level must be in (0,1)");
    if (mech == Mechanism::ELE)
        throw ConfigError("induce_error: ELE applies to pre-linked files, not file pairs");
    const int n = static_cast<int>(records.size());
    ErrorInjection out;
    out.flagged.assign(static_cast<std::size_t>(n), 0);
    if (n == 0) return out;

    if (mech == Mechanism::LCAR) {
        const int k = static_cast<int>(std::llround(level * n));
        auto perm = rng.permutation(static_cast<std::size_t>(n));
        for (int i = 0; i < k; ++i) out.flagged[perm[static_cast<std::size_t>(i)]] = 1;
    } else {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            v[static_cast<std::size_t>(i)] = detail::mechanism_variable(records[static_cast<std::size_t>(i)], mech);
        out.intercept = solve_logistic_intercept(v, level);
        for (int i = 0; i < n; ++i) {
            double z = 1.0 / (1.0 + std::exp(-(out.intercept + v[static_cast<std::size_t>(i)])));
            if (rng.bernoulli(z)) out.flagged[static_cast<std::size_t>(i)] = 1;
        }
    }

    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
        if (out.flagged[static_cast<std::size_t>(i)]) idx.push_back(i);
    out.n_flagged = static_cast<int>(idx.size());
    for (int i : idx) records[static_cast<std::size_t>(i)].flagged = true;

    if (idx.size() >= 2) {
        std::vector<int> yobs;
        yobs.reserve(idx.size());
        for (int i : idx) yobs.push_back(records[static_cast<std::size_t>(i)].yob);
        rng.shuffle(yobs);
        for (std::size_t k = 0; k < idx.size(); ++k)
            records[static_cast<std::size_t>(idx[k])].yob = yobs[k];
    } else if (idx.size() == 1) {
        out.shuffle_degenerate = true;
    }

    for (int i : idx) {
        auto& rec = records[static_cast<std::size_t>(i)];
        if (rng.bernoulli(level / 2.0)) {
            rec.name = perturb_name(rec.name, NameError::Deletion, rng, &out.name_fallbacks);
            ++out.deletions;
        }
        if (rng.bernoulli(level / 2.0)) {
            rec.name = perturb_name(rec.name, NameError::Transposition, rng, &out.name_fallbacks);
            ++out.transpositions;
        }
    }
    return out;
}

inline ErrorInjection induce_error(std::vector<PersonRecord>& records, Mechanism mech,
                                   double level, std::uint64_t seed) {
    Rng rng(seed);
    return induce_error(records, mech, level, rng);
}

// ---------------------------------------------------------------------------
// Scenario 1: file pair for linkage
// ---------------------------------------------------------------------------

// Individuals 0..n_links-1 appear in both files (linking variables drawn
// once and replicated), then file-A-only and file-B-only individuals.
// Analysis variables: links draw (y, x) from the centered bivariate normal
// with Var(y)=4, Var(x)=1, Cov=2*rho (true slope 2*rho); everyone else
// draws independent standard normals. Blocks are assigned round-robin so
// that both members of a link share a block and per-file block sizes are
// even. Measurement error is injected per file afterwards.
inline Scenario1Data gen_scenario1(const Scenario1Config& cfg) {
    cfg.validate();
    const int n_ab = cfg.n_links();
    const int n_total = cfg.n_a + cfg.n_b - n_ab;

    Rng rng_link(Rng::derive(cfg.seed, 11));
    Rng rng_analysis(Rng::derive(cfg.seed, 12));
    Rng rng_err_a(Rng::derive(cfg.seed, 13));
    Rng rng_err_b(Rng::derive(cfg.seed, 14));

    // Linking variables per individual.
    std::vector<std::string> names(static_cast<std::size_t>(n_total));
    if (cfg.high_dp) {
        names = make_surnames(n_total, rng_link);
    } else {
        auto pool = make_surnames(cfg.n_a, rng_link);
        for (auto& nm : names) nm = pool[static_cast<std::size_t>(rng_link.uniform_int(pool.size()))];
    }
    std::vector<int> first_var(static_cast<std::size_t>(n_total));
    std::vector<int> race(static_cast<std::size_t>(n_total));
    std::vector<int> yob(static_cast<std::size_t>(n_total));
    for (int k = 0; k < n_total; ++k) {
        first_var[static_cast<std::size_t>(k)] =
            1 + static_cast<int>(rng_link.uniform_int(cfg.high_dp ? 30 : 2));
        race[static_cast<std::size_t>(k)] = 1 + static_cast<int>(rng_link.uniform_int(5));
        yob[static_cast<std::size_t>(k)] = cfg.year_base -
            static_cast<int>(std::llround(rng_link.normal(cfg.age_mean, cfg.age_sd)));
    }

    // Analysis variables per individual.
    std::vector<double> ys(static_cast<std::size_t>(n_total));
    std::vector<double> xs(static_cast<std::size_t>(n_total));
    const double resid_sd = 2.0 * std::sqrt(1.0 - cfg.rho * cfg.rho);
    for (int k = 0; k < n_ab; ++k) {
        double x = rng_analysis.normal();
        xs[static_cast<std::size_t>(k)] = x;
        ys[static_cast<std::size_t>(k)] = 2.0 * cfg.rho * x + rng_analysis.normal(0.0, resid_sd);
    }
    for (int k = n_ab; k < n_total; ++k) {
        ys[static_cast<std::size_t>(k)] = rng_analysis.normal();
        xs[static_cast<std::size_t>(k)] = rng_analysis.normal();
    }

    Scenario1Data out;
    out.truth.beta_true = 2.0 * cfg.rho;
    out.file_a.reserve(static_cast<std::size_t>(cfg.n_a));
    for (int i = 0; i < cfg.n_a; ++i) {
        PersonRecord r;
        r.id = i;
        r.block = i % cfg.n_blocks;
        r.zip_or_gender = first_var[static_cast<std::size_t>(i)];
        r.name = names[static_cast<std::size_t>(i)];
        r.race = race[static_cast<std::size_t>(i)];
        r.yob = yob[static_cast<std::size_t>(i)];
        r.y = ys[static_cast<std::size_t>(i)];
        r.x = xs[static_cast<std::size_t>(i)];
        out.file_a.push_back(std::move(r));
    }
    out.file_b.reserve(static_cast<std::size_t>(cfg.n_b));
    for (int j = 0; j < cfg.n_b; ++j) {
        const int k = j < n_ab ? j : cfg.n_a + (j - n_ab);
        PersonRecord r;
        r.id = j;
        r.block = j % cfg.n_blocks;
        r.zip_or_gender = first_var[static_cast<std::size_t>(k)];
        r.name = names[static_cast<std::size_t>(k)];
        r.race = race[static_cast<std::size_t>(k)];
        r.yob = yob[static_cast<std::size_t>(k)];
        r.y = ys[static_cast<std::size_t>(k)];
        r.x = xs[static_cast<std::size_t>(k)];
        out.file_b.push_back(std::move(r));
    }
    out.truth.links.reserve(static_cast<std::size_t>(n_ab));
    for (int i = 0; i < n_ab; ++i) out.truth.links.emplace_back(i, i);

    out.err_a = induce_error(out.file_a, cfg.mechanism, cfg.error_level, rng_err_a);
    out.err_b = induce_error(out.file_b, cfg.mechanism, cfg.error_level, rng_err_b);
    return out;
}

// ---------------------------------------------------------------------------
// Scenario 2: pre-linked file with block-confined outcome shuffles
// ---------------------------------------------------------------------------

inline Scenario2Data gen_scenario2(const Scenario2Config& cfg) {
    cfg.validate();
    Rng rng_analysis(Rng::derive(cfg.seed, 21));
    Rng rng_err(Rng::derive(cfg.seed, 22));

    Scenario2Data out;
    out.beta_true = 2.0 * cfg.rho;
    out.rows.reserve(static_cast<std::size_t>(cfg.n));
    out.correct.assign(static_cast<std::size_t>(cfg.n), 1);
    out.flagged.assign(static_cast<std::size_t>(cfg.n), 0);
    const double resid_sd = 2.0 * std::sqrt(1.0 - cfg.rho * cfg.rho);

    int offset = 0;
    for (std::size_t h = 0; h < cfg.block_sizes.size(); ++h) {
        const int n_h = cfg.block_sizes[h];
        for (int i = 0; i < n_h; ++i) {
            S2Row r;
            r.block = static_cast<int>(h);
            r.x = rng_analysis.normal();
            r.y = 2.0 * cfg.rho * r.x + rng_analysis.normal(0.0, resid_sd);
            out.rows.push_back(r);
        }

        const double e_h = cfg.error_rates[h];
        std::vector<int> idx;  // flagged rows, absolute positions
        double c1 = std::numeric_limits<double>::quiet_NaN();
        if (e_h > 0.0) {
            if (cfg.mechanism == Mechanism::ELE) {
                for (int i = 0; i < n_h; ++i)
                    if (rng_err.bernoulli(e_h)) idx.push_back(offset + i);
            } else {
                std::vector<double> v(static_cast<std::size_t>(n_h));
                for (int i = 0; i < n_h; ++i) {
                    const S2Row& r = out.rows[static_cast<std::size_t>(offset + i)];
                    PersonRecord tmp;
                    tmp.y = r.y;
                    tmp.x = r.x;
                    v[static_cast<std::size_t>(i)] = detail::mechanism_variable(tmp, cfg.mechanism);
                }
                c1 = solve_logistic_intercept(v, e_h);
                for (int i = 0; i < n_h; ++i) {
                    double z = 1.0 / (1.0 + std::exp(-(c1 + v[static_cast<std::size_t>(i)])));
                    if (rng_err.bernoulli(z)) idx.push_back(offset + i);
                }
            }
        }
        out.intercepts.push_back(c1);
        out.flagged_per_block.push_back(static_cast<int>(idx.size()));
        for (int i : idx) out.flagged[static_cast<std::size_t>(i)] = 1;

        if (idx.size() >= 2) {
            // Uniform permutation of the flagged outcomes; rows receiving a
            // value that originated elsewhere are marked incorrect.
            auto perm = rng_err.permutation(idx.size());
            std::vector<double> vals(idx.size());
            for (std::size_t k = 0; k < idx.size(); ++k)
                vals[k] = out.rows[static_cast<std::size_t>(idx[k])].y;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                out.rows[static_cast<std::size_t>(idx[k])].y = vals[perm[k]];
                if (perm[k] != k) out.correct[static_cast<std::size_t>(idx[k])] = 0;
            }
        } else if (idx.size() == 1 && e_h > 0.0) {
            ++out.degenerate_blocks;
        }
        offset += n_h;
    }
    return out;
}

// ---------------------------------------------------------------------------
// File formats: CSV records, JSON truth sidecars, TOML configs
// ---------------------------------------------------------------------------

inline CsvTable scenario1_records_csv(const std::vector<PersonRecord>& records, bool is_file_a,
                                      bool high_dp) {
    CsvTable t;
    t.header = {"id", "block", high_dp ? "zip" : "gender", "name", "race", "yob",
                is_file_a ? "y" : "x"};
    t.rows.reserve(records.size());
    for (const auto& r : records) {
        t.rows.push_back({std::to_string(r.id), std::to_string(r.block),
                          std::to_string(r.zip_or_gender), r.name, std::to_string(r.race),
                          std::to_string(r.yob), fmt_double(is_file_a ? r.y : r.x)});
    }
    return t;
}

inline CsvTable scenario2_records_csv(const Scenario2Data& data) {
    CsvTable t;
    t.header = {"id", "block", "x", "y"};
    t.rows.reserve(data.rows.size());
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
        t.rows.push_back({std::to_string(i), std::to_string(data.rows[i].block),
                          fmt_double(data.rows[i].x), fmt_double(data.rows[i].y)});
    }
    return t;
}

namespace detail {

inline void json_flag_array(std::ostream& os, const std::vector<std::uint8_t>& flags) {
    os << '[';
    for (std::size_t i = 0; i < flags.size(); ++i) {
        if (i) os << ',';
        os << (flags[i] ? 1 : 0);
    }
    os << ']';
}

}  // namespace detail

inline std::string scenario1_truth_json(const Scenario1Data& data) {
    std::ostringstream os;
    os << "{\"beta_true\":" << fmt_double(data.truth.beta_true) << ",\"links\":[";
    for (std::size_t i = 0; i < data.truth.links.size(); ++i) {
        if (i) os << ',';
        os << '[' << data.truth.links[i].first << ',' << data.truth.links[i].second << ']';
    }
    os << "],\"flagged_a\":";
    detail::json_flag_array(os, data.err_a.flagged);
    os << ",\"flagged_b\":";
    detail::json_flag_array(os, data.err_b.flagged);
    os << '}';
    return os.str();
}

inline std::string scenario2_truth_json(const Scenario2Data& data) {
    std::ostringstream os;
    os << "{\"beta_true\":" << fmt_double(data.beta_true) << ",\"correct\":";
    detail::json_flag_array(os, data.correct);
    os << ",\"flagged\":";
    detail::json_flag_array(os, data.flagged);
    os << '}';
    return os.str();
}

inline Scenario1Config scenario1_from_toml(const Toml& t, const std::string& prefix = "scenario1") {
    auto key = [&](const char* k) { return prefix.empty() ? std::string(k) : prefix + "." + k; };
    Scenario1Config cfg;
    cfg.n_a = static_cast<int>(t.get_int(key("n-a"), cfg.n_a));
    cfg.n_b = static_cast<int>(t.get_int(key("n-b"), cfg.n_b));
    cfg.overlap = t.get_double(key("overlap"), cfg.overlap);
    cfg.n_blocks = static_cast<int>(t.get_int(key("n-blocks"), cfg.n_blocks));
    if (t.has(key("dp"))) {
        const std::string dp = t.get_string(key("dp"));
        if (dp == "high")
            cfg.high_dp = true;
        else if (dp == "low")
            cfg.high_dp = false;
        else
            throw ConfigError("scenario1: dp must be 'high' or 'low'");
    }
    cfg.rho = t.get_double(key("rho"), cfg.rho);
    cfg.error_level = t.get_double(key("error-level"), cfg.error_level);
    if (t.has(key("mechanism"))) cfg.mechanism = parse_mechanism(t.get_string(key("mechanism")));
    cfg.seed = static_cast<std::uint64_t>(t.get_int(key("seed"), static_cast<std::int64_t>(cfg.seed)));
    cfg.year_base = static_cast<int>(t.get_int(key("year-base"), cfg.year_base));
    cfg.age_mean = t.get_double(key("age-mean"), cfg.age_mean);
    cfg.age_sd = t.get_double(key("age-sd"), cfg.age_sd);
    cfg.validate();
    return cfg;
}

inline Scenario2Config scenario2_from_toml(const Toml& t, const std::string& prefix = "scenario2") {
    auto key = [&](const char* k) { return prefix.empty() ? std::string(k) : prefix + "." + k; };
    Scenario2Config cfg;
    cfg.n = static_cast<int>(t.get_int(key("n"), cfg.n));
    if (t.has(key("block-sizes"))) {
        cfg.block_sizes.clear();
        for (auto b : t.get_int_array(key("block-sizes"))) cfg.block_sizes.push_back(static_cast<int>(b));
    }
    if (t.has(key("error-rates"))) cfg.error_rates = t.get_double_array(key("error-rates"));
    cfg.rho = t.get_double(key("rho"), cfg.rho);
    if (t.has(key("mechanism"))) cfg.mechanism = parse_mechanism(t.get_string(key("mechanism")));
    cfg.seed = static_cast<std::uint64_t>(t.get_int(key("seed"), static_cast<std::int64_t>(cfg.seed)));
    cfg.validate();
    return cfg;
}

}  // namespace reclink

#endif
