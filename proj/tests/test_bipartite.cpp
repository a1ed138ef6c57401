#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include <reclink/bipartite_gibbs.hpp>
#include <reclink/rng.hpp>

using namespace reclink;

namespace {

ComparisonTable make_block_table(const std::vector<FieldSpec>& schema,
                                 const std::vector<std::vector<std::vector<std::int8_t>>>& gamma_rows) {
    ComparisonTable t;
    t.schema = schema;
    t.n_a = gamma_rows.size();
    t.n_b = gamma_rows.empty() ? 0 : gamma_rows[0].size();
    ComparisonTable::Block blk;
    blk.id = 0;
    for (std::size_t i = 0; i < t.n_a; ++i) blk.a_rows.push_back(static_cast<int>(i));
    for (std::size_t j = 0; j < t.n_b; ++j) blk.b_rows.push_back(static_cast<int>(j));
    blk.pair_begin = 0;
    for (std::size_t i = 0; i < t.n_a; ++i)
        for (std::size_t j = 0; j < t.n_b; ++j) {
            t.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
            for (std::size_t f = 0; f < schema.size(); ++f)
                t.gamma.push_back(gamma_rows[i][j][f]);
        }
    blk.pair_end = t.pairs.size();
    t.blocks.push_back(blk);
    return t;
}

// square table whose diagonal agrees and off-diagonal disagrees, with
// explicit overrides for ambiguity
ComparisonTable diag_table(int n, const std::set<std::pair<int, int>>& extra_agree = {}) {
    std::vector<std::vector<std::vector<std::int8_t>>> rows(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            std::int8_t g = (i == j || extra_agree.count({i, j})) ? 0 : 1;
            rows[i].push_back({g});
        }
    return make_block_table({{"f", FieldKind::exact}}, rows);
}

std::map<std::vector<int>, double> empirical_structure_freq(const PosteriorLinkageSamples& s) {
    std::map<std::vector<int>, double> freq;
    for (const auto& z : s.samples) freq[z] += 1.0;
    for (auto& kv : freq) kv.second /= static_cast<double>(s.samples.size());
    return freq;
}

double tv_against_exact(const PosteriorLinkageSamples& s, const ExactPosterior& ex) {
    auto freq = empirical_structure_freq(s);
    double tv = 0.0;
    for (std::size_t k = 0; k < ex.structures.size(); ++k) {
        double emp = 0.0;
        if (auto it = freq.find(ex.structures[k]); it != freq.end()) emp = it->second;
        tv += std::abs(emp - ex.prob[k]);
    }
    return 0.5 * tv;
}

const std::vector<std::vector<double>> M_FIX{{0.9, 0.1}};
const std::vector<std::vector<double>> U_FIX{{0.2, 0.8}};

} // namespace

TEST_CASE("enumeration covers all bipartite structures") {
    BipartitePrior prior;
    auto t1 = diag_table(1);
    auto e1 = enumerate_exact(t1, prior, M_FIX, U_FIX);
    REQUIRE(e1.structures.size() == 2);

    auto t2 = diag_table(2);
    auto e2 = enumerate_exact(t2, prior, M_FIX, U_FIX);
    REQUIRE(e2.structures.size() == 7);

    auto t3 = diag_table(3);
    auto e3 = enumerate_exact(t3, prior, M_FIX, U_FIX);
    REQUIRE(e3.structures.size() == 34);

    for (const auto* e : {&e1, &e2, &e3}) {
        double total = 0.0;
        for (double p : e->prob) total += p;
        REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("single-pair posterior matches the closed form") {
    // flat prior integrates to 1/2 on each structure; likelihood ratio 9
    auto t = diag_table(1);
    BipartitePrior prior;
    std::vector<std::vector<double>> m{{0.9, 0.1}}, u{{0.1, 0.9}};
    auto ex = enumerate_exact(t, prior, m, u);
    double p_link = 0.0;
    for (std::size_t k = 0; k < ex.structures.size(); ++k)
        if (ex.structures[k][0] == 0) p_link = ex.prob[k];
    REQUIRE_THAT(p_link, Catch::Matchers::WithinAbs(0.9, 1e-12));

    GibbsOptions opts;
    opts.n_iter = 6000;
    opts.burn_in = 1000;
    opts.fixed_m = m;
    opts.fixed_u = u;
    auto s = gibbs_sl(t, prior, opts, 777);
    REQUIRE(s.samples.size() == 5000);
    REQUIRE_THAT(s.pair_marginal[0], Catch::Matchers::WithinAbs(0.9, 0.03));
}

TEST_CASE("sampler distribution matches enumeration on an ambiguous block") {
    auto t = diag_table(3, {{0, 1}, {1, 0}});
    BipartitePrior prior;
    std::vector<std::vector<double>> m{{0.85, 0.15}}, u{{0.2, 0.8}};
    auto ex = enumerate_exact(t, prior, m, u);

    GibbsOptions opts;
    opts.n_iter = 21000;
    opts.burn_in = 1000;
    opts.fixed_m = m;
    opts.fixed_u = u;
    auto s = gibbs_sl(t, prior, opts, 4242);
    REQUIRE(s.samples.size() == 20000);
    REQUIRE(tv_against_exact(s, ex) < 0.05);
}

TEST_CASE("every sample is one-to-one") {
    auto t = diag_table(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
    BipartitePrior prior;
    GibbsOptions opts;
    opts.n_iter = 1500;
    opts.burn_in = 500;
    auto s = gibbs_sl(t, prior, opts, 99);
    REQUIRE(s.samples.size() == 1000);
    for (const auto& z : s.samples) {
        std::set<int> used;
        for (int j : z) {
            if (j < 0) continue;
            REQUIRE(used.insert(j).second);
        }
    }
}

TEST_CASE("total disagreement with a sparse prior leaves everything unlinked") {
    std::vector<std::vector<std::vector<std::int8_t>>> rows(3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rows[i].push_back({1});
    auto t = make_block_table({{"f", FieldKind::exact}}, rows);
    BipartitePrior prior;
    prior.pi_b = 9.0;  // favors few links
    GibbsOptions opts;
    opts.n_iter = 3000;
    opts.burn_in = 1000;
    opts.fixed_m = M_FIX;
    opts.fixed_u = U_FIX;
    auto s = gibbs_sl(t, prior, opts, 11);
    std::map<int, int> nlink_freq;
    for (const auto& z : s.samples) {
        int n = 0;
        for (int j : z)
            if (j >= 0) ++n;
        nlink_freq[n]++;
    }
    auto modal = std::max_element(nlink_freq.begin(), nlink_freq.end(),
                                  [](auto& a, auto& b) { return a.second < b.second; });
    REQUIRE(modal->first == 0);
}

TEST_CASE("relabeling file B permutes the posterior accordingly") {
    std::vector<FieldSpec> schema{{"name", FieldKind::string_ld}};
    auto mk = [&](const std::string& id, const std::string& name) {
        Record r;
        r.id = id;
        r.block = 0;
        r.fields = {name};
        return r;
    };
    std::vector<Record> A{mk("a0", "garcia"), mk("a1", "smith")};
    std::vector<Record> B1{mk("b0", "garcia"), mk("b1", "smith"), mk("b2", "jones")};
    std::vector<Record> B2{mk("b2", "jones"), mk("b0", "garcia"), mk("b1", "smith")};

    BipartitePrior prior;
    GibbsOptions opts;
    opts.n_iter = 11000;
    opts.burn_in = 1000;

    auto collect = [&](const std::vector<Record>& B, std::uint64_t seed) {
        auto t = build_comparisons(A, B, schema);
        auto s = gibbs_sl(t, prior, opts, seed);
        std::map<std::pair<std::string, std::string>, double> freq;
        for (std::size_t p = 0; p < t.n_pairs(); ++p)
            freq[{A[t.pairs[p].first].id, B[t.pairs[p].second].id}] = s.pair_marginal[p];
        return freq;
    };

    auto f1 = collect(B1, 555);
    auto f2 = collect(B2, 556);
    for (const auto& kv : f1) {
        REQUIRE(f2.count(kv.first) == 1);
        REQUIRE_THAT(f2[kv.first], Catch::Matchers::WithinAbs(kv.second, 0.05));
    }
}

TEST_CASE("iteration budget and hyperparameters are validated") {
    auto t = diag_table(2);
    BipartitePrior prior;
    GibbsOptions opts;
    opts.n_iter = 100;
    opts.burn_in = 100;
    REQUIRE_THROWS_AS(gibbs_sl(t, prior, opts, 1), std::invalid_argument);
    opts.n_iter = 200;
    opts.dir_alpha = 0.0;
    REQUIRE_THROWS_AS(gibbs_sl(t, prior, opts, 1), std::invalid_argument);
    BipartitePrior bad;
    bad.pi_a = 0.0;
    GibbsOptions ok;
    REQUIRE_THROWS_AS(gibbs_sl(t, bad, ok, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(enumerate_exact(diag_table(5), prior, M_FIX, U_FIX),
                      std::invalid_argument);
}

namespace {

// many identical ambiguous 3x3 blocks; returns the table plus iid outcome
// and covariate vectors with correlation rho for true (diagonal) partners
struct MultiBlockData {
    ComparisonTable t;
    std::vector<double> y, x;
};

MultiBlockData ambiguous_blocks(int n_blocks, double rho, std::uint64_t seed) {
    MultiBlockData d;
    Rng gen(seed);
    d.t.schema = {{"f", FieldKind::exact}};
    d.t.n_a = d.t.n_b = 3 * static_cast<std::size_t>(n_blocks);
    for (int b = 0; b < n_blocks; ++b) {
        ComparisonTable::Block blk;
        blk.id = b;
        blk.pair_begin = d.t.pairs.size();
        for (int i = 0; i < 3; ++i) blk.a_rows.push_back(3 * b + i);
        for (int j = 0; j < 3; ++j) blk.b_rows.push_back(3 * b + j);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                d.t.pairs.emplace_back(3 * b + i, 3 * b + j);
                bool agree = (i == j) || (i == 0 && j == 1) || (i == 1 && j == 0);
                d.t.gamma.push_back(agree ? 0 : 1);
            }
        blk.pair_end = d.t.pairs.size();
        d.t.blocks.push_back(blk);
    }
    d.y.resize(d.t.n_a);
    d.x.resize(d.t.n_b);
    for (std::size_t i = 0; i < d.t.n_a; ++i) {
        d.x[i] = gen.normal();
        d.y[i] = 2.0 * rho * d.x[i] + gen.normal(0.0, 2.0 * std::sqrt(1.0 - rho * rho));
    }
    return d;
}

// distribution over the structures of one block, from global samples
std::map<std::vector<int>, double> block_structure_freq(
    const PosteriorLinkageSamples& s, const ComparisonTable::Block& blk) {
    std::map<std::vector<int>, double> freq;
    for (const auto& z : s.samples) {
        std::vector<int> sub;
        for (int a : blk.a_rows) sub.push_back(z[a]);
        freq[sub] += 1.0;
    }
    for (auto& kv : freq) kv.second /= static_cast<double>(s.samples.size());
    return freq;
}

double tv_between(const std::map<std::vector<int>, double>& f1,
                  const std::map<std::vector<int>, double>& f2) {
    double tv = 0.0;
    for (const auto& kv : f1) {
        auto it = f2.find(kv.first);
        tv += std::abs(kv.second - (it == f2.end() ? 0.0 : it->second));
    }
    for (const auto& kv : f2)
        if (!f1.count(kv.first)) tv += kv.second;
    return 0.5 * tv;
}

} // namespace

TEST_CASE("independent outcome and covariate leave the linkage posterior unchanged") {
    auto d = ambiguous_blocks(12, 0.0, 2024);
    BipartitePrior prior;
    std::vector<std::vector<double>> m{{0.85, 0.15}}, u{{0.2, 0.8}};

    GibbsOptions gopts;
    gopts.n_iter = 21000;
    gopts.burn_in = 1000;
    gopts.fixed_m = m;
    gopts.fixed_u = u;
    auto sl = gibbs_sl(d.t, prior, gopts, 31337);

    KsgOptions kopts;
    kopts.gibbs = gopts;
    auto ksg = da_ksg(d.t, d.y, d.x, prior, kopts, 90210);
    REQUIRE(ksg.params.size() == ksg.linkage.samples.size());

    // with no y-x association both classes fit the same marginal model and
    // the feedback factor washes out of the full conditionals
    double tv = tv_between(block_structure_freq(sl, d.t.blocks[0]),
                           block_structure_freq(ksg.linkage, d.t.blocks[0]));
    REQUIRE(tv < 0.05);
}

TEST_CASE("correlated outcomes sharpen link identification") {
    // ambiguous comparisons, strong y-x coupling for true pairs
    const int n = 10;
    const double rho = 0.9;
    double sl_f1 = 0.0, ksg_f1 = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        Rng gen(Rng::derive(606, rep));
        std::vector<double> x(n), y(n);
        for (int i = 0; i < n; ++i) {
            x[i] = gen.normal();
            y[i] = 2.0 * rho * x[i] + gen.normal(0.0, 2.0 * std::sqrt(1.0 - rho * rho));
        }
        std::vector<std::vector<std::vector<std::int8_t>>> rows(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double p_agree = (i == j) ? 0.7 : 0.3;
                std::vector<std::int8_t> g(2);
                for (int f = 0; f < 2; ++f)
                    g[f] = gen.bernoulli(p_agree) ? 0 : 1;
                rows[i].push_back(g);
            }
        auto t = make_block_table(
            {{"f1", FieldKind::exact}, {"f2", FieldKind::exact}}, rows);

        BipartitePrior prior;
        GibbsOptions gopts;
        gopts.n_iter = 3000;
        gopts.burn_in = 1000;
        auto f1_of = [&](const std::vector<double>& marginal) {
            int tp = 0, declared = 0;
            for (std::size_t p = 0; p < t.n_pairs(); ++p) {
                if (marginal[p] > 0.5) {
                    ++declared;
                    if (t.pairs[p].first == t.pairs[p].second) ++tp;
                }
            }
            double prec = declared > 0 ? double(tp) / declared : 1.0;
            double rec = double(tp) / n;
            return (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        };

        auto sl = gibbs_sl(t, prior, gopts, Rng::derive(707, rep));
        KsgOptions kopts;
        kopts.gibbs = gopts;
        auto ksg = da_ksg(t, y, x, prior, kopts, Rng::derive(707, rep));
        sl_f1 += f1_of(sl.pair_marginal);
        ksg_f1 += f1_of(ksg.linkage.pair_marginal);
    }
    REQUIRE(ksg_f1 / 20.0 > sl_f1 / 20.0);
}

TEST_CASE("degenerate regression classes freeze and are counted") {
    // 1x2 block: at most one link, so the link class never reaches 3 pairs
    std::vector<std::vector<std::vector<std::int8_t>>> rows(1);
    rows[0].push_back({0});
    rows[0].push_back({1});
    auto t = make_block_table({{"f", FieldKind::exact}}, rows);
    std::vector<double> y{1.0}, x{0.5, -0.5};
    BipartitePrior prior;
    KsgOptions kopts;
    kopts.gibbs.n_iter = 500;
    kopts.gibbs.burn_in = 100;
    auto res = da_ksg(t, y, x, prior, kopts, 8);
    REQUIRE(res.frozen_link_updates == 500);
    REQUIRE(res.frozen_nonlink_updates == 500);  // 1 or 2 non-link pairs < 3
    for (const auto& p : res.params) {
        REQUIRE(std::isfinite(p.beta0_m));
        REQUIRE(p.sigma_m > 0.0);
        REQUIRE_THAT(p.beta0_m, Catch::Matchers::WithinAbs(1.0, 1e-12));  // frozen at init
    }
    REQUIRE_THROWS_AS(da_ksg(t, std::vector<double>{1.0, 2.0}, x, prior, kopts, 8),
                      std::invalid_argument);
}
