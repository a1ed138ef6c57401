// Command-line front end: generate benchmark data, link two files, fit a
// linked-file estimator, run a full benchmark plan, and summarize results.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 benchmark cells
// over the failure ceiling, 1 any other runtime failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <reclink/harness.hpp>

namespace fs = std::filesystem;
using namespace reclink;

namespace {

constexpr const char* kUsage = R"(usage: reclink <command> [options]

commands:
  simulate   generate a benchmark data set and its ground truth
  link       link two record files with the mixture model
  estimate   fit a linked-file estimator to one data file
  bench      run a full benchmark plan and write metric tables
  report     summarize a metrics table and rank the design factors

options:
  --config <path>   TOML configuration file (required for all commands)
  --seed <n>        override the seed from the configuration
  --workers <n>     override the worker count for bench
  --out-dir <path>  output directory (default ".")
  --help            show this message
)";

struct CliArgs {
    std::string command;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out_dir = ".";
};

CliArgs parse_args(int argc, char** argv) {
    CliArgs args;
    if (argc < 2) throw ConfigError("missing command");
    args.command = argv[1];
    if (args.command == "--help" || args.command == "-h") {
        args.command = "help";
        return args;
    }
    for (int i = 2; i < argc; ++i) {
        std::string flag = argv[i];
        if (flag == "--help" || flag == "-h") {
            args.command = "help";
            return args;
        }
        auto value = [&]() -> std::string {
            if (i + 1 >= argc) throw ConfigError("flag " + flag + " needs a value");
            return argv[++i];
        };
        if (flag == "--config") {
            args.config_path = value();
        } else if (flag == "--seed") {
            args.seed = std::stoull(value());
        } else if (flag == "--workers") {
            args.workers = std::stoi(value());
        } else if (flag == "--out-dir") {
            args.out_dir = value();
        } else {
            throw ConfigError("unknown flag '" + flag + "'");
        }
    }
    return args;
}

Toml load_config(const CliArgs& args) {
    if (args.config_path.empty()) throw ConfigError("--config is required");
    return Toml::parse_file(args.config_path);
}

fs::path ensure_out_dir(const CliArgs& args) {
    fs::path dir(args.out_dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const CliArgs& args) {
    Toml t = load_config(args);
    fs::path dir = ensure_out_dir(args);
    const int scenario = static_cast<int>(t.get_int("simulate.scenario", 2));
    if (scenario == 1) {
        Scenario1Config cfg = scenario1_from_toml(t);
        if (args.seed) cfg.seed = *args.seed;
        Scenario1Data data = gen_scenario1(cfg);
        write_csv_file((dir / "file_a.csv").string(),
                       scenario1_records_csv(data.file_a, true, cfg.high_dp));
        write_csv_file((dir / "file_b.csv").string(),
                       scenario1_records_csv(data.file_b, false, cfg.high_dp));
        write_text(dir / "truth.json", scenario1_truth_json(data));
        std::cout << "scenario 1: wrote " << data.file_a.size() << " outcome records, "
                  << data.file_b.size() << " covariate records, " << data.truth.links.size()
                  << " true links to " << dir.string() << "\n";
    } else if (scenario == 2) {
        Scenario2Config cfg = scenario2_from_toml(t);
        if (args.seed) cfg.seed = *args.seed;
        Scenario2Data data = gen_scenario2(cfg);
        write_csv_file((dir / "rows.csv").string(), scenario2_records_csv(data));
        write_text(dir / "truth.json", scenario2_truth_json(data));
        int n_err = 0;
        for (auto c : data.correct) n_err += c ? 0 : 1;
        std::cout << "scenario 2: wrote " << data.rows.size() << " linked rows (" << n_err
                  << " with a displaced outcome) to " << dir.string() << "\n";
    } else {
        throw ConfigError("simulate.scenario must be 1 or 2");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// link
// ---------------------------------------------------------------------------

std::vector<Record> records_from_csv(const CsvTable& t, bool high_dp) {
    const int c_id = t.column("id");
    const int c_block = t.column("block");
    const int c_first = t.column(high_dp ? "zip" : "gender");
    const int c_name = t.column("name");
    const int c_race = t.column("race");
    const int c_yob = t.column("yob");
    std::vector<Record> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        Record r;
        r.id = row[c_id];
        r.block = std::stoi(row[c_block]);
        r.fields = {row[c_first], row[c_name], row[c_race], row[c_yob]};
        out.push_back(std::move(r));
    }
    return out;
}

int cmd_link(const CliArgs& args) {
    Toml t = load_config(args);
    fs::path dir = ensure_out_dir(args);
    const std::string path_a = t.get_string("link.file-a");
    const std::string path_b = t.get_string("link.file-b");
    const std::string dp = t.get_string("link.dp", "high");
    if (dp != "high" && dp != "low") throw ConfigError("link.dp must be 'high' or 'low'");
    const bool high_dp = dp == "high";
    const double threshold = t.get_double("link.threshold", 0.5);

    std::vector<Record> ra = records_from_csv(read_csv_file(path_a), high_dp);
    std::vector<Record> rb = records_from_csv(read_csv_file(path_b), high_dp);
    ComparisonTable table = build_comparisons(ra, rb, detail::linkage_schema(high_dp));

    FsOptions fo;
    fo.max_iter = static_cast<int>(t.get_int("link.max-iter", fo.max_iter));
    FsModel model = em_fit(table, fo);
    std::vector<double> q = posterior_q(model, table);
    std::vector<double> w = match_weights(model, table);
    std::vector<int> assignment = assign_one_to_one(table, w, q, threshold);

    CsvTable links;
    links.header = {"a_id", "b_id", "weight", "posterior"};
    for (std::size_t p = 0; p < table.n_pairs(); ++p) {
        const auto [i, j] = table.pairs[p];
        if (assignment[i] != j) continue;
        // canonical orientation: when the inputs were swapped the canonical
        // A side holds the second file's records
        const std::string& a_id = table.swapped ? ra[j].id : ra[i].id;
        const std::string& b_id = table.swapped ? rb[i].id : rb[j].id;
        links.rows.push_back({a_id, b_id, fmt_double(w[p]), fmt_double(q[p])});
    }
    write_csv_file((dir / "links.csv").string(), links);

    CsvTable params;
    params.header = {"field", "level", "m", "u"};
    for (std::size_t f = 0; f < table.schema.size(); ++f)
        for (std::size_t l = 0; l < model.m[f].size(); ++l)
            params.rows.push_back({table.schema[f].name, std::to_string(l),
                                   fmt_double(model.m[f][l]), fmt_double(model.u[f][l])});
    for (std::size_t b = 0; b < model.nu.size(); ++b)
        params.rows.push_back({"__prevalence__", std::to_string(b), fmt_double(model.nu[b]), ""});
    write_csv_file((dir / "model.csv").string(), params);

    int declared = 0;
    for (int j : assignment) declared += j >= 0 ? 1 : 0;
    std::cout << "compared " << table.n_pairs() << " candidate pairs, declared " << declared
              << " links (threshold " << threshold << ")\n"
              << "mixture EM: " << model.iterations << " iterations, "
              << (model.converged ? "converged" : "not converged")
              << ", log-likelihood " << fmt_double(model.loglik()) << "\n"
              << "wrote links.csv and model.csv to " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

int cmd_estimate(const CliArgs& args) {
    Toml t = load_config(args);
    fs::path dir = ensure_out_dir(args);
    const Method method = parse_method(t.get_string("estimate.method"));
    if (method_scenario(method) != 2)
        throw ConfigError("estimate expects a linked-file method (Naive, ChR, ChL, ChB, GT, SLW)");
    const std::string input = t.get_string("estimate.input");
    std::uint64_t seed = static_cast<std::uint64_t>(t.get_int("estimate.seed", 1));
    if (args.seed) seed = *args.seed;

    CsvTable rows_csv = read_csv_file(input);
    const int c_block = rows_csv.column("block");
    const int c_x = rows_csv.column("x");
    const int c_y = rows_csv.column("y");
    std::vector<LinkedRow> rows;
    rows.reserve(rows_csv.rows.size());
    int max_block = -1;
    for (const auto& row : rows_csv.rows) {
        LinkedRow r{std::stod(row[c_y]), std::stod(row[c_x]), std::stoi(row[c_block])};
        max_block = std::max(max_block, r.block);
        rows.push_back(r);
    }
    if (rows.empty()) throw ConfigError("estimate: input has no rows");

    EstimateRecord rec;
    rec.method = method_name(method);
    if (method == Method::Naive) {
        std::vector<double> ys, xs;
        for (const auto& r : rows) {
            ys.push_back(r.y);
            xs.push_back(r.x);
        }
        detail::fill_from_fit(rec, detail::ols_xy(ys, xs, "Naive"), 1);
    } else if (method == Method::ChR || method == Method::ChL || method == Method::ChB) {
        std::vector<double> rates = t.get_double_array("estimate.error-rates");
        if (static_cast<int>(rates.size()) != max_block + 1)
            throw ConfigError("estimate: need one error rate per block");
        std::vector<Eigen::VectorXd> yb;
        std::vector<Eigen::MatrixXd> xb;
        EleModel ele;
        for (int b = 0; b <= max_block; ++b) {
            std::vector<double> ys, xs;
            for (const auto& r : rows)
                if (r.block == b) {
                    ys.push_back(r.y);
                    xs.push_back(r.x);
                }
            if (ys.empty()) throw ConfigError("estimate: block " + std::to_string(b) + " is empty");
            Eigen::VectorXd y(ys.size());
            Eigen::MatrixXd X(xs.size(), 2);
            for (std::size_t k = 0; k < ys.size(); ++k) {
                y(k) = ys[k];
                X(k, 0) = 1.0;
                X(k, 1) = xs[k];
            }
            yb.push_back(std::move(y));
            xb.push_back(std::move(X));
            ele.lambdas.push_back(1.0 - rates[b]);
            ele.block_sizes.push_back(static_cast<int>(ys.size()));
        }
        ChVariant v = method == Method::ChR   ? ChVariant::ChR
                      : method == Method::ChL ? ChVariant::ChL
                                              : ChVariant::ChB;
        detail::fill_from_fit(rec, chambers_fit(yb, xb, ele, v), 1);
    } else if (method == Method::GT) {
        GtOptions go;
        go.n_iter = static_cast<int>(t.get_int("estimate.gt-iter", 1500));
        go.burn_in = static_cast<int>(t.get_int("estimate.gt-burn", 500));
        go.min_rows = static_cast<int>(t.get_int("estimate.gt-min-rows", 10));
        GtFileSamples out = gt_da(rows, GtPriors{}, go, seed);
        if (out.beta_mi.size() < 2) throw std::runtime_error("too few usable posterior draws");
        detail::fill_from_pool(rec, mi_combine(out.beta_mi));
    } else {  // SLW
        SlwFit fit = slw_em(rows, SlwOptions{}, seed);
        rec.estimate = fit.b1;
        rec.se = fit.slope_se();
        rec.ci_lo = fit.slope_ci_lo;
        rec.ci_hi = fit.slope_ci_hi;
    }

    CsvTable out;
    out.header = {"method", "estimate", "se", "ci_lo", "ci_hi"};
    out.rows.push_back({rec.method, fmt_double(rec.estimate), fmt_double(rec.se),
                        fmt_double(rec.ci_lo), fmt_double(rec.ci_hi)});
    write_csv_file((dir / "estimate.csv").string(), out);
    std::cout << rec.method << ": slope " << fmt_double(rec.estimate) << " (se "
              << fmt_double(rec.se) << ", 95% CI [" << fmt_double(rec.ci_lo) << ", "
              << fmt_double(rec.ci_hi) << "])\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

int cmd_bench(const CliArgs& args) {
    Toml t = load_config(args);
    fs::path dir = ensure_out_dir(args);
    ExperimentPlan plan = plan_from_toml(t);
    if (args.seed) plan.base_seed = *args.seed;
    if (args.workers) plan.workers = *args.workers;
    plan.validate();

    PlanResult res = run_plan(plan);
    write_csv_file((dir / "metrics.csv").string(), metrics_csv(res.metrics));
    write_csv_file((dir / "estimates.csv").string(), estimates_csv(res.records));
    write_csv_file((dir / "timings.csv").string(), timings_csv(res));

    std::cout << std::left << std::setw(52) << "cell" << std::setw(10) << "method"
              << std::right << std::setw(10) << "bias" << std::setw(10) << "se"
              << std::setw(10) << "coverage" << std::setw(8) << "ok" << "\n";
    for (const auto& row : res.metrics) {
        std::ostringstream bias, se, cov;
        bias << std::fixed << std::setprecision(3) << row.mean_bias;
        se << std::fixed << std::setprecision(3) << row.mean_se;
        cov << std::fixed << std::setprecision(2) << row.coverage;
        std::cout << std::left << std::setw(52) << row.cell << std::setw(10) << row.method
                  << std::right << std::setw(10) << bias.str() << std::setw(10) << se.str()
                  << std::setw(10) << cov.str() << std::setw(8)
                  << (std::to_string(row.n_valid) + "/" + std::to_string(row.replications))
                  << (row.valid ? "" : "  INVALID") << "\n";
    }
    std::cout << "total wall time " << fmt_double(res.wall_ms / 1000.0) << " s; wrote "
              << "metrics.csv, estimates.csv, timings.csv to " << dir.string() << "\n";

    if (!res.invalid_cells.empty()) {
        std::cerr << res.invalid_cells.size()
                  << " cell/method combination(s) breached the failure ceiling:\n";
        for (const auto& c : res.invalid_cells) std::cerr << "  " << c << "\n";
        return 3;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const CliArgs& args) {
    Toml t = load_config(args);
    fs::path dir = ensure_out_dir(args);
    const std::string metrics_path =
        t.get_string("report.metrics", (dir / "metrics.csv").string());
    CsvTable metrics = read_csv_file(metrics_path);
    const int c_cell = metrics.column("cell");
    const int c_method = metrics.column("method");
    const int c_bias = metrics.column("mean_bias");
    const int c_cov = metrics.column("coverage");

    std::ostringstream md;
    md << "# Benchmark summary\n\n";
    md << "| cell | method | bias | coverage |\n|---|---|---|---|\n";
    for (const auto& row : metrics.rows)
        md << "| " << row[c_cell] << " | " << row[c_method] << " | " << row[c_bias] << " | "
           << row[c_cov] << " |\n";

    // main-effects screen across the parsed cell factors plus the method
    std::map<std::string, std::set<std::string>> level_sets;
    std::vector<std::map<std::string, std::string>> parsed;
    for (const auto& row : metrics.rows) {
        auto f = parse_fingerprint(row[c_cell]);
        f["method"] = row[c_method];
        for (const auto& [k, v] : f) level_sets[k].insert(v);
        parsed.push_back(std::move(f));
    }
    std::vector<std::string> factors;
    for (const auto& [k, s] : level_sets)
        if (s.size() > 1 && k != "scenario") factors.push_back(k);

    if (!factors.empty() && metrics.rows.size() > factors.size() + 1) {
        for (const char* metric : {"bias", "coverage"}) {
            std::vector<double> y;
            std::vector<std::vector<std::string>> levels(factors.size());
            const int col = std::string(metric) == "bias" ? c_bias : c_cov;
            bool usable = true;
            for (std::size_t i = 0; i < metrics.rows.size(); ++i) {
                double v = std::stod(metrics.rows[i][col]);
                if (!std::isfinite(v)) {
                    usable = false;
                    break;
                }
                y.push_back(std::string(metric) == "bias" ? std::abs(v) : v);
                for (std::size_t f = 0; f < factors.size(); ++f)
                    levels[f].push_back(parsed[i].at(factors[f]));
            }
            if (!usable) continue;
            auto ranked = anova_screen(factors, levels, y);
            md << "\n## Factor screen on "
               << (std::string(metric) == "bias" ? "absolute bias" : "coverage") << "\n\n";
            md << "| factor | F | df |\n|---|---|---|\n";
            for (const auto& r : ranked)
                md << "| " << r.factor << " | " << fmt_double(r.f) << " | " << r.df << " |\n";
        }
    }

    write_text(dir / "report.md", md.str());
    std::cout << md.str();
    std::cout << "wrote report.md to " << dir.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        CliArgs args = parse_args(argc, argv);
        if (args.command == "help") {
            std::cout << kUsage;
            return 0;
        }
        if (args.command == "simulate") return cmd_simulate(args);
        if (args.command == "link") return cmd_link(args);
        if (args.command == "estimate") return cmd_estimate(args);
        if (args.command == "bench") return cmd_bench(args);
        if (args.command == "report") return cmd_report(args);
        throw ConfigError("unknown command '" + args.command + "'");
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n" << kUsage;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
