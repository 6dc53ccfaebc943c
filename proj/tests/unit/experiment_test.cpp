#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "phasetrack/experiment.hpp"

using namespace phasetrack;

namespace {

SweepSpec parse(const std::string& text) {
    std::istringstream in(text);
    return parse_sweep_spec(in);
}

void expect_spec_error(const std::string& text, const std::string& field) {
    try {
        parse(text);
        ADD_FAILURE() << "expected invalid-spec for " << field;
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "invalid-spec");
        EXPECT_EQ(e.kind(), ErrorKind::validation);
        EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(line);
    while (std::getline(in, item, ',')) out.push_back(item);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

TEST(SweepSpec, ParsesFullSpec) {
    const SweepSpec s = parse(
        "[sweep]\n"
        "; two exponents\n"
        "p = 2, 4\n"
        "kappa = 1.5\n"
        "grid = 10, 100\n"
        "estimators = filter, smoother, abc\n"
        "trials = 8\n"
        "seed = 99\n"
        "linearized = true\n"
        "duration = 300\n"
        "dt = 0.005\n"
        "[abc]\n"
        "chi = 5\n"
        "cutoff = 0.5\n");
    EXPECT_EQ(s.p_values, (std::vector<int>{2, 4}));
    EXPECT_EQ(s.kappa, 1.5);
    EXPECT_EQ(s.grid, (std::vector<double>{10, 100}));
    EXPECT_EQ(s.estimators, (std::vector<Estimator>{Estimator::filter, Estimator::smoother, Estimator::abc}));
    EXPECT_EQ(s.trials, 8u);
    EXPECT_EQ(s.seed, 99u);
    EXPECT_TRUE(s.linearized);
    EXPECT_EQ(s.duration_tau, 300.0);
    EXPECT_EQ(s.dt_tau, 0.005);
    EXPECT_EQ(s.abc_chi, 5.0);
    EXPECT_EQ(s.cutoff, 0.5);
}

TEST(SweepSpec, LogSpacedGrid) {
    const SweepSpec s = parse("[sweep]\np = 2\ngrid_min = 1\ngrid_max = 100\ngrid_points = 3\nestimators = filter\n");
    ASSERT_EQ(s.grid.size(), 3u);
    EXPECT_NEAR(s.grid[0], 1.0, 1e-12);
    EXPECT_NEAR(s.grid[1], 10.0, 1e-12);
    EXPECT_NEAR(s.grid[2], 100.0, 1e-12);
    EXPECT_EQ(s.trials, 64u);
    EXPECT_FALSE(s.linearized);
}

TEST(SweepSpec, Rejections) {
    expect_spec_error("[sweep]\np = 2\ngrid = 10\nestimators =\n", "estimators");
    expect_spec_error("[sweep]\np = 2\ngrid = 10\n", "estimators");
    expect_spec_error("[sweep]\np = 3\ngrid = 10\nestimators = filter\n", "p");
    expect_spec_error("[sweep]\np = 22\ngrid = 10\nestimators = filter\n", "p");
    expect_spec_error("[sweep]\np = 2\ngrid = 10\nestimators = filter\ncolour = red\n", "colour");
    expect_spec_error("[other]\nx = 1\n", "other");
    expect_spec_error("[sweep]\np = 2\ngrid = -1\nestimators = filter\n", "grid");
    expect_spec_error("[sweep]\np = 2\ngrid = 10\nestimators = filter\ntrials = 1\n", "trials");
    expect_spec_error("[sweep]\np = 2\ngrid = 10\nestimators = filter\ndt = 0.02\n", "dt");
    expect_spec_error("[sweep]\np = 2\ngrid = 10\nestimators = filter\nduration = 30\n", "duration");
    expect_spec_error("[sweep]\np = two\ngrid = 10\nestimators = filter\n", "p");
    expect_spec_error("[sweep]\ngrid = 10\nestimators = filter\n", "p");
    expect_spec_error("[sweep]\np = 2\ngrid = 10\nestimators = filter\n[abc]\nchi = 0\n", "chi");
    try {
        parse("[sweep]\np = 2\ngrid = 10\nestimators = kalman\n");
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "invalid-estimator");
    }
}

TEST(SweepSpec, MissingFile) {
    try {
        read_sweep_spec("/nonexistent/spec.ini");
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::validation);
    }
}

TEST(Estimators, RoundTrip) {
    for (Estimator e : {Estimator::filter, Estimator::smoother, Estimator::abc, Estimator::abc_linear}) {
        EXPECT_EQ(parse_estimator(to_string(e)), e);
    }
    EXPECT_EQ(feedback_of(Estimator::smoother), Feedback::filter);
    EXPECT_EQ(feedback_of(Estimator::abc_linear), Feedback::abc_linear);
}

TEST(Grid, FluxFromGrid) {
    EXPECT_NEAR(flux_from_grid(2, 1, 10), 100.0, 1e-12);
    EXPECT_NEAR(flux_from_grid(4, 2, 100), 2.0 * std::pow(100.0, 4.0 / 3.0), 1e-9);
    // (N/kappa)^((p-1)/p) recovers the grid value.
    EXPECT_NEAR(std::pow(flux_from_grid(6, 1.5, 7.0) / 1.5, 5.0 / 6.0), 7.0, 1e-12);
}

TEST(Grid, SweepModel) {
    EXPECT_TRUE(sweep_model(4, 1, std::nullopt).dampings.empty() ||
                sweep_model(4, 1, std::nullopt).dampings == std::vector<double>(2, 0.0));
    EXPECT_EQ(sweep_model(4, 1, 0.5).dampings, (std::vector<double>{0.5, 0.0}));
}

TEST(Csv, ExactHeaders) {
    EXPECT_EQ(sweep_header, "p,N_over_kappa,estimator,mse,stderr,n_trials,dt,duration,seed,lg_filter_mse,qcrb,"
                            "wiener_filter_mse");
    EXPECT_EQ(ratio_path("out.csv"), "out.ratios.csv");
    EXPECT_EQ(ratio_path("dir.x/out"), "dir.x/out.ratios.csv");
}

TEST(Csv, RowFormatting) {
    SweepRow r;
    r.p = 4;
    r.grid = 10;
    r.n_over_kappa = 21.5443469003;
    r.estimator = Estimator::smoother;
    r.mse = {0.0125, 0.0004, 64};
    r.dt = 0.001;
    r.duration = 1000;
    r.seed = 7;
    r.analytic = analytic_columns(4, 1, 21.5443469003);
    const auto fields = split(sweep_csv_line(r));
    ASSERT_EQ(fields.size(), 12u);
    EXPECT_EQ(fields[0], "4");
    EXPECT_EQ(fields[2], "smoother");
    EXPECT_EQ(fields[3], "0.0125");
    EXPECT_EQ(fields[5], "64");
    EXPECT_EQ(fields[8], "7");

    r.mse.mse = nan_value;
    r.analytic.qcrb = nan_value;
    const auto blanks = split(sweep_csv_line(r));
    ASSERT_EQ(blanks.size(), 12u);
    EXPECT_EQ(blanks[3], "");
    EXPECT_EQ(blanks[10], "");
    const auto ratio = split(ratio_csv_line(r));
    ASSERT_EQ(ratio.size(), 7u);
    EXPECT_EQ(ratio[3], "");
    EXPECT_EQ(ratio[5], "ok");
}

TEST(Csv, AnalyticColumnsMatchBounds) {
    for (int p : {2, 4, 6}) {
        const double flux = flux_from_grid(p, 1.3, 50.0);
        const AnalyticColumns a = analytic_columns(p, 1.3, flux);
        EXPECT_NEAR(a.qcrb, qcrb_power_law(p, 1.3, flux), 1e-15);
        EXPECT_NEAR(a.wiener_filter_mse, filter_mse_power_law(p, 1.3, flux), 1e-15);
        // The Riccati filter attains the Wiener filter bound.
        EXPECT_NEAR(a.lg_filter_mse / a.wiener_filter_mse, 1.0, 1e-9);
    }
}

TEST(Csv, RecordWindowing) {
    const auto model = PhaseModel::power_law(2, 1);
    const LgSystem sys = build_lg_system(2, 1, 25);
    HomodyneConfig c;
    c.photon_flux = 25;
    c.duration = 50 * sys.timescale();
    c.seed = 4;
    const SimulationRecord r = simulate_record(model, sys, c);
    std::ostringstream out;
    write_record_csv(out, r);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,phi,theta,y,phi_f,phi_s,phi_abc");
    std::size_t i = 0;
    while (std::getline(in, line)) {
        const auto f = split(line);
        ASSERT_EQ(f.size(), 7u) << line;
        const bool inside = i >= r.timing.first && i < r.smoother_last();
        EXPECT_EQ(!f[5].empty(), inside) << i;
        EXPECT_TRUE(f[6].empty());
        ++i;
    }
    EXPECT_EQ(i, r.size());
}

TEST(Sweep, RowsPerPointAndSeedsAreDeterministic) {
    SweepSpec s = parse("[sweep]\np = 2\ngrid = 10\nestimators = filter, smoother\ntrials = 3\nseed = 5\n"
                        "linearized = true\nduration = 60\n");
    s.workers = 1;
    std::vector<SweepRow> a, b;
    run_sweep(s, [&](const std::vector<SweepRow>& rows) { a.insert(a.end(), rows.begin(), rows.end()); });
    s.workers = 3;
    run_sweep(s, [&](const std::vector<SweepRow>& rows) { b.insert(b.end(), rows.begin(), rows.end()); });
    ASSERT_EQ(a.size(), 2u);
    ASSERT_EQ(b.size(), 2u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(sweep_csv_line(a[i]), sweep_csv_line(b[i]));
    EXPECT_LT(a[1].mse.mse, a[0].mse.mse);
    EXPECT_EQ(a[0].mse.n_trials, 3u);
}
